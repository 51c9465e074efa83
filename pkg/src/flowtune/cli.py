"""Command-line front end.

    flowtune generate            --config exp.json [--seed N] [--out trace.jsonl]
    flowtune replay              --config exp.json [--epsilon E|schedule] [--latency-bound L|median] ...
    flowtune sweep               --config exp.json [--out sweep.csv]
    flowtune compare-predictors  --config exp.json [--degree D] [--out compare.csv]

The config is one JSON document (see ``ExperimentConfig``). Flags override
the matching fields. Exit status is 0 on success, 2 for a bad config and 1
for any failure while running.
"""
from __future__ import annotations

import argparse
import csv
from dataclasses import dataclass, field, fields
import json
from pathlib import Path
import sys

import numpy as np

from .controller import PolicyConfig, epsilon_schedule
from .dataflow import DataFlowGraph, validate
from .errors import ConfigError, FlowtuneError
from .paramspace import ParamSpec
from .regression import RegressorConfig
from .sim.generator import PRESETS, GeneratorSpec, generate
from .sim.replay import CSV_COLUMNS, VARIANTS, compare_predictors, replay, sweep_epsilon
from .sim.traces import TraceSet
from .structured import DEFAULT_BOOTSTRAP, DEFAULT_CONTRIBUTION, DEFAULT_CORRELATION, DEFAULT_WINDOW

DEFAULT_EPSILONS = (0.003, 0.01, 0.03, 0.1, 0.3, 1.0)


@dataclass
class PolicySpec:
    epsilon: float | str = "schedule"  # number in [0, 1] or "schedule" (1/sqrt(T))
    latency_bound: float | str = "median"  # seconds, or "median" of per-config mean latency


@dataclass
class SweepSpec:
    epsilons: list = field(default_factory=lambda: list(DEFAULT_EPSILONS))
    latency_bounds: list = field(default_factory=lambda: ["median"])


@dataclass
class ExperimentConfig:
    preset: str | None = "gesture"
    graph: dict | None = None
    specs: list | None = None
    generator: dict | None = None
    stage_params: dict | None = None
    n_configs: int = 30
    T: int = 1000
    seed: int = 0
    trace: str = "trace.jsonl"
    metrics: str = "metrics.csv"
    model: str = "model.json"
    sweep_out: str = "sweep.csv"
    compare_out: str = "compare.csv"
    policy: PolicySpec = field(default_factory=PolicySpec)
    regressor: RegressorConfig = field(default_factory=RegressorConfig)
    structured: bool = True
    bootstrap: int = DEFAULT_BOOTSTRAP
    window: int = DEFAULT_WINDOW
    contribution_threshold: float = DEFAULT_CONTRIBUTION
    correlation_threshold: float = DEFAULT_CORRELATION
    error_mode: str = "chosen"
    learn_on: str = "all"
    offline_epochs: int = 500
    workers: int = 1
    sweep: SweepSpec = field(default_factory=SweepSpec)

    # resolved application description
    def application(self):
        graph = specs = gen = None
        stage_params = None
        if self.preset is not None:
            graph, specs, gen, stage_params = PRESETS[self.preset]
        if self.graph is not None:
            graph = DataFlowGraph.from_dict(self.graph)
        if self.specs is not None:
            specs = tuple(ParamSpec.from_dict(s) for s in self.specs)
        if self.generator is not None:
            gen = GeneratorSpec.from_dict(self.generator)
        if self.stage_params is not None:
            stage_params = {k: tuple(v) for k, v in self.stage_params.items()}
        return graph, specs, gen, stage_params

    def replay_kwargs(self, stage_params) -> dict:
        return dict(bootstrap=self.bootstrap, window=self.window, stage_params=stage_params,
                    contribution_threshold=self.contribution_threshold,
                    correlation_threshold=self.correlation_threshold, learn_on=self.learn_on)


def _fields(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    extra = sorted(set(d) - known)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(extra)}")
    return d


def _number(x, where, lo=None, hi=None, integer=False):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or (integer and not isinstance(x, int)):
        raise ConfigError(f"{where}: expected {'an integer' if integer else 'a number'}, got {x!r}")
    if not np.isfinite(x) or (lo is not None and x < lo) or (hi is not None and x > hi):
        raise ConfigError(f"{where}: {x!r} out of range")
    return x


def _epsilon(x, where):
    return x if x == "schedule" else _number(x, where, 0, 1)


def _bound(x, where):
    if x == "median":
        return x
    if _number(x, where) <= 0:
        raise ConfigError(f"{where}: latency bound must be positive")
    return x


def parse_config(d: dict) -> ExperimentConfig:
    """Build and fully validate a config. Raises ConfigError."""
    d = dict(_fields(ExperimentConfig, d, "config"))
    try:
        pol = PolicySpec(**_fields(PolicySpec, d.pop("policy", {}), "policy"))
        sw = SweepSpec(**_fields(SweepSpec, d.pop("sweep", {}), "sweep"))
        reg = RegressorConfig(**_fields(RegressorConfig, d.pop("regressor", {}), "regressor"))
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    cfg = ExperimentConfig(policy=pol, sweep=sw, regressor=reg, **d)
    if cfg.preset is not None and cfg.preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {cfg.preset!r} (choose from {', '.join(PRESETS)})")
    for name, lo in (("n_configs", 2), ("T", 1), ("seed", 0), ("bootstrap", 1), ("window", 1),
                     ("offline_epochs", 1), ("workers", 1)):
        _number(getattr(cfg, name), name, lo, integer=True)
    _number(cfg.contribution_threshold, "contribution_threshold", 0, 1)
    _number(cfg.correlation_threshold, "correlation_threshold", 0, 1)
    if not isinstance(cfg.structured, bool):
        raise ConfigError("structured: expected true or false")
    if cfg.error_mode not in ("chosen", "all"):
        raise ConfigError("error_mode: expected 'chosen' or 'all'")
    if cfg.learn_on not in ("all", "explore"):
        raise ConfigError("learn_on: expected 'all' or 'explore'")
    for name in ("trace", "metrics", "model", "sweep_out", "compare_out"):
        if not isinstance(getattr(cfg, name), str) or not getattr(cfg, name):
            raise ConfigError(f"{name}: expected a path")
    _epsilon(pol.epsilon, "policy.epsilon")
    _bound(pol.latency_bound, "policy.latency_bound")
    if not isinstance(sw.epsilons, list) or not sw.epsilons:
        raise ConfigError("sweep.epsilons: expected a nonempty list")
    if not isinstance(sw.latency_bounds, list) or not sw.latency_bounds:
        raise ConfigError("sweep.latency_bounds: expected a nonempty list")
    for e in sw.epsilons:
        _epsilon(e, "sweep.epsilons")
    for b in sw.latency_bounds:
        _bound(b, "sweep.latency_bounds")
    try:
        graph, specs, gen, stage_params = cfg.application()
        if graph is not None:
            validate(graph)
        if gen is not None and graph is not None and specs is not None:
            gen.check(graph, specs)
    except FlowtuneError as e:
        raise ConfigError(f"application: {e}") from None
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"application: malformed description ({e})") from None
    if stage_params and specs is not None:
        for s, idx in stage_params.items():
            if not idx or any(not isinstance(j, int) or not 0 <= j < len(specs) for j in idx):
                raise ConfigError(f"stage_params.{s}: bad parameter indices {list(idx)}")
    return cfg


def _require_app(cfg):
    graph, specs, gen, stage_params = cfg.application()
    missing = [n for n, v in (("graph", graph), ("specs", specs), ("generator", gen)) if v is None]
    if missing:
        raise ConfigError(f"generate needs a preset or explicit {', '.join(missing)}")
    return graph, specs, gen


def _check_output(path: str):
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise ConfigError(f"output directory {parent} does not exist")


def _check_input(path: str):
    if not Path(path).is_file():
        raise ConfigError(f"trace file {path} not found")


def resolve_bound(bound, traces: TraceSet) -> float:
    if bound == "median":
        return float(np.median(traces.mean_latency()))
    return float(bound)


def _csv_writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _fmt(x):
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


# --- commands -------------------------------------------------------------------

def cmd_generate(cfg: ExperimentConfig) -> str:
    graph, specs, gen = _require_app(cfg)
    _check_output(cfg.trace)
    ts = generate(gen, graph, specs, cfg.n_configs, cfg.T, cfg.seed)
    ts.write(cfg.trace)
    print(f"wrote {cfg.trace}: {ts.n_configs} configs x {ts.horizon} frames, {len(graph.stages)} stages")
    return cfg.trace


def cmd_replay(cfg: ExperimentConfig) -> dict:
    _check_input(cfg.trace)
    _check_output(cfg.metrics)
    _check_output(cfg.model)
    ts = TraceSet.read(cfg.trace)
    _, _, _, stage_params = cfg.application()
    eps = epsilon_schedule(ts.horizon) if cfg.policy.epsilon == "schedule" else float(cfg.policy.epsilon)
    L = resolve_bound(cfg.policy.latency_bound, ts)
    m = replay(ts, PolicyConfig(eps, L, cfg.seed), cfg.regressor, cfg.structured,
               error_mode=cfg.error_mode, **cfg.replay_kwargs(stage_params))
    with open(cfg.metrics, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# epsilon={eps!r} ({cfg.policy.epsilon if cfg.policy.epsilon == 'schedule' else 'fixed'})\n")
        fh.write(f"# latency_bound={L!r}\n")
        fh.write(f"# structured={_fmt(cfg.structured)} degree={cfg.regressor.degree} seed={cfg.seed}\n")
        w = _csv_writer(fh)
        w.writerow(CSV_COLUMNS)
        for row in m.csv_rows():
            w.writerow([_fmt(v) for v in row])
    with open(cfg.model, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(m.model.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")
    summary = m.summary()
    print(json.dumps(summary, sort_keys=True))
    return summary


SWEEP_COLUMNS = ("epsilon", "latency_bound", "seed", "avg_reward", "avg_violation_s", "rel_violation",
                 "operating_point")


def cmd_sweep(cfg: ExperimentConfig) -> list:
    _check_input(cfg.trace)
    _check_output(cfg.sweep_out)
    ts = TraceSet.read(cfg.trace)
    _, _, _, stage_params = cfg.application()
    bounds = [resolve_bound(b, ts) for b in cfg.sweep.latency_bounds]
    rows = sweep_epsilon(ts, cfg.sweep.epsilons, bounds, cfg.regressor, cfg.structured, seed=cfg.seed,
                         workers=cfg.workers, **cfg.replay_kwargs(stage_params))
    with open(cfg.sweep_out, "w", encoding="utf-8", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])
    print(f"wrote {cfg.sweep_out}: {len(rows)} rows")
    return rows


def compare_columns():
    cols = ["frame"]
    for v in VARIANTS:
        cols += [f"{v}_mean", f"{v}_max"]
    return cols + ["structured_features", "unstructured_features"]


def cmd_compare_predictors(cfg: ExperimentConfig) -> dict:
    _check_input(cfg.trace)
    _check_output(cfg.compare_out)
    ts = TraceSet.read(cfg.trace)
    _, _, _, stage_params = cfg.application()
    out = compare_predictors(ts, cfg.regressor, seed=cfg.seed, bootstrap=cfg.bootstrap,
                             stage_params=stage_params, window=cfg.window, offline_epochs=cfg.offline_epochs)
    with open(cfg.compare_out, "w", encoding="utf-8", newline="") as fh:
        w = _csv_writer(fh)
        w.writerow(compare_columns())
        for t in range(ts.horizon):
            row = [t]
            for v in VARIANTS:
                row += [_fmt(out["mean"][v][t]), _fmt(out["max"][v][t])]
            w.writerow(row + [out["structured_features"], out["unstructured_features"]])
    final = {v: float(out["mean"][v][-1]) for v in VARIANTS}
    print(json.dumps({"final_mean_abs_err": final, "structured_features": out["structured_features"],
                      "unstructured_features": out["unstructured_features"]}, sort_keys=True))
    return out


COMMANDS = {
    "generate": (cmd_generate, "trace"),
    "replay": (cmd_replay, "metrics"),
    "sweep": (cmd_sweep, "sweep_out"),
    "compare-predictors": (cmd_compare_predictors, "compare_out"),
}


def _bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {s!r}")


def _num_or(word):
    def conv(s):
        if s == word:
            return s
        try:
            return float(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number or {word!r}, got {s!r}") from None
    return conv


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowtune", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="JSON experiment config")
        s.add_argument("--seed", type=int)
        s.add_argument("--epsilon", type=_num_or("schedule"))
        s.add_argument("--latency-bound", type=_num_or("median"))
        s.add_argument("--degree", type=int)
        s.add_argument("--structured", type=_bool)
        s.add_argument("--trace", help="trace file to read (or write, for generate)")
        s.add_argument("--out", help="primary output file of the command")
    return p


def load_config(args) -> ExperimentConfig:
    d = {}
    if args.config is not None:
        try:
            d = json.loads(args.config.read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}: invalid JSON ({e})") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
    d = dict(d)
    if args.seed is not None:
        d["seed"] = args.seed
    if args.structured is not None:
        d["structured"] = args.structured
    if args.trace is not None:
        d["trace"] = args.trace
    if args.out is not None:
        d[COMMANDS[args.command][1]] = args.out
    if args.epsilon is not None or args.latency_bound is not None:
        pol = dict(d.get("policy") or {})
        if args.epsilon is not None:
            pol["epsilon"] = args.epsilon
        if args.latency_bound is not None:
            pol["latency_bound"] = args.latency_bound
        d["policy"] = pol
    if args.degree is not None:
        d["regressor"] = {**(d.get("regressor") or {}), "degree": args.degree}
    return parse_config(d)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        COMMANDS[args.command][0](cfg)
    except ConfigError as e:
        print(f"flowtune: config error: {e}", file=sys.stderr)
        return 2
    except (FlowtuneError, OSError, ValueError, KeyError) as e:
        print(f"flowtune: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
