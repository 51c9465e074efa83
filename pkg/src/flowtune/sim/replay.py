"""Trace replay of the learn-and-control loop, epsilon sweeps and predictor comparisons.

The trace grid holds every configuration's outcome for every frame, so a
replay can switch configurations freely: at frame t the policy picks a
configuration, the loop reads that cell, scores it, and feeds the observed
latencies back to the predictor.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import math
from typing import Mapping, Sequence

import numpy as np

from ..controller import ActionSet, Decision, PolicyConfig, best_feasible, constraint_violation, \
    epsilon_schedule, select_action
from ..errors import IncompleteTrace, UntrainedStage
from ..regression import RegressorConfig, fit_offline
from ..structured import DEFAULT_BOOTSTRAP, DEFAULT_CONTRIBUTION, DEFAULT_CORRELATION, DEFAULT_WINDOW, \
    MonolithicLatencyModel, MovingAverage, StructuredLatencyModel, build
from .traces import TraceSet

CSV_COLUMNS = ("frame", "mean_abs_err", "max_err", "reward", "violation")


@dataclass
class RunMetrics:
    latency_bound: float
    epsilon: float
    config_id: list = field(default_factory=list)
    mode: list = field(default_factory=list)
    predicted: list = field(default_factory=list)
    observed: list = field(default_factory=list)
    abs_err: list = field(default_factory=list)
    mean_abs_err: list = field(default_factory=list)
    max_err: list = field(default_factory=list)
    reward: list = field(default_factory=list)
    violation: list = field(default_factory=list)
    model: object = None

    def record(self, decision: Decision, predicted: float, observed: float, err: float, reward: float):
        n = len(self.abs_err)
        self.config_id.append(decision.config_id)
        self.mode.append(decision.mode)
        self.predicted.append(predicted)
        self.observed.append(observed)
        self.abs_err.append(err)
        self.mean_abs_err.append(err if n == 0 else self.mean_abs_err[-1] + (err - self.mean_abs_err[-1]) / (n + 1))
        self.max_err.append(err if n == 0 else max(self.max_err[-1], err))
        self.reward.append(reward)
        self.violation.append(constraint_violation(observed, self.latency_bound))

    @property
    def T(self) -> int:
        return len(self.reward)

    @property
    def avg_reward(self) -> float:
        return float(np.mean(self.reward))

    @property
    def avg_violation(self) -> float:
        return float(np.mean(self.violation))

    @property
    def rel_violation(self) -> float:
        return self.avg_violation / self.latency_bound

    @property
    def worst_rel_violation(self) -> float:
        return max(self.violation) / self.latency_bound

    @property
    def explore_count(self) -> int:
        return self.mode.count("explore")

    def summary(self) -> dict:
        return {
            "T": self.T,
            "epsilon": self.epsilon,
            "latency_bound": self.latency_bound,
            "avg_reward": self.avg_reward,
            "avg_violation_s": self.avg_violation,
            "rel_violation": self.rel_violation,
            "worst_rel_violation": self.worst_rel_violation,
            "final_mean_abs_err": self.mean_abs_err[-1],
            "final_max_err": self.max_err[-1],
            "explore": self.explore_count,
            "exploit": self.T - self.explore_count,
        }

    def csv_rows(self):
        for t in range(self.T):
            yield (t, self.mean_abs_err[t], self.max_err[t], self.reward[t], self.violation[t])


class OracleModel:
    """Predicts each configuration's true mean end-to-end latency; never learns."""

    def __init__(self, traces: TraceSet):
        self._lat = {c.id: float(v) for c, v in zip(traces.configs, traces.mean_latency())}

    def predict_configs(self, configs):
        return np.array([self._lat[c.id] for c in configs])

    def update(self, sample, k, end_to_end=None):
        pass

    def to_dict(self):
        return {"type": "oracle", "latency": {str(k): v for k, v in self._lat.items()}}


def _provisional(traces: TraceSet, window: int) -> StructuredLatencyModel:
    # stand-in until the bootstrap window is over: every stage tracked by its moving average
    return StructuredLatencyModel(traces.graph, traces.specs, {s: MovingAverage(window) for s in traces.graph.stages})


def _predict(model, configs) -> np.ndarray:
    try:
        return np.asarray(model.predict_configs(configs), dtype=float)
    except UntrainedStage:
        return np.zeros(len(configs))


def _bootstrap_choice(seed: int, t: int, n: int) -> int:
    return int(np.random.default_rng([int(seed), int(t), 1]).integers(n))


def replay(traces: TraceSet, policy: PolicyConfig, regressor_config: RegressorConfig | None = None,
           structured: bool = True, *, bootstrap: int = DEFAULT_BOOTSTRAP, model=None,
           error_mode: str = "chosen", stage_params: Mapping | None = None,
           contribution_threshold: float = DEFAULT_CONTRIBUTION,
           correlation_threshold: float = DEFAULT_CORRELATION,
           window: int = DEFAULT_WINDOW, bootstrap_explore: bool = False,
           learn_on: str = "all") -> RunMetrics:
    """Run the epsilon-greedy learn-and-control loop over a trace.

    During the first ``bootstrap`` frames a structured run predicts with
    moving averages only; the structured model is then built from those
    frames. Bootstrap decisions follow the policy unless
    ``bootstrap_explore`` forces uniform exploration.

    Prediction errors are measured before each update, on the chosen
    configuration (``error_mode="chosen"``) or averaged over all
    configurations of the frame (``error_mode="all"``). With
    ``learn_on="explore"`` the predictor is only updated on exploration
    frames (bootstrap frames are still collected for the build). Pass
    ``model`` to start from an existing predictor.
    """
    if error_mode not in ("chosen", "all"):
        raise ValueError("error_mode must be 'chosen' or 'all'")
    if learn_on not in ("all", "explore"):
        raise ValueError("learn_on must be 'all' or 'explore'")
    if traces.horizon < 1 or traces.n_configs < 1:
        raise IncompleteTrace("trace has no frames")
    regressor_config = regressor_config or RegressorConfig()
    configs = list(traces.configs)
    actions = ActionSet(configs, traces.reward_oracle())
    params = {c.id: c.params for c in configs}
    pending_build = False
    if model is None:
        if structured:
            if bootstrap < 1:
                raise ValueError("a structured model needs at least one bootstrap frame")
            model = _provisional(traces, window)
            pending_build = True
        else:
            model = MonolithicLatencyModel(traces.specs, regressor_config)
    metrics = RunMetrics(policy.latency_bound, policy.epsilon)
    boot = []
    for t in range(traces.horizon):
        preds = _predict(model, configs)
        if t < bootstrap and bootstrap_explore:
            i = _bootstrap_choice(policy.rng_seed, t, len(configs))
            decision = Decision(configs[i].id, "explore", float(preds[i]))
        else:
            decision = select_action(t, actions, model, policy, preds)
        col = traces.column(decision.config_id)
        observed = float(traces.end_to_end[t, col])
        if error_mode == "chosen":
            err = abs(float(preds[col]) - observed)
        else:
            err = float(np.mean(np.abs(preds - traces.end_to_end[t])))
        metrics.record(decision, float(preds[col]), observed, err, float(traces.reward[t, col]))
        sample = traces.stage_sample(t, decision.config_id)
        if learn_on == "all" or decision.mode == "explore":
            model.update(sample, params[decision.config_id], observed)
        if pending_build:
            boot.append(sample)
            if len(boot) == bootstrap:
                model = build(traces.graph, boot, configs, traces.specs, regressor_config,
                              contribution_threshold=contribution_threshold,
                              correlation_threshold=correlation_threshold,
                              window=window, stage_params=stage_params)
                pending_build = False
    metrics.model = model
    return metrics


def resolve_epsilon(epsilon, T: int) -> float:
    if epsilon == "schedule":
        return epsilon_schedule(T)
    return float(epsilon)


def operating_point_index(epsilons: Sequence[float], T: int) -> int:
    """Grid entry closest (in log scale) to the 1/sqrt(T) schedule."""
    target = math.log(epsilon_schedule(T))
    return min(range(len(epsilons)), key=lambda i: (abs(math.log(max(epsilons[i], 1e-300)) - target), i))


def _seed_for(seed: int, i: int, j: int) -> int:
    return int(np.random.SeedSequence([int(seed), i, j]).generate_state(1)[0])


def _sweep_cell(args):
    traces, eps, L, seed, regressor_config, structured, kwargs = args
    m = replay(traces, PolicyConfig(eps, L, seed), regressor_config, structured, **kwargs)
    return m.avg_reward, m.avg_violation


def sweep_epsilon(traces: TraceSet, epsilons: Sequence, L_values: Sequence[float],
                  regressor_config: RegressorConfig | None = None, structured: bool = True, *,
                  seed: int = 0, workers: int = 1, **replay_kwargs) -> list[dict]:
    """One replay per (epsilon, L) pair with its own seed. Rows ordered L-major, then epsilon.

    ``operating_point`` marks the epsilon nearest 1/sqrt(T) once per L.
    """
    if not epsilons or not L_values:
        raise ValueError("epsilon and latency-bound grids must be nonempty")
    T = traces.horizon
    eps = [resolve_epsilon(e, T) for e in epsilons]
    op = operating_point_index(eps, T)
    jobs = []
    for j, L in enumerate(L_values):
        for i, e in enumerate(eps):
            jobs.append((traces, e, float(L), _seed_for(seed, i, j), regressor_config, structured, replay_kwargs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(job) for job in jobs]
    rows = []
    for (_, e, L, s, *_), (rew, vio), k in zip(jobs, results, range(len(jobs))):
        rows.append({
            "epsilon": e,
            "latency_bound": L,
            "seed": s,
            "avg_reward": rew,
            "avg_violation_s": vio,
            "rel_violation": vio / L,
            "operating_point": k % len(eps) == op,
        })
    return rows


def best_fixed_feasible(traces: TraceSet, L: float):
    """(config id, mean reward) of the best configuration whose mean latency is within L."""
    ids = [c.id for c in traces.configs]
    lat = traces.mean_latency()
    rew = traces.mean_reward()
    if not np.any(lat <= L):
        return None, float("nan")
    i = best_feasible(ids, list(rew), list(lat), L)
    return ids[i], float(rew[i])


# --- predictor comparison under random actions --------------------------------

VARIANTS = ("online_d1", "online_d2", "online_d3", "offline_d1", "offline_d2", "offline_d3",
            "structured_d3", "unstructured_d3")


def _running(errs: np.ndarray):
    n = np.arange(1, len(errs) + 1)
    return np.cumsum(errs) / n, np.maximum.accumulate(errs)


def random_actions(traces: TraceSet, seed: int) -> list[int]:
    n = traces.n_configs
    return [int(np.random.default_rng([int(seed), t]).integers(n)) for t in range(traces.horizon)]


def _online_errors(traces, cols, model) -> np.ndarray:
    configs = traces.configs
    errs = np.empty(len(cols))
    for t, c in enumerate(cols):
        k = configs[c].params
        y = float(traces.end_to_end[t, c])
        try:
            pred = model.predict_end_to_end(k)
        except UntrainedStage:
            pred = 0.0
        errs[t] = abs(pred - y)
        model.update(traces.stage_sample(t, configs[c].id), k, y)
    return errs


def _structured_errors(traces, cols, regressor_config, bootstrap, stage_params, window):
    configs = traces.configs
    model = _provisional(traces, window)
    boot = []
    errs = np.empty(len(cols))
    for t, c in enumerate(cols):
        k = configs[c].params
        y = float(traces.end_to_end[t, c])
        try:
            pred = model.predict_end_to_end(k)
        except UntrainedStage:
            pred = 0.0
        errs[t] = abs(pred - y)
        sample = traces.stage_sample(t, configs[c].id)
        model.update(sample, k, y)
        if boot is not None:
            boot.append(sample)
            if len(boot) == bootstrap:
                model = build(traces.graph, boot, configs, traces.specs, regressor_config,
                              window=window, stage_params=stage_params)
                boot = None
    return errs, model


def compare_predictors(traces: TraceSet, regressor_config: RegressorConfig | None = None, *,
                       seed: int = 0, bootstrap: int = DEFAULT_BOOTSTRAP, stage_params: Mapping | None = None,
                       window: int = DEFAULT_WINDOW, offline_epochs: int = 500) -> dict:
    """Online vs offline predictors of degree 1-3, plus structured vs unstructured cubic.

    Actions are drawn uniformly at random every frame. Returns per-variant
    running mean and running max absolute errors, the per-frame raw errors,
    and the feature counts of the two cubic models.
    """
    base = regressor_config or RegressorConfig()
    cols = random_actions(traces, seed)
    out = {"errors": {}, "mean": {}, "max": {}}
    for d in (1, 2, 3):
        cfg = RegressorConfig(base.gamma, base.tube, base.eta0, base.radius, d)
        online = MonolithicLatencyModel(traces.specs, cfg)
        errs = _online_errors(traces, cols, online)
        out["errors"][f"online_d{d}"] = errs
        if d == 3:
            out["errors"]["unstructured_d3"] = errs
            out["unstructured_features"] = online.n_features
        ks = [traces.configs[c].params for c in cols]
        X = np.array([online._phi(k) for k in ks])
        y = np.array([traces.end_to_end[t, c] for t, c in enumerate(cols)])
        off = fit_offline((X, y), cfg, len(traces.specs), max_epochs=offline_epochs, seed=seed)
        out["errors"][f"offline_d{d}"] = np.abs(np.maximum(X @ off.weights, 0.0) - y)
    cfg3 = RegressorConfig(base.gamma, base.tube, base.eta0, base.radius, 3)
    errs, smodel = _structured_errors(traces, cols, cfg3, bootstrap, stage_params, window)
    out["errors"]["structured_d3"] = errs
    out["structured_features"] = smodel.n_features
    for v in VARIANTS:
        out["mean"][v], out["max"][v] = _running(out["errors"][v])
    return out
