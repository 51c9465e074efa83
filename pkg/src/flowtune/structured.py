"""End-to-end latency prediction composed from per-stage models.

Critical stages get an online regressor over the parameters that drive
them; the rest are tracked with a moving average. Stage predictions are
folded along the graph with sum (series) and max (parallel), which for a
series-parallel graph reproduces the critical path exactly.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .dataflow import DataFlowGraph, critical_path, validate
from .errors import EmptySamples, InsufficientVariation, UntrainedStage
from .paramspace import Configuration, ParamSpec, expand_matrix, normalize
from .regression import OnlineRegressor, RegressorConfig

DEFAULT_CONTRIBUTION = 0.05
DEFAULT_CORRELATION = 0.9
DEFAULT_WINDOW = 16
DEFAULT_BOOTSTRAP = 30


@dataclass(frozen=True)
class StageSample:
    frame: int
    config_id: object
    per_stage: Mapping


# --- composition tree -------------------------------------------------------

@dataclass(frozen=True)
class CompositionNode:
    op: str  # "sum" | "max" | "leaf"
    children: tuple = ()
    stage: object = None

    @classmethod
    def leaf(cls, stage) -> "CompositionNode":
        return cls("leaf", (), stage)

    def leaves(self) -> list:
        if self.op == "leaf":
            return [self.stage]
        return [s for c in self.children for s in c.leaves()]

    def evaluate(self, values: Mapping, acc=0.0):
        """Fold leaf values in path order.

        The running prefix sum is threaded through the tree so each path is
        summed in the same order as ``dataflow.critical_path`` does; the
        result is bit-identical to it. Works elementwise on numpy arrays.
        """
        if self.op == "leaf":
            return acc + values[self.stage]
        if self.op == "sum":
            for c in self.children:
                acc = c.evaluate(values, acc)
            return acc
        out = None
        for c in self.children:
            v = c.evaluate(values, acc)
            out = v if out is None else np.maximum(out, v)
        return out

    def to_dict(self):
        if self.op == "leaf":
            return {"leaf": self.stage}
        return {self.op: [c.to_dict() for c in self.children]}

    @classmethod
    def from_dict(cls, d) -> "CompositionNode":
        if "leaf" in d:
            return cls.leaf(d["leaf"])
        (op, kids), = d.items()
        return cls(op, tuple(cls.from_dict(k) for k in kids))

    def __str__(self):
        if self.op == "leaf":
            return str(self.stage)
        return f"{self.op}({', '.join(str(c) for c in self.children)})"


def _combine(op, parts):
    kids = []
    for p in parts:
        if p is None:
            continue  # empty connector: zero in a sum, dominated in a max of nonnegatives
        if p.op == op:
            kids.extend(p.children)
        else:
            kids.append(p)
    if not kids:
        return None
    if len(kids) == 1:
        return kids[0]
    if op == "max":
        kids.sort(key=lambda n: [str(s) for s in n.leaves()])
    return CompositionNode(op, tuple(kids))


def composition_tree(graph: DataFlowGraph) -> CompositionNode | None:
    """Series-parallel decomposition of a stage graph, or None if it is not series-parallel.

    Each stage becomes an edge ``(in, out)``; connectors become empty edges;
    a super source and sink join the terminals. Series and parallel edge
    reductions then run until one edge remains.
    """
    S, T = ("__src__",), ("__snk__",)
    edges = {}
    next_id = 0

    def add(u, v, label):
        nonlocal next_id
        edges[next_id] = (u, v, label)
        next_id += 1

    for s in graph.stages:
        add(("in", s), ("out", s), CompositionNode.leaf(s))
    for a, b in graph.connectors:
        add(("out", a), ("in", b), None)
    for s in graph.sources:
        add(S, ("in", s), None)
    for s in graph.sinks:
        add(("out", s), T, None)

    changed = True
    while changed and len(edges) > 1:
        changed = False
        groups: dict = {}
        for eid, (u, v, _) in edges.items():
            groups.setdefault((u, v), []).append(eid)
        for (u, v), ids in groups.items():
            if len(ids) > 1:
                label = _combine("max", [edges.pop(i)[2] for i in ids])
                add(u, v, label)
                changed = True
        if changed:
            continue
        ins: dict = {}
        outs: dict = {}
        for eid, (u, v, _) in edges.items():
            outs.setdefault(u, []).append(eid)
            ins.setdefault(v, []).append(eid)
        for node in sorted(set(ins) & set(outs), key=str):
            if node in (S, T) or len(ins[node]) != 1 or len(outs[node]) != 1:
                continue
            e1, e2 = edges.pop(ins[node][0]), edges.pop(outs[node][0])
            add(e1[0], e2[1], _combine("sum", [e1[2], e2[2]]))
            changed = True
            break
    if len(edges) != 1:
        return None
    (u, v, label), = edges.values()
    if (u, v) != (S, T) or label is None:
        return None
    return label


# --- stage models -------------------------------------------------------------

@dataclass
class MovingAverage:
    window: int = DEFAULT_WINDOW
    buffer: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("moving-average window must be >= 1")
        self.buffer = deque(self.buffer, maxlen=self.window)

    kind = "moving_average"

    def push(self, x: float):
        self.buffer.append(float(x))

    def value(self, stage=None) -> float:
        if not self.buffer:
            raise UntrainedStage(stage)
        return sum(self.buffer) / len(self.buffer)

    def to_dict(self):
        return {"kind": self.kind, "window": self.window, "buffer": list(self.buffer)}


@dataclass
class RegressorStage:
    regressor: OnlineRegressor
    params: tuple  # indices into the parameter spec list

    kind = "regressor"

    def __post_init__(self):
        self.params = tuple(self.params)
        if not self.params or len(set(self.params)) != len(self.params):
            raise ValueError("regressor stage needs a nonempty, duplicate-free parameter subset")

    def to_dict(self):
        return {"kind": self.kind, "params": list(self.params), "model": self.regressor.to_dict()}


def _stage_model_from_dict(d):
    if d["kind"] == "moving_average":
        return MovingAverage(d["window"], deque(d["buffer"]))
    return RegressorStage(OnlineRegressor.from_dict(d["model"]), tuple(d["params"]))


def regressor_inputs(k, specs) -> np.ndarray:
    """Regressor inputs for a parameter vector: normalized values recentred onto [-1, 1].

    Centring keeps the monomials of different degrees far less correlated
    than raw [0, 1] inputs would, which is what lets a subgradient learner
    make progress within a few hundred steps.
    """
    return 2.0 * np.asarray(normalize(k, specs)) - 1.0


class _FeatureCache:
    """Normalized parameter vectors and their expansions, keyed by parameter tuple."""

    def __init__(self, specs):
        self.specs = tuple(specs)
        self._norm: dict = {}
        self._phi: dict = {}
        self._mat: dict = {}

    def norm(self, k) -> np.ndarray:
        key = tuple(k)
        x = self._norm.get(key)
        if x is None:
            x = regressor_inputs(key, self.specs)
            self._norm[key] = x
        return x

    def phi(self, k, subset: tuple, degree: int) -> np.ndarray:
        key = (tuple(k), subset, degree)
        f = self._phi.get(key)
        if f is None:
            f = expand_matrix(self.norm(k)[list(subset)][None, :], degree)[0]
            self._phi[key] = f
        return f

    def phi_matrix(self, configs, subset: tuple, degree: int) -> np.ndarray:
        key = (id(configs), subset, degree)
        hit = self._mat.get(key)
        if hit is not None and hit[0] is configs:
            return hit[1]
        M = np.array([self.phi(c.params, subset, degree) for c in configs])
        self._mat[key] = (configs, M)
        return M


# --- the composed model -------------------------------------------------------

class StructuredLatencyModel:
    def __init__(self, graph: DataFlowGraph, specs: Sequence[ParamSpec], stage_models: Mapping,
                 tree: CompositionNode | None = None):
        self.graph = graph
        self.specs = tuple(specs)
        self.stage_models = dict(stage_models)
        self.tree = tree if tree is not None else composition_tree(graph)
        self._cache = _FeatureCache(self.specs)

    @property
    def n_features(self) -> int:
        return sum(len(m.regressor.weights) for m in self.stage_models.values() if m.kind == "regressor")

    def stage_predictions(self, k) -> dict:
        out = {}
        for s, m in self.stage_models.items():
            if m.kind == "regressor":
                phi = self._cache.phi(k, m.params, m.regressor.config.degree)
                out[s] = max(m.regressor.predict(phi), 0.0)
            else:
                out[s] = m.value(s)
        return out

    def compose(self, values: Mapping):
        if self.tree is not None:
            return self.tree.evaluate(values)
        # not series-parallel: evaluate the critical path directly
        if any(isinstance(v, np.ndarray) for v in values.values()):
            n = len(next(v for v in values.values() if isinstance(v, np.ndarray)))
            return np.array([critical_path(self.graph, {s: float(np.broadcast_to(v, n)[i]) for s, v in values.items()})[1]
                             for i in range(n)])
        return critical_path(self.graph, values)[1]

    def predict_end_to_end(self, k) -> float:
        return float(self.compose(self.stage_predictions(k)))

    def predict_configs(self, configs: Sequence[Configuration]) -> np.ndarray:
        values = {}
        for s, m in self.stage_models.items():
            if m.kind == "regressor":
                Phi = self._cache.phi_matrix(configs, m.params, m.regressor.config.degree)
                values[s] = np.maximum(m.regressor.predict_many(Phi), 0.0)
            else:
                values[s] = np.full(len(configs), m.value(s))
        return np.asarray(self.compose(values), dtype=float)

    def update(self, sample: StageSample, k, end_to_end: float | None = None) -> None:
        """Per-stage supervision: every leaf learns from its own observed stage latency."""
        for s, m in self.stage_models.items():
            y = float(sample.per_stage[s])
            if m.kind == "regressor":
                m.regressor.update(self._cache.phi(k, m.params, m.regressor.config.degree), y)
            else:
                m.push(y)

    def to_dict(self) -> dict:
        return {
            "type": "structured",
            "graph": self.graph.to_dict(),
            "specs": [s.to_dict() for s in self.specs],
            "tree": self.tree.to_dict() if self.tree is not None else None,
            "stage_models": {str(s): m.to_dict() for s, m in self.stage_models.items()},
        }

    @classmethod
    def from_dict(cls, d) -> "StructuredLatencyModel":
        graph = DataFlowGraph.from_dict(d["graph"])
        specs = [ParamSpec.from_dict(s) for s in d["specs"]]
        by_name = {str(s): s for s in graph.stages}
        models = {by_name[k]: _stage_model_from_dict(v) for k, v in d["stage_models"].items()}
        tree = CompositionNode.from_dict(d["tree"]) if d["tree"] is not None else None
        return cls(graph, specs, models, tree)


def predict_end_to_end(model: StructuredLatencyModel, k) -> float:
    return model.predict_end_to_end(k)


def update_structured(model: StructuredLatencyModel, sample: StageSample, k) -> StructuredLatencyModel:
    model.update(sample, k)
    return model


# --- analysis -----------------------------------------------------------------

def identify_critical_stages(samples: Sequence[StageSample], graph: DataFlowGraph,
                             contribution_threshold: float = DEFAULT_CONTRIBUTION) -> set:
    """Stages whose mean latency exceeds the given share of mean end-to-end latency."""
    if not samples:
        raise EmptySamples("need at least one stage sample")
    if not 0 < contribution_threshold <= 1:
        raise ValueError("contribution threshold must lie in (0, 1]")
    e2e = np.mean([critical_path(graph, s.per_stage)[1] for s in samples])
    if e2e <= 0:
        return set()
    out = set()
    for stage in graph.stages:
        share = np.mean([s.per_stage[stage] for s in samples]) / e2e
        if share > contribution_threshold:
            out.add(stage)
    return out


def rank_correlation(x, y) -> float:
    """Pearson correlation of average ranks (Spearman's rho); 0 if either side is constant."""
    rx, ry = rankdata(x), rankdata(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    den = np.sqrt((rx @ rx) * (ry @ ry))
    return 0.0 if den == 0 else float(rx @ ry / den)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float) - np.mean(x)
    y = np.asarray(y, dtype=float) - np.mean(y)
    den = np.sqrt((x @ x) * (y @ y))
    return 0.0 if den == 0 else float(x @ y / den)


def dependency_analysis(samples: Sequence[StageSample], configs: Sequence[Configuration],
                        threshold: float = DEFAULT_CORRELATION, method: str = "rank") -> dict:
    """Associate parameters with stages whose per-configuration mean latency tracks them.

    ``method`` is ``"rank"`` (correlation of ranks, catches monotone
    nonlinear laws such as 1/parallelism) or ``"pearson"`` (raw values).
    Parameters constant across the observed configurations are skipped.
    """
    corr = rank_correlation if method == "rank" else pearson
    by_id = {c.id: c for c in configs}
    seen = sorted({s.config_id for s in samples}, key=str)
    if len(seen) < 3:
        raise InsufficientVariation(f"need >= 3 distinct configurations, saw {len(seen)}")
    stages = list(samples[0].per_stage)
    means = {s: [] for s in stages}
    for cid in seen:
        rows = [smp for smp in samples if smp.config_id == cid]
        for s in stages:
            means[s].append(np.mean([r.per_stage[s] for r in rows]))
    params = np.array([by_id[cid].params for cid in seen], dtype=float)
    out = {s: [] for s in stages}
    for j in range(params.shape[1]):
        col = params[:, j]
        if np.all(col == col[0]):
            continue
        for s in stages:
            if abs(corr(col, means[s])) > threshold:
                out[s].append(j)
    return out


def build(graph: DataFlowGraph, samples: Sequence[StageSample], configs: Sequence[Configuration],
          specs: Sequence[ParamSpec], regressor_config: RegressorConfig, *,
          contribution_threshold: float = DEFAULT_CONTRIBUTION,
          correlation_threshold: float = DEFAULT_CORRELATION,
          window: int = DEFAULT_WINDOW,
          stage_params: Mapping | None = None,
          warm_start: bool = True) -> StructuredLatencyModel:
    """Assemble a structured model from bootstrap observations.

    ``stage_params`` pins the parameter subset of named stages instead of
    inferring it by correlation. With ``warm_start`` the bootstrap samples
    are also streamed through the new leaves.
    """
    validate(graph)
    critical = identify_critical_stages(samples, graph, contribution_threshold)
    stage_params = dict(stage_params or {})
    deps = {}
    if set(critical) - set(stage_params):
        deps = dependency_analysis(samples, configs, correlation_threshold)
    every = tuple(range(len(specs)))
    models = {}
    for s in graph.stages:
        if s in critical:
            subset = tuple(stage_params.get(s) or deps.get(s) or every)
            models[s] = RegressorStage(OnlineRegressor(len(subset), regressor_config), subset)
        else:
            models[s] = MovingAverage(window)
    model = StructuredLatencyModel(graph, specs, models)
    if warm_start:
        by_id = {c.id: c for c in configs}
        for smp in samples:
            model.update(smp, by_id[smp.config_id].params)
    return model


# --- unstructured counterpart ----------------------------------------------

class MonolithicLatencyModel:
    """One regressor over all parameters, trained on end-to-end latency."""

    def __init__(self, specs: Sequence[ParamSpec], regressor_config: RegressorConfig,
                 regressor: OnlineRegressor | None = None):
        self.specs = tuple(specs)
        self.regressor = regressor or OnlineRegressor(len(self.specs), regressor_config)
        self._cache = _FeatureCache(self.specs)
        self._all = tuple(range(len(self.specs)))

    @property
    def n_features(self) -> int:
        return len(self.regressor.weights)

    def _phi(self, k):
        return self._cache.phi(k, self._all, self.regressor.config.degree)

    def predict_end_to_end(self, k) -> float:
        return max(self.regressor.predict(self._phi(k)), 0.0)

    def predict_configs(self, configs) -> np.ndarray:
        Phi = self._cache.phi_matrix(configs, self._all, self.regressor.config.degree)
        return np.maximum(self.regressor.predict_many(Phi), 0.0)

    def update(self, sample: StageSample, k, end_to_end: float | None = None) -> None:
        if end_to_end is None:
            raise ValueError("monolithic model needs the end-to-end latency")
        self.regressor.update(self._phi(k), float(end_to_end))

    def to_dict(self) -> dict:
        return {"type": "monolithic", "specs": [s.to_dict() for s in self.specs],
                "regressor": self.regressor.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "MonolithicLatencyModel":
        reg = OnlineRegressor.from_dict(d["regressor"])
        return cls([ParamSpec.from_dict(s) for s in d["specs"]], reg.config, reg)
