"""Data-flow graphs of pipeline stages and their critical path.

A graph is a DAG whose vertices are stages and whose edges (connectors) are
data dependencies. Stages carry a latency weight; the end-to-end latency of
one frame is the weight of the heaviest source-to-sink path.
"""
from __future__ import annotations

from collections.abc import Hashable, Iterable, Mapping
from dataclasses import dataclass, field

from .errors import CycleDetected, DanglingConnector, GraphError, MissingWeight, UnreachableStage

StageId = Hashable


@dataclass(frozen=True)
class DataFlowGraph:
    stages: tuple
    connectors: tuple = ()
    _succ: dict = field(init=False, repr=False, compare=False)
    _pred: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "connectors", tuple(tuple(c) for c in self.connectors))
        succ = {s: [] for s in self.stages}
        pred = {s: [] for s in self.stages}
        for a, b in self.connectors:
            if a in succ and b in succ:
                succ[a].append(b)
                pred[b].append(a)
        object.__setattr__(self, "_succ", {k: tuple(sorted(v)) for k, v in succ.items()})
        object.__setattr__(self, "_pred", {k: tuple(sorted(v)) for k, v in pred.items()})

    @property
    def sources(self) -> tuple:
        return tuple(s for s in self.stages if not self._pred[s])

    @property
    def sinks(self) -> tuple:
        return tuple(s for s in self.stages if not self._succ[s])

    def successors(self, stage) -> tuple:
        return self._succ[stage]

    def predecessors(self, stage) -> tuple:
        return self._pred[stage]

    def to_dict(self) -> dict:
        return {"stages": list(self.stages), "connectors": [list(c) for c in self.connectors]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DataFlowGraph":
        return cls(tuple(d["stages"]), tuple(tuple(c) for c in d.get("connectors", ())))

    @classmethod
    def chain(cls, stages: Iterable) -> "DataFlowGraph":
        stages = tuple(stages)
        return cls(stages, tuple(zip(stages, stages[1:])))


def _find_cycle(graph: DataFlowGraph):
    WHITE, GREY, BLACK = 0, 1, 2
    color = {s: WHITE for s in graph.stages}
    for root in graph.stages:
        if color[root] != WHITE:
            continue
        stack = [(root, iter(graph.successors(root)))]
        path = [root]
        color[root] = GREY
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = BLACK
                stack.pop()
                path.pop()
            elif color[nxt] == GREY:
                return path[path.index(nxt):]
            elif color[nxt] == WHITE:
                color[nxt] = GREY
                stack.append((nxt, iter(graph.successors(nxt))))
                path.append(nxt)
    return None


def _reach(start, step):
    seen = set(start)
    todo = list(start)
    while todo:
        for nxt in step(todo.pop()):
            if nxt not in seen:
                seen.add(nxt)
                todo.append(nxt)
    return seen


def validate(graph: DataFlowGraph) -> None:
    """Raise the first violated graph invariant; return None if the graph is well formed.

    Checks run in order: duplicate/empty stage set, dangling connectors,
    cycles, then reachability from a source and to a sink.
    """
    if not graph.stages:
        raise GraphError("graph has no stages")
    if len(set(graph.stages)) != len(graph.stages):
        raise GraphError("duplicate stage ids")
    known = set(graph.stages)
    for pair in graph.connectors:
        if len(pair) != 2 or pair[0] not in known or pair[1] not in known:
            raise DanglingConnector(pair)
    cycle = _find_cycle(graph)
    if cycle is not None:
        raise CycleDetected(cycle)
    from_src = _reach(graph.sources, graph.successors)
    to_sink = _reach(graph.sinks, graph.predecessors)
    for s in graph.stages:
        if s not in from_src:
            raise UnreachableStage(s, "not reachable from any source")
        if s not in to_sink:
            raise UnreachableStage(s, "unable to reach any sink")


def topological_order(graph: DataFlowGraph) -> list:
    """Kahn's algorithm; among ready stages the smallest id goes first."""
    import heapq

    indeg = {s: len(graph.predecessors(s)) for s in graph.stages}
    ready = [s for s in graph.stages if indeg[s] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        s = heapq.heappop(ready)
        order.append(s)
        for t in graph.successors(s):
            indeg[t] -= 1
            if indeg[t] == 0:
                heapq.heappush(ready, t)
    if len(order) != len(graph.stages):
        raise CycleDetected(_find_cycle(graph) or [])
    return order


def critical_path(graph: DataFlowGraph, weights: Mapping, edge_weights: Mapping | None = None):
    """Heaviest source-to-sink path and its latency.

    Equal-latency paths are resolved to the lexicographically smallest
    stage-id sequence. ``edge_weights`` maps connector pairs to extra
    latency; missing connectors count as zero.
    """
    for s in graph.stages:
        if s not in weights:
            raise MissingWeight(s)
        if not weights[s] >= 0:
            raise ValueError(f"stage {s!r}: latency must be nonnegative, got {weights[s]!r}")
    best: dict = {}
    for v in topological_order(graph):
        w = float(weights[v])
        preds = graph.predecessors(v)
        if not preds:
            best[v] = (w, (v,))
            continue
        cand = None
        for u in preds:
            lat_u, path_u = best[u]
            e = float(edge_weights.get((u, v), 0.0)) if edge_weights else 0.0
            lat = lat_u + e + w
            path = path_u + (v,)
            if cand is None or lat > cand[0] or (lat == cand[0] and path < cand[1]):
                cand = (lat, path)
        best[v] = cand
    result = None
    for s in graph.sinks:
        lat, path = best[s]
        if result is None or lat > result[0] or (lat == result[0] and path < result[1]):
            result = (lat, path)
    return list(result[1]), result[0]


def critical_path_latency(graph: DataFlowGraph, weights: Mapping) -> float:
    return critical_path(graph, weights)[1]


def all_paths(graph: DataFlowGraph) -> list:
    """Every source-to-sink path, by plain DFS. Exponential; meant for small graphs."""
    out = []

    def walk(path):
        succ = graph.successors(path[-1])
        if not succ:
            out.append(list(path))
        for nxt in succ:
            walk(path + [nxt])

    for s in graph.sources:
        walk([s])
    return out
