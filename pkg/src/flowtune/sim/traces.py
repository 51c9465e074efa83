"""Trace sets: a complete (frame x configuration) grid of stage latencies and rewards.

File format is JSON lines. The first line is a header holding the graph,
parameter specs, configurations and horizon; every following line is one
frame record::

    {"frame": 0, "config": 3, "stages": {"source": 0.0021, ...}, "end_to_end": 0.094, "reward": 0.81}

Records are written frame-major, configurations in id order.
"""
from __future__ import annotations

from dataclasses import dataclass
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from ..dataflow import DataFlowGraph, critical_path, validate
from ..errors import IncompleteTrace
from ..paramspace import Configuration, ParamSpec
from ..structured import StageSample, composition_tree

FORMAT = "flowtune-trace/1"


@dataclass(frozen=True)
class FrameRecord:
    frame: int
    config_id: object
    per_stage_latency: dict
    end_to_end: float
    reward: float


def end_to_end_grid(graph: DataFlowGraph, stage_lat: np.ndarray) -> np.ndarray:
    """Critical-path latency for every (frame, config) cell of a (T, C, S) array."""
    tree = composition_tree(graph)
    if tree is not None:
        values = {s: stage_lat[:, :, i] for i, s in enumerate(graph.stages)}
        return np.asarray(tree.evaluate(values), dtype=float)
    T, C, _ = stage_lat.shape
    out = np.empty((T, C))
    for t in range(T):
        for c in range(C):
            out[t, c] = critical_path(graph, dict(zip(graph.stages, stage_lat[t, c].tolist())))[1]
    return out


class TraceSet:
    """Immutable latency/reward grid plus the application description that produced it."""

    def __init__(self, graph: DataFlowGraph, specs: Sequence[ParamSpec], configs: Sequence[Configuration],
                 stage_latency: np.ndarray, end_to_end: np.ndarray, reward: np.ndarray, meta: dict | None = None):
        self.graph = graph
        self.specs = tuple(specs)
        self.configs = tuple(configs)
        self.stage_latency = np.asarray(stage_latency, dtype=float)
        self.end_to_end = np.asarray(end_to_end, dtype=float)
        self.reward = np.asarray(reward, dtype=float)
        self.meta = dict(meta or {})
        T, C = self.end_to_end.shape
        if self.stage_latency.shape != (T, C, len(graph.stages)) or self.reward.shape != (T, C):
            raise IncompleteTrace("trace arrays do not form a complete frame x config grid")
        if C != len(self.configs):
            raise IncompleteTrace(f"{C} configuration columns but {len(self.configs)} configurations")
        self._col = {c.id: i for i, c in enumerate(self.configs)}
        for a in (self.stage_latency, self.end_to_end, self.reward):
            a.flags.writeable = False

    @property
    def horizon(self) -> int:
        return self.end_to_end.shape[0]

    @property
    def n_configs(self) -> int:
        return len(self.configs)

    def column(self, config_id) -> int:
        return self._col[config_id]

    def record(self, frame: int, config_id) -> FrameRecord:
        c = self._col[config_id]
        stages = dict(zip(self.graph.stages, self.stage_latency[frame, c].tolist()))
        return FrameRecord(frame, config_id, stages, float(self.end_to_end[frame, c]), float(self.reward[frame, c]))

    def stage_sample(self, frame: int, config_id) -> StageSample:
        c = self._col[config_id]
        return StageSample(frame, config_id, dict(zip(self.graph.stages, self.stage_latency[frame, c].tolist())))

    def mean_latency(self) -> np.ndarray:
        return self.end_to_end.mean(axis=0)

    def mean_reward(self) -> np.ndarray:
        return self.reward.mean(axis=0)

    def reward_oracle(self) -> dict:
        return {c.id: float(r) for c, r in zip(self.configs, self.mean_reward())}

    def header(self) -> dict:
        return {
            "format": FORMAT,
            "graph": self.graph.to_dict(),
            "specs": [s.to_dict() for s in self.specs],
            "configs": [c.to_dict() for c in self.configs],
            "T": self.horizon,
            "meta": self.meta,
        }

    def check_consistency(self) -> None:
        """Every record's end_to_end must equal the critical path of its stage latencies."""
        expect = end_to_end_grid(self.graph, self.stage_latency)
        bad = np.argwhere(expect != self.end_to_end)
        if len(bad):
            t, c = bad[0]
            raise IncompleteTrace(f"frame {t}, config {self.configs[c].id}: end_to_end "
                                  f"{self.end_to_end[t, c]!r} != critical path {expect[t, c]!r}")

    def write(self, path) -> None:
        stages = self.graph.stages
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(self.header(), sort_keys=True) + "\n")
            for t in range(self.horizon):
                for ci, cfg in enumerate(self.configs):
                    rec = {
                        "frame": t,
                        "config": cfg.id,
                        "stages": dict(zip(stages, self.stage_latency[t, ci].tolist())),
                        "end_to_end": float(self.end_to_end[t, ci]),
                        "reward": float(self.reward[t, ci]),
                    }
                    fh.write(json.dumps(rec) + "\n")

    @classmethod
    def read(cls, path) -> "TraceSet":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            first = fh.readline()
            if not first.strip():
                raise IncompleteTrace(f"{path}: empty trace file")
            head = json.loads(first)
            graph = DataFlowGraph.from_dict(head["graph"])
            validate(graph)
            specs = [ParamSpec.from_dict(s) for s in head["specs"]]
            configs = [Configuration.from_dict(c) for c in head["configs"]]
            T, C, S = int(head["T"]), len(configs), len(graph.stages)
            col = {c.id: i for i, c in enumerate(configs)}
            lat = np.full((T, C, S), np.nan)
            e2e = np.full((T, C), np.nan)
            rew = np.full((T, C), np.nan)
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                t, c = rec["frame"], col.get(rec["config"])
                if c is None or not 0 <= t < T:
                    raise IncompleteTrace(f"record outside grid: frame {t}, config {rec['config']}")
                lat[t, c] = [rec["stages"][str(s)] for s in graph.stages]
                e2e[t, c] = rec["end_to_end"]
                rew[t, c] = rec["reward"]
        missing = np.argwhere(np.isnan(e2e))
        if len(missing):
            t, c = missing[0]
            raise IncompleteTrace(f"{path}: no record for frame {t}, config {configs[c].id} "
                                  f"({len(missing)} cells missing)")
        ts = cls(graph, specs, configs, lat, e2e, rew, head.get("meta"))
        ts.check_consistency()
        return ts
