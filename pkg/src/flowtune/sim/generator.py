"""Synthetic trace generation.

Each stage follows a multiplicative latency law

    base * scale**(-scale_exponent) / parallelism * quality_multiplier**quality * scene(t)

plus Gaussian noise truncated to keep latencies nonnegative. Rewards drop
as parameters move away from their (fidelity-maximizing) defaults.
Translation errors in the pose reward law are in centimetres, rotation
errors in radians.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..dataflow import DataFlowGraph, validate
from ..errors import InvalidGenerator
from ..fidelity import ClassificationOutcome, PoseOutcome, PoseWeights, f1_reward, pose_reward
from ..paramspace import ParamSpec, normalize, sample_configurations
from .traces import TraceSet, end_to_end_grid


@dataclass(frozen=True)
class StageLaw:
    base: float
    scale_param: int | None = None
    scale_exponent: float = 0.0
    parallelism_param: int | None = None
    quality_param: int | None = None
    quality_multiplier: float = 1.0
    noise_sigma: float = 0.0
    scene_sensitive: bool = True

    def mean(self, k: Sequence[float]) -> float:
        v = self.base
        if self.scale_param is not None:
            v *= float(k[self.scale_param]) ** (-self.scale_exponent)
        if self.parallelism_param is not None:
            v /= float(k[self.parallelism_param])
        if self.quality_param is not None:
            v *= self.quality_multiplier ** float(k[self.quality_param])
        return v


@dataclass(frozen=True)
class RewardLaw:
    kind: str = "f1"  # "f1" | "pose"
    # (param index, weight): penalty on normalized distance from the default value
    penalties: tuple = ()
    noise: float = 0.02
    n_objects: int = 2
    tau_scale: float = 0.3
    theta_scale: float = 0.1

    def penalty(self, k, specs) -> float:
        x = normalize(k, specs)
        d = normalize([s.default for s in specs], specs)
        return sum(w * abs(x[j] - d[j]) for j, w in self.penalties)


@dataclass(frozen=True)
class GeneratorSpec:
    stages: Mapping  # stage id -> StageLaw
    reward: RewardLaw = field(default_factory=RewardLaw)
    scene_change_frame: int | None = None
    scene_multiplier: float = 1.0

    def check(self, graph: DataFlowGraph, specs: Sequence[ParamSpec]) -> None:
        if set(self.stages) != set(graph.stages):
            raise InvalidGenerator("generator must define a law for exactly the graph's stages")
        m = len(specs)
        for s, law in self.stages.items():
            if not law.base > 0:
                raise InvalidGenerator(f"{s}: base latency must be positive")
            if law.noise_sigma < 0:
                raise InvalidGenerator(f"{s}: noise_sigma must be nonnegative")
            if law.quality_multiplier <= 0:
                raise InvalidGenerator(f"{s}: quality multiplier must be positive")
            for j in (law.scale_param, law.parallelism_param, law.quality_param):
                if j is not None and not 0 <= j < m:
                    raise InvalidGenerator(f"{s}: parameter index {j} out of range")
            if law.scale_param is not None and specs[law.scale_param].lo <= 0:
                raise InvalidGenerator(f"{s}: scale parameter must be positive")
            if law.parallelism_param is not None and specs[law.parallelism_param].lo <= 0:
                raise InvalidGenerator(f"{s}: parallelism parameter must be positive")
        if self.scene_multiplier <= 0:
            raise InvalidGenerator("scene multiplier must be positive")
        if self.reward.kind not in ("f1", "pose"):
            raise InvalidGenerator(f"unknown reward law {self.reward.kind!r}")
        for j, w in self.reward.penalties:
            if not 0 <= j < m or w < 0:
                raise InvalidGenerator(f"bad reward penalty ({j}, {w})")

    def to_dict(self) -> dict:
        return {
            "stages": {str(s): asdict(law) for s, law in self.stages.items()},
            "reward": {**asdict(self.reward), "penalties": [list(p) for p in self.reward.penalties]},
            "scene_change_frame": self.scene_change_frame,
            "scene_multiplier": self.scene_multiplier,
        }

    @classmethod
    def from_dict(cls, d) -> "GeneratorSpec":
        rw = dict(d.get("reward", {}))
        rw["penalties"] = tuple(tuple(p) for p in rw.get("penalties", ()))
        return cls(
            {s: StageLaw(**law) for s, law in d["stages"].items()},
            RewardLaw(**rw),
            d.get("scene_change_frame"),
            d.get("scene_multiplier", 1.0),
        )


def _truncated_normal(rng, mean: np.ndarray, sigma: float) -> np.ndarray:
    out = mean + rng.normal(0.0, 1.0, mean.shape) * sigma
    bad = out < 0
    while bad.any():
        out[bad] = mean[bad] + rng.normal(0.0, 1.0, int(bad.sum())) * sigma
        bad = out < 0
    return out


def _rewards(law: RewardLaw, specs, configs, T, rng) -> np.ndarray:
    C = len(configs)
    pen = np.array([law.penalty(c.params, specs) for c in configs])
    out = np.empty((T, C))
    if law.kind == "f1":
        p = np.clip(1.0 - pen[None, :] + rng.normal(0, law.noise, (T, C)), 0, 1)
        r = np.clip(1.0 - 0.5 * pen[None, :] + rng.normal(0, law.noise, (T, C)), 0, 1)
        for t in range(T):
            for c in range(C):
                out[t, c] = f1_reward(ClassificationOutcome(float(p[t, c]), float(r[t, c])))
        return out
    n = law.n_objects
    weights = PoseWeights()
    p_rec = np.clip(1.0 - pen, 0, 1)
    rec = rng.random((T, C, n)) < p_rec[None, :, None]
    tau = rng.exponential(1.0, (T, C, n)) * law.tau_scale * (1 + 3 * pen)[None, :, None]
    theta = rng.exponential(1.0, (T, C, n)) * law.theta_scale * (1 + 3 * pen)[None, :, None]
    for t in range(T):
        for c in range(C):
            out[t, c] = pose_reward(PoseOutcome(rec[t, c].astype(int).tolist(), tau[t, c].tolist(),
                                                theta[t, c].tolist()), weights)
    return out


def generate(gen: GeneratorSpec, graph: DataFlowGraph, specs: Sequence[ParamSpec],
             n_configs: int, T: int, seed: int, configs=None) -> TraceSet:
    """Sample configurations and fill the full (frame x config) grid.

    ``configs`` may supply the configurations instead of sampling them.
    """
    if n_configs < 2 or T < 1:
        raise InvalidGenerator("need at least 2 configurations and 1 frame")
    validate(graph)
    gen.check(graph, specs)
    cfg_rng, lat_rng, rew_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    if configs is None:
        configs = sample_configurations(specs, n_configs, cfg_rng)
    configs = list(configs)
    C = len(configs)
    scene = np.ones(T)
    if gen.scene_change_frame is not None:
        scene[gen.scene_change_frame:] = gen.scene_multiplier
    lat = np.empty((T, C, len(graph.stages)))
    for i, s in enumerate(graph.stages):
        law = gen.stages[s]
        mean = np.array([law.mean(c.params) for c in configs])
        mult = scene if law.scene_sensitive else np.ones(T)
        lat[:, :, i] = _truncated_normal(lat_rng, mult[:, None] * mean[None, :], law.noise_sigma)
    e2e = end_to_end_grid(graph, lat)
    rew = _rewards(gen.reward, specs, configs, T, rew_rng)
    meta = {"seed": seed, "generator": gen.to_dict()}
    return TraceSet(graph, specs, configs, lat, e2e, rew, meta)


# --- presets ------------------------------------------------------------------

GESTURE_GRAPH = DataFlowGraph(
    ("source", "copy", "face_scale", "face_detect", "motion_scale", "motion_extract", "classify", "sink"),
    (("source", "copy"), ("copy", "face_scale"), ("face_scale", "face_detect"),
     ("copy", "motion_scale"), ("motion_scale", "motion_extract"),
     ("face_detect", "classify"), ("motion_extract", "classify"), ("classify", "sink")),
)

# Same parameters as the gesture application, with ranges narrowed to a
# desk-scale cluster so a few random configurations span the latency bound.
GESTURE_SPECS = (
    ParamSpec("face_scale", "continuous", 1, 4, 1),
    ParamSpec("motion_scale", "continuous", 1, 4, 1),
    ParamSpec("face_quality", "discrete", 0, 1, 0),
    ParamSpec("extract_parallelism", "discrete", 1, 8, 1),
    ParamSpec("face_parallelism", "discrete", 1, 8, 1),
)

# face branch depends on (face_scale, face_quality, face_parallelism),
# motion branch on (motion_scale, extract_parallelism)
GESTURE_STAGE_PARAMS = {"face_detect": (0, 2, 4), "motion_extract": (1, 3)}

GESTURE_GENERATOR = GeneratorSpec(
    stages={
        "source": StageLaw(0.002, noise_sigma=0.0002, scene_sensitive=False),
        "copy": StageLaw(0.001, noise_sigma=0.0001, scene_sensitive=False),
        "face_scale": StageLaw(0.002, noise_sigma=0.0002),
        "motion_scale": StageLaw(0.002, noise_sigma=0.0002),
        "face_detect": StageLaw(0.75, scale_param=0, scale_exponent=1.5, parallelism_param=4,
                                quality_param=2, quality_multiplier=0.6, noise_sigma=0.02),
        "motion_extract": StageLaw(0.9, scale_param=1, scale_exponent=1.5, parallelism_param=3,
                                   noise_sigma=0.02),
        "classify": StageLaw(0.003, noise_sigma=0.0003),
        "sink": StageLaw(0.001, noise_sigma=0.0001, scene_sensitive=False),
    },
    reward=RewardLaw("f1", penalties=((0, 0.25), (1, 0.35), (2, 0.15)), noise=0.02),
)

POSE_GRAPH = DataFlowGraph.chain(("source", "scale", "extract", "match", "cluster", "ransac", "sink"))

POSE_SPECS = (
    ParamSpec("image_scale", "continuous", 1, 4, 1),
    ParamSpec("feature_threshold", "continuous", 100, 5000, 5000),
    ParamSpec("extract_parallelism", "discrete", 1, 8, 1),
    ParamSpec("match_parallelism", "discrete", 1, 8, 1),
    ParamSpec("cluster_parallelism", "discrete", 1, 8, 1),
)

POSE_STAGE_PARAMS = {"extract": (0, 2), "match": (1, 3), "cluster": (1, 4)}

POSE_GENERATOR = GeneratorSpec(
    stages={
        "source": StageLaw(0.002, noise_sigma=0.0002, scene_sensitive=False),
        "scale": StageLaw(0.003, noise_sigma=0.0003),
        "extract": StageLaw(0.25, scale_param=0, scale_exponent=1.5, parallelism_param=2, noise_sigma=0.004),
        "match": StageLaw(0.004, scale_param=1, scale_exponent=-0.5, parallelism_param=3, noise_sigma=0.003),
        "cluster": StageLaw(0.0015, scale_param=1, scale_exponent=-0.5, parallelism_param=4, noise_sigma=0.002),
        "ransac": StageLaw(0.004, noise_sigma=0.0005),
        "sink": StageLaw(0.001, noise_sigma=0.0001, scene_sensitive=False),
    },
    reward=RewardLaw("pose", penalties=((0, 0.5), (1, 0.3)), n_objects=2),
    scene_change_frame=600,
    scene_multiplier=1.3,
)

PRESETS = {
    "gesture": (GESTURE_GRAPH, GESTURE_SPECS, GESTURE_GENERATOR, GESTURE_STAGE_PARAMS),
    "pose": (POSE_GRAPH, POSE_SPECS, POSE_GENERATOR, POSE_STAGE_PARAMS),
}
