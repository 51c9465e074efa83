"""Tunable-parameter spaces, configurations and polynomial feature maps."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str  # "continuous" | "discrete"
    lo: float
    hi: float
    default: float | None = None

    def __post_init__(self):
        if self.kind not in ("continuous", "discrete"):
            raise ValueError(f"{self.name}: kind must be continuous or discrete, got {self.kind!r}")
        if self.default is None:
            object.__setattr__(self, "default", self.lo)
        if not self.lo <= self.default <= self.hi:
            raise ValueError(f"{self.name}: need lo <= default <= hi")
        if self.kind == "discrete":
            for v in (self.lo, self.hi, self.default):
                if float(v) != int(v):
                    raise ValueError(f"{self.name}: discrete range must be integral")

    def contains(self, v) -> bool:
        if not self.lo <= v <= self.hi:
            return False
        return self.kind == "continuous" or float(v) == int(v)

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "range": [self.lo, self.hi], "default": self.default}

    @classmethod
    def from_dict(cls, d) -> "ParamSpec":
        lo, hi = d["range"]
        return cls(d["name"], d["kind"], lo, hi, d.get("default"))


@dataclass(frozen=True)
class Configuration:
    id: int
    params: tuple

    def to_dict(self) -> dict:
        return {"id": self.id, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d) -> "Configuration":
        return cls(d["id"], tuple(d["params"]))


# Pose detection tunables.
POSE_SPECS = (
    ParamSpec("image_scale", "continuous", 1, 10, 1),
    ParamSpec("feature_threshold", "continuous", 1, 2**31, 2**31),
    ParamSpec("extract_parallelism", "discrete", 1, 96, 1),
    ParamSpec("match_parallelism", "discrete", 1, 10, 1),
    ParamSpec("cluster_parallelism", "discrete", 1, 10, 1),
)

# Gesture-based TV control tunables.
GESTURE_SPECS = (
    ParamSpec("face_scale", "continuous", 1, 10, 1),
    ParamSpec("motion_scale", "continuous", 1, 10, 1),
    ParamSpec("face_quality", "discrete", 0, 1, 0),
    ParamSpec("extract_parallelism", "discrete", 1, 96, 1),
    ParamSpec("face_parallelism", "discrete", 1, 96, 1),
)


def validate_vector(x: Sequence, specs: Sequence[ParamSpec]) -> None:
    if len(x) != len(specs):
        raise ValueError(f"expected {len(specs)} parameter values, got {len(x)}")
    for v, s in zip(x, specs):
        if not s.contains(v):
            raise ValueError(f"{s.name}={v} outside [{s.lo}, {s.hi}]")


def sample_random_configuration(specs: Sequence[ParamSpec], rng_seed, config_id=0) -> Configuration:
    """Draw each parameter uniformly over its range.

    ``rng_seed`` may be an int or an existing ``numpy.random.Generator``.
    """
    if not specs:
        raise ValueError("need at least one parameter spec")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    vals = []
    for s in specs:
        if s.kind == "discrete":
            vals.append(int(rng.integers(int(s.lo), int(s.hi), endpoint=True)))
        else:
            vals.append(float(rng.uniform(s.lo, s.hi)))
    return Configuration(config_id, tuple(vals))


def sample_configurations(specs, n: int, rng_seed) -> list[Configuration]:
    rng = np.random.default_rng(rng_seed)
    return [sample_random_configuration(specs, rng, i) for i in range(n)]


def normalize(x: Sequence, specs: Sequence[ParamSpec]) -> list[float]:
    """Map each value affinely onto [0, 1]; singleton ranges map to 0."""
    out = []
    for v, s in zip(x, specs, strict=True):
        span = s.hi - s.lo
        out.append(0.0 if span == 0 else (float(v) - s.lo) / span)
    return out


@lru_cache(maxsize=None)
def monomial_basis(d: int, degree: int) -> tuple:
    """Exponent tuples of total degree <= ``degree`` in graded lexicographic order.

    >>> monomial_basis(2, 2)
    ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))
    """
    basis = []
    for total in range(degree + 1):
        for combo in combinations_with_replacement(range(d), total):
            e = [0] * d
            for i in combo:
                e[i] += 1
            basis.append(tuple(e))
    return tuple(basis)


def n_features(d: int, degree: int) -> int:
    return len(monomial_basis(d, degree))


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    degree: int
    basis: tuple

    def __len__(self):
        return len(self.values)


def _check_degree(degree):
    if degree not in (1, 2, 3):
        raise ValueError(f"degree must be 1, 2 or 3, got {degree}")


def expand_features(x: Sequence[float], degree: int) -> FeatureVector:
    _check_degree(degree)
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("feature inputs must be finite")
    basis = monomial_basis(len(x), degree)
    return FeatureVector(expand_matrix(x[None, :], degree)[0], degree, basis)


def expand_matrix(X, degree: int) -> np.ndarray:
    """Row-wise ``expand_features`` for an (n, d) array."""
    _check_degree(degree)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    cols = [np.ones(n)]
    # graded-lex order: each degree level extends the previous level by one
    # more variable index that is >= the last one used
    prev = [((), np.ones(n))]
    for _ in range(degree):
        cur = []
        for idx, col in prev:
            start = idx[-1] if idx else 0
            for j in range(start, d):
                c = col * X[:, j]
                cur.append((idx + (j,), c))
                cols.append(c)
        prev = cur
    return np.column_stack(cols)
