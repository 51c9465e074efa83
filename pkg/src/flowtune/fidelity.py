"""Known reward functions for the two perception workloads."""
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Sequence


@dataclass(frozen=True)
class PoseWeights:
    w_tau: float = 0.7
    w_theta: float = 0.3


@dataclass(frozen=True)
class PoseOutcome:
    """Per-object recognition flags with translation and rotation errors for one frame."""

    recognized: Sequence[int]
    translation_error: Sequence[float]
    rotation_error: Sequence[float]

    def __post_init__(self):
        n = len(self.recognized)
        if n < 1 or len(self.translation_error) != n or len(self.rotation_error) != n:
            raise ValueError("need n >= 1 objects with matching error lists")
        for r, tau, theta in zip(self.recognized, self.translation_error, self.rotation_error):
            if r not in (0, 1):
                raise ValueError("recognized flags must be 0 or 1")
            if not (math.isfinite(tau) and math.isfinite(theta) and tau >= 0 and theta >= 0):
                raise ValueError("pose errors must be finite and nonnegative")


@dataclass(frozen=True)
class ClassificationOutcome:
    precision: float
    recall: float

    def __post_init__(self):
        if not (0 <= self.precision <= 1 and 0 <= self.recall <= 1):
            raise ValueError("precision and recall must lie in [0, 1]")


def pose_reward(outcome: PoseOutcome, weights: PoseWeights = PoseWeights()) -> float:
    total = 0.0
    for r, tau, theta in zip(outcome.recognized, outcome.translation_error, outcome.rotation_error):
        total += r * math.exp(-(weights.w_tau * tau + weights.w_theta * theta))
    return total / len(outcome.recognized)


def f1_reward(outcome: ClassificationOutcome) -> float:
    p, r = outcome.precision, outcome.recall
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)
