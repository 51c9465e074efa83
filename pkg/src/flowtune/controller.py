"""Epsilon-greedy choice of a configuration under a latency bound."""
from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyActionSet
from .paramspace import Configuration


@dataclass(frozen=True)
class ActionSet:
    configs: tuple
    rewards: Mapping  # config id -> expected reward

    def __post_init__(self):
        object.__setattr__(self, "configs", tuple(self.configs))
        if not self.configs:
            raise EmptyActionSet("action set is empty")
        for c in self.configs:
            r = self.rewards[c.id]
            if not math.isfinite(r):
                raise ValueError(f"reward for config {c.id} is not finite")

    @property
    def ids(self) -> list:
        return [c.id for c in self.configs]


@dataclass(frozen=True)
class PolicyConfig:
    epsilon: float
    latency_bound: float
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if not self.latency_bound > 0:
            raise ValueError("latency bound must be positive")


@dataclass(frozen=True)
class Decision:
    config_id: object
    mode: str  # "explore" | "exploit"
    predicted_latency: float | None


def epsilon_schedule(T: int) -> float:
    if T < 1:
        raise ValueError("horizon must be >= 1")
    return 1.0 / math.sqrt(T)


def constraint_violation(observed: float, L: float) -> float:
    return max(observed - L, 0.0)


def step_rng(seed: int, t: int) -> np.random.Generator:
    # keyed on (seed, t) so a decision does not depend on how many draws came before it
    return np.random.default_rng([int(seed), int(t)])


def predict_actions(model, configs: Sequence[Configuration]) -> np.ndarray:
    if hasattr(model, "predict_configs"):
        return np.asarray(model.predict_configs(configs), dtype=float)
    return np.array([model.predict_end_to_end(c.params) for c in configs], dtype=float)


def best_feasible(ids: Sequence, rewards: Sequence[float], latencies: Sequence[float], L: float):
    """Index maximizing reward among entries with latency <= L.

    Falls back to the minimum-latency entry when nothing is feasible. Ties go
    to the lowest id.
    """
    best = None
    for i in range(len(ids)):
        if latencies[i] <= L:
            key = (-rewards[i], ids[i])
            if best is None or key < best[0]:
                best = (key, i)
    if best is not None:
        return best[1]
    return min(range(len(ids)), key=lambda i: (latencies[i], ids[i]))


def select_action(t: int, actions: ActionSet, model, policy: PolicyConfig,
                  predictions: Sequence[float] | None = None) -> Decision:
    """Explore uniformly with probability epsilon, else solve the bounded argmax.

    ``predictions`` may carry precomputed end-to-end latency predictions
    aligned with ``actions.configs``; otherwise ``model`` is queried.
    """
    if not actions.configs:
        raise EmptyActionSet("action set is empty")
    if predictions is None:
        predictions = predict_actions(model, actions.configs)
    rng = step_rng(policy.rng_seed, t)
    ids = actions.ids
    if rng.random() < policy.epsilon:
        i = int(rng.integers(len(ids)))
        return Decision(ids[i], "explore", float(predictions[i]))
    rewards = [actions.rewards[c] for c in ids]
    i = best_feasible(ids, rewards, predictions, policy.latency_bound)
    return Decision(ids[i], "exploit", float(predictions[i]))
