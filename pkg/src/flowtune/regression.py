"""Online epsilon-insensitive linear regression over polynomial features.

The regressor is a weight vector over a monomial basis. Each observation
defines a convex loss

    loss_t(w) = max(|w.phi_t - y_t| - tube, 0) + gamma * ||w||^2

and ``OnlineRegressor.update`` takes one projected subgradient step on it
with step size eta0 / sqrt(t), projecting onto the L2 ball of ``radius``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
import math
from typing import Sequence

import numpy as np
from numba import njit

from .errors import DimensionMismatch, EmptySampleSet, NonFiniteObservation
from .paramspace import FeatureVector, monomial_basis


@dataclass(frozen=True)
class RegressorConfig:
    gamma: float = 0.01
    tube: float = 0.001
    eta0: float = 0.03
    radius: float = 100.0
    degree: int = 3

    def __post_init__(self):
        if self.gamma < 0 or self.tube < 0:
            raise ValueError("gamma and tube must be nonnegative")
        if self.eta0 <= 0 or self.radius <= 0:
            raise ValueError("eta0 and radius must be positive")
        if self.degree not in (1, 2, 3):
            raise ValueError("degree must be 1, 2 or 3")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "RegressorConfig":
        return cls(**d)


@dataclass
class LossRecord:
    prediction: float
    observed: float
    loss: float


def project_ball(w: np.ndarray, radius: float) -> np.ndarray:
    norm = math.sqrt(float(w @ w))
    if norm > radius:
        return w * (radius / norm)
    return w


def _as_array(features) -> np.ndarray:
    if isinstance(features, FeatureVector):
        return features.values
    return np.asarray(features, dtype=float)


def tube_sign(residual: float, tube: float) -> float:
    # boundary |r| == tube takes the zero subgradient
    if abs(residual) > tube:
        return 1.0 if residual > 0 else -1.0
    return 0.0


@dataclass
class OnlineRegressor:
    n_inputs: int
    config: RegressorConfig = field(default_factory=RegressorConfig)
    weights: np.ndarray | None = None
    steps_taken: int = 0

    def __post_init__(self):
        n = len(self.basis)
        if self.weights is None:
            self.weights = np.zeros(n)
        else:
            self.weights = np.array(self.weights, dtype=float)
            if self.weights.shape != (n,):
                raise DimensionMismatch(f"expected {n} weights, got {self.weights.shape}")

    @property
    def basis(self) -> tuple:
        return monomial_basis(self.n_inputs, self.config.degree)

    def _check(self, phi: np.ndarray) -> np.ndarray:
        if phi.shape != self.weights.shape:
            raise DimensionMismatch(f"feature length {phi.shape} != weight length {self.weights.shape}")
        return phi

    def predict(self, features) -> float:
        return float(self.weights @ self._check(_as_array(features)))

    def predict_many(self, Phi: np.ndarray) -> np.ndarray:
        if Phi.shape[1] != len(self.weights):
            raise DimensionMismatch(f"feature width {Phi.shape[1]} != weight length {len(self.weights)}")
        return Phi @ self.weights

    def loss(self, features, observed: float) -> float:
        cfg = self.config
        r = self.predict(features) - observed
        return max(abs(r) - cfg.tube, 0.0) + cfg.gamma * float(self.weights @ self.weights)

    def gradient(self, features, observed: float) -> np.ndarray:
        """Subgradient of the per-step loss with respect to the weights."""
        phi = self._check(_as_array(features))
        s = tube_sign(float(self.weights @ phi) - observed, self.config.tube)
        return s * phi + 2 * self.config.gamma * self.weights

    def update(self, features, observed: float) -> LossRecord:
        """One projected subgradient step. Returns the loss incurred before the step."""
        phi = self._check(_as_array(features))
        if not math.isfinite(observed):
            raise NonFiniteObservation(f"observed latency {observed!r}")
        cfg = self.config
        pred = float(self.weights @ phi)
        r = pred - observed
        rec = LossRecord(pred, observed, max(abs(r) - cfg.tube, 0.0) + cfg.gamma * float(self.weights @ self.weights))
        self.steps_taken += 1
        eta = cfg.eta0 / math.sqrt(self.steps_taken)
        g = tube_sign(r, cfg.tube) * phi + 2 * cfg.gamma * self.weights
        self.weights = project_ball(self.weights - eta * g, cfg.radius)
        return rec

    def copy(self) -> "OnlineRegressor":
        return OnlineRegressor(self.n_inputs, self.config, self.weights.copy(), self.steps_taken)

    def to_dict(self) -> dict:
        return {
            "n_inputs": self.n_inputs,
            "degree": self.config.degree,
            "basis": [list(e) for e in self.basis],
            "weights": [float(w) for w in self.weights],
            "steps_taken": self.steps_taken,
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "OnlineRegressor":
        model = cls(d["n_inputs"], RegressorConfig.from_dict(d["config"]), d["weights"], d["steps_taken"])
        if [list(e) for e in model.basis] != [list(e) for e in d["basis"]]:
            raise DimensionMismatch("serialized basis does not match (n_inputs, degree)")
        return model


def batch_objective(weights: np.ndarray, X: np.ndarray, y: np.ndarray, config: RegressorConfig) -> float:
    resid = np.abs(X @ weights - y)
    return float(np.mean(np.maximum(resid - config.tube, 0.0)) + config.gamma * (weights @ weights))


@njit(cache=True)
def _epoch(w, X, y, order, eta, tube, gamma, radius):
    n, d = X.shape
    moved = 0.0
    for i in order:
        pred = 0.0
        for j in range(d):
            pred += w[j] * X[i, j]
        r = pred - y[i]
        s = 0.0
        if abs(r) > tube:
            s = 1.0 if r > 0 else -1.0
        sq = 0.0
        for j in range(d):
            g = s * X[i, j] + 2.0 * gamma * w[j]
            nw = w[j] - eta * g
            moved += abs(nw - w[j])
            w[j] = nw
            sq += nw * nw
        norm = math.sqrt(sq)
        if norm > radius:
            scale = radius / norm
            for j in range(d):
                moved += abs(w[j] * scale - w[j])
                w[j] = w[j] * scale
    return moved


def fit_offline(samples, config: RegressorConfig, n_inputs: int | None = None, *,
                max_epochs: int = 500, tol: float = 1e-8, seed: int = 0) -> OnlineRegressor:
    """Batch fit by repeated shuffled passes of the online step rule.

    ``samples`` is a sequence of ``(features, observed)`` pairs or an
    ``(X, y)`` tuple of arrays. Epoch ``e`` uses step size eta0 / sqrt(e).
    Stops once the mean absolute weight change per step drops below
    ``tol``; returns the epoch with the lowest batch objective.
    """
    X, y = _stack(samples)
    if n_inputs is None:
        n_inputs = _infer_inputs(X.shape[1], config.degree)
    n, d = X.shape
    rng = np.random.default_rng(seed)
    w = np.zeros(d)
    best_w, best_obj = w.copy(), batch_objective(w, X, y, config)
    steps = 0
    for e in range(1, max_epochs + 1):
        order = rng.permutation(n)
        moved = _epoch(w, X, y, order, config.eta0 / math.sqrt(e), config.tube, config.gamma, config.radius)
        steps += n
        obj = batch_objective(w, X, y, config)
        if obj < best_obj:
            best_w, best_obj = w.copy(), obj
        if moved / (n * d) < tol:
            break
    return OnlineRegressor(n_inputs, config, best_w, steps)


def _stack(samples):
    if isinstance(samples, tuple) and len(samples) == 2 and isinstance(samples[0], np.ndarray):
        X, y = samples
        X = np.ascontiguousarray(X, dtype=float)
        y = np.ascontiguousarray(y, dtype=float)
    else:
        samples = list(samples)
        if not samples:
            raise EmptySampleSet("no samples to fit")
        X = np.array([_as_array(f) for f, _ in samples], dtype=float)
        y = np.array([o for _, o in samples], dtype=float)
    if len(y) == 0:
        raise EmptySampleSet("no samples to fit")
    if X.ndim != 2 or X.shape[0] != len(y):
        raise DimensionMismatch("features and observations disagree in length")
    return X, y


def _infer_inputs(width: int, degree: int) -> int:
    for d in range(0, 64):
        if len(monomial_basis(d, degree)) == width:
            return d
    raise DimensionMismatch(f"no input dimension yields {width} features at degree {degree}")


def run_online(X: np.ndarray, y: np.ndarray, config: RegressorConfig, n_inputs: int | None = None):
    """Stream (X, y) through a fresh regressor; return it with its per-step loss history."""
    if n_inputs is None:
        n_inputs = _infer_inputs(X.shape[1], config.degree)
    model = OnlineRegressor(n_inputs, config)
    losses = [model.update(x, float(t)).loss for x, t in zip(X, y)]
    return model, losses


def cumulative_loss(model: OnlineRegressor, X: np.ndarray, y: np.ndarray) -> float:
    """Sum over steps of the per-step loss of a fixed model."""
    w = model.weights
    resid = np.abs(X @ w - y)
    per = np.maximum(resid - model.config.tube, 0.0) + model.config.gamma * float(w @ w)
    return float(per.sum())


def regret(loss_history: Sequence[float], offline_batch_loss: float) -> float:
    return float(np.sum(loss_history)) - offline_batch_loss
