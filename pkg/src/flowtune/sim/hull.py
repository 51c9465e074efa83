"""Payoffs of fixed configurations and of randomized mixtures over them."""
from __future__ import annotations

import numpy as np


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> list:
    """Andrew's monotone chain. Returns hull vertices counter-clockwise, collinear points dropped."""
    pts = sorted(set(map(tuple, points)))
    if len(pts) <= 2:
        return pts
    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def payoff_hull(traces):
    """Per-configuration (mean latency, mean reward) points and their convex hull vertices."""
    lat = traces.mean_latency()
    rew = traces.mean_reward()
    points = {c.id: (float(l), float(r)) for c, l, r in zip(traces.configs, lat, rew)}
    return points, convex_hull(list(points.values()))


def best_mixture_reward(points, L: float) -> float:
    """Highest reward of any randomized mix of configurations whose mean latency is <= L.

    A mixture of at most two configurations suffices in two dimensions.
    """
    pts = np.asarray(list(points), dtype=float)
    best = -np.inf
    for i in range(len(pts)):
        if pts[i, 0] <= L:
            best = max(best, pts[i, 1])
        for j in range(len(pts)):
            (la, ra), (lb, rb) = pts[i], pts[j]
            if la <= L < lb:
                a = (lb - L) / (lb - la)
                best = max(best, a * ra + (1 - a) * rb)
    return float(best)
