"""Fair Ordered Weighted Averaging: weights, value, subgradient and smoothed gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fairsched.core import InvalidInputError

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class OwaWeights:
    """Strictly decreasing positive weights summing to one."""

    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float).ravel()
        if w.size == 0 or not np.all(np.isfinite(w)):
            raise InvalidInputError("OWA weights must be a nonempty finite vector")
        if w[-1] <= 0 or np.any(np.diff(w) >= 0):
            raise InvalidInputError("fair OWA weights must be strictly decreasing and positive")
        if abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise InvalidInputError(f"OWA weights sum to {w.sum()!r}, expected 1")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    def __len__(self):
        return self.w.size


@dataclass(frozen=True)
class MoreauConfig:
    beta: float

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidInputError(f"beta must be positive, got {self.beta}")


def gini_weights(m: int) -> OwaWeights:
    """Gini weights ``(m - i + 1) / m`` for ``i = 1..m``, rescaled onto the simplex."""
    if m < 1:
        raise InvalidInputError("need at least one criterion")
    raw = np.arange(m, 0, -1) / m
    return OwaWeights(raw / raw.sum())


def _weights(weights) -> np.ndarray:
    return weights.w if isinstance(weights, OwaWeights) else np.asarray(weights, dtype=float)


def _pair(weights, y):
    w = _weights(weights)
    y = np.asarray(y, dtype=float).ravel()
    if w.size != y.size:
        raise InvalidInputError(f"{w.size} weights for a vector of length {y.size}")
    return w, y


def owa_value(weights, y) -> float:
    """``w . sort(y)`` with ``y`` sorted increasingly, so the largest weight hits the worst-off."""
    w, y = _pair(weights, y)
    return float(w @ np.sort(y, kind="stable"))


def owa_subgradient(weights, y) -> np.ndarray:
    """Weight vector rearranged so the k-th smallest entry of ``y`` receives ``w[k]``.

    Ties are broken by a stable sort on the original index.
    """
    w, y = _pair(weights, y)
    g = np.empty_like(w)
    g[np.argsort(y, kind="stable")] = w
    return g


def isotonic_decreasing(s) -> np.ndarray:
    """Pool-adjacent-violators solution of ``argmin_{v1 >= ... >= vm} ||v - s||^2``."""
    s = np.asarray(s, dtype=float)
    means: list[float] = []
    counts: list[int] = []
    for value in s:
        mean, count = float(value), 1
        while means and means[-1] <= mean:
            prev_mean, prev_count = means.pop(), counts.pop()
            mean = (prev_mean * prev_count + mean * count) / (prev_count + count)
            count += prev_count
        means.append(mean)
        counts.append(count)
    return np.repeat(means, counts)


def permutahedron_project(z, weights) -> np.ndarray:
    """Euclidean projection of ``z`` onto the convex hull of all permutations of ``w``."""
    w, z = _pair(weights, z)
    order = np.argsort(-z, kind="stable")
    s = z[order]
    v = isotonic_decreasing(s - np.sort(w)[::-1])
    out = np.empty_like(z)
    out[order] = s - v
    return out


def moreau_gradient(weights, y, cfg: MoreauConfig) -> np.ndarray:
    """Gradient of the Moreau envelope of the (concave) OWA at ``y``.

    Equals the projection of ``-y / beta`` onto the permutahedron of ``w``;
    as ``beta -> 0`` it converges to :func:`owa_subgradient` at tie-free points.
    """
    if not isinstance(cfg, MoreauConfig):
        cfg = MoreauConfig(float(cfg))
    y = np.asarray(y, dtype=float)
    return permutahedron_project(-y / cfg.beta, weights)
