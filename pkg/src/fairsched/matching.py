"""Differentiable matching layer.

Forward: maximum total-utility assignment via the O(n^3) Hungarian method
with potentials. Backward: blackbox finite difference between the solution
and the solution under profits perturbed by the upstream gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from fairsched.core import Assignment, InvalidInputError

DEFAULT_LAMBDA = 10.0


@dataclass(frozen=True)
class BlackboxConfig:
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidInputError(f"lambda must be positive, got {self.lam}")


@numba.njit(cache=True)
def _hungarian_min(cost):
    # Shortest augmenting path with row/column potentials; 1-based with a
    # virtual column 0. Returns row_of_col.
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv[:] = np.inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    perm = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        perm[p[j] - 1] = j - 1
    return perm


def _square_finite(profits) -> np.ndarray:
    a = np.asarray(profits, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise InvalidInputError(f"profit matrix must be square and nonempty, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("profit matrix contains non-finite entries")
    return a


def solve_perm(profits) -> np.ndarray:
    """Permutation maximizing ``sum_i profits[i, perm[i]]`` (no wrapper object)."""
    a = _square_finite(profits)
    return _hungarian_min(np.ascontiguousarray(-a))


def solve_assignment(profits) -> Assignment:
    """Maximum-total-profit assignment, i.e. ``argmax Tr(Y^T Pi)`` over permutations."""
    return Assignment(solve_perm(profits))


def matching_backward(profits, solution: Assignment, upstream_grad, cfg: BlackboxConfig | None = None) -> np.ndarray:
    """Blackbox gradient of a loss ``L(Pi)`` with respect to the profit matrix.

    Re-solves at ``profits - lam * dL/dPi`` and returns ``(Pi - Pi_lam) / lam``,
    the exact gradient of the piecewise-linear interpolation of ``L``.
    A step on the profits along the negative of the result moves the
    solution toward the perturbed (lower-loss) one.
    """
    cfg = cfg or BlackboxConfig()
    a = _square_finite(profits)
    g = np.asarray(upstream_grad, dtype=float)
    if g.shape != a.shape or solution.n != a.shape[0]:
        raise InvalidInputError(
            f"shape mismatch: profits {a.shape}, upstream {g.shape}, solution {solution.n}"
        )
    n = a.shape[0]
    perturbed = solve_perm(a - cfg.lam * g)
    out = np.zeros_like(a)
    rows = np.arange(n)
    out[rows, solution.perm] += 1.0
    out[rows, perturbed] -= 1.0
    return out / cfg.lam
