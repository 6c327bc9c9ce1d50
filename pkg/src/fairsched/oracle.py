"""Reference solvers for OWA-optimal schedules.

Exact enumeration for small pools and restarted 2-swap hill climbing for
larger ones. Both maximize ``OWA_w(group_utilities(Pi, Y))``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from fairsched.core import Assignment, GroupPartition, InvalidInputError, SizeLimitError, _matrix
from fairsched.owa import _weights

MAX_EXACT_N = 9


@dataclass(frozen=True)
class LocalSearchConfig:
    restarts: int = 20
    max_iters: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1 or self.max_iters < 1:
            raise InvalidInputError("restarts and max_iters must be at least 1")


@lru_cache(maxsize=None)
def _all_perms(n: int) -> np.ndarray:
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    perms.setflags(write=False)
    return perms


def _membership(partition: GroupPartition) -> np.ndarray:
    m = np.zeros((partition.n, len(partition)))
    m[np.arange(partition.n), partition.group_of] = 1.0
    return m / partition.sizes


def _validate(prefs, weights, partition):
    y = _matrix(prefs)
    w = _weights(weights)
    if y.ndim != 2 or y.shape[0] != y.shape[1]:
        raise InvalidInputError(f"preferences must be square, got {y.shape}")
    if partition.n != y.shape[0]:
        raise InvalidInputError("partition size does not match preferences")
    if w.size != len(partition):
        raise InvalidInputError(f"{w.size} weights for {len(partition)} groups")
    return y, w


def _owa_rows(utils: np.ndarray, member: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.sort(utils @ member, axis=1) @ w


def exact_owa_schedule(prefs, weights, partition: GroupPartition) -> tuple[Assignment, float]:
    """Enumerate all ``n!`` schedules; the first maximizer in lexicographic order wins."""
    y, w = _validate(prefs, weights, partition)
    n = y.shape[0]
    if n > MAX_EXACT_N:
        raise SizeLimitError(
            f"exact enumeration is limited to n <= {MAX_EXACT_N}, got n = {n}; use local_search_owa"
        )
    perms = _all_perms(n)
    values = _owa_rows(y[np.arange(n), perms], _membership(partition), w)
    best = int(np.argmax(values))
    return Assignment(perms[best]), float(values[best])


def _climb(y, member, w, perm, max_iters, rows, cols):
    n = perm.size
    util = y[np.arange(n), perm]
    value = float(np.sort(util @ member) @ w)
    for _ in range(max_iters):
        cand = np.broadcast_to(util, (rows.size, n)).copy()
        k = np.arange(rows.size)
        cand[k, rows] = y[rows, perm[cols]]
        cand[k, cols] = y[cols, perm[rows]]
        values = _owa_rows(cand, member, w)
        best = int(np.argmax(values))
        if values[best] <= value + 1e-12:
            break
        i, j = rows[best], cols[best]
        perm[i], perm[j] = perm[j], perm[i]
        util = cand[best]
        value = float(values[best])
    return perm, value


def local_search_owa(prefs, weights, partition: GroupPartition,
                     cfg: LocalSearchConfig | None = None) -> tuple[Assignment, float]:
    """Best-improvement 2-swap hill climbing from ``cfg.restarts`` random permutations.

    Restart ``r`` draws its start from the stream ``(seed, r)``, so adding
    restarts never lowers the result.
    """
    cfg = cfg or LocalSearchConfig()
    y, w = _validate(prefs, weights, partition)
    n = y.shape[0]
    if n < 2:
        raise InvalidInputError("local search needs n >= 2")
    member = _membership(partition)
    rows, cols = np.triu_indices(n, k=1)
    best_perm, best_value = None, -np.inf
    for r in range(cfg.restarts):
        start = np.random.default_rng([cfg.seed, r]).permutation(n)
        perm, value = _climb(y, member, w, start, cfg.max_iters, rows, cols)
        if value > best_value:
            best_perm, best_value = perm.copy(), value
    return Assignment(best_perm), best_value
