import numpy as np
import pytest

from fairsched.core import GroupPartition, InvalidInputError, SizeLimitError
from fairsched.matching import solve_assignment
from fairsched.oracle import LocalSearchConfig, exact_owa_schedule, local_search_owa
from fairsched.owa import OwaWeights, gini_weights, owa_value


def _instance(rng, n, groups=None):
    y = rng.random((n, n))
    y /= y.sum(axis=1, keepdims=True)
    labels = rng.integers(0, groups, n) if groups else np.arange(n)
    partition = GroupPartition.from_labels(labels)
    return y, partition, gini_weights(len(partition))


def _group_owa(y, perm, partition, w):
    u = y[np.arange(len(perm)), perm]
    return owa_value(w, np.bincount(partition.group_of, weights=u) / partition.sizes)


def test_exact_returns_its_own_value():
    rng = np.random.default_rng(0)
    y, p, w = _instance(rng, 5, groups=2)
    a, value = exact_owa_schedule(y, w, p)
    assert value == pytest.approx(_group_owa(y, a.perm, p, w))


def test_exact_beats_every_sampled_permutation():
    rng = np.random.default_rng(1)
    y, p, w = _instance(rng, 6)
    _, value = exact_owa_schedule(y, w, p)
    for _ in range(200):
        assert _group_owa(y, rng.permutation(6), p, w) <= value + 1e-12


def test_exact_size_limit():
    y = np.full((10, 10), 0.1)
    with pytest.raises(SizeLimitError):
        exact_owa_schedule(y, gini_weights(10), GroupPartition.singletons(10))


def test_exact_with_uniform_weights_is_matching_over_n():
    rng = np.random.default_rng(2)
    for n in range(2, 7):
        y = rng.random((n, n))
        # uniform weights: perturb to strictly decreasing without changing the optimum by much
        uniform = np.full(n, 1.0 / n)
        _, value = exact_owa_schedule(y, uniform, GroupPartition.singletons(n))
        total = y[np.arange(n), solve_assignment(y).perm].sum()
        assert value == pytest.approx(total / n, abs=1e-12)


def test_local_search_matches_exact_on_small_instances():
    rng = np.random.default_rng(3)
    hits = 0
    for _ in range(30):
        n = int(rng.integers(3, 7))
        y, p, w = _instance(rng, n, groups=int(rng.integers(2, n + 1)))
        exact = exact_owa_schedule(y, w, p)[1]
        local = local_search_owa(y, w, p, LocalSearchConfig(restarts=20))[1]
        assert local <= exact + 1e-12
        hits += abs(local - exact) < 1e-9
    assert hits >= 28


def test_local_search_is_seeded_and_monotone_in_restarts():
    rng = np.random.default_rng(4)
    y, p, w = _instance(rng, 12, groups=3)
    a = local_search_owa(y, w, p, LocalSearchConfig(5, 100, seed=7))
    b = local_search_owa(y, w, p, LocalSearchConfig(5, 100, seed=7))
    assert a[0] == b[0] and a[1] == b[1]
    more = local_search_owa(y, w, p, LocalSearchConfig(10, 100, seed=7))[1]
    assert more >= a[1]


def test_validation():
    y = np.full((3, 3), 1 / 3)
    with pytest.raises(InvalidInputError):
        exact_owa_schedule(y, gini_weights(2), GroupPartition.singletons(3))
    with pytest.raises(InvalidInputError):
        LocalSearchConfig(restarts=0)
    with pytest.raises(InvalidInputError):
        OwaWeights([0.5, 0.5])
