import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize

from fairsched.core import InvalidInputError
from fairsched.owa import (
    MoreauConfig,
    OwaWeights,
    gini_weights,
    isotonic_decreasing,
    moreau_gradient,
    owa_subgradient,
    owa_value,
    permutahedron_project,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def vec(m):
    return arrays(np.float64, m, elements=finite)


def test_gini_weights_small_cases():
    assert np.allclose(gini_weights(1).w, [1.0])
    assert np.allclose(gini_weights(2).w, [2 / 3, 1 / 3])
    assert np.allclose(gini_weights(4).w, [0.4, 0.3, 0.2, 0.1])


def test_weight_validation():
    with pytest.raises(InvalidInputError):
        OwaWeights([0.5, 0.5])
    with pytest.raises(InvalidInputError):
        OwaWeights([0.7, 0.4])
    with pytest.raises(InvalidInputError):
        MoreauConfig(0.0)
    with pytest.raises(InvalidInputError):
        owa_value(gini_weights(3), [1.0, 2.0])


def test_owa_value_example():
    # sorted utilities (0.1, 0.5, 0.9) against (1/2, 1/3, 1/6)
    assert owa_value(gini_weights(3), [0.9, 0.1, 0.5]) == pytest.approx(0.05 + 0.5 / 3 + 0.15)


@given(st.integers(1, 8).flatmap(vec), st.randoms())
def test_impartial(y, rnd):
    w = gini_weights(y.size)
    perm = list(range(y.size))
    rnd.shuffle(perm)
    assert owa_value(w, y[perm]) == pytest.approx(owa_value(w, y), abs=1e-12)


@given(st.integers(1, 8).flatmap(vec), st.data())
def test_monotone(y, data):
    w = gini_weights(y.size)
    k = data.draw(st.integers(0, y.size - 1))
    bumped = y.copy()
    bumped[k] += data.draw(st.floats(1e-3, 5))
    assert owa_value(w, bumped) > owa_value(w, y)


@given(st.integers(2, 8).flatmap(vec), st.data())
def test_equitable_transfer(y, data):
    w = gini_weights(y.size)
    lo, hi = int(np.argmin(y)), int(np.argmax(y))
    if y[hi] - y[lo] < 1e-6:
        return
    eps = data.draw(st.floats(1e-7, 0.5)) * (y[hi] - y[lo]) / 2
    moved = y.copy()
    moved[lo] += eps
    moved[hi] -= eps
    assert owa_value(w, moved) >= owa_value(w, y) - 1e-12


@given(st.integers(1, 8).flatmap(vec))
def test_subgradient_is_weight_permutation_and_tight(y):
    w = gini_weights(y.size)
    g = owa_subgradient(w, y)
    assert np.allclose(np.sort(g), np.sort(w.w))
    assert g @ y == pytest.approx(owa_value(w, y), abs=1e-9)


def test_subgradient_ties_follow_index_order():
    g = owa_subgradient(gini_weights(3), [1.0, 1.0, 0.0])
    assert np.allclose(g, [1 / 3, 1 / 6, 1 / 2])


def test_subgradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(200):
        m = rng.integers(2, 9)
        y = rng.permutation(m) + rng.uniform(0.1, 0.4, m)
        w = gini_weights(m)
        h = 1e-6
        fd = np.array([(owa_value(w, y + h * e) - owa_value(w, y - h * e)) / (2 * h) for e in np.eye(m)])
        assert np.allclose(fd, owa_subgradient(w, y), atol=1e-6)


@given(arrays(np.float64, st.integers(1, 12), elements=finite))
def test_isotonic_is_monotone_and_mean_preserving(s):
    v = isotonic_decreasing(s)
    assert np.all(np.diff(v) <= 1e-12)
    assert v.sum() == pytest.approx(s.sum(), abs=1e-9)


def _vertices(w):
    return np.array(list(itertools.permutations(w)))


@given(st.integers(1, 5).flatmap(vec))
def test_projection_variational_inequality(z):
    w = gini_weights(z.size)
    p = permutahedron_project(z, w)
    verts = _vertices(w.w)
    assert np.all((verts - p) @ (z - p) <= 1e-9)
    assert p.sum() == pytest.approx(1.0)


def test_projection_agrees_with_generic_qp():
    rng = np.random.default_rng(1)
    for _ in range(20):
        m = int(rng.integers(2, 5))
        w = gini_weights(m)
        verts = _vertices(w.w)
        z = rng.normal(size=m)
        k = len(verts)
        res = minimize(lambda a: np.sum((a @ verts - z) ** 2), np.full(k, 1 / k),
                       jac=lambda a: 2 * verts @ (a @ verts - z), bounds=[(0, 1)] * k,
                       constraints={"type": "eq", "fun": lambda a: a.sum() - 1}, method="SLSQP",
                       options={"ftol": 1e-14, "maxiter": 500})
        assert np.allclose(res.x @ verts, permutahedron_project(z, w), atol=1e-5)


def test_projection_of_a_vertex_is_itself():
    w = gini_weights(5)
    v = w.w[[3, 0, 4, 1, 2]]
    assert np.allclose(permutahedron_project(v, w), v)


def test_moreau_gradient_limits():
    rng = np.random.default_rng(2)
    for _ in range(100):
        m = int(rng.integers(2, 8))
        w = gini_weights(m)
        y = rng.permutation(m) + rng.uniform(0.1, 0.4, m)
        assert np.allclose(moreau_gradient(w, y, MoreauConfig(1e-6)), owa_subgradient(w, y), atol=1e-4)
        # large beta flattens toward the centroid of the permutahedron
        assert np.allclose(moreau_gradient(w, y, 1e6), np.full(m, 1 / m), atol=1e-4)


def test_moreau_gradient_at_scaled_subgradient():
    w = gini_weights(4)
    g = w.w[[2, 0, 3, 1]]
    beta = 0.3
    assert np.allclose(moreau_gradient(w, -beta * g, MoreauConfig(beta)), g)


@given(st.integers(1, 8).flatmap(lambda m: st.tuples(vec(m), vec(m))), st.floats(0, 1))
def test_concave_and_supergradient(ab, lam):
    a, b = ab
    w = gini_weights(a.size)
    mix = lam * a + (1 - lam) * b
    assert owa_value(w, mix) >= lam * owa_value(w, a) + (1 - lam) * owa_value(w, b) - 1e-9
    assert owa_value(w, b) <= owa_value(w, a) + owa_subgradient(w, a) @ (b - a) + 1e-9


@given(st.integers(1, 6).flatmap(vec), st.floats(1e-3, 10))
def test_moreau_gradient_lies_in_permutahedron(y, beta):
    w = gini_weights(y.size)
    g = moreau_gradient(w, y, MoreauConfig(beta))
    assert g.sum() == pytest.approx(1.0)
    # majorized by w: partial sums of the sorted gradient never exceed those of w
    assert np.all(np.cumsum(np.sort(g)[::-1]) <= np.cumsum(w.w) + 1e-9)
