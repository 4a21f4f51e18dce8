import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from meanradius.errors import InvalidInputError
from meanradius.geometry import (
    BeamPoint,
    LatticeGroupElement,
    ball_volume,
    enumerate_group,
    lp_bound,
    pi,
    quotient_distance,
    subdivide_slice,
    unit_ball_volume,
)


def test_pi_small_cases():
    assert np.allclose(pi([[1, 0, 0], [0, 1, 0]]), [0, 0, 1])
    assert np.allclose(pi([[1.0, 0.0]]), [0.0, -1.0])
    v = [0.3, -1.2, 2.0]
    assert np.allclose(pi([v, v]), 0.0)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_pi_orthogonal_and_gram_volume(n):
    rng = np.random.default_rng(n)
    V = rng.standard_normal((200, n - 1, n))
    P = pi(V)
    dots = np.einsum("bkn,bn->bk", V, P)
    assert np.max(np.abs(dots)) < 1e-10
    gram = np.sqrt(np.linalg.det(V @ np.swapaxes(V, -1, -2)))
    assert np.allclose(np.linalg.norm(P, axis=-1), gram, rtol=1e-8)


def test_pi_rejects_bad_shape():
    with pytest.raises(InvalidInputError):
        pi(np.ones((3, 3)))


def test_lp_bound_examples():
    assert lp_bound([1, 1], 2) == (2.0, 2.0)
    lhs, rhs = lp_bound([3, 4], 2)
    assert lhs == 25.0 and rhs == pytest.approx(24.5, abs=1e-12)
    lhs, rhs = lp_bound([0.7] * 9, 3)
    assert lhs == pytest.approx(rhs, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    x=arrays(np.float64, st.integers(1, 64), elements=st.floats(0, 1e3)),
    n=st.integers(2, 5),
)
def test_lp_bound_orientation(x, n):
    lhs, rhs = lp_bound(x, n)
    assert lhs >= rhs * (1 - 1e-12) - 1e-300


def test_lp_bound_rejects_negative():
    with pytest.raises(InvalidInputError):
        lp_bound([1.0, -1.0], 2)


def test_ball_volumes():
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)
    assert unit_ball_volume(4) == pytest.approx(math.pi**2 / 2)
    assert ball_volume(1) == pytest.approx(2.0)
    with pytest.raises(InvalidInputError):
        unit_ball_volume(1)


def test_subdivide_counts():
    assert len(subdivide_slice(-3.0, 0.1, 2)) == 20
    assert len(subdivide_slice(-3.0, 0.49, 3)) == 8
    with pytest.raises(InvalidInputError):
        subdivide_slice(0.0, 0.5, 2)


@settings(max_examples=60, deadline=None)
@given(t=st.floats(0.01, 0.49), n=st.sampled_from([2, 3]))
def test_subdivide_tiles_slab(t, n):
    boxes = subdivide_slice(-2.0, t, n)
    assert sum(b.volume for b in boxes) == pytest.approx(2 * t, rel=1e-12)
    lo = np.array([b.lower() for b in boxes])
    hi = np.array([b.upper() for b in boxes])
    assert lo[:, :-1].min() == 0.0
    assert hi[:, -2].max() == pytest.approx(2.0)
    assert np.all(lo[:, -1] == -2.0)


def test_subdivide_limit_ratio():
    for t in (0.05, 0.02, 0.01):
        assert 1.9 <= len(subdivide_slice(0.0, t, 2)) / t ** (1 - 2) <= 2.1


def test_group_element_algebra():
    g = LatticeGroupElement((2.0, 0.0), ((-1.0, 0.0), (0.0, -1.0)))
    x = np.array([0.3, 0.4, -1.0])
    assert np.allclose(g.inverse()(g(x)), x)
    assert g(x)[-1] == x[-1]
    with pytest.raises(InvalidInputError):
        LatticeGroupElement((0.0, 0.0), ((2.0, 0.0), (0.0, 1.0)))


def test_quotient_distance_examples():
    gens = [LatticeGroupElement((2.0,))]
    assert quotient_distance([0.1, 0.0], [0.1, 0.0], gens) == 0.0
    assert quotient_distance(BeamPoint((0.1,), 0.0), BeamPoint((1.9,), 0.0), gens) == pytest.approx(0.2)


@settings(max_examples=100, deadline=None)
@given(
    x=arrays(np.float64, 3, elements=st.floats(-3, 3)),
    y=arrays(np.float64, 3, elements=st.floats(-3, 3)),
)
def test_quotient_distance_properties(x, y):
    gens = [LatticeGroupElement((2.0, 0.0)), LatticeGroupElement((0.0, 2.0)),
            LatticeGroupElement((0.0, 0.0), ((-1.0, 0.0), (0.0, -1.0)))]
    d = quotient_distance(x, y, gens)
    assert d <= np.linalg.norm(x - y) + 1e-12
    for g in gens:
        assert quotient_distance(g(x), y, gens) == pytest.approx(d, abs=1e-9)


def test_enumerate_group_contains_identity_and_inverses():
    gens = [LatticeGroupElement((2.0,))]
    elems = enumerate_group(gens)
    keys = {e.key() for e in elems}
    assert LatticeGroupElement((0.0,)).key() in keys
    assert all(e.inverse().key() in keys for e in elems)
