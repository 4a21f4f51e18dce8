import math

import numpy as np
import pytest

from meanradius.errors import DegenerateImageError, DomainError
from meanradius.geometry import pi
from meanradius.mapzoo import QCMap, builtin_zoo, get_map
from meanradius.transform import transform_of

SAMPLES = 10_000


def _beam_points(tm, rng, size):
    x = tm.zorich.random_points(rng, size, (tm.M - 8.0, tm.M - 0.1))
    return x


@pytest.mark.parametrize("n", [2, 3])
def test_functional_equation(n):
    rng = np.random.default_rng(n)
    for f in builtin_zoo(n):
        tm = transform_of(f)
        x = _beam_points(tm, rng, SAMPLES)
        lhs = tm.zorich(tm.evaluate(x))
        rhs = f(tm.zorich(x))
        err = np.linalg.norm(lhs - rhs, axis=1) / np.linalg.norm(rhs, axis=1)
        assert err.max() < 1e-8, f.label


def test_scalar_map_is_vertical_translation():
    tm = transform_of(get_map("scalar", 3))
    x = _beam_points(tm, np.random.default_rng(1), 500)
    y = tm.evaluate(x, x)
    assert np.allclose(y[:, :-1], x[:, :-1], atol=1e-12)
    assert np.allclose(y[:, -1], x[:, -1] - math.log(2), atol=1e-12)


@pytest.mark.parametrize("n", [2, 3])
def test_radial_height_independent_of_base(n):
    f = get_map("log-radial", n)
    tm = transform_of(f)
    x = _beam_points(tm, np.random.default_rng(2), 500)
    y = tm.evaluate(x)
    expected = f.radial.log_transform(x[:, -1])
    assert np.allclose(y[:, -1], expected, atol=1e-10)


def test_spiral_transform_is_shear():
    tm = transform_of(get_map("spiral", 2, c=1.0))
    x = _beam_points(tm, np.random.default_rng(3), 500)
    y = tm.evaluate(x, x)
    d = tm.zorich.quotient_distance(y, np.column_stack([x[:, 0] + x[:, 1] / math.pi, x[:, 1]]))
    assert d.max() < 1e-10


@pytest.mark.parametrize("n", [2, 3])
def test_path_continuity(n):
    tm = transform_of(get_map("diag", n))
    s = np.linspace(0, 1, 4001)[:, None]
    start = np.array([0.05] * (n - 1) + [-4.0])
    end = np.array([0.95] * (n - 2) + [1.95, -1.5])
    path = start + s * (end - start)
    out = tm.evaluate_path(path)
    step = np.linalg.norm(path[1] - path[0])
    lip = 40.0  # generous bound for diag(1, 4) / diag(1, 2, 4) on this range
    jumps = tm.zorich.quotient_distance(out[1:], out[:-1])
    assert jumps.max() < 10 * step * lip
    euclid = np.linalg.norm(np.diff(out, axis=0), axis=1)
    assert euclid.max() < 10 * step * lip


@pytest.mark.parametrize("label", ["identity", "scalar", "power-radial"])
@pytest.mark.parametrize("n", [2, 3])
def test_slice_partials_unit_cross_product(label, n):
    tm = transform_of(get_map(label, n))
    u = np.random.default_rng(4).random((300, n - 1)) * np.array([1.0] * (n - 2) + [2.0])
    P = tm.slice_partials(-3.0, u)
    assert P.shape == (300, n - 1, n)
    assert np.allclose(np.linalg.norm(pi(P), axis=-1), 1.0, atol=1e-6)


def test_slice_partials_on_fold_lines():
    tm = transform_of(get_map("identity", 3))
    u = np.array([[0.5, 0.5], [1.0, 0.3], [0.25, 0.25], [0.0, 1.0]])
    P = tm.slice_partials(-2.0, u)
    assert np.allclose(np.linalg.norm(pi(P), axis=-1), 1.0, atol=1e-6)


def test_domain_and_degenerate_errors():
    tm = transform_of(get_map("identity", 2))
    with pytest.raises(DomainError):
        tm.evaluate([0.5, 1.0])
    collapse = QCMap(2, lambda x: np.zeros_like(np.asarray(x, dtype=float)), 1.0, "zero")
    with pytest.raises(DegenerateImageError):
        transform_of(collapse).evaluate([0.5, -1.0])


def test_path_context_carries_hint():
    tm = transform_of(get_map("spiral", 2))
    ctx = tm.path()
    a = ctx([1.99, -1.0])
    b = ctx([1.99, -0.99])
    assert np.linalg.norm(a - b) < 0.1
