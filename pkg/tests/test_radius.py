import math

import numpy as np
import pytest

from meanradius.analysis import linear_distortion
from meanradius.errors import DomainError, InvalidInputError, OrientationError
from meanradius.mapzoo import QCMap, builtin_zoo, get_map
from meanradius.radius import (
    MeanRadiusCurve,
    bi_lipschitz_estimate,
    difference_quotients,
    homogeneity_check,
    image_volume,
    log_transform_curve,
    mean_radius,
)
from meanradius.sampling import RunningStats, chunked_mean, sphere_samples, substream, uniform_ball


def test_running_stats_merge_matches_direct():
    v = np.random.default_rng(0).normal(size=1000)
    a, b = RunningStats.of(v[:300]), RunningStats.of(v[300:])
    m = a.merge(b)
    assert m.count == 1000
    assert m.mean == pytest.approx(v.mean(), rel=1e-12)
    assert m.std_error == pytest.approx(v.std(ddof=1) / math.sqrt(1000), rel=1e-10)


def test_chunked_mean_independent_of_threads():
    fn = lambda rng, size: rng.random(size)
    one = chunked_mean(fn, 10_000, 7, chunk_size=1000, threads=1)
    four = chunked_mean(fn, 10_000, 7, chunk_size=1000, threads=4)
    assert (one.mean, one.m2) == (four.mean, four.m2)
    with pytest.raises(InvalidInputError):
        chunked_mean(fn, 0, 7)


def test_substreams_differ():
    assert substream(1, 0).random() != substream(1, 1).random()
    assert substream(1, 0).random() == substream(1, 0).random()


@pytest.mark.parametrize("n", [2, 3])
def test_sampling_shapes(n):
    u = uniform_ball(np.random.default_rng(0), 1000, n)
    assert u.shape == (1000, n) and np.all(np.linalg.norm(u, axis=1) <= 1)
    s = sphere_samples(n, 512)
    assert np.allclose(np.linalg.norm(s, axis=1), 1.0)


@pytest.mark.parametrize("n", [2, 3])
def test_identity_and_half_map_curves(n):
    t = np.linspace(-10, -1, 10)
    c = log_transform_curve(get_map("identity", n), t, budget=1000, seed=0)
    assert np.max(np.abs(c.rho_tilde - t)) < 1e-9
    c = log_transform_curve(get_map("scalar", n), t, budget=1000, seed=0)
    assert np.max(np.abs(c.rho_tilde - (t - math.log(2)))) < 1e-9


@pytest.mark.parametrize("n", [2, 3])
def test_closed_form_volumes(n):
    for f in builtin_zoo(n):
        if f.exact_volume is None:
            continue
        r = 0.5 * min(1.0, f.radius)
        v = image_volume(f, r, budget=200_000, seed=1)
        exact = f.exact_volume(r)
        assert abs(v.value - exact) <= 3 * v.std_error + 1e-12 * exact, f.label


def test_std_error_scaling():
    f = get_map("power-radial", 2)
    budgets = np.array([4_000, 16_000, 64_000, 256_000])
    errs = [image_volume(f, 0.3, int(b), seed=2).std_error for b in budgets]
    slope = np.polyfit(np.log(budgets), np.log(errs), 1)[0]
    assert -0.6 <= slope <= -0.4


def test_determinism():
    f = get_map("log-radial", 3)
    a = image_volume(f, 0.01, 50_000, seed=9)
    b = image_volume(f, 0.01, 50_000, seed=9)
    assert a == b


@pytest.mark.parametrize("n", [2, 3])
def test_sandwich(n):
    for f in builtin_zoo(n):
        if f.label.startswith("snowflake"):
            continue
        r = 0.5 * min(1.0, f.radius)
        rho, err = mean_radius(f, r, budget=100_000, seed=3)
        L, l, _ = linear_distortion(f, [r])
        assert l[0] - 3 * err <= rho <= L[0] + 3 * err, f.label


def test_monotone_curve():
    f = get_map("log-radial", 2)
    c = log_transform_curve(f, np.linspace(-20, -2, 19), budget=50_000, seed=4)
    assert np.all(np.diff(c.rho_tilde) >= -3 * (c.errors[1:] + c.errors[:-1]))


def test_difference_quotients_and_bilipschitz():
    c = MeanRadiusCurve([0.0, 0.5, 1.0, 2.0], [0.0, 1.0, 2.0, 4.0], [0, 0, 0, 0])
    dq = difference_quotients(c, [0.5, 1.0])
    assert [q for _, _, q in dq] == [2.0, 2.0, 2.0, 2.0]
    assert bi_lipschitz_estimate(c) == (2.0, 2.0, 2.0)
    with pytest.raises(InvalidInputError):
        difference_quotients(c, [-1.0])


def test_curve_interpolation_and_csv(tmp_path):
    c = MeanRadiusCurve([-2.0, -1.0], [-4.0, -2.0], [0.1, 0.2], label="x", n=2, seed=5, budget=10)
    assert c(-1.5) == pytest.approx(-3.0)
    assert c(0.0) == pytest.approx(0.0)
    path = tmp_path / "c.csv"
    c.to_csv(path)
    back = MeanRadiusCurve.from_csv(path)
    assert np.array_equal(back.rho_tilde, c.rho_tilde) and back.seed == 5 and back.label == "x"


def test_homogeneity_exact_for_power_map():
    ratios = homogeneity_check(get_map("power-radial", 2), 2.0, 1.25, [-5.0, -3.0], budget=20_000)
    assert np.allclose(ratios, 1.0, atol=1e-9)


def test_errors():
    f = get_map("identity", 2)
    with pytest.raises(DomainError):
        image_volume(f, 3.0)
    flip = QCMap(2, lambda x: x * np.array([1.0, -1.0]), 1.0, "flip", jacobian_det=lambda x: -np.ones(x.shape[:-1]))
    with pytest.raises(OrientationError):
        image_volume(flip, 0.5, 1000)
