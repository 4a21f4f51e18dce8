"""Acceptance suite: twelve criteria, each printing one pass/fail line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the lines are
also collected in the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from meanradius.analysis import (
    asymptotic_representative,
    bip_integral,
    bip_sup,
    bound_chains,
    gen_derivative,
    slice_size,
    subdivision_analysis,
    volume_comparison,
    weak_qs_estimate,
)
from meanradius.geometry import subdivide_slice
from meanradius.mapzoo import SnowflakeBeamSpec, get_map
from meanradius.radius import (
    bi_lipschitz_estimate,
    difference_quotients,
    homogeneity_check,
    log_transform_curve,
)
from meanradius.transform import transform_of
from meanradius.zorich import verify_automorphy, zorich_map

pytestmark = pytest.mark.slow

BIP_LABELS = {2: ["identity", "scalar", "diag", "power-radial", "log-radial", "spiral"],
              3: ["identity", "scalar", "diag", "power-radial", "log-radial"]}


def test_criterion_01_exact_curves(verdict):
    start = time.perf_counter()
    t = np.linspace(-10.0, -1.0, 10)
    errs = []
    for n in (2, 3):
        c = log_transform_curve(get_map("identity", n), t, budget=10_000, seed=0)
        errs.append(np.max(np.abs(c.rho_tilde - t)))
        c = log_transform_curve(get_map("scalar", n), t, budget=10_000, seed=0)
        errs.append(np.max(np.abs(c.rho_tilde - (t - math.log(2)))))
    elapsed = time.perf_counter() - start
    ok = max(errs) < 1e-9 and elapsed < 10
    assert verdict(1, ok, f"max |error| {max(errs):.2e} (< 1e-9), {elapsed:.1f}s (< 10s)")


def test_criterion_02_linear_diag(verdict):
    start = time.perf_counter()
    f = get_map("diag", 2)
    t = np.arange(-10.0, -0.75, 0.5)
    c = log_transform_curve(f, t, budget=1_000_000, seed=0)
    # a zero standard error (constant Jacobian) leaves only float rounding
    tol = np.maximum(3 * c.errors, 1e-12)
    within = np.all(np.abs(c.rho_tilde - (t + math.log(2))) <= tol)
    dq = np.array([q for _, _, q in difference_quotients(c, [0.5, 1.0, 2.0])])
    elapsed = time.perf_counter() - start
    ok = bool(within) and np.max(np.abs(dq - 1)) < 1e-3 and elapsed < 120
    assert verdict(2, ok, f"curve within 3 SE: {bool(within)}, max |dq - 1| {np.max(np.abs(dq - 1)):.1e}, "
                          f"{elapsed:.1f}s")


def test_criterion_03_power_radial(verdict):
    start = time.perf_counter()
    f = get_map("power-radial", 2)
    t = np.arange(-10.0, -0.75, 0.5)
    c = log_transform_curve(f, t, budget=1_000_000, seed=0)
    dq = np.array([q for _, _, q in difference_quotients(c, [0.5, 1.0, 2.0])])
    _, _, L = bi_lipschitz_estimate(c)
    tm = transform_of(f)
    bips = [bip_integral(tm, s, 64, refine=False).value for s in (-10.0, -6.0, -3.0, -1.0)]
    elapsed = time.perf_counter() - start
    ok = (np.max(np.abs(dq - 2)) <= 1e-3 and abs(L - 2) <= 1e-3
          and max(abs(b - 2) for b in bips) <= 1e-6 and elapsed < 120)
    assert verdict(3, ok, f"max |dq - 2| {np.max(np.abs(dq - 2)):.1e}, L {L:.6f}, "
                          f"max |BIP - 2| {max(abs(b - 2) for b in bips):.1e}, {elapsed:.1f}s")


def test_criterion_04_log_corrected(verdict):
    f = get_map("log-radial", 2)
    ratios = homogeneity_check(f, 2.0, 1.25, [-3.0, -40.0], budget=1_000_000, seed=0)
    t = np.arange(-40.0, -18.75, 0.25)
    c = log_transform_curve(f, t, budget=1_000_000, seed=0)
    dq = np.array([q for t0, _, q in difference_quotients(c, [0.25, 0.5, 1.0]) if t0 <= -20])
    ok = abs(ratios[0] - 1) > 0.05 and abs(ratios[1] - 1) < 0.01 and dq.min() >= 2 and dq.max() <= 2.06
    assert verdict(4, ok, f"ratio at t=-3 {ratios[0]:.4f}, at t=-40 {ratios[1]:.4f}, "
                          f"dq in [{dq.min():.4f}, {dq.max():.4f}]")


def test_criterion_05_spiral(verdict):
    f = get_map("spiral", 2, c=1.0)
    tm = transform_of(f)
    t = np.linspace(-10.0, -1.0, 10)
    c = log_transform_curve(f, t, budget=100_000, seed=0)
    curve_err = np.max(np.abs(c.rho_tilde - t))
    # closed form from the explicit transform (x1 + c t / pi, t): each slice is
    # a horizontal translate of the base segment, so its length is exactly 2
    sizes = [slice_size(tm, t0, 10_000).value for t0 in (-8.0, -4.0, -1.5)]
    size_err = max(abs(s - 2.0) / 2.0 for s in sizes)
    bips = np.array([bip_integral(tm, s, 64, refine=False).value for s in (-9.0, -6.0, -3.0, -1.0)])
    spread = np.ptp(bips) / np.median(bips)
    ok = curve_err < 1e-9 and size_err < 1e-3 and spread < 0.01
    assert verdict(5, ok, f"curve error {curve_err:.1e}, slice size rel. error {size_err:.1e}, "
                          f"BIP spread {spread:.1e}")


def test_criterion_06_zorich(verdict):
    start = time.perf_counter()
    worst = {}
    for n in (2, 3):
        Z = zorich_map(n)
        rng = np.random.default_rng(n)
        x = Z.random_points(rng, 10_000, (-5.0, 3.0))
        worst[f"norm{n}"] = np.max(np.abs(np.linalg.norm(Z(x), axis=1) / np.exp(x[:, -1]) - 1))
        x0 = x.copy()
        x0[:, -1] = 0.0
        sc = np.exp(x[:, -1])[:, None] * Z(x0)
        worst[f"scale{n}"] = np.max(np.linalg.norm(Z(x) - sc, axis=1) / np.linalg.norm(sc, axis=1))
        worst[f"auto{n}"] = verify_automorphy(Z, 10_000, seed=n)
        worst[f"trip{n}"] = np.max(Z.quotient_distance(Z.inverse(Z(x)), x))
        u = rng.random((10_000, n - 1))
        v = np.clip(u + rng.normal(scale=0.05, size=u.shape), 0, 1)
        r = np.linalg.norm(Z.psi(u) - Z.psi(v), axis=1) / np.linalg.norm(u - v, axis=1)
        worst[f"bilip{n}"] = max(r.max(), 1 / r.min())
    elapsed = time.perf_counter() - start
    ok = (all(worst[f"norm{n}"] <= 1e-12 and worst[f"scale{n}"] <= 1e-12 and worst[f"auto{n}"] <= 1e-12
              and worst[f"trip{n}"] < 1e-9 and worst[f"bilip{n}"] <= 4 for n in (2, 3)) and elapsed < 10)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert verdict(6, ok, f"{detail}, {elapsed:.1f}s")


def test_criterion_07_subdivision(verdict):
    counts_ok = all(1.9 <= len(subdivide_slice(0.0, t, n)) * t ** (n - 1) <= 2.1
                    for n in (2, 3) for t in (0.05, 0.02, 0.01))
    overlap_ok, proj_min = True, math.inf
    for n in (2, 3):
        for label in ("identity", "diag"):
            tm = transform_of(get_map(label, n))
            reps = [subdivision_analysis(tm, -5.0, t, box_budget=1024, slab_budget=1 << 14) for t in (0.1, 0.05)]
            for key in ("ratio_c1", "ratio_c2", "ratio_c3"):
                (a0, a1), (b0, b1) = getattr(reps[0], key), getattr(reps[1], key)
                tol = 1e-9 * max(abs(a1), abs(b1))
                overlap_ok &= a0 <= b1 + tol and b0 <= a1 + tol
            proj_min = min(proj_min, *(r.proj_total for r in reps))
    ok = counts_ok and overlap_ok and proj_min >= 2 - 1e-9
    assert verdict(7, ok, f"N t^(n-1) in [1.9, 2.1]: {counts_ok}, ratio ranges overlap: {overlap_ok}, "
                          f"min projected total {proj_min:.6f}")


def test_criterion_08_bound_chains(verdict):
    failures = []
    for n, labels in BIP_LABELS.items():
        for label in labels:
            tm = transform_of(get_map(label, n))
            for t in (0.2, 0.1, 0.05):
                rep = subdivision_analysis(tm, -5.0, t, box_budget=1024, slab_budget=1 << 15)
                vc = volume_comparison(tm, -5.0, t, budget=200_000)
                ch = bound_chains(rep, vc.increment)
                if not ch.all_hold or not ch.dq_bracketed:
                    failures.append((n, label, t, ch.failed_steps(), ch.dq_bracketed))
    runs = sum(len(v) for v in BIP_LABELS.values()) * 3
    assert verdict(8, not failures, f"{runs - len(failures)}/{runs} runs with every link oriented "
                                    f"and dq bracketed {failures if failures else ''}")


def test_criterion_09_volume_ratio(verdict):
    ident = volume_comparison(transform_of(get_map("identity", 2)), -5.0, 0.1, budget=10_000).ratio
    spreads = {}
    for n, labels in BIP_LABELS.items():
        for label in labels:
            tm = transform_of(get_map(label, n))
            r = [volume_comparison(tm, -5.0, t, budget=1_000_000, seed=0).ratio for t in (0.2, 0.1, 0.05, 0.025)]
            spreads[f"{label}/{n}"] = (max(r) - min(r)) / min(r)
    worst = max(spreads.values())
    ok = abs(ident - 0.5) <= 1e-3 and worst < 0.2
    assert verdict(9, ok, f"identity ratio {ident:.6f}, worst spread over t halvings {worst:.2e}")


def test_criterion_10_snowflake(verdict):
    start = time.perf_counter()
    d = -3
    _, side = SnowflakeBeamSpec(0).square(d)
    window = (1 - side / 2, 1 + side / 2)
    t0 = d - side / 2  # bottom edge of the square
    lags = np.linspace(0.01, 0.2, 20)
    lengths, maxdq, verdicts = [], [], {}
    for L in range(5):
        f = get_map("snowflake-beam", 2, L=L)
        tm = transform_of(f)
        lengths.append(slice_size(tm, float(d), 100_000, window).value)
        c = log_transform_curve(f, np.concatenate([[t0], t0 + lags]), budget=1_000_000, seed=0)
        maxdq.append(float(np.max((c.rho_tilde[1:] - c.rho_tilde[0]) / lags)))
        if L in (0, 4):
            rep = bip_sup(tm, [float(s) for s in SnowflakeBeamSpec(L).depths], quad_grid=1024)
            verdicts[L] = rep.verdict
    ratios = [b / a for a, b in zip(lengths, lengths[1:])]
    length_ok = all(abs(r / (4 / 3) - 1) <= 0.02 for r in ratios)
    dq_ok = all(b > a for a, b in zip(maxdq[1:], maxdq[2:]))
    verdict_ok = verdicts[0] == "bounded" and verdicts[4] == "growing"
    elapsed = time.perf_counter() - start
    ok = length_ok and dq_ok and verdict_ok and elapsed < 600
    assert verdict(10, ok, f"length ratios {np.round(ratios, 4).tolist()}, max dq "
                           f"{np.round(maxdq, 5).tolist()}, BIP verdict L=0 {verdicts[0]}, L=4 {verdicts[4]}, "
                           f"{elapsed:.0f}s")


def test_criterion_11_asymptotic_representative(verdict):
    parts, ok = [], True
    # off-node directions, so the sphere interpolation is exercised
    ang = np.random.default_rng(11).uniform(0, 2 * np.pi, 500)
    probe = math.exp(-10) * np.column_stack([np.cos(ang), np.sin(ang)])
    for label, dexp in (("diag", 1.0), ("power-radial", 2.0)):
        f = get_map(label, 2)
        consts = []
        for budget in (500_000, 1_000_000):
            g = gen_derivative(f, [math.exp(-8), math.exp(-9), math.exp(-10)], budget=budget, seed=0)
            rep = asymptotic_representative(f, g, np.arange(-12.0, -3.5, 0.5), d=dexp, budget=budget, seed=0)
            res = float(np.max(rep.residual(f, probe)))
            ok &= res < 0.01
            consts.append(rep.bilipschitz)
        stable = math.isfinite(consts[0]) and abs(consts[1] / consts[0] - 1) <= 0.10
        ok &= stable
        parts.append(f"{label}: residual {res:.1e}, bi-Lipschitz {consts[0]:.4f} -> {consts[1]:.4f}")
    assert verdict(11, ok, "; ".join(parts))


def test_criterion_12_weak_quasisymmetry(verdict):
    ident = weak_qs_estimate(transform_of(get_map("identity", 2)), triples=20_000, seed=0).weak_h
    tm = transform_of(get_map("diag", 2))
    a = weak_qs_estimate(tm, triples=20_000, seed=0).weak_h
    b = weak_qs_estimate(tm, triples=40_000, seed=0).weak_h
    ok = ident == 1.0 and abs(b / a - 1) <= 0.10
    assert verdict(12, ok, f"identity weakH {ident!r}, diag weakH {a:.4f} -> {b:.4f}")
