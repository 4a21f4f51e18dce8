"""Mean radius of image balls and its logarithmic transform.

Image volumes are integrals of the Jacobian determinant over the ball.  The
sample points for radius ``r`` are ``r * u`` with ``u`` drawn from a stream
keyed only by ``(seed, chunk)``, so curves computed with one seed reuse the
same ``u`` at every radius (common random numbers).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, EstimationError, InvalidInputError, OrientationError
from .geometry import unit_ball_volume
from .mapzoo import QCMap
from .sampling import DEFAULT_CHUNK, chunked_mean, uniform_ball

__all__ = [
    "MeanRadiusCurve",
    "VolumeEstimate",
    "bi_lipschitz_estimate",
    "default_budget",
    "difference_quotients",
    "fd_jacobian_det",
    "homogeneity_check",
    "image_volume",
    "log_transform_curve",
    "mean_radius",
]

REL_ERROR_FLAG = 0.10


def default_budget(n: int) -> int:
    return 1_000_000 if n == 2 else 4_000_000


@dataclass(frozen=True)
class VolumeEstimate:
    value: float
    std_error: float
    samples: int
    method: str  # "mc" | "grid" | "analytic"

    @property
    def flagged(self) -> bool:
        return self.value <= 0 or self.std_error > REL_ERROR_FLAG * abs(self.value)


def fd_jacobian_det(f: QCMap, x: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian determinant of ``f`` at points ``x``."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    h = rel_step * np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), 1e-300)
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        cols.append((f(x + h * e) - f(x - h * e)) / (2.0 * h))
    return np.linalg.det(np.stack(cols, axis=-1))


def _jacobian(f: QCMap, x):
    if f.jacobian_det is not None:
        return f.jacobian_det(x)
    return fd_jacobian_det(f, x)


def image_volume(f: QCMap, r: float, budget: int | None = None, seed: int = 0,
                 chunk_size: int = DEFAULT_CHUNK, threads: int = 1,
                 orientation_tol: float = 1e-9) -> VolumeEstimate:
    """Monte Carlo estimate of ``vol f(B(0, r)) = int_{B(0,r)} |J_f|``."""
    if not (0.0 < r < f.radius):
        raise DomainError(f"radius {r} outside (0, e^M) for {f.label}")
    budget = default_budget(f.n) if budget is None else int(budget)
    n = f.n

    def draw(rng, size):
        J = _jacobian(f, r * uniform_ball(rng, size, n))
        if np.any(J < -orientation_tol * np.max(np.abs(J))):
            raise OrientationError(f"negative Jacobian sampled for {f.label}")
        return np.abs(J)

    stats = chunked_mean(draw, budget, seed, chunk_size, threads)
    ball = unit_ball_volume(n) * r**n
    return VolumeEstimate(ball * stats.mean, ball * stats.std_error, stats.count, "mc")


def mean_radius(f: QCMap, r: float, budget: int | None = None, seed: int = 0, **kw) -> tuple[float, float]:
    """``(vol / Omega_n)^{1/n}`` with a delta-method standard error."""
    v = image_volume(f, r, budget, seed, **kw)
    if v.value <= 0:
        raise EstimationError("nonpositive volume estimate")
    rho = (v.value / unit_ball_volume(f.n)) ** (1.0 / f.n)
    return rho, rho * v.std_error / (f.n * v.value)


@dataclass
class MeanRadiusCurve:
    """Sampled ``t -> ln rho_f(e^t)`` with one-sigma error bars."""

    t_grid: np.ndarray
    rho_tilde: np.ndarray
    errors: np.ndarray
    label: str = ""
    n: int = 2
    seed: int = 0
    budget: int = 0
    flagged: np.ndarray = field(default=None)

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.rho_tilde = np.asarray(self.rho_tilde, dtype=float)
        self.errors = np.asarray(self.errors, dtype=float)
        if self.flagged is None:
            self.flagged = np.zeros(self.t_grid.shape, dtype=bool)

    def __call__(self, t):
        """Piecewise-linear interpolation, extrapolated with the end slopes."""
        t = np.asarray(t, dtype=float)
        tg, rg = self.t_grid, self.rho_tilde
        if tg.size == 1:
            return rg[0] + (t - tg[0])
        out = np.interp(t, tg, rg)
        lo_slope = (rg[1] - rg[0]) / (tg[1] - tg[0])
        hi_slope = (rg[-1] - rg[-2]) / (tg[-1] - tg[-2])
        out = np.where(t < tg[0], rg[0] + lo_slope * (t - tg[0]), out)
        out = np.where(t > tg[-1], rg[-1] + hi_slope * (t - tg[-1]), out)
        return out

    def rows(self):
        return [(float(t), float(r), float(e)) for t, r, e in zip(self.t_grid, self.rho_tilde, self.errors)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# label={self.label},n={self.n},seed={self.seed},budget={self.budget}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "rhoTilde", "stdError"])
            for t, r, e in self.rows():
                w.writerow([repr(t), repr(r), repr(e)])

    @classmethod
    def from_csv(cls, path) -> "MeanRadiusCurve":
        meta = {}
        with open(path, encoding="utf-8") as fh:
            first = fh.readline()
            if first.startswith("#"):
                for part in first[1:].strip().split(","):
                    k, _, v = part.partition("=")
                    meta[k] = v
            rows = list(csv.DictReader(fh))
        return cls(
            [float(r["t"]) for r in rows],
            [float(r["rhoTilde"]) for r in rows],
            [float(r["stdError"]) for r in rows],
            label=meta.get("label", ""),
            n=int(meta.get("n", 2)),
            seed=int(meta.get("seed", 0)),
            budget=int(meta.get("budget", 0)),
        )


def log_transform_curve(f: QCMap, t_grid: Sequence[float], budget: int | None = None, seed: int = 0,
                        **kw) -> MeanRadiusCurve:
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid >= f.M):
        raise DomainError("every t must lie below M")
    budget = default_budget(f.n) if budget is None else int(budget)
    vals, errs, flags = [], [], []
    Om = unit_ball_volume(f.n)
    for t in t_grid:
        v = image_volume(f, math.exp(t), budget, seed, **kw)
        if v.value <= 0:
            raise EstimationError(f"nonpositive volume at t={t}")
        vals.append((math.log(v.value) - math.log(Om)) / f.n)
        errs.append(v.std_error / (f.n * v.value))
        flags.append(v.flagged)
    return MeanRadiusCurve(t_grid, vals, errs, f.label, f.n, seed, budget, np.array(flags))


def difference_quotients(curve: MeanRadiusCurve, lags: Iterable[float], tol: float = 1e-9):
    """``(t0, lag, (rho~(t0 + lag) - rho~(t0)) / lag)`` for every grid pair at a listed lag."""
    tg = curve.t_grid
    out = []
    for lag in lags:
        if lag <= 0:
            raise InvalidInputError("lags must be positive")
        for i, t0 in enumerate(tg):
            j = np.nonzero(np.abs(tg - (t0 + lag)) <= tol * max(1.0, abs(t0)))[0]
            if j.size:
                k = j[0]
                out.append((float(t0), float(tg[k] - t0), float((curve.rho_tilde[k] - curve.rho_tilde[i]) / (tg[k] - t0))))
    return out


def bi_lipschitz_estimate(curve: MeanRadiusCurve, lags: Iterable[float] | None = None):
    """``(Lmin, Lmax, L)`` from the difference quotients; all grid pairs when ``lags`` is None."""
    if curve.t_grid.size < 2:
        raise InvalidInputError("need at least two curve points")
    if lags is None:
        tg, rg = curve.t_grid, curve.rho_tilde
        i, j = np.triu_indices(tg.size, 1)
        dq = (rg[j] - rg[i]) / (tg[j] - tg[i])
    else:
        dq = np.array([q for _, _, q in difference_quotients(curve, lags)])
        if dq.size == 0:
            raise InvalidInputError("no grid pairs at the requested lags")
    lmin, lmax = float(np.min(dq)), float(np.max(dq))
    L = max(lmax, 1.0 / lmin) if lmin > 0 else math.inf
    return lmin, lmax, L


def homogeneity_check(f: QCMap, d: float, s: float, t_grid, budget: int | None = None, seed: int = 0, **kw):
    """Ratios ``rho_f(s r) / (s^d rho_f(r))`` at ``r = e^t``."""
    if s <= 0:
        raise InvalidInputError("s must be positive")
    out = []
    for t in np.asarray(t_grid, dtype=float):
        r = math.exp(t)
        a, _ = mean_radius(f, s * r, budget, seed, **kw)
        b, _ = mean_radius(f, r, budget, seed, **kw)
        out.append(a / (s**d * b))
    return np.array(out)
