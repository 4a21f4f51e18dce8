"""Verification machinery built on the Zorich transform.

Slice integrals of the generalized cross product, the box subdivision of a
slab ``Q x [t0, t0 + t]`` with its per-box geometry, the inequality chains
that turn box geometry into bounds on the mean-radius difference quotient,
quasisymmetry and rectifiability diagnostics, and the asymptotic
representative ``D(x) = rho_f(|x|) g(x/|x|)``.
"""
from __future__ import annotations

import dataclasses
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import shapely
from scipy.optimize import minimize
from scipy.spatial import ConvexHull, cKDTree
from scipy.spatial.distance import pdist
from scipy.stats import theilslopes

from .errors import BranchJumpError, DegenerateImageError, DomainError, InvalidInputError
from .geometry import ball_volume, base_extent, lp_bound, pi, subdivide_slice
from .mapzoo import QCMap
from .radius import (
    MeanRadiusCurve,
    bi_lipschitz_estimate,
    fd_jacobian_det,
    log_transform_curve,
    mean_radius,
)
from .sampling import DEFAULT_CHUNK, chunked_mean, sphere_samples, substream
from .transform import TransformedMap, transform_of
from .zorich import zorich_map

SCHEMA_VERSION = 1

__all__ = [
    "AsymptoticRep",
    "BipIntegral",
    "BipReport",
    "ChainReport",
    "GenDerivative",
    "QSReport",
    "SliceSize",
    "SubdivisionReport",
    "asymptotic_representative",
    "beam_volume",
    "bip_integral",
    "bip_sup",
    "bound_chains",
    "gen_derivative",
    "linear_distortion",
    "report_to_dict",
    "slice_size",
    "subdivision_analysis",
    "transform_jacobian",
    "volume_comparison",
    "weak_qs_estimate",
    "write_report_json",
]


# ----------------------------------------------------------------------------
# shared helpers


def _midpoint_grid(n: int, cells_per_unit: int, lower=None, widths=None) -> tuple[np.ndarray, float]:
    """Midpoints of a regular grid over a base box, with the cell volume."""
    ext = base_extent(n) if widths is None else np.asarray(widths, dtype=float)
    lo = np.zeros(n - 1) if lower is None else np.asarray(lower, dtype=float)
    counts = [max(1, int(round(e * cells_per_unit))) for e in ext]
    axes = [lo[i] + (np.arange(c) + 0.5) * ext[i] / c for i, c in enumerate(counts)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n - 1)
    return mesh, float(np.prod(ext / np.array(counts)))


def transform_jacobian(tm: TransformedMap, x: np.ndarray) -> np.ndarray:
    """``J_f~(x) = J_f(Z x) J_Z(x) / J_Z(f~ x)``."""
    Z = tm.zorich
    zx = Z(x)
    f = tm.source
    jf = f.jacobian_det(zx) if f.jacobian_det is not None else fd_jacobian_det(f, zx)
    return np.abs(jf) * Z.jacobian_det(x) / Z.jacobian_det(tm.evaluate(x))


def beam_volume(tm: TransformedMap, lower, upper, budget: int, seed: int, key: tuple = (),
                chunk_size: int = DEFAULT_CHUNK) -> tuple[float, float]:
    """Monte Carlo ``vol_n f~(box)`` for an axis-aligned beam box."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    width = upper - lower

    def draw(rng, size):
        return transform_jacobian(tm, lower + rng.random((size, lower.size)) * width)

    st = chunked_mean(draw, budget, seed, chunk_size, key=key)
    vol = float(np.prod(width))
    return vol * st.mean, vol * st.std_error


# ----------------------------------------------------------------------------
# BIP integrals


@dataclass
class BipIntegral:
    value: float
    refinement_delta: float
    excluded_cells: int
    grid: int


def _bip_value(tm: TransformedMap, t: float, grid: int, fd_step: float):
    n = tm.n
    pts, cell = _midpoint_grid(n, grid)
    excluded = 0
    try:
        P = tm.slice_partials(t, pts, step=fd_step)
        dens = np.linalg.norm(pi(P), axis=-1) ** (n / (n - 1))
    except BranchJumpError:
        dens = np.empty(len(pts))
        for i, p in enumerate(pts):
            try:
                P = tm.slice_partials(t, p[None, :], step=fd_step)
                dens[i] = np.linalg.norm(pi(P), axis=-1)[0] ** (n / (n - 1))
            except BranchJumpError:
                dens[i] = np.nan
        excluded = int(np.isnan(dens).sum())
    return float(np.nansum(dens) * cell), excluded


def bip_integral(tm: TransformedMap, t: float, quad_grid: int = 64, fd_step: float = 1e-5,
                 refine: bool = True) -> BipIntegral:
    """Midpoint rule for ``int_Q ||Pi(d gamma_t)||^{n/(n-1)} dV``.

    ``quad_grid`` is the number of cells per unit length along each base
    axis.  With ``refine`` the grid is doubled once and the change reported.
    """
    if quad_grid < 8:
        raise InvalidInputError("quadrature needs at least 8 cells per axis")
    if t >= tm.M:
        raise DomainError("slice height must lie below M")
    value, excluded = _bip_value(tm, t, quad_grid, fd_step)
    delta = math.nan
    if refine:
        finer, _ = _bip_value(tm, t, 2 * quad_grid, fd_step)
        delta = abs(finer - value)
    return BipIntegral(value, delta, excluded, quad_grid)


@dataclass
class BipReport:
    t_samples: np.ndarray
    integrals: np.ndarray
    sup_estimate: float
    verdict: str  # "bounded" | "growing" | "inconclusive"
    trend_slope: float
    mad: float
    excluded_cells: int = 0


def bip_sup(tm: TransformedMap, t_samples: Sequence[float], quad_grid: int = 64,
            fd_step: float = 1e-5) -> BipReport:
    """Slice integrals over ``t_samples`` with a boundedness verdict.

    ``bounded`` when the spread is under 10% of the median.  Otherwise a
    Theil-Sen slope of the integrals against ``-t`` is taken; ``growing``
    when the fitted rise over the sampled range exceeds twice the median
    absolute deviation, else ``inconclusive``.
    """
    ts = np.asarray(t_samples, dtype=float)
    if ts.size == 0:
        raise InvalidInputError("need at least one slice")
    vals, excl = [], 0
    for t in ts:
        b = bip_integral(tm, float(t), quad_grid, fd_step, refine=False)
        vals.append(b.value)
        excl += b.excluded_cells
    vals = np.array(vals)
    med = float(np.median(vals))
    mad = float(np.median(np.abs(vals - med)))
    slope = 0.0
    if ts.size >= 3 and np.ptp(ts) > 0:
        slope = float(theilslopes(vals, -ts)[0])
    if np.ptp(vals) < 0.1 * abs(med):
        verdict = "bounded"
    elif slope * np.ptp(ts) > 2.0 * mad:
        verdict = "growing"
    else:
        verdict = "inconclusive"
    return BipReport(ts, vals, float(vals.max()), verdict, slope, mad, excl)


# ----------------------------------------------------------------------------
# box subdivision

FACE_POINTS = 17  # per edge, >= 16 and compatible with SUBCELLS
SUBCELLS = 4


def _face_template(n: int, m: int) -> np.ndarray:
    """Unit-box face samples, shape (2n, m^{n-1}, n); face 2a+s has coordinate a = s."""
    g = np.linspace(0.0, 1.0, m)
    grid = np.stack(np.meshgrid(*([g] * (n - 1)), indexing="ij"), axis=-1).reshape(-1, n - 1)
    faces = []
    for a in range(n):
        for s in (0.0, 1.0):
            f = np.insert(grid, a, s, axis=1)
            faces.append(f)
    return np.array(faces)


def _corner_grid(n: int, k: int) -> np.ndarray:
    g = np.linspace(0.0, 1.0, k + 1)
    return np.stack(np.meshgrid(*([g] * n), indexing="ij"), axis=-1).reshape(-1, n)


def _projected_volume(proj: np.ndarray, n: int, k: int) -> float:
    """Volume of the union of projected sub-cell images (proj: ((k+1)^n, n-1))."""
    grid = proj.reshape((k + 1,) * n + (n - 1,))
    cells = []
    for offs in itertools.product((0, 1), repeat=n):
        sl = tuple(slice(o, o + k) for o in offs)
        cells.append(grid[sl].reshape(-1, n - 1))
    cells = np.stack(cells, axis=1)  # (k^n, 2^n, n-1)
    if n == 2:
        lo = cells[..., 0].min(axis=1)
        hi = cells[..., 0].max(axis=1)
        order = np.argsort(lo)
        lo, hi = lo[order], hi[order]
        total, cur_lo, cur_hi = 0.0, lo[0], hi[0]
        for a, b in zip(lo[1:], hi[1:]):
            if a > cur_hi:
                total += cur_hi - cur_lo
                cur_lo, cur_hi = a, b
            else:
                cur_hi = max(cur_hi, b)
        return total + (cur_hi - cur_lo)
    if n == 3:
        hulls = shapely.convex_hull(shapely.multipoints(cells))
        return float(shapely.union_all(hulls).area)
    raise InvalidInputError("projection volumes are implemented for n = 2 and 3")


def _diameter(pts: np.ndarray) -> float:
    if len(pts) > 64 and pts.shape[1] >= 2:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except Exception:  # degenerate (flat) point clouds
            pass
    return float(np.max(pdist(pts)))


@dataclass
class SubdivisionReport:
    n: int
    t0: float
    t: float
    N: int
    side: float
    diam: np.ndarray
    nu: np.ndarray
    vol: np.ndarray
    vol_err: np.ndarray
    vol_base: np.ndarray
    pi_rep: np.ndarray
    proj_vol: np.ndarray
    V_t: float
    V_t_err: float
    bip_t0: float
    ratio_c1: tuple
    ratio_c2: tuple
    ratio_c3: tuple
    face_points: int = FACE_POINTS
    unresolved: int = 0
    label: str = ""

    @property
    def box_sum(self) -> float:
        return float(np.sum(self.vol))

    @property
    def box_sum_err(self) -> float:
        return float(np.sqrt(np.sum(self.vol_err**2)))

    @property
    def proj_total(self) -> float:
        return float(np.sum(self.proj_vol))


def subdivision_analysis(tm: TransformedMap, t0: float, t: float, box_budget: int = 2048,
                         slab_budget: int = 1 << 16, seed: int = 0, face_points: int = FACE_POINTS,
                         base_quad: int = 4, bip_grid: int = 64) -> SubdivisionReport:
    """Per-box geometry of ``f~`` on the subdivision of ``Q x [t0, t0 + t]``."""
    n = tm.n
    if not t0 < tm.M - 1:
        raise DomainError("slab base t0 must satisfy t0 < M - 1")
    boxes = subdivide_slice(t0, t, n)
    N = len(boxes)
    s = boxes[0].side
    lower = np.array([b.lower() for b in boxes])
    width = np.array([s] * (n - 1) + [t])
    centers = lower + 0.5 * width
    hint = tm.evaluate(centers)

    # boundary images
    tmpl = _face_template(n, face_points)  # (2n, F, n)
    pts = lower[:, None, None, :] + tmpl[None] * width
    img = tm.evaluate(pts, hint[:, None, None, :])
    flat = img.reshape(N, -1, n)
    diam = np.array([_diameter(flat[i]) for i in range(N)])
    nu = np.full(N, np.inf)
    for i in range(N):
        for a in range(n):
            lo_face, hi_face = img[i, 2 * a], img[i, 2 * a + 1]
            d, _ = cKDTree(hi_face).query(lo_face)
            nu[i] = min(nu[i], float(d.min()))

    # per-box volumes
    vol = np.empty(N)
    vol_err = np.empty(N)
    for i in range(N):
        vol[i], vol_err[i] = beam_volume(tm, lower[i], lower[i] + width, box_budget, seed, key=(1, i))
    slab_lo = np.array([0.0] * (n - 1) + [t0])
    slab_hi = np.concatenate([base_extent(n), [t0 + t]])
    V_t, V_t_err = beam_volume(tm, slab_lo, slab_hi, slab_budget, seed, key=(2,))

    # base face: parameterization integral and centre density
    sub, sub_cell = _midpoint_grid(n, base_quad, widths=np.full(n - 1, 1.0))
    base_pts = lower[:, None, : n - 1] + sub[None] * s
    P = tm.slice_partials(t0, base_pts.reshape(-1, n - 1))
    dens = np.linalg.norm(pi(P), axis=-1).reshape(N, -1)
    vol_base = dens.sum(axis=1) * sub_cell * s ** (n - 1)
    # representative density per box: the smallest node value not below the box mean
    mean = dens.mean(axis=1, keepdims=True)
    pi_rep = np.where(dens >= mean * (1 - 1e-12), dens, np.inf).min(axis=1)

    # projections of sub-cell images onto the base
    cg = _corner_grid(n, SUBCELLS)
    cpts = lower[:, None, :] + cg[None] * width
    cimg = tm.evaluate(cpts, hint[:, None, :])
    proj_vol = np.array([_projected_volume(cimg[i, :, : n - 1], n, SUBCELLS) for i in range(N)])

    bip_t0 = bip_integral(tm, t0, bip_grid, refine=False).value

    c1 = vol / diam**n
    c2 = diam / nu
    c3 = nu ** (n - 1) / vol_base
    return SubdivisionReport(
        n=n, t0=float(t0), t=float(t), N=N, side=s, diam=diam, nu=nu, vol=vol, vol_err=vol_err,
        vol_base=vol_base, pi_rep=pi_rep, proj_vol=proj_vol, V_t=V_t, V_t_err=V_t_err,
        bip_t0=bip_t0,
        ratio_c1=(float(c1.min()), float(c1.max())),
        ratio_c2=(float(c2.min()), float(c2.max())),
        ratio_c3=(float(c3.min()), float(c3.max())),
        face_points=face_points, label=tm.source.label,
    )


# ----------------------------------------------------------------------------
# inequality chains

REL_SLACK = 1e-9


@dataclass
class ChainStep:
    name: str
    lhs: float
    rhs: float
    relation: str  # "<=" or ">="

    @property
    def holds(self) -> bool:
        tol = REL_SLACK * max(abs(self.lhs), abs(self.rhs), 1e-300)
        if self.relation == "<=":
            return self.lhs <= self.rhs + tol
        return self.lhs >= self.rhs - tol


@dataclass
class ChainReport:
    lower_steps: list
    upper_steps: list
    lower_bound: float
    upper_bound: float
    box_sum: float
    constants: dict
    dq_measured: float = math.nan
    dq_lower: float = math.nan
    dq_upper: float = math.nan

    @property
    def all_hold(self) -> bool:
        return all(s.holds for s in self.lower_steps + self.upper_steps)

    @property
    def dq_bracketed(self) -> bool:
        tol = REL_SLACK * abs(self.dq_measured)
        return self.dq_lower - tol <= self.dq_measured <= self.dq_upper + tol

    def failed_steps(self) -> list:
        return [s.name for s in self.lower_steps + self.upper_steps if not s.holds]


def bound_chains(rep: SubdivisionReport, increment: Optional[float] = None) -> ChainReport:
    """Lower and upper chains from the box sum to closed-form bounds.

    Constants are the empirical extremes of the per-box ratios.  With
    ``increment = rho~(t0 + t) - rho~(t0)`` the chains are scaled into
    bounds on the difference quotient by ``c4 = increment / box_sum``.
    """
    n, N, t = rep.n, rep.N, rep.t
    q = n / (n - 1)
    diam, nu, vol, vb, proj = rep.diam, rep.nu, rep.vol, rep.vol_base, rep.proj_vol
    c1lo, c1hi = float(np.min(vol / diam**n)), float(np.max(vol / diam**n))
    c2hi = float(np.max(diam / nu))
    c3hi = float(np.max(nu ** (n - 1) / vb))
    om = ball_volume(n - 1)
    S = float(np.sum(vol))
    sum_dn = float(np.sum(diam**n))
    sum_dn1 = float(np.sum(diam ** (n - 1)))
    lhs_lp, rhs_lp = lp_bound(diam, n)

    lower = [
        ChainStep("box ratio", S, c1lo * sum_dn, ">="),
        ChainStep("power mean", sum_dn, float(rhs_lp), ">="),
        ChainStep("isodiametric", sum_dn1, 2 ** (n - 1) / om * rep.proj_total, ">="),
        ChainStep("projection covers base", rep.proj_total, 2.0, ">="),
    ]
    lower_bound = c1lo * N ** (1.0 / (1 - n)) * (2**n / om) ** q

    pi_c = rep.pi_rep
    sum_nu = float(np.sum(nu**n))
    sum_vbq = float(np.sum(vb**q))
    box_base = rep.side ** (n - 1)
    upper = [
        ChainStep("box ratio", S, c1hi * sum_dn, "<="),
        ChainStep("diameter to gap", sum_dn, c2hi**n * sum_nu, "<="),
        ChainStep("gap to face volume", sum_nu, c3hi**q * sum_vbq, "<="),
        ChainStep("face volume by centre density", float(np.max(vb / (2 * pi_c * box_base))), 1.0, "<="),
        ChainStep("face volume by slab height", float(np.max(vb / (2 ** (n - 1) * pi_c * t ** (n - 1)))), 1.0, "<="),
        ChainStep("Riemann sum", float(np.sum(pi_c**q) * t ** (n - 1)), 2.0 * rep.bip_t0, "<="),
    ]
    upper_bound = 2 ** (n + 1) * c1hi * c2hi**n * c3hi**q * rep.bip_t0 * t
    consts = {"c1lo": c1lo, "c1hi": c1hi, "c2hi": c2hi, "c3hi": c3hi}
    out = ChainReport(lower, upper, lower_bound, upper_bound, S, consts)
    # the closing links tie the chains to their closed forms
    out.lower_steps.append(ChainStep("lower closed form", S, lower_bound, ">="))
    out.upper_steps.append(ChainStep("upper closed form", S, upper_bound, "<="))
    if increment is not None:
        c4 = increment / S
        consts["c4"] = c4
        out.dq_measured = increment / t
        out.dq_lower = c4 * lower_bound / t
        out.dq_upper = c4 * upper_bound / t
    return out


@dataclass
class VolumeComparison:
    t0: float
    t: float
    increment: float
    increment_err: float
    V_t: float
    V_t_err: float

    @property
    def ratio(self) -> float:
        return self.increment / self.V_t


def volume_comparison(tm: TransformedMap, t0: float, t: float, budget: Optional[int] = None,
                      seed: int = 0) -> VolumeComparison:
    """Compare ``rho~(t0 + t) - rho~(t0)`` with ``vol_n f~(Q x [t0, t0 + t])``."""
    f = tm.source
    if t <= 0:
        raise InvalidInputError("slab height must be positive")
    if not t0 < tm.M - 1:
        raise DomainError("slab base t0 must satisfy t0 < M - 1")
    curve = log_transform_curve(f, [t0, t0 + t], budget, seed)
    inc = float(curve.rho_tilde[1] - curve.rho_tilde[0])
    inc_err = float(math.hypot(*curve.errors))
    n = tm.n
    slab_budget = budget if budget is not None else 1 << 18
    V, Ve = beam_volume(tm, [0.0] * (n - 1) + [t0], list(base_extent(n)) + [t0 + t], slab_budget, seed, key=(3,))
    return VolumeComparison(float(t0), float(t), inc, inc_err, V, Ve)


# ----------------------------------------------------------------------------
# weak quasisymmetry


@dataclass
class QSReport:
    ratio_edges: np.ndarray
    h_curve: np.ndarray
    weak_h: float
    triples: int
    region: tuple


def _sample_triples(Z, rng, count, region, scale_range):
    n = Z.n
    lo, hi = region
    ext = base_extent(n)
    x = np.column_stack([rng.random((count, n - 1)) * ext, lo + rng.random(count) * (hi - lo)])
    scale = np.exp(rng.uniform(np.log(scale_range[0]), np.log(scale_range[1]), count))
    frac = rng.random(count)

    def offset(r):
        d = rng.standard_normal((count, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        p = x + d * r[:, None]
        # keep heights inside the region by reflection
        h = p[:, -1]
        h = np.where(h > hi, 2 * hi - h, h)
        h = np.where(h < lo, 2 * lo - h, h)
        p[:, -1] = np.clip(h, lo, hi)
        return p

    b = offset(scale)
    a = offset(scale * frac)
    return x, a, b


QS_CHUNK = 8192
QS_RESOLUTION = 1e-9


def _qs_ratios(tm, x, a, b):
    Z = tm.zorich
    dxa = Z.quotient_distance(x, a)
    dxb = Z.quotient_distance(x, b)
    img = Z.quotient_distance(tm.evaluate(x), tm.evaluate(a)) / Z.quotient_distance(tm.evaluate(x), tm.evaluate(b))
    return dxa / dxb, img


def _polish_triple(tm, x, a, b, region, iters):
    """Local ascent of the image ratio from one triple, keeping ``d(x, a) <= d(x, b)``."""
    n = tm.n
    lo, hi = region
    va, vb = a - x, b - x
    rb = np.linalg.norm(vb)
    lam0 = min(max(np.linalg.norm(va) / rb, 1e-6), 1 - 1e-6)
    p0 = np.concatenate([x, vb, va / np.linalg.norm(va), [math.log(lam0 / (1 - lam0))]])

    def unpack(p):
        xx = p[:n].copy()
        xx[-1] = min(max(xx[-1], lo), hi)
        bb = xx + p[n:2 * n]
        d = p[2 * n:3 * n]
        lam = 1.0 / (1.0 + math.exp(-p[-1]))
        aa = xx + lam * np.linalg.norm(p[n:2 * n]) * d / max(np.linalg.norm(d), 1e-300)
        return xx, aa, bb

    def objective(p):
        xx, aa, bb = unpack(p)
        pts = np.array([xx, aa, bb])
        if np.any(pts[:, -1] < lo) or np.any(pts[:, -1] > hi) or np.linalg.norm(bb - xx) < 1e-9:
            return 0.0
        dom, img = _qs_ratios(tm, xx[None], aa[None], bb[None])
        if not dom[0] <= 1.0 or not np.isfinite(img[0]):
            return 0.0
        return -float(img[0])

    res = minimize(objective, p0, method="Nelder-Mead", options={"maxiter": iters, "xatol": 1e-10, "fatol": 1e-12})
    return max(-res.fun, 0.0), unpack(res.x)


def weak_qs_estimate(tm: TransformedMap, region: tuple = (-6.0, -3.0), triples: int = 20000,
                     seed: int = 0, bins: int = 10, scale_range: tuple = (1e-3, 2.0),
                     polish: int = 8, polish_iters: int = 400) -> QSReport:
    """Empirical weak quasisymmetry function of ``f~`` on ``Q x region``.

    Triples ``(x, a, b)`` with ``d(x, a) <= d(x, b)`` are drawn at log-uniform
    scales in keyed chunks, so a larger count extends a smaller one;
    ``h_curve[k]`` is the largest image ratio among triples whose domain
    ratio is at most ``ratio_edges[k]``.  The ``polish`` best triples are
    then improved by a local ascent, which only raises the top bin.
    ``weak_h`` is at least 1; values within ``QS_RESOLUTION`` of 1 report 1.
    """
    lo, hi = region
    if not lo < hi <= tm.M:
        raise InvalidInputError("region must be an interval below M")
    if triples < 1:
        raise InvalidInputError("need at least one triple")
    Z = tm.zorich
    xs, as_, bs = [], [], []
    for k in range((triples + QS_CHUNK - 1) // QS_CHUNK):
        size = min(QS_CHUNK, triples - k * QS_CHUNK)
        x, a, b = _sample_triples(Z, substream(seed, 4, k), size, region, scale_range)
        xs.append(x)
        as_.append(a)
        bs.append(b)
    x, a, b = np.concatenate(xs), np.concatenate(as_), np.concatenate(bs)
    dxa = Z.quotient_distance(x, a)
    dxb = Z.quotient_distance(x, b)
    swap = dxa > dxb
    a[swap], b[swap] = b[swap].copy(), a[swap].copy()
    keep = np.maximum(dxa, dxb) > 0
    x, a, b = x[keep], a[keep], b[keep]
    dom, img = _qs_ratios(tm, x, a, b)
    edges = np.linspace(1.0 / bins, 1.0, bins)
    hc = np.array([float(np.max(img[dom <= e], initial=0.0)) for e in edges])
    if polish > 0:
        best = 0.0
        for i in np.argsort(img)[::-1][:polish]:
            if dom[i] > 0:
                val, _ = _polish_triple(tm, x[i], a[i], b[i], (lo, hi), polish_iters)
                best = max(best, val)
        hc[-1] = max(hc[-1], best)
    hc = np.maximum.accumulate(hc)
    # H >= 1 always; excess within evaluation round-off is not resolvable
    weak_h = float(hc[-1])
    if weak_h <= 1.0 + QS_RESOLUTION:
        weak_h = 1.0
    return QSReport(edges, hc, weak_h, int(keep.sum()), (float(lo), float(hi)))


# ----------------------------------------------------------------------------
# rectifiability proxy


@dataclass
class SliceSize:
    value: float
    resolution: int
    jumps: int = 0


def slice_size(tm: TransformedMap, t0: float, resolution: int = 256,
               u_range: Optional[tuple] = None) -> SliceSize:
    """Length (n=2) or area (n=3) of the slice image ``f~(Q x {t0})``.

    ``resolution`` counts segments per unit of base length, so doubling it
    refines the previous grid.  For n=2 ``u_range`` restricts the length to
    a sub-interval of the base.
    """
    n = tm.n
    if t0 >= tm.M:
        raise DomainError("slice height must lie below M")
    if resolution < 1:
        raise InvalidInputError("resolution must be positive")
    if n == 2:
        a, b = (0.0, 2.0) if u_range is None else map(float, u_range)
        segs = max(1, int(round((b - a) * resolution)))
        u = np.linspace(a, b, segs + 1)[:, None]
        g = tm.slice_gamma_path(t0, u)
        steps = np.linalg.norm(np.diff(g, axis=0), axis=1)
        med = float(np.median(steps))
        jumps = int(np.sum(steps > 10.0 * med + 1e-12)) if med > 0 else 0
        return SliceSize(float(steps.sum()), resolution, jumps)
    if n == 3:
        if u_range is not None:
            raise InvalidInputError("u_range is supported for n = 2 only")
        u1 = np.linspace(0.0, 1.0, resolution + 1)
        u2 = np.linspace(0.0, 2.0, 2 * resolution + 1)
        grid = np.stack(np.meshgrid(u1, u2, indexing="ij"), axis=-1)
        canon = tm.slice_gamma(t0, grid)
        Z = tm.zorich
        # resolve each cell locally: the quotient has cone points, so a global
        # lift of the slice can change sheets
        p00 = canon[:-1, :-1]
        p10 = Z.nearest_representative(canon[1:, :-1], p00)
        p01 = Z.nearest_representative(canon[:-1, 1:], p00)
        p11 = Z.nearest_representative(canon[1:, 1:], p00)
        a1 = 0.5 * np.linalg.norm(np.cross(p10 - p00, p11 - p00), axis=-1)
        a2 = 0.5 * np.linalg.norm(np.cross(p11 - p00, p01 - p00), axis=-1)
        return SliceSize(float(a1.sum() + a2.sum()), resolution)
    raise InvalidInputError("slice size is implemented for n = 2 and 3")


# ----------------------------------------------------------------------------
# generalized derivatives and the asymptotic representative


@dataclass
class GenDerivative:
    directions: np.ndarray
    values: np.ndarray
    radii: np.ndarray
    rhos: np.ndarray
    distances: np.ndarray
    n: int

    @property
    def simple(self) -> bool:
        """Heuristic: successive sup-distances shrink to near zero."""
        d = self.distances
        return bool(d.size == 0 or d[-1] <= max(1e-6, 0.1 * float(np.max(d))))

    def __call__(self, x) -> np.ndarray:
        """Interpolate the last sampled ``g`` at unit directions ``x``."""
        x = np.asarray(x, dtype=float)
        x = x / np.linalg.norm(x, axis=-1, keepdims=True)
        flat = x.reshape(-1, self.n)
        if self.n == 2:
            ang = np.mod(np.arctan2(flat[:, 1], flat[:, 0]), 2 * np.pi)
            m = len(self.directions)
            pos = ang / (2 * np.pi) * m
            i0 = np.floor(pos).astype(int) % m
            w = (pos - np.floor(pos))[:, None]
            out = (1 - w) * self.values[i0] + w * self.values[(i0 + 1) % m]
        else:
            out = self._sphere_interp(flat)
        return out.reshape(x.shape[:-1] + (self.values.shape[-1],))

    def _sphere_interp(self, q):
        hull = self._hull
        tri = hull.simplices
        verts = self.directions
        # nearest sample, then the incident triangle containing the ray
        _, near = cKDTree(verts).query(q)
        out = np.empty((len(q), self.values.shape[-1]))
        incident = self._incident
        for k, (p, v) in enumerate(zip(q, near)):
            best, best_l = None, None
            for ti in incident[v]:
                T = verts[tri[ti]].T
                lam = np.linalg.solve(T, p)
                if best is None or lam.min() > best_l.min():
                    best, best_l = ti, lam
            lam = np.clip(best_l, 0, None)
            lam /= lam.sum()
            out[k] = lam @ self.values[tri[best]]
        return out

    @property
    def _hull(self):
        if not hasattr(self, "_hull_cache"):
            object.__setattr__(self, "_hull_cache", ConvexHull(self.directions))
            inc = [[] for _ in range(len(self.directions))]
            for ti, s in enumerate(self._hull_cache.simplices):
                for v in s:
                    inc[v].append(ti)
            object.__setattr__(self, "_incident_cache", inc)
        return self._hull_cache

    @property
    def _incident(self):
        self._hull
        return self._incident_cache


def gen_derivative(f: QCMap, radii: Sequence[float], sphere_count: int = 4096,
                   budget: Optional[int] = None, seed: int = 0) -> GenDerivative:
    """Sample ``g_k(x) = f(r_k x) / rho_f(r_k)`` on unit directions along ``radii``."""
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0 or np.any(radii <= 0) or np.any(radii >= f.radius):
        raise DomainError("radii must lie in (0, e^M)")
    dirs = sphere_samples(f.n, sphere_count)
    rhos, vals, dists = [], None, []
    for r in radii:
        rho, _ = mean_radius(f, float(r), budget, seed)
        g = f(r * dirs) / rho
        if vals is not None:
            dists.append(float(np.max(np.linalg.norm(g - vals, axis=1))))
        vals = g
        rhos.append(rho)
    return GenDerivative(dirs, vals, radii, np.array(rhos), np.array(dists), f.n)


@dataclass
class AsymptoticRep:
    D: QCMap
    curve: MeanRadiusCurve
    g: Callable
    bilipschitz: float = math.nan

    def residual(self, f: QCMap, x) -> np.ndarray:
        """``|f(x) - D(x)| / (|f(x)| + |D(x)|)``."""
        a, b = f(x), self.D(x)
        return np.linalg.norm(a - b, axis=-1) / (np.linalg.norm(a, axis=-1) + np.linalg.norm(b, axis=-1))


def asymptotic_representative(f: QCMap, g: Callable, t_grid: Sequence[float], d: Optional[float] = None,
                              budget: Optional[int] = None, seed: int = 0, pairs: int = 4000) -> AsymptoticRep:
    """``D(x) = rho_f(|x|) g(x / |x|)`` with the mean radius taken from a sampled curve.

    ``g`` maps unit vectors to ``R^n`` (a callable or a ``GenDerivative``).
    Outside the sampled range ``ln rho_f`` is extended with slope ``d``
    when given, else with the end slopes of the curve.  The empirical
    bi-Lipschitz constant of the transform of ``D`` is measured on random
    pairs over the span of ``t_grid``.
    """
    if d is not None and d <= 0:
        raise InvalidInputError("homogeneity exponent must be positive")
    sampled = log_transform_curve(f, t_grid, budget, seed)
    if d is None:
        curve = sampled
    else:
        tg, rg = sampled.t_grid, sampled.rho_tilde

        def curve(t):
            t = np.asarray(t, dtype=float)
            out = np.interp(t, tg, rg)
            out = np.where(t < tg[0], rg[0] + d * (t - tg[0]), out)
            return np.where(t > tg[-1], rg[-1] + d * (t - tg[-1]), out)

    def D(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(r > 0, x / np.where(r > 0, r, 1.0), 0.0)
            rho = np.exp(curve(np.log(np.where(r > 0, r, 1.0))))
        return np.where(r > 0, rho * g(u), 0.0)

    Dmap = QCMap(f.n, D, f.M, f"asym[{f.label}]")
    rep = AsymptoticRep(Dmap, sampled, g)
    rep.bilipschitz = _transform_bilipschitz(transform_of(Dmap), sampled.t_grid.min(), sampled.t_grid.max(),
                                             pairs, seed)
    return rep


def _transform_bilipschitz(tm: TransformedMap, lo: float, hi: float, pairs: int, seed: int) -> float:
    Z = tm.zorich
    rng = substream(seed, 5)
    x, a, _ = _sample_triples(Z, rng, pairs, (lo, hi), (1e-3, 1.0))
    dx = Z.quotient_distance(x, a)
    keep = dx > 1e-12
    dy = Z.quotient_distance(tm.evaluate(x[keep]), tm.evaluate(a[keep]))
    ratio = dy / dx[keep]
    return float(max(ratio.max(), 1.0 / ratio.min()))


def linear_distortion(f: QCMap, radii: Sequence[float], sphere_count: int = 4096):
    """``(L_f(r), l_f(r), H_f(r))``: max and min of ``|f|`` on the sphere of radius r and their ratio."""
    dirs = sphere_samples(f.n, sphere_count)
    L, l = [], []
    for r in np.asarray(radii, dtype=float):
        m = np.linalg.norm(f(r * dirs), axis=1)
        L.append(m.max())
        l.append(m.min())
    L, l = np.array(L), np.array(l)
    return L, l, L / l


# ----------------------------------------------------------------------------
# export


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if dataclasses.is_dataclass(v) and not isinstance(v, type):
        return {f.name: _plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if callable(v):
        return None
    return v


def report_to_dict(report) -> dict:
    """Plain-JSON view of a report dataclass, tagged with its kind and schema version."""
    d = _plain(report)
    d["kind"] = type(report).__name__
    d["schemaVersion"] = SCHEMA_VERSION
    for prop in ("box_sum", "proj_total", "ratio", "all_hold", "dq_bracketed", "simple"):
        if hasattr(type(report), prop):
            d[prop] = _plain(getattr(report, prop))
    return d


def write_report_json(report, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
