"""Quasiconformal test maps fixing the origin.

Every map is a :class:`QCMap`: a vectorized ``evaluate`` on arrays of shape
``(..., n)``, an optional analytic Jacobian determinant, the log-radius ``M``
of its domain ``B(0, e^M)`` and a few bits of metadata used by the runner.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, InvalidInputError
from .geometry import ball_volume
from .zorich import zorich_map

__all__ = [
    "QCMap",
    "RadialProfile",
    "SnowflakeBeamSpec",
    "SquareHomeomorphism",
    "builtin_zoo",
    "catalog_text",
    "diagonal_map",
    "get_map",
    "identity_map",
    "log_radial_map",
    "power_radial_map",
    "radial_dilatation",
    "radial_map",
    "scalar_map",
    "snowflake_beam_map",
    "spiral_map",
    "square_homeomorphism",
]


@dataclass(frozen=True)
class QCMap:
    """An evaluatable quasiconformal map with ``f(0) = 0``."""

    n: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    M: float
    label: str
    jacobian_det: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dilatation_hint: Optional[float] = None
    params: dict = field(default_factory=dict)
    exact_volume: Optional[Callable[[float], float]] = None
    radial: Optional["RadialProfile"] = None

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise InvalidInputError(f"{self.label} expects points of dimension {self.n}")
        return self.evaluate(x)

    @property
    def radius(self) -> float:
        return math.exp(self.M)

    def describe(self) -> str:
        ps = ",".join(f"{k}={v}" for k, v in self.params.items()) or "-"
        return f"{self.label}\tn={self.n}\tM={self.M:g}\tparams={ps}"


# ----------------------------------------------------------------------------
# radial maps


@dataclass(frozen=True)
class RadialProfile:
    """Increasing homeomorphism ``h`` of ``[0, inf)`` with ``h(0) = 0``."""

    h: Callable[[np.ndarray], np.ndarray]
    h_prime: Optional[Callable[[np.ndarray], np.ndarray]] = None
    r_max: float = math.inf
    label: str = "radial"

    def log_transform(self, t):
        """``t -> ln h(e^t)``."""
        return np.log(self.h(np.exp(np.asarray(t, dtype=float))))

    def log_slope(self, t):
        """``d/dt ln h(e^t) = r h'(r) / h(r)`` at ``r = e^t``."""
        if self.h_prime is None:
            raise InvalidInputError("profile has no derivative")
        r = np.exp(np.asarray(t, dtype=float))
        return r * self.h_prime(r) / self.h(r)

    def validate(self, t_grid=None) -> tuple[float, float]:
        """Check monotonicity on a grid and return the log-slope bracket (C1, C2)."""
        if t_grid is None:
            hi = min(math.log(self.r_max), 2.0) if math.isfinite(self.r_max) else 2.0
            t_grid = np.linspace(hi - 40.0, hi - 1e-6, 2001)
        r = np.exp(np.asarray(t_grid, dtype=float))
        vals = self.h(r)
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0) or np.any(np.diff(vals) <= 0):
            raise InvalidInputError(f"radial profile {self.label!r} is not strictly increasing")
        if self.h_prime is None:
            slopes = np.diff(np.log(vals)) / np.diff(np.log(r))
        else:
            slopes = self.log_slope(t_grid)
        return float(np.min(slopes)), float(np.max(slopes))


def radial_dilatation(profile: RadialProfile, r) -> np.ndarray:
    """Complex dilatation ``(r h'/h - 1) / (r h'/h + 1)`` of the planar radial map."""
    r = np.asarray(r, dtype=float)
    q = r * profile.h_prime(r) / profile.h(r)
    return (q - 1.0) / (q + 1.0)


def radial_map(profile: RadialProfile, n: int, label: str | None = None, M: float | None = None,
               params: dict | None = None) -> QCMap:
    """``x -> h(|x|) x / |x|``."""
    c1, c2 = profile.validate()
    if M is None:
        M = math.log(profile.r_max) if math.isfinite(profile.r_max) else 1.0

    def evaluate(x):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        safe = np.where(r > 0.0, r, 1.0)
        scale = np.where(r > 0.0, profile.h(safe) / safe, 0.0)
        return x * scale

    jac = None
    if profile.h_prime is not None:
        def jac(x):
            r = np.linalg.norm(x, axis=-1)
            return profile.h_prime(r) * (profile.h(r) / r) ** (n - 1)

    return QCMap(
        n=n,
        evaluate=evaluate,
        M=M,
        label=label or profile.label,
        jacobian_det=jac,
        dilatation_hint=max(c2, 1.0 / c1) ** (n - 1),
        params=params or {},
        exact_volume=lambda r: ball_volume(n) * float(profile.h(np.float64(r))) ** n,
        radial=profile,
    )


def power_radial_map(d: float, n: int = 2) -> QCMap:
    prof = RadialProfile(lambda r: r**d, lambda r: d * r ** (d - 1), label=f"power-radial")
    return radial_map(prof, n, label="power-radial", params={"d": d})


def log_radial_map(d: float, n: int = 2) -> QCMap:
    """``r -> r^d / log(1/r)``, defined for ``r < e^{-1}``."""

    def h(r):
        # the limit at r = 0 is 0
        with np.errstate(divide="ignore"):
            return r**d / np.log(1.0 / r)

    def hp(r):
        with np.errstate(divide="ignore"):
            L = np.log(1.0 / r)
            return r ** (d - 1) * (d / L + 1.0 / L**2)

    prof = RadialProfile(h, hp, r_max=math.exp(-1.0), label="log-radial")
    return radial_map(prof, n, label="log-radial", M=-1.0, params={"d": d})


# ----------------------------------------------------------------------------
# linear maps


def _linear(A: np.ndarray, label: str, params: dict, M: float = 1.0) -> QCMap:
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    det = float(np.linalg.det(A))
    if det <= 0:
        raise InvalidInputError("linear zoo maps must preserve orientation")
    sv = np.linalg.svd(A, compute_uv=False)
    return QCMap(
        n=n,
        evaluate=lambda x: x @ A.T,
        M=M,
        label=label,
        jacobian_det=lambda x: np.full(np.shape(x)[:-1], det),
        dilatation_hint=float(sv[0] ** n / det),
        params=params,
        exact_volume=lambda r: ball_volume(n) * det * r**n,
    )


def identity_map(n: int = 2) -> QCMap:
    return _linear(np.eye(n), "identity", {})


def scalar_map(lam: float = 0.5, n: int = 2) -> QCMap:
    if lam <= 0:
        raise InvalidInputError("scalar must be positive")
    return _linear(lam * np.eye(n), "scalar", {"lambda": lam})


def diagonal_map(diag=(1.0, 4.0)) -> QCMap:
    diag = tuple(float(v) for v in diag)
    return _linear(np.diag(diag), "diag", {"diag": diag})


def spiral_map(c: float = 1.0) -> QCMap:
    """Planar logarithmic spiral ``r e^{i theta} -> r e^{i (theta + c ln r)}``."""

    def evaluate(x):
        r = np.linalg.norm(x, axis=-1)
        safe = np.where(r > 0.0, r, 1.0)
        ang = c * np.log(safe)
        co, si = np.cos(ang), np.sin(ang)
        out = np.stack([co * x[..., 0] - si * x[..., 1], si * x[..., 0] + co * x[..., 1]], axis=-1)
        return np.where((r > 0.0)[..., None], out, 0.0)

    # K satisfies (K - 1) / (K + 1) = |mu| with |mu| = |c| / sqrt(4 + c^2)
    mu = abs(c) / math.sqrt(4.0 + c * c)
    return QCMap(
        n=2,
        evaluate=evaluate,
        M=1.0,
        label="spiral",
        jacobian_det=lambda x: np.ones(np.shape(x)[:-1]),
        dilatation_hint=(1 + mu) / (1 - mu),
        params={"c": c},
        exact_volume=lambda r: math.pi * r * r,
    )


# ----------------------------------------------------------------------------
# Koch square homeomorphism

_BUMP_HEIGHT = math.sqrt(3.0) / 6.0
_QUAD_UP = 0.45
_QUAD_DOWN = 0.2


def _koch_refine(params: np.ndarray, verts: np.ndarray):
    """One Koch step on a polyline, tracking domain parameters of the vertices."""
    new_p, new_v = [params[0]], [verts[0]]
    for j in range(len(verts) - 1):
        a, b = verts[j], verts[j + 1]
        sa, sb = params[j], params[j + 1]
        d = b - a
        nrm = np.array([-d[1], d[0]])
        new_p += [sa + (sb - sa) / 3.0, sa + (sb - sa) / 2.0, sa + 2.0 * (sb - sa) / 3.0, sb]
        new_v += [a + d / 3.0, a + d / 2.0 + _BUMP_HEIGHT * nrm, a + 2.0 * d / 3.0, b]
    return np.array(new_p), np.array(new_v)


class SquareHomeomorphism:
    """Piecewise-affine self-map of ``[-1,1]^2`` fixing the boundary.

    Level ``L`` is a composition of ``L`` refinement maps.  Refinement ``k``
    replaces every segment of the level ``k-1`` Koch polyline by a bump; it is
    supported in quadrilaterals ``(A, U, B, D)`` hugging the segments and is
    affine on eight triangles inside each quadrilateral.  The midline
    ``[-1,1] x {0}`` goes onto the level ``L`` Koch polyline.
    """

    def __init__(self, level: int):
        if level < 0 or int(level) != level:
            raise InvalidInputError("level must be a nonnegative integer")
        self.level = int(level)
        params = np.array([-1.0, 1.0])
        verts = np.array([[-1.0, 0.0], [1.0, 0.0]])
        self._levels = []
        for _ in range(self.level):
            self._levels.append(self._refinement(verts))
            params, verts = _koch_refine(params, verts)
        self.vertex_params = params
        self.vertices = verts

    @staticmethod
    def _refinement(verts):
        src, dst, quads = [], [], []
        for a, b in zip(verts[:-1], verts[1:]):
            d = b - a
            ell = np.hypot(*d)
            nu = np.array([-d[1], d[0]]) / ell
            p1, m, p2 = a + d / 3.0, a + d / 2.0, a + 2.0 * d / 3.0
            top = m + _BUMP_HEIGHT * ell * nu
            U = m + _QUAD_UP * ell * nu
            D = m - _QUAD_DOWN * ell * nu
            tris = [(a, p1, U), (p1, m, U), (m, p2, U), (p2, b, U),
                    (p1, a, D), (m, p1, D), (p2, m, D), (b, p2, D)]
            for tri in tris:
                src.append(np.array(tri))
                dst.append(np.array([top if np.array_equal(v, m) else v for v in tri]))
            quads.append(np.array([a, D, b, U]))
        src, dst = np.array(src), np.array(dst)
        # affine map per triangle: y = A x + c
        S = np.concatenate([src, np.ones(src.shape[:2] + (1,))], axis=-1)  # (m,3,3)
        coef = np.linalg.solve(S, dst)  # (m,3,2): rows for x, y, 1
        A = np.transpose(coef[:, :2, :], (0, 2, 1))
        c = coef[:, 2, :]
        # barycentric inverse for point location
        T = np.stack([src[:, 1] - src[:, 0], src[:, 2] - src[:, 0]], axis=-1)  # (m,2,2)
        Tinv = np.linalg.inv(T)
        lo, hi = src.min(axis=1), src.max(axis=1)
        return {"src": src, "dst": dst, "A": A, "c": c, "Tinv": Tinv, "lo": lo, "hi": hi,
                "quads": np.array(quads)}

    @property
    def refinements(self):
        return self._levels

    def __call__(self, p, return_jacobian: bool = False):
        p = np.array(p, dtype=float)
        shape = p.shape
        pts = p.reshape(-1, 2).copy()
        jac = np.broadcast_to(np.eye(2), (len(pts), 2, 2)).copy() if return_jacobian else None
        for lev in self._levels:
            self._apply_level(lev, pts, jac)
        pts = pts.reshape(shape)
        if return_jacobian:
            return pts, jac.reshape(shape[:-1] + (2, 2))
        return pts

    @staticmethod
    def _apply_level(lev, pts, jac, tol=1e-12):
        todo = np.ones(len(pts), dtype=bool)
        for k in range(len(lev["src"])):
            lo, hi = lev["lo"][k] - tol, lev["hi"][k] + tol
            cand = todo & np.all(pts >= lo, axis=1) & np.all(pts <= hi, axis=1)
            if not cand.any():
                continue
            idx = np.nonzero(cand)[0]
            rel = pts[idx] - lev["src"][k, 0]
            bc = rel @ lev["Tinv"][k].T
            inside = (bc[:, 0] >= -tol) & (bc[:, 1] >= -tol) & (bc.sum(axis=1) <= 1.0 + tol)
            idx = idx[inside]
            if idx.size == 0:
                continue
            A = lev["A"][k]
            pts[idx] = pts[idx] @ A.T + lev["c"][k]
            if jac is not None:
                jac[idx] = A @ jac[idx]
            todo[idx] = False

    def jacobian(self, p) -> np.ndarray:
        return self(p, return_jacobian=True)[1]

    def midline_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)))

    def image_triangle_orientations(self) -> np.ndarray:
        """Signed doubled areas of every image triangle of every refinement."""
        out = []
        for lev in self._levels:
            d = lev["dst"]
            e1, e2 = d[:, 1] - d[:, 0], d[:, 2] - d[:, 0]
            out.append(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        return np.concatenate(out) if out else np.zeros(0)

    def max_dilatation(self, samples: int = 200) -> float:
        """Largest ratio of singular values of Dh over a sample grid."""
        g = (np.arange(samples) + 0.5) / samples * 2.0 - 1.0
        X, Y = np.meshgrid(g, g)
        J = self.jacobian(np.stack([X.ravel(), Y.ravel()], axis=-1))
        sv = np.linalg.svd(J, compute_uv=False)
        return float(np.max(sv[:, 0] / sv[:, 1]))


def square_homeomorphism(level: int) -> SquareHomeomorphism:
    return SquareHomeomorphism(level)


# ----------------------------------------------------------------------------
# snowflake beam


@dataclass(frozen=True)
class SnowflakeBeamSpec:
    """Squares ``S_d`` centred at ``(1, d)`` with side ``1/|d|``, ``d_min <= d < min(M, -2)``."""

    level: int
    M: float = -2.0
    d_min: int = -12

    def __post_init__(self):
        if self.M >= 0:
            raise InvalidInputError("snowflake beam needs M < 0")
        if self.level < 0:
            raise InvalidInputError("level must be nonnegative")

    @property
    def depths(self) -> list[int]:
        top = math.ceil(min(self.M, -2.0)) - 1
        return list(range(top, self.d_min - 1, -1))

    def square(self, d: int) -> tuple[np.ndarray, float]:
        return np.array([1.0, float(d)]), 1.0 / abs(d)


def _snowflake_transform(spec: SnowflakeBeamSpec, h: SquareHomeomorphism):
    depths = np.array(spec.depths, dtype=float)

    def ftilde(x, return_jacobian=False):
        x = np.asarray(x, dtype=float)
        out = x.copy()
        jac = np.ones(x.shape[:-1]) if return_jacobian else None
        if h.level == 0 or depths.size == 0:
            return (out, jac) if return_jacobian else out
        flat = out.reshape(-1, 2)
        d = np.round(flat[:, 1])
        half = 0.5 / np.abs(np.where(d == 0, 1.0, d))
        hit = np.isin(d, depths) & (np.abs(flat[:, 0] - 1.0) <= half) & (np.abs(flat[:, 1] - d) <= half)
        if hit.any():
            dd = d[hit]
            z = (flat[hit] - np.column_stack([np.ones_like(dd), dd])) * (2.0 * np.abs(dd))[:, None]
            hz, J = h(z, return_jacobian=True)
            flat[hit] = hz / (2.0 * np.abs(dd))[:, None] + np.column_stack([np.ones_like(dd), dd])
            if return_jacobian:
                jflat = jac.reshape(-1)
                jflat[hit] = np.linalg.det(J)
        out = flat.reshape(x.shape)
        return (out, jac) if return_jacobian else out

    return ftilde


def snowflake_beam_map(spec: SnowflakeBeamSpec | int) -> QCMap:
    """Planar map whose Zorich transform is the Koch square map inside each ``S_d``."""
    if not isinstance(spec, SnowflakeBeamSpec):
        spec = SnowflakeBeamSpec(int(spec))
    Z = zorich_map(2)
    h = SquareHomeomorphism(spec.level)
    ft = _snowflake_transform(spec, h)
    R = math.exp(spec.M)

    def _check(y):
        r = np.linalg.norm(y, axis=-1)
        if np.any(r >= R):
            raise DomainError("snowflake-beam map evaluated outside B(0, e^M)")
        return r

    def evaluate(y):
        y = np.asarray(y, dtype=float)
        r = _check(y)
        out = np.zeros_like(y)
        nz = r > 0.0
        if nz.any():
            out[nz] = Z(ft(Z.inverse(y[nz])))
        return out

    def jac(y):
        y = np.asarray(y, dtype=float)
        r = _check(y)
        out = np.ones(y.shape[:-1])
        nz = r > 0.0
        if nz.any():
            x = Z.inverse(y[nz])
            fx, jh = ft(x, return_jacobian=True)
            out[nz] = np.exp(2.0 * (fx[..., 1] - x[..., 1])) * jh
        return out

    return QCMap(
        n=2,
        evaluate=evaluate,
        M=spec.M,
        label="snowflake-beam",
        jacobian_det=jac,
        dilatation_hint=h.max_dilatation(64) if spec.level else 1.0,
        params={"L": spec.level, "d_min": spec.d_min},
        exact_volume=None,
    )


# ----------------------------------------------------------------------------
# catalog

_PARAM_SCHEMA = {
    "identity": ("n", {}),
    "scalar": ("n", {"lambda": 0.5}),
    "diag": ("n", {"diag": "1,4"}),
    "power-radial": ("n", {"d": 2.0}),
    "log-radial": ("n", {"d": 2.0}),
    "spiral": ("2", {"c": 1.0}),
    "snowflake-beam": ("2", {"L": 0, "d_min": -12}),
}


def get_map(label: str, n: int = 2, **params) -> QCMap:
    """Build a zoo map from its label and parameters."""
    if label == "identity":
        return identity_map(n)
    if label == "scalar":
        return scalar_map(float(params.get("lambda", 0.5)), n)
    if label == "diag":
        diag = params.get("diag", (1.0, 4.0) if n == 2 else (1.0, 2.0, 4.0))
        if isinstance(diag, str):
            diag = tuple(float(v) for v in diag.split(","))
        if len(diag) != n:
            raise InvalidInputError("diag length must equal n")
        return diagonal_map(diag)
    if label == "power-radial":
        return power_radial_map(float(params.get("d", 2.0)), n)
    if label == "log-radial":
        return log_radial_map(float(params.get("d", 2.0)), n)
    if label == "spiral":
        if n != 2:
            raise InvalidInputError("spiral map is planar")
        return spiral_map(float(params.get("c", 1.0)))
    if label == "snowflake-beam":
        if n != 2:
            raise InvalidInputError("snowflake-beam map is planar")
        return snowflake_beam_map(SnowflakeBeamSpec(int(params.get("L", 0)), d_min=int(params.get("d_min", -12))))
    raise InvalidInputError(f"unknown map label {label!r}")


def builtin_zoo(n: int = 2) -> list[QCMap]:
    if n not in (2, 3):
        raise InvalidInputError("the zoo covers n = 2 and n = 3")
    zoo = [
        identity_map(n),
        scalar_map(0.5, n),
        get_map("diag", n),
        power_radial_map(2.0, n),
        log_radial_map(2.0, n),
    ]
    if n == 2:
        zoo.append(spiral_map(1.0))
        zoo += [snowflake_beam_map(SnowflakeBeamSpec(L)) for L in range(5)]
    return zoo


def catalog_text() -> str:
    """One line per zoo entry: label, dimensions, M and parameter defaults."""
    lines = []
    for label, (dims, schema) in _PARAM_SCHEMA.items():
        m = get_map(label, 2)
        ps = ",".join(f"{k}={v}" for k, v in schema.items()) or "-"
        ndesc = "2,3" if dims == "n" else dims
        lines.append(f"{label}\tn={ndesc}\tM={m.M:g}\tparams={ps}")
    return "\n".join(lines) + "\n"
