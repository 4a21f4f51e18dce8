"""Concrete Zorich maps for n = 2 and n = 3.

n = 2 is the exponential in disguise, ``Z(x1, t) = e^t (cos pi x1, sin pi x1)``,
automorphic under ``x1 -> x1 + 2``.

n = 3 folds the plane onto the unit sphere.  On the unit square the point
``v = 2u - 1`` is sent to the upper face of the square pyramid
``(v1, v2, 1 - max|v_i|)`` and projected radially, so the square's edges land
on the equator.  Neighbouring unit squares are mirror images across shared
edges and alternate between the upper and lower hemispheres.  The map is
invariant under translations by ``2 Z^2`` and under ``u -> -u``; the base
``[0,1] x [0,2]`` is a fundamental set.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .errors import DomainError, InvalidInputError
from .geometry import BeamPoint, LatticeGroupElement, base_extent

__all__ = ["ZorichMap", "zorich_map", "verify_automorphy"]


def _as_points(x, n):
    if isinstance(x, BeamPoint):
        x = x.as_array()
    a = np.asarray(x, dtype=float)
    if a.shape[-1] != n:
        raise InvalidInputError(f"expected points of dimension {n}, got {a.shape}")
    return a


@dataclass(frozen=True)
class ZorichMap:
    """The fixed Zorich map of dimension ``n`` (2 or 3)."""

    n: int

    def __post_init__(self):
        if self.n not in (2, 3):
            raise InvalidInputError("Zorich maps are implemented for n = 2 and n = 3 only")

    # -- group ---------------------------------------------------------------

    @cached_property
    def periods(self) -> np.ndarray:
        return np.full(self.n - 1, 2.0)

    @cached_property
    def point_group(self) -> tuple[np.ndarray, ...]:
        k = self.n - 1
        if self.n == 2:
            return (np.eye(k),)
        return (np.eye(k), -np.eye(k))

    @cached_property
    def generators(self) -> tuple[LatticeGroupElement, ...]:
        k = self.n - 1
        gens = [LatticeGroupElement(tuple(2.0 * e)) for e in np.eye(k)]
        if self.n == 3:
            gens.append(LatticeGroupElement((0.0, 0.0), ((-1.0, 0.0), (0.0, -1.0))))
        return tuple(gens)

    # -- forward map ---------------------------------------------------------

    def psi(self, base) -> np.ndarray:
        """Unit-sphere parameterization of the base coordinates."""
        u = np.asarray(base, dtype=float)
        if u.shape[-1] != self.n - 1:
            raise InvalidInputError("base has the wrong number of coordinates")
        if self.n == 2:
            ang = np.pi * u[..., 0]
            return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        k = np.floor(u)
        frac = u - k
        odd = np.mod(k, 2.0) == 1.0
        w = np.where(odd, 1.0 - frac, frac)
        sign = np.where(np.mod(k[..., 0] + k[..., 1], 2.0) == 1.0, -1.0, 1.0)
        p = self._pyramid(w)
        p[..., 2] *= sign
        return p / np.linalg.norm(p, axis=-1, keepdims=True)

    @staticmethod
    def _pyramid(w):
        v = 2.0 * w - 1.0
        m = np.max(np.abs(v), axis=-1)
        return np.stack([v[..., 0], v[..., 1], 1.0 - m], axis=-1)

    def __call__(self, x) -> np.ndarray:
        a = _as_points(x, self.n)
        return np.exp(a[..., -1])[..., None] * self.psi(a[..., :-1])

    def jacobian_det(self, x) -> np.ndarray:
        """Absolute Jacobian determinant of Z at beam points ``x``."""
        a = _as_points(x, self.n)
        t = a[..., -1]
        if self.n == 2:
            return np.pi * np.exp(2.0 * t)
        u = a[..., :-1]
        k = np.floor(u)
        frac = u - k
        w = np.where(np.mod(k, 2.0) == 1.0, 1.0 - frac, frac)
        r = np.linalg.norm(self._pyramid(w), axis=-1)
        return 4.0 * np.exp(3.0 * t) / r**3

    # -- inverse ---------------------------------------------------------------

    def inverse(self, y, hint=None) -> np.ndarray:
        """Preimage of ``y`` in the closed base cuboid, or the one nearest ``hint``."""
        ya = np.asarray(y, dtype=float)
        if ya.shape[-1] != self.n:
            raise InvalidInputError("y has the wrong dimension")
        r = np.linalg.norm(ya, axis=-1)
        if np.any(r == 0.0):
            raise DomainError("the origin has no Zorich preimage")
        s = ya / r[..., None]
        out = np.empty(ya.shape)
        out[..., -1] = np.log(r)
        if self.n == 2:
            ang = np.arctan2(s[..., 1], s[..., 0]) / np.pi
            out[..., 0] = np.where(ang < 0.0, ang + 2.0, ang)
        else:
            upper = s[..., 2] >= 0.0
            sz = np.abs(s[..., 2])
            lam = 1.0 / (sz + np.maximum(np.abs(s[..., 0]), np.abs(s[..., 1])))
            w1 = np.clip(0.5 * (lam * s[..., 0] + 1.0), 0.0, 1.0)
            w2 = np.clip(0.5 * (lam * s[..., 1] + 1.0), 0.0, 1.0)
            out[..., 0] = w1
            out[..., 1] = np.where(upper, w2, 2.0 - w2)
        if hint is not None:
            h = hint.as_array() if isinstance(hint, BeamPoint) else hint
            out = self.nearest_representative(out, h)
        return out

    # -- quotient geometry -----------------------------------------------------

    @cached_property
    def _offsets(self) -> np.ndarray:
        return np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=self.n - 1)))

    def _candidates(self, p, hint):
        """All group images of ``p`` within one period of ``hint``: (..., m, n)."""
        p = np.asarray(p, dtype=float)
        hint = np.asarray(hint, dtype=float)
        p, hint = np.broadcast_arrays(p, hint)
        per = self.periods
        cands = []
        for O in self.point_group:
            q = p[..., :-1] @ O.T
            shift = per * np.round((hint[..., :-1] - q) / per)
            for off in self._offsets:
                c = np.empty(p.shape)
                c[..., :-1] = q + shift + off * per
                c[..., -1] = p[..., -1]
                cands.append(c)
        return np.stack(cands, axis=-2), hint

    def nearest_representative(self, p, hint) -> np.ndarray:
        """The group image of ``p`` closest (Euclidean) to ``hint``."""
        cands, hint = self._candidates(p, hint)
        d = np.linalg.norm(cands - hint[..., None, :], axis=-1)
        idx = np.argmin(d, axis=-1)
        return np.take_along_axis(cands, idx[..., None, None], axis=-2)[..., 0, :]

    def quotient_distance(self, x, y) -> np.ndarray:
        """Quotient metric; exact for points at any separation."""
        xa = _as_points(x, self.n)
        ya = _as_points(y, self.n)
        cands, xb = self._candidates(ya, xa)
        d = np.min(np.linalg.norm(cands - xb[..., None, :], axis=-1), axis=-1)
        return d if d.ndim else float(d)

    def canonical(self, x) -> np.ndarray:
        """Representative of ``x`` with base in the closed cuboid."""
        a = np.array(_as_points(x, self.n), dtype=float)
        b = np.mod(a[..., :-1], 2.0)
        if self.n == 3:
            flip = b[..., 0] > 1.0
            b = np.where(flip[..., None], np.mod(2.0 - b, 2.0), b)
        a[..., :-1] = b
        return a

    def random_points(self, rng, size, height=(-3.0, 3.0)) -> np.ndarray:
        """Uniform points in ``Q x [height]``."""
        ext = base_extent(self.n)
        base = rng.random((size, self.n - 1)) * ext
        t = rng.uniform(height[0], height[1], size)
        return np.column_stack([base, t])


@lru_cache(maxsize=None)
def zorich_map(n: int) -> ZorichMap:
    return ZorichMap(n)


def verify_automorphy(zmap: ZorichMap, samples: int, seed: int = 0, generators=None) -> float:
    """Max of ``|Z(g x) - Z(x)|`` over random ``x`` in R^n and the generators."""
    if samples < 1:
        raise InvalidInputError("samples must be positive")
    rng = np.random.default_rng(seed)
    k = zmap.n - 1
    x = np.column_stack([rng.uniform(-4.0, 4.0, (samples, k)), rng.uniform(-2.0, 2.0, samples)])
    zx = zmap(x)
    gens = zmap.generators if generators is None else generators
    dev = 0.0
    for g in gens:
        dev = max(dev, float(np.max(np.linalg.norm(zmap(g(x)) - zx, axis=-1))))
    return dev
