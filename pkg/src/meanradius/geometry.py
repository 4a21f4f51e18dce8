"""Vectors, beam boxes, the generalized cross product and related utilities.

Beam points are stored as float arrays whose last axis holds the ``n``
coordinates ``(x_1, ..., x_{n-1}, t)``: the first ``n - 1`` entries are the
base coordinates in ``Q = [0,1]^{n-2} x [0,2]`` and the last is the height.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "BeamPoint",
    "BoxP",
    "LatticeGroupElement",
    "as_vec",
    "base_extent",
    "ball_volume",
    "enumerate_group",
    "lp_bound",
    "pi",
    "quotient_distance",
    "subdivide_slice",
    "unit_ball_volume",
]


def as_vec(coords, n: int | None = None) -> np.ndarray:
    """Validate and return ``coords`` as a finite float vector of length >= 2."""
    v = np.asarray(coords, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise InvalidInputError(f"expected a vector with n >= 2 entries, got shape {v.shape}")
    if n is not None and v.size != n:
        raise InvalidInputError(f"expected dimension {n}, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("vector entries must be finite")
    return v


def base_extent(n: int) -> np.ndarray:
    """Side lengths of the closed base cuboid ``[0,1]^{n-2} x [0,2]``."""
    ext = np.ones(n - 1)
    ext[-1] = 2.0
    return ext


@dataclass(frozen=True)
class BeamPoint:
    """A point ``(base, height)`` of the beam ``Q x R``."""

    base: tuple[float, ...]
    height: float

    def __post_init__(self):
        object.__setattr__(self, "base", tuple(float(b) for b in self.base))
        object.__setattr__(self, "height", float(self.height))
        if len(self.base) < 1:
            raise InvalidInputError("a beam point needs at least one base coordinate")

    @property
    def n(self) -> int:
        return len(self.base) + 1

    @classmethod
    def from_array(cls, x) -> "BeamPoint":
        x = np.asarray(x, dtype=float)
        return cls(tuple(x[:-1]), x[-1])

    def as_array(self) -> np.ndarray:
        return np.array(self.base + (self.height,))

    def in_closure(self, atol: float = 0.0) -> bool:
        """True when the base lies in the closed cuboid (up to ``atol``)."""
        b = np.array(self.base)
        return bool(np.all(b >= -atol) and np.all(b <= base_extent(self.n) + atol))

    def in_half_beam(self, M: float) -> bool:
        return self.height < M


@dataclass(frozen=True)
class BoxP:
    """One box ``T_i x [t0, t0 + t]`` of a slice subdivision."""

    index: int
    corner: tuple[float, ...]
    side: float
    t0: float
    t: float

    @property
    def n(self) -> int:
        return len(self.corner) + 1

    @property
    def base_center(self) -> np.ndarray:
        return np.asarray(self.corner) + 0.5 * self.side

    @property
    def volume(self) -> float:
        return self.side ** (self.n - 1) * self.t

    @property
    def base_volume(self) -> float:
        return self.side ** (self.n - 1)

    def lower(self) -> np.ndarray:
        return np.array(self.corner + (self.t0,))

    def upper(self) -> np.ndarray:
        return np.array(tuple(c + self.side for c in self.corner) + (self.t0 + self.t,))


@dataclass(frozen=True)
class LatticeGroupElement:
    """Isometry ``(base, t) -> (O @ base + translation, t)``.

    The height coordinate is never touched, so every element preserves the
    n-th coordinate exactly.
    """

    translation: tuple[float, ...]
    orthogonal: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "translation", tuple(float(x) for x in self.translation))
        if self.orthogonal is not None:
            O = np.asarray(self.orthogonal, dtype=float)
            k = len(self.translation)
            if O.shape != (k, k) or not np.allclose(O @ O.T, np.eye(k), atol=1e-12):
                raise InvalidInputError("orthogonal part must be an orthogonal matrix")
            object.__setattr__(self, "orthogonal", tuple(tuple(float(v) for v in row) for row in O))

    @property
    def matrix(self) -> np.ndarray:
        k = len(self.translation)
        if self.orthogonal is None:
            return np.eye(k)
        return np.asarray(self.orthogonal)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = x.copy()
        out[..., :-1] = x[..., :-1] @ self.matrix.T + np.asarray(self.translation)
        return out

    def compose(self, other: "LatticeGroupElement") -> "LatticeGroupElement":
        """The element ``self o other``."""
        A, B = self.matrix, other.matrix
        T = A @ np.asarray(other.translation) + np.asarray(self.translation)
        return LatticeGroupElement(tuple(T), _as_tuple_matrix(A @ B))

    def inverse(self) -> "LatticeGroupElement":
        A = self.matrix
        return LatticeGroupElement(tuple(-A.T @ np.asarray(self.translation)), _as_tuple_matrix(A.T))

    def key(self) -> tuple:
        return (
            tuple(np.round(self.translation, 9) + 0.0),
            tuple(np.round(self.matrix, 9).ravel() + 0.0),
        )


def _as_tuple_matrix(A: np.ndarray):
    if np.allclose(A, np.eye(A.shape[0]), atol=1e-14):
        return None
    return tuple(tuple(row) for row in A)


# ----------------------------------------------------------------------------
# generalized cross product


def _det3(a, b, c):
    # rows a, b, c of a 3x3 matrix, batched over leading axes
    return (
        a[..., 0] * (b[..., 1] * c[..., 2] - b[..., 2] * c[..., 1])
        - a[..., 1] * (b[..., 0] * c[..., 2] - b[..., 2] * c[..., 0])
        + a[..., 2] * (b[..., 0] * c[..., 1] - b[..., 1] * c[..., 0])
    )


def pi(vectors) -> np.ndarray:
    """Generalized cross product of ``n - 1`` vectors in ``R^n``.

    This is the cofactor expansion of the determinant whose first row holds
    the symbolic unit vectors ``e_1..e_n`` and whose remaining rows are the
    inputs. The result is orthogonal to every input and its length is the
    ``(n-1)``-volume of the parallelepiped they span.

    ``vectors`` has shape ``(..., n - 1, n)``; leading axes are batched.
    """
    V = np.asarray(vectors, dtype=float)
    if V.ndim < 2:
        raise InvalidInputError("pi expects an array of shape (..., n-1, n)")
    k, n = V.shape[-2:]
    if n < 2 or k != n - 1:
        raise InvalidInputError(f"pi needs exactly n-1 vectors of dimension n, got {k} of dimension {n}")
    if n == 2:
        v = V[..., 0, :]
        return np.stack([v[..., 1], -v[..., 0]], axis=-1)
    if n == 3:
        return np.cross(V[..., 0, :], V[..., 1, :])
    out = np.empty(V.shape[:-2] + (n,))
    for i in range(n):
        minor = np.delete(V, i, axis=-1)
        if n == 4:
            d = _det3(minor[..., 0, :], minor[..., 1, :], minor[..., 2, :])
        else:
            d = np.linalg.det(minor)
        out[..., i] = d if i % 2 == 0 else -d
    return out


# ----------------------------------------------------------------------------
# l^p inequality and ball volumes


def lp_bound(x, n: int) -> tuple[float, float]:
    """Both sides of ``sum x_i^n >= N^{1/(1-n)} (sum x_i^{n-1})^{n/(n-1)}``."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 1:
        raise InvalidInputError("lp_bound needs at least one entry")
    if n < 2:
        raise InvalidInputError("lp_bound needs n >= 2")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise InvalidInputError("lp_bound entries must be finite and nonnegative")
    N = x.size
    lhs = float(np.sum(x**n))
    rhs = float(N ** (1.0 / (1 - n)) * np.sum(x ** (n - 1)) ** (n / (n - 1)))
    return lhs, rhs


def ball_volume(k: int) -> float:
    """Volume of the unit ball in ``R^k`` for any ``k >= 1``."""
    if k == 2:
        return math.pi
    if k == 3:
        return 4.0 * math.pi / 3.0
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1)


def unit_ball_volume(n: int) -> float:
    """Volume of the unit ball of ``R^n``, ``n >= 2``."""
    if int(n) != n or n < 2:
        raise InvalidInputError("unit_ball_volume needs an integer n >= 2")
    return ball_volume(int(n))


# ----------------------------------------------------------------------------
# slice subdivision


def subdivide_slice(t0: float, t: float, n: int) -> list[BoxP]:
    """Cut ``S_t = Q x [t0, t0 + t]`` into boxes with base side ``1/floor(1/t)``."""
    if not (0.0 < t < 0.5):
        raise InvalidInputError("slice thickness t must lie in (0, 1/2)")
    if n < 2:
        raise InvalidInputError("n must be at least 2")
    k = math.floor(1.0 / t)
    side = 1.0 / k
    counts = [k] * (n - 2) + [2 * k]
    boxes = []
    for idx, cell in enumerate(itertools.product(*(range(c) for c in counts))):
        boxes.append(BoxP(idx, tuple(c * side for c in cell), side, float(t0), float(t)))
    return boxes


# ----------------------------------------------------------------------------
# quotient metric


def _generator_tuple(generators: Sequence[LatticeGroupElement]) -> tuple:
    return tuple(generators)


@lru_cache(maxsize=64)
def _enumerate_cached(generators: tuple, bound: float) -> tuple:
    if not generators:
        return (LatticeGroupElement((0.0,)),)
    k = len(generators[0].translation)
    ident = LatticeGroupElement((0.0,) * k)
    seeds = list(generators) + [g.inverse() for g in generators]
    seen = {ident.key(): ident}
    frontier = [ident]
    while frontier:
        nxt = []
        for h in frontier:
            for g in seeds:
                e = g.compose(h)
                if np.max(np.abs(e.translation)) > bound + 1e-9:
                    continue
                key = e.key()
                if key not in seen:
                    seen[key] = e
                    nxt.append(e)
        frontier = nxt
    return tuple(seen.values())


def enumerate_group(generators: Iterable[LatticeGroupElement], bound: float | None = None) -> list[LatticeGroupElement]:
    """All products of the generators whose translation sup-norm is <= ``bound``.

    The default bound is two lattice periods, taking the period to be the
    largest generator translation.
    """
    gens = _generator_tuple(list(generators))
    if bound is None:
        period = max((max(abs(c) for c in g.translation) for g in gens), default=0.0)
        bound = 2.0 * period
    return list(_enumerate_cached(gens, float(bound)))


def quotient_distance(x, y, generators: Sequence[LatticeGroupElement] = ()) -> np.ndarray | float:
    """Distance in the quotient of the Euclidean metric by the group.

    ``x`` and ``y`` are beam points (``BeamPoint`` or arrays broadcasting over
    leading axes). An empty generator list is the trivial group.
    """
    xa = x.as_array() if isinstance(x, BeamPoint) else np.asarray(x, dtype=float)
    ya = y.as_array() if isinstance(y, BeamPoint) else np.asarray(y, dtype=float)
    if xa.shape[-1] != ya.shape[-1]:
        raise InvalidInputError("points must share a dimension")
    best = np.linalg.norm(xa - ya, axis=-1)
    if generators:
        # the minimizing translation is at most one period beyond |x| + |y|
        period = max(max(abs(c) for c in g.translation) for g in generators)
        reach = float(np.max(np.abs(xa[..., :-1]), initial=0.0) + np.max(np.abs(ya[..., :-1]), initial=0.0))
        bound = period * max(2.0, math.ceil(reach / period) + 1.0) if period > 0 else None
        for g in enumerate_group(generators, bound):
            best = np.minimum(best, np.linalg.norm(xa - g(ya), axis=-1))
    if np.ndim(best) == 0:
        return float(best)
    return best
