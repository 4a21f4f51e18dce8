"""Zorich transforms ``f~ = Z^{-1} o f o Z`` with branch tracking."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import BranchJumpError, DegenerateImageError, DomainError, InvalidInputError
from .geometry import BeamPoint
from .mapzoo import QCMap
from .zorich import ZorichMap, zorich_map

__all__ = ["TransformedMap", "PathContext", "transform_of"]


@dataclass(frozen=True)
class TransformedMap:
    """The Zorich transform of ``source`` on the half-beam ``Q x (-inf, M)``."""

    source: QCMap
    zorich: ZorichMap
    M: float

    @property
    def n(self) -> int:
        return self.source.n

    def __call__(self, x, hint=None) -> np.ndarray:
        return self.evaluate(x, hint)

    def evaluate(self, x, hint=None) -> np.ndarray:
        """``f~(x)``: canonical representative, or the one nearest ``hint``."""
        if isinstance(x, BeamPoint):
            x = x.as_array()
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise InvalidInputError("beam point has the wrong dimension")
        if np.any(x[..., -1] >= self.M):
            raise DomainError("beam point at or above height M")
        y = self.source(self.zorich(x))
        if np.any(np.all(y == 0.0, axis=-1)):
            raise DegenerateImageError(f"{self.source.label} sent a nonzero point to 0")
        return self.zorich.inverse(y, hint)

    def path(self) -> "PathContext":
        return PathContext(self)

    def evaluate_path(self, points) -> np.ndarray:
        """Evaluate along an ordered path, each output continuing the previous one."""
        points = np.asarray(points, dtype=float)
        canon = self.evaluate(points)
        return _unwrap_path(self.zorich, canon)

    # -- slices ---------------------------------------------------------------

    def _slice_points(self, t, u):
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.n - 1:
            raise InvalidInputError("base coordinates have the wrong dimension")
        t_arr = np.broadcast_to(np.asarray(t, dtype=float), u.shape[:-1])
        return np.concatenate([u, t_arr[..., None]], axis=-1)

    def slice_gamma(self, t, u, hint=None) -> np.ndarray:
        """``gamma_t(u) = f~(u, t)``."""
        return self.evaluate(self._slice_points(t, u), hint)

    def slice_gamma_path(self, t, u) -> np.ndarray:
        """``gamma_t`` along an ordered sequence of base points, branch-continuous."""
        return self.evaluate_path(self._slice_points(t, u))

    def slice_partials(self, t, u, step: float = 1e-5, jump_factor: float = 10.0,
                       bound_hint: float | None = None, crease_tol: float = 1e-3,
                       hint=None) -> np.ndarray:
        """Finite-difference partials of ``gamma_t`` at base points ``u``.

        Returns an array of shape ``(..., n-1, n)``: row ``i`` is the partial
        in base direction ``i``.  Every stencil point is resolved against the
        branch of the centre value.  Points on a crease of a piecewise-smooth
        slice (forward and backward quotients disagree) are re-evaluated a few
        steps away along a generic direction so that all partials come from
        one piece; if that still straddles a crease, the one-sided quotient
        with the smaller second difference is used per direction.
        """
        if step <= 0:
            raise InvalidInputError("step must be positive")
        u = np.asarray(u, dtype=float)
        bound = bound_hint if bound_hint is not None else 1e4
        threshold = jump_factor * step * bound
        rows, crease = self._partial_rows(t, u, step, threshold, crease_tol, hint)
        if np.any(crease):
            k = self.n - 1
            w = _GENERIC[:k] / np.linalg.norm(_GENERIC[:k])
            centre = self.slice_gamma(t, u, hint)
            moved = u + 4.0 * step * w
            rows2, _ = self._partial_rows(t, moved, step, threshold, crease_tol, centre)
            rows = np.where(crease[..., None, None], rows2, rows)
        return rows

    def _partial_rows(self, t, u, step, threshold, crease_tol, hint):
        k = self.n - 1
        centre = self.slice_gamma(t, u, hint)
        rows, creases = [], []
        for i in range(k):
            e = np.zeros(k)
            e[i] = step
            try:
                r, c = self._partial(t, u, e, step, centre, threshold, crease_tol)
            except BranchJumpError:
                # shift the stencil by half a step and retry once
                shifted = u + 0.5 * e
                c2 = self.slice_gamma(t, shifted, centre)
                r, c = self._partial(t, shifted, e, step, c2, threshold, crease_tol)
            rows.append(r)
            creases.append(c)
        return np.stack(rows, axis=-2), np.any(np.stack(creases), axis=0)

    def _partial(self, t, u, e, step, centre, threshold, crease_tol):
        plus = self.slice_gamma(t, u + e, centre)
        minus = self.slice_gamma(t, u - e, centre)
        jump = np.maximum(np.linalg.norm(plus - centre, axis=-1), np.linalg.norm(centre - minus, axis=-1))
        if np.any(jump > threshold):
            raise BranchJumpError(f"branch jump of size {float(np.max(jump)):.3g} in slice partials")
        fwd = (plus - centre) / step
        bwd = (centre - minus) / step
        central = 0.5 * (fwd + bwd)
        scale = np.linalg.norm(fwd, axis=-1) + np.linalg.norm(bwd, axis=-1)
        crease = np.linalg.norm(fwd - bwd, axis=-1) > crease_tol * np.maximum(scale, 1e-300)
        if not np.any(crease):
            return central, crease
        # one-sided choice by the smaller second difference on each side
        plus2 = self.slice_gamma(t, u + 2 * e, centre)
        minus2 = self.slice_gamma(t, u - 2 * e, centre)
        res_f = np.linalg.norm(plus2 - 2 * plus + centre, axis=-1)
        res_b = np.linalg.norm(centre - 2 * minus + minus2, axis=-1)
        one_sided = np.where((res_f <= res_b)[..., None], fwd, bwd)
        return np.where(crease[..., None], one_sided, central), crease


# an irrational direction unlikely to run along a crease
_GENERIC = np.array([1.0, 0.6180339887498949, 0.4142135623730951])


class PathContext:
    """Single-owner evaluation context that carries the previous output as a hint."""

    def __init__(self, tm: TransformedMap):
        self.tm = tm
        self.last = None

    def __call__(self, x) -> np.ndarray:
        out = self.tm.evaluate(x, self.last)
        self.last = out
        return out


def _unwrap_path(Z: ZorichMap, canon: np.ndarray) -> np.ndarray:
    out = np.empty_like(canon)
    flat_in = canon.reshape(-1, canon.shape[-1])
    flat = out.reshape(-1, canon.shape[-1])
    flat[0] = flat_in[0]
    if Z.n == 2:
        # translation-only group: cumulative period shifts
        per = Z.periods[0]
        d = np.diff(flat_in[:, 0])
        shifts = -per * np.round(d / per)
        flat[:, 0] = flat_in[:, 0] + np.concatenate([[0.0], np.cumsum(shifts)])
        flat[:, 1] = flat_in[:, 1]
        return out
    for k in range(1, len(flat)):
        flat[k] = Z.nearest_representative(flat_in[k], flat[k - 1])
    return out


def transform_of(f: QCMap, M: float | None = None) -> TransformedMap:
    return TransformedMap(f, zorich_map(f.n), f.M if M is None else M)
