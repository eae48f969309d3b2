"""Equally spaced B-spline bases with derivatives and linear extrapolation.

The knot grid is an open-uniform extension: interior knots equally spaced
over a margin-expanded domain, with `degree` extra knots at the same
spacing on each side. That keeps every basis function identically shaped
and makes the degree-reduction derivative formula a plain difference.

Warped evaluation times routinely leave the data range, so outside the
expanded domain each basis function is continued linearly from its
boundary value and slope; callers get an out-of-domain mask rather than
an error.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InvalidDomain(Exception):
    pass


class InvalidCounts(Exception):
    pass


@dataclass(frozen=True)
class BSplineBasis:
    """Cubic (by default) B-spline basis on an equally spaced knot grid."""

    degree: int
    n_seg: int
    domain_lo: float
    domain_hi: float
    margin: float
    lo: float          # expanded domain start
    hi: float          # expanded domain end
    dx: float          # knot spacing
    knots: np.ndarray = field(repr=False)
    m: int             # number of basis functions, n_seg + degree

    def contains(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (t >= self.lo) & (t <= self.hi)

    def _dense_all_degrees(self, tc: np.ndarray):
        """Dense basis values at clamped points for degree q and q-1."""
        knots = self.knots
        q = self.degree
        n_knots = knots.size
        # Span index on the uniform grid; clamp so t == hi lands in the last
        # interior interval and the degree-0 seed is exact at both ends.
        span = np.floor((tc - knots[0]) / self.dx).astype(int)
        span = np.clip(span, q, n_knots - 2 - q)
        b = np.zeros((tc.size, n_knots - 1))
        b[np.arange(tc.size), span] = 1.0
        b_prev = b
        for d in range(1, q + 1):
            nb = n_knots - 1 - d
            b_new = np.zeros((tc.size, nb))
            for i in range(nb):
                left = (tc - knots[i]) / (knots[i + d] - knots[i]) * b[:, i]
                right = (knots[i + d + 1] - tc) / (
                    knots[i + d + 1] - knots[i + 1]
                ) * b[:, i + 1]
                b_new[:, i] = left + right
            b_prev = b
            b = b_new
        return b, b_prev

    def evaluate(self, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Basis values, first derivatives, and out-of-domain mask.

        Shapes: (P, m), (P, m), (P,) for P input points.
        """
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        if not np.all(np.isfinite(ts)):
            raise ValueError("evaluation times must be finite")
        ood = ~self.contains(ts)
        tc = np.clip(ts, self.lo, self.hi)
        values, lower = self._dense_all_degrees(tc)
        if self.degree == 0:
            derivs = np.zeros_like(values)
        else:
            derivs = (lower[:, : self.m] - lower[:, 1 : self.m + 1]) / self.dx
        if np.any(ood):
            # Linear continuation keeps the spline C^1 across the boundary.
            offset = (ts - tc)[ood, None]
            values[ood] = values[ood] + offset * derivs[ood]
        return values, derivs, ood


def make_basis(
    domain_lo: float,
    domain_hi: float,
    n_seg: int,
    degree: int = 3,
    margin: float = 0.0,
) -> BSplineBasis:
    """Build an equally spaced basis over a symmetrically expanded domain."""
    if not (np.isfinite(domain_lo) and np.isfinite(domain_hi)):
        raise InvalidDomain("domain endpoints must be finite")
    if domain_hi <= domain_lo:
        raise InvalidDomain(f"need domain_hi > domain_lo, got [{domain_lo}, {domain_hi}]")
    if n_seg < 1:
        raise InvalidCounts(f"n_seg must be >= 1, got {n_seg}")
    if degree < 0:
        raise InvalidCounts(f"degree must be >= 0, got {degree}")
    if margin < 0:
        raise InvalidCounts(f"margin must be >= 0, got {margin}")
    pad = margin * (domain_hi - domain_lo)
    lo = domain_lo - pad
    hi = domain_hi + pad
    dx = (hi - lo) / n_seg
    knots = lo + dx * np.arange(-degree, n_seg + degree + 1)
    return BSplineBasis(
        degree=degree,
        n_seg=n_seg,
        domain_lo=float(domain_lo),
        domain_hi=float(domain_hi),
        margin=float(margin),
        lo=float(lo),
        hi=float(hi),
        dx=float(dx),
        knots=knots,
        m=n_seg + degree,
    )


def eval_basis(basis: BSplineBasis, t: float) -> tuple[np.ndarray, bool]:
    """Basis values at one point, plus whether t fell outside the domain."""
    values, _, ood = basis.evaluate([t])
    return values[0], bool(ood[0])


def eval_basis_derivative(basis: BSplineBasis, t: float) -> np.ndarray:
    _, derivs, _ = basis.evaluate([t])
    return derivs[0]


def design_matrix(basis: BSplineBasis, times) -> np.ndarray:
    """Row j is eval_basis at times[j]; shape (len(times), m)."""
    values, _, _ = basis.evaluate(times)
    return values
