"""Shape-invariant spline decoder.

An individual's curve is the population B-spline evaluated at warped time
(t - (b0 + b1)) * exp(c0 + c1), shifted vertically by a0 + a1.  Fixed
effects default to zero: the spline coefficients carry the population
curve and the covariance penalty pulls the per-individual effects toward
zero mean, which removes the flat directions a0/alpha and b0/c0/knots
would otherwise create.

All partial derivatives needed for training are analytic; the batched
entry point evaluates every individual at once for the SGD loop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .splines import BSplineBasis


@dataclass
class RandomEffects:
    """Per-individual size (a1), tempo (b1) and velocity (c1) deviations."""

    a1: float = 0.0
    b1: float = 0.0
    c1: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.b1, self.c1], dtype=float)

    @staticmethod
    def from_array(u) -> "RandomEffects":
        u = np.asarray(u, dtype=float)
        return RandomEffects(float(u[0]), float(u[1]), float(u[2]))


@dataclass
class FixedEffects:
    a0: float = 0.0
    b0: float = 0.0
    c0: float = 0.0


@dataclass
class SitarDecoder:
    basis: BSplineBasis
    alpha: np.ndarray = field(repr=False)
    fixed: FixedEffects = field(default_factory=FixedEffects)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.alpha.shape != (self.basis.m,):
            raise ValueError(
                f"alpha has shape {self.alpha.shape}, basis needs ({self.basis.m},)"
            )
        if not np.all(np.isfinite(self.alpha)):
            raise ValueError("alpha entries must be finite")


def warp_time(t: float, fx: FixedEffects, re: RandomEffects) -> float:
    """Warped evaluation time (t - b) * e^c with b = b0+b1, c = c0+c1."""
    return (t - (fx.b0 + re.b1)) * math.exp(fx.c0 + re.c1)


def decode(dec: SitarDecoder, t, re: RandomEffects) -> tuple[np.ndarray, int]:
    """Fitted values at times t; second element counts out-of-domain warps."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    w = (t - (dec.fixed.b0 + re.b1)) * math.exp(dec.fixed.c0 + re.c1)
    values, _, ood = dec.basis.evaluate(w)
    yhat = dec.fixed.a0 + re.a1 + values @ dec.alpha
    return yhat, int(ood.sum())


@dataclass
class DecoderGradients:
    """Per-point partials of the fitted curve."""

    d_a1: np.ndarray      # (n,), all ones
    d_b1: np.ndarray      # (n,)
    d_c1: np.ndarray      # (n,)
    d_alpha: np.ndarray   # (n, m), basis values at the warped times


def decode_gradients(dec: SitarDecoder, t, re: RandomEffects) -> DecoderGradients:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    b = dec.fixed.b0 + re.b1
    scale = math.exp(dec.fixed.c0 + re.c1)
    w = (t - b) * scale
    values, derivs, _ = dec.basis.evaluate(w)
    slope = derivs @ dec.alpha            # spline slope at the warped times
    return DecoderGradients(
        d_a1=np.ones_like(t),
        d_b1=-scale * slope,
        d_c1=(t - b) * scale * slope,
        d_alpha=values,
    )


@dataclass
class BatchDecode:
    """Batched forward pass plus everything the gradient step reuses."""

    yhat: np.ndarray        # (N, n)
    basis_values: np.ndarray  # (N*n, m)
    slope: np.ndarray       # (N, n), spline slope at warped times
    t_minus_b: np.ndarray   # (N, n)
    scale: np.ndarray       # (N, 1), e^(c0+c1)
    ood_count: int


def decode_batch(dec: SitarDecoder, t: np.ndarray, effects: np.ndarray) -> BatchDecode:
    """Decode N individuals sharing one time vector; effects is (N, 3)."""
    t = np.asarray(t, dtype=float)
    effects = np.asarray(effects, dtype=float)
    n_ind = effects.shape[0]
    t_minus_b = t[None, :] - (dec.fixed.b0 + effects[:, 1:2])
    scale = np.exp(dec.fixed.c0 + effects[:, 2:3])
    w = (t_minus_b * scale).ravel()
    values, derivs, ood = dec.basis.evaluate(w)
    yhat = dec.fixed.a0 + effects[:, 0:1] + (values @ dec.alpha).reshape(n_ind, t.size)
    slope = (derivs @ dec.alpha).reshape(n_ind, t.size)
    return BatchDecode(
        yhat=yhat,
        basis_values=values,
        slope=slope,
        t_minus_b=t_minus_b,
        scale=scale,
        ood_count=int(ood.sum()),
    )
