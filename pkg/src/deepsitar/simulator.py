"""Synthetic balanced growth cohorts with known ground truth.

Heights are generated from a true population spline warped by Gaussian
per-individual effects, plus i.i.d. Gaussian noise.  The true parameters
ship as an explicit default config (they are implementer-chosen, stated in
height-like units); every individual keeps its drawn effects so encoder
output can be scored against ground truth.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .decoder import FixedEffects, SitarDecoder, decode_batch
from .numerics import cholesky_spd
from .splines import make_basis

AGE_LO = 9.0
AGE_HI = 18.0


class InvalidCount(Exception):
    pass


@dataclass
class TruthParams:
    decoder_truth: SitarDecoder
    lambda_true: np.ndarray
    noise_var: float

    def __post_init__(self):
        self.lambda_true = np.asarray(self.lambda_true, dtype=float)
        cholesky_spd(self.lambda_true)  # must be SPD
        if self.noise_var < 0:
            raise ValueError("noise_var must be >= 0")

    @property
    def fixed_truth(self) -> FixedEffects:
        return self.decoder_truth.fixed


def default_truth() -> TruthParams:
    """Shipped true parameters: a boy-like growth curve over ages 9-18.

    The coefficients trace a curve from 133 cm to ~166.5 cm with a marked
    pubertal growth spurt: velocity rises from ~3 cm/yr to a peak of
    ~8.8 cm/yr at age 13.4 and falls to ~1.6 cm/yr by 18.  The spurt gives
    the curve genuine fine structure, so decoder capacity matters the way
    it does on real growth data.  The warp is centered at the mean age
    (b0 = 13.5): tempo shifts a curve in time, velocity speeds it up
    around mid-adolescence.  Effect variances: size 6.25 cm^2, tempo
    0.25 yr^2, velocity 0.01; noise variance 0.4.
    """
    b0 = (AGE_LO + AGE_HI) / 2.0
    basis = make_basis(AGE_LO - b0, AGE_HI - b0, n_seg=10, degree=3, margin=0.15)
    alpha = np.array([
        126.3, 128.75, 132.6, 135.78, 139.4, 141.88, 152.36,
        160.98, 162.56, 165.15, 166.72, 168.83, 169.76,
    ])
    dec = SitarDecoder(basis=basis, alpha=alpha, fixed=FixedEffects(b0=b0))
    lam = np.array([
        [6.25, 0.25, 0.025],
        [0.25, 0.25, 0.005],
        [0.025, 0.005, 0.01],
    ])
    return TruthParams(decoder_truth=dec, lambda_true=lam, noise_var=0.4)


def make_ages(n_points: int) -> np.ndarray:
    """Equally spaced ages between 9 and 18 years."""
    if n_points < 2:
        raise InvalidCount(f"need at least 2 ages, got {n_points}")
    return np.linspace(AGE_LO, AGE_HI, n_points)


@dataclass
class GrowthDataset:
    """Balanced cohort: one shared time vector, one measurement row each."""

    ids: np.ndarray                    # (N,) int
    t: np.ndarray                      # (n,)
    y: np.ndarray                      # (N, n)
    split: np.ndarray                  # (N,) "train" | "validation"
    true_effects: Optional[np.ndarray] = None   # (N, 3) or None

    @property
    def n_individuals(self) -> int:
        return self.y.shape[0]

    def train_mask(self) -> np.ndarray:
        return self.split == "train"

    def val_mask(self) -> np.ndarray:
        return self.split == "validation"

    def train_measurements(self) -> np.ndarray:
        return self.y[self.train_mask()]

    def val_measurements(self) -> np.ndarray:
        return self.y[self.val_mask()]

    def subset(self, mask: np.ndarray) -> "GrowthDataset":
        return GrowthDataset(
            ids=self.ids[mask], t=self.t, y=self.y[mask], split=self.split[mask],
            true_effects=None if self.true_effects is None else self.true_effects[mask],
        )


def simulate(
    n_individuals: int,
    truth: TruthParams,
    split_frac: float,
    rng: np.random.Generator,
    n_points: int = 20,
) -> GrowthDataset:
    """Draw a cohort: effects ~ N(0, Lambda), noise ~ N(0, noise_var).

    Draw order is fixed (effects, noise, split permutation) so a dataset is
    a pure function of its seed.
    """
    if n_individuals < 2:
        raise InvalidCount("need at least 2 individuals")
    if not 0.0 < split_frac < 1.0:
        raise ValueError("split_frac must lie strictly between 0 and 1")
    t = make_ages(n_points)
    lower = cholesky_spd(truth.lambda_true)
    effects = rng.standard_normal((n_individuals, 3)) @ lower.T
    clean = decode_batch(truth.decoder_truth, t, effects).yhat
    noise = rng.standard_normal((n_individuals, n_points)) * np.sqrt(truth.noise_var)
    perm = rng.permutation(n_individuals)
    n_train = int(round(split_frac * n_individuals))
    split = np.full(n_individuals, "validation", dtype=object)
    split[perm[:n_train]] = "train"
    return GrowthDataset(
        ids=np.arange(n_individuals),
        t=t,
        y=clean + noise,
        split=split.astype(str),
        true_effects=effects,
    )


def exact_curves(truth: TruthParams, t: np.ndarray, effects: np.ndarray) -> np.ndarray:
    """Noise-free individual curves from ground-truth effects."""
    return decode_batch(truth.decoder_truth, np.asarray(t, float), effects).yhat


# --- delimited-text round trip ------------------------------------------------

def save_dataset(dataset: GrowthDataset, path) -> None:
    has_truth = dataset.true_effects is not None
    header = ["id", "age", "y", "split"] + (["a1", "b1", "c1"] if has_truth else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n_individuals):
            for j in range(dataset.t.size):
                row = [
                    int(dataset.ids[i]),
                    repr(float(dataset.t[j])),
                    repr(float(dataset.y[i, j])),
                    dataset.split[i],
                ]
                if has_truth:
                    row += [repr(float(v)) for v in dataset.true_effects[i]]
                writer.writerow(row)


def load_dataset(path) -> GrowthDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        has_truth = "a1" in header
        by_id: dict[int, dict] = {}
        order: list[int] = []
        for row in reader:
            ident = int(row[0])
            if ident not in by_id:
                by_id[ident] = {"t": [], "y": [], "split": row[3], "u": None}
                order.append(ident)
            rec = by_id[ident]
            rec["t"].append(float(row[1]))
            rec["y"].append(float(row[2]))
            if has_truth:
                rec["u"] = [float(row[4]), float(row[5]), float(row[6])]
    t = np.array(by_id[order[0]]["t"])
    for ident in order:
        if len(by_id[ident]["t"]) != t.size:
            raise ValueError("dataset is not balanced: unequal visit counts")
    return GrowthDataset(
        ids=np.array(order, dtype=int),
        t=t,
        y=np.array([by_id[i]["y"] for i in order]),
        split=np.array([by_id[i]["split"] for i in order]),
        true_effects=(
            np.array([by_id[i]["u"] for i in order]) if has_truth else None
        ),
    )


def save_truth(truth: TruthParams, path) -> None:
    basis = truth.decoder_truth.basis
    payload = {
        "format_version": 1,
        "basis": {
            "domain_lo": basis.domain_lo,
            "domain_hi": basis.domain_hi,
            "n_seg": basis.n_seg,
            "degree": basis.degree,
            "margin": basis.margin,
        },
        "alpha": [float(v) for v in truth.decoder_truth.alpha],
        "fixed": {
            "a0": truth.decoder_truth.fixed.a0,
            "b0": truth.decoder_truth.fixed.b0,
            "c0": truth.decoder_truth.fixed.c0,
        },
        "lambda": [[float(v) for v in row] for row in truth.lambda_true],
        "noise_var": truth.noise_var,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_truth(path) -> TruthParams:
    with open(path) as fh:
        payload = json.load(fh)
    b = payload["basis"]
    basis = make_basis(b["domain_lo"], b["domain_hi"], b["n_seg"], b["degree"], b["margin"])
    fx = payload["fixed"]
    dec = SitarDecoder(
        basis=basis,
        alpha=np.array(payload["alpha"], dtype=float),
        fixed=FixedEffects(a0=fx["a0"], b0=fx["b0"], c0=fx["c0"]),
    )
    return TruthParams(
        decoder_truth=dec,
        lambda_true=np.array(payload["lambda"], dtype=float),
        noise_var=float(payload["noise_var"]),
    )
