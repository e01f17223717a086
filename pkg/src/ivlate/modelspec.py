"""Parametric curve models for the structural coordinates.

A ``CurveModel`` is a link function applied to a linear predictor built
from selected design-matrix columns.  A ``ModelSet`` bundles one curve per
structural coordinate plus the instrument propensity, and knows which
coefficients are free during likelihood fitting (the instrument model is
always fitted separately; under one-sided compliance the always-taker
curves are pinned to zero and drop out).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.special import expit

from .params import DomainError, Scale, StructuralPoint

__all__ = [
    "Link",
    "CurveModel",
    "ModelSet",
    "apply_link",
    "eval_structural",
    "instrument_probs",
    "theta_gradient",
    "make_modelset",
]

# Linear predictors fed to exp() are clipped here; beyond this the
# likelihood is garbage anyway and the optimizer only needs finite values.
_EXP_CLIP = 500.0


class Link(Enum):
    TANH = "tanh"    # open interval (-1, 1); additive effects
    EXPIT = "expit"  # (0, 1); probabilities
    EXP = "exp"      # (0, inf); ratio effects and odds products
    LINEAR = "linear"


def apply_link(link: Link, t: np.ndarray) -> np.ndarray:
    if link is Link.TANH:
        return np.tanh(t)
    if link is Link.EXPIT:
        return expit(t)
    if link is Link.EXP:
        return np.exp(np.clip(t, -_EXP_CLIP, _EXP_CLIP))
    if link is Link.LINEAR:
        return np.asarray(t, dtype=float)
    raise DomainError(f"unknown link {link!r}")


@dataclass(frozen=True)
class CurveModel:
    """link(coef @ x[cols]) as a function of the design row x."""

    link: Link
    cols: tuple
    coef: np.ndarray

    def __post_init__(self):
        cols = tuple(int(c) for c in self.cols)
        coef = np.asarray(self.coef, dtype=float)
        if coef.ndim != 1 or coef.size != len(cols):
            raise DomainError(
                f"coef must be one-dimensional with {len(cols)} entries")
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "coef", coef)

    @property
    def n_coef(self) -> int:
        return self.coef.size

    def design(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)[..., self.cols]

    def predictor(self, x: np.ndarray) -> np.ndarray:
        return self.design(x) @ self.coef

    def value(self, x: np.ndarray) -> np.ndarray:
        return apply_link(self.link, self.predictor(x))


@dataclass(frozen=True)
class ModelSet:
    """Curves for every structural coordinate plus the instrument."""

    scale: Scale
    effect: CurveModel
    complier: CurveModel
    at_frac: CurveModel
    nt_risk: CurveModel
    at_risk: CurveModel
    odds_product: CurveModel
    instrument: CurveModel
    one_sided: bool = False

    # Coordinate curves fitted by the joint likelihood, in packing order.
    def free_curves(self):
        names = ["effect", "complier", "at_frac", "nt_risk", "at_risk",
                 "odds_product"]
        if self.one_sided:
            names = [n for n in names if n not in ("at_frac", "at_risk")]
        return [(name, getattr(self, name)) for name in names]

    def pack_coefs(self) -> np.ndarray:
        return np.concatenate([c.coef for _, c in self.free_curves()])

    def coef_slices(self):
        out = {}
        start = 0
        for name, curve in self.free_curves():
            out[name] = slice(start, start + curve.n_coef)
            start += curve.n_coef
        return out, start

    def replace_coefs(self, packed: np.ndarray) -> "ModelSet":
        slices, total = self.coef_slices()
        packed = np.asarray(packed, dtype=float)
        if packed.shape != (total,):
            raise DomainError(f"expected {total} packed coefficients, "
                              f"got shape {packed.shape}")
        updates = {
            name: replace(getattr(self, name), coef=packed[sl])
            for name, sl in slices.items()
        }
        return replace(self, **updates)


def eval_structural(ms: ModelSet, x: np.ndarray) -> StructuralPoint:
    """Structural coordinates at each design row.

    Under one-sided compliance the always-taker share and risk are pinned
    to zero regardless of the stored curves.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    if ms.one_sided:
        at_frac = np.zeros(n)
        at_risk = np.zeros(n)
    else:
        at_frac = ms.at_frac.value(x)
        at_risk = ms.at_risk.value(x)
    return StructuralPoint(
        scale=ms.scale,
        effect=ms.effect.value(x),
        complier_prob=ms.complier.value(x),
        at_frac=at_frac,
        nt_risk=ms.nt_risk.value(x),
        at_risk=at_risk,
        odds_product=ms.odds_product.value(x),
    )


def instrument_probs(ms: ModelSet, x: np.ndarray) -> np.ndarray:
    """P(Z=1 | X) under the model's instrument curve."""
    return ms.instrument.value(np.atleast_2d(np.asarray(x, dtype=float)))


def theta_gradient(ms: ModelSet, x: np.ndarray) -> np.ndarray:
    """d effect / d coef, one row per design row.

    tanh gives (1 - effect^2) x_sel; exp gives effect * x_sel.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    design = ms.effect.design(x)
    value = apply_link(ms.effect.link, design @ ms.effect.coef)
    if ms.effect.link is Link.TANH:
        scale = 1.0 - value ** 2
    elif ms.effect.link is Link.EXP:
        scale = value
    else:
        raise DomainError(
            f"effect curves use tanh or exp links, got {ms.effect.link!r}")
    return design * scale[:, None]


def make_modelset(scale: Scale, effect_cols, nuisance_cols, instrument_cols,
                  one_sided: bool = False) -> ModelSet:
    """Zero-initialized model set with conventional links.

    The effect curve uses tanh (additive) or exp (multiplicative); the
    stratum curves use expit; the odds product uses exp; the instrument
    uses expit.  All share the supplied column selectors.
    """
    effect_link = Link.TANH if scale is Scale.ADDITIVE else Link.EXP

    def curve(link, cols):
        return CurveModel(link, tuple(cols), np.zeros(len(tuple(cols))))

    return ModelSet(
        scale=scale,
        effect=curve(effect_link, effect_cols),
        complier=curve(Link.EXPIT, nuisance_cols),
        at_frac=curve(Link.EXPIT, nuisance_cols),
        nt_risk=curve(Link.EXPIT, nuisance_cols),
        at_risk=curve(Link.EXPIT, nuisance_cols),
        odds_product=curve(Link.EXP, nuisance_cols),
        instrument=curve(Link.EXPIT, instrument_cols),
        one_sided=one_sided,
    )
