"""Variation-independent coordinates for the binary-IV observed-data law.

Setting: binary instrument Z, binary treatment D, binary outcome Y, at a
fixed covariate value.  Under instrument exclusion, independence, and
monotone compliance (no defiers), the observed conditional law of (D, Y)
given Z is a table of eight cell probabilities p(d, y | z) constrained to a
polytope: each z-arm sums to one, and the always-taker / never-taker
margins are monotone in z.  Within that polytope the law admits an exact
reparameterization into six variation-independent coordinates:

``effect``
    the complier treatment effect on the chosen scale: risk difference
    (additive, in [-1, 1]) or risk ratio (multiplicative, positive),
``complier_prob``
    prevalence of compliers,
``at_frac``
    share of always-takers among the non-compliers,
``nt_risk`` / ``at_risk``
    outcome risks of never-takers and always-takers (both observable:
    P(Y=1 | D=0, Z=1) and P(Y=1 | D=1, Z=0)),
``odds_product``
    product of the odds of the two complier arm risks.

Each coordinate ranges freely over its interval regardless of the others,
which is what makes maximum likelihood and partially specified effect
models well posed.  ``solve_complier_risks`` recovers the complier arm
risks (p0, p1) from (effect, odds_product) as the admissible root of a
quadratic; ``inverse_map`` assembles the cell table from a structural
point; ``forward_map`` inverts it.  All functions vectorize over leading
axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "Scale",
    "EFFECT_FLOOR",
    "DomainError",
    "InstrumentIrrelevantError",
    "DegenerateStratumError",
    "ComplierRisks",
    "StructuralPoint",
    "CellProbs",
    "Margins",
    "DeltaReport",
    "solve_complier_risks",
    "inverse_map",
    "forward_map",
    "conditional_margins",
    "check_delta",
    "feasible_delta_range",
]

# Multiplicative effects are floored here; exact zero would pin the treated
# complier risk to zero and break the odds-product coordinate.
EFFECT_FLOOR = 1e-10


class Scale(Enum):
    """Scale on which the complier effect is measured."""

    ADDITIVE = "additive"
    MULTIPLICATIVE = "multiplicative"

    @classmethod
    def parse(cls, text: str) -> "Scale":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise DomainError(f"unknown scale {text!r}; expected "
                              f"'additive' or 'multiplicative'") from None


class DomainError(ValueError):
    """Inputs left the admissible region of the map being applied."""


class InstrumentIrrelevantError(DomainError):
    """Complier prevalence is zero; the structural coordinate is undefined."""


class DegenerateStratumError(DomainError):
    """A stratum needed by the forward map carries zero probability."""

    def __init__(self, component: str, message: str):
        self.component = component
        super().__init__(message)


@dataclass(frozen=True)
class ComplierRisks:
    """Arm-specific complier outcome risks (p0 untreated, p1 treated)."""

    risk0: np.ndarray
    risk1: np.ndarray


@dataclass(frozen=True)
class StructuralPoint:
    """One point in the variation-independent coordinate system.

    Fields broadcast against each other, so a batch of points can be held
    as arrays.  ``at_frac`` and ``at_risk`` are forced to zero under
    one-sided compliance (no always-takers); callers encode that by
    passing zeros.
    """

    scale: Scale
    effect: np.ndarray
    complier_prob: np.ndarray
    at_frac: np.ndarray
    nt_risk: np.ndarray
    at_risk: np.ndarray
    odds_product: np.ndarray


@dataclass(frozen=True)
class CellProbs:
    """Observed-data cell table; ``p[..., d, y, z]`` = p(d, y | z)."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.shape[-3:] != (2, 2, 2):
            raise DomainError(f"cell table must have trailing shape (2, 2, 2), "
                              f"got {p.shape}")
        object.__setattr__(self, "p", p)

    def prob(self, d: int, y: int, z: int) -> np.ndarray:
        return self.p[..., d, y, z]


@dataclass(frozen=True)
class Margins:
    """Conditional margins per instrument arm; last axis indexes z."""

    p_y: np.ndarray    # P(Y=1 | z)
    p_d: np.ndarray    # P(D=1 | z)
    p_dy: np.ndarray   # P(D=1, Y=1 | z)
    p_d0y: np.ndarray  # P(D=0, Y=1 | z)


@dataclass(frozen=True)
class DeltaReport:
    """Outcome of a polytope membership check.

    ``slacks`` maps constraint names to signed slack (nonnegative when the
    constraint holds exactly); ``ok`` is True where every slack clears
    ``-tol``.
    """

    ok: np.ndarray
    slacks: dict
    tol: float

    @property
    def all_ok(self) -> bool:
        return bool(np.all(self.ok))


def _as_float(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def solve_complier_risks(effect, odds_product, scale: Scale) -> ComplierRisks:
    """Recover complier arm risks from (effect, odds_product).

    Solves p1 - p0 = effect (additive) or p1 / p0 = effect
    (multiplicative) jointly with p1*p0 / ((1-p1)*(1-p0)) = odds_product
    for the unique root with both risks in [0, 1].  The quadratic is
    evaluated in a cancellation-free form, so odds_product = 1 (where the
    leading coefficient vanishes) needs no special handling.

    >>> r = solve_complier_risks(0.0, 4.0, Scale.ADDITIVE)
    >>> round(float(r.risk0), 12) == round(float(r.risk1), 12) == round(2 / 3, 12)
    True
    >>> r = solve_complier_risks(0.2, 1.0, Scale.ADDITIVE)
    >>> round(float(r.risk0), 12), round(float(r.risk1), 12)
    (0.4, 0.6)
    """
    theta = _as_float(effect)
    op = _as_float(odds_product)
    if np.any(op < 0) or not np.all(np.isfinite(op)):
        raise DomainError("odds_product must be finite and >= 0")

    if scale is Scale.ADDITIVE:
        if np.any(np.abs(theta) > 1) or not np.all(np.isfinite(theta)):
            raise DomainError("additive effect must lie in [-1, 1]")
        # Roots of (op-1) p0^2 - (theta + op(2-theta)) p0 + op(1-theta) = 0.
        # Overflow to inf (huge op) degrades gracefully: risk0 -> 0.
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            disc = theta ** 2 * (op - 1.0) ** 2 + 4.0 * op
            root = np.sqrt(disc)
            negb = theta + op * (2.0 - theta)
            stable = 2.0 * op * (1.0 - theta) / (negb + root)
            corner = (negb - root) / (2.0 * (op - 1.0))
        risk0 = np.where(negb > 0.0, stable, corner)
        risk1 = risk0 + theta
    elif scale is Scale.MULTIPLICATIVE:
        if np.any(theta < 0) or not np.all(np.isfinite(theta)):
            raise DomainError("multiplicative effect must be >= 0")
        theta = np.maximum(theta, EFFECT_FLOOR)
        # Roots of theta(1-op) p0^2 + op(1+theta) p0 - op = 0.
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            disc = (op * (theta - 1.0)) ** 2 + 4.0 * theta * op
            root = np.sqrt(disc)
            denom = op * (1.0 + theta) + root
            risk0 = np.where(denom > 0.0, 2.0 * op / denom, 0.0)
            risk1 = theta * risk0
    else:
        raise DomainError(f"unknown scale {scale!r}")

    return ComplierRisks(np.clip(risk0, 0.0, 1.0), np.clip(risk1, 0.0, 1.0))


def _validate_unit(value: np.ndarray, name: str):
    if np.any(value < 0) or np.any(value > 1) or not np.all(np.isfinite(value)):
        raise DomainError(f"{name} must lie in [0, 1]")


def inverse_map(sp: StructuralPoint) -> CellProbs:
    """Cell table implied by a structural point.

    >>> sp = StructuralPoint(Scale.ADDITIVE, 0.2, 0.5, 0.5, 0.5, 0.5, 1.0)
    >>> cp = inverse_map(sp)
    >>> round(float(cp.prob(1, 1, 1)), 12), round(float(cp.prob(0, 1, 0)), 12)
    (0.425, 0.325)
    """
    c1 = _as_float(sp.complier_prob)
    c2 = _as_float(sp.at_frac)
    c3 = _as_float(sp.nt_risk)
    c4 = _as_float(sp.at_risk)
    _validate_unit(c1, "complier_prob")
    _validate_unit(c2, "at_frac")
    _validate_unit(c3, "nt_risk")
    _validate_unit(c4, "at_risk")
    risks = solve_complier_risks(sp.effect, sp.odds_product, sp.scale)

    p011 = (1.0 - c1) * (1.0 - c2) * c3
    p001 = (1.0 - c1) * (1.0 - c2) * (1.0 - c3)
    p110 = (1.0 - c1) * c2 * c4
    p100 = (1.0 - c1) * c2 * (1.0 - c4)
    p111 = risks.risk1 * c1 + p110
    p010 = risks.risk0 * c1 + p011
    p101 = 1.0 - p001 - p011 - p111
    p000 = 1.0 - p010 - p100 - p110

    shape = np.broadcast_shapes(p011.shape, p111.shape, p000.shape)
    p = np.empty(shape + (2, 2, 2))
    p[..., 0, 0, 0] = p000
    p[..., 0, 0, 1] = p001
    p[..., 0, 1, 0] = p010
    p[..., 0, 1, 1] = p011
    p[..., 1, 0, 0] = p100
    p[..., 1, 0, 1] = p101
    p[..., 1, 1, 0] = p110
    p[..., 1, 1, 1] = p111
    return CellProbs(np.maximum(p, 0.0))


def forward_map(cp: CellProbs, scale: Scale) -> StructuralPoint:
    """Structural point implied by an admissible cell table.

    The table should already satisfy ``check_delta``; outside the polytope
    the coordinates may leave their ranges or be undefined.
    """
    q = cp.p
    p001 = q[..., 0, 0, 1]
    p011 = q[..., 0, 1, 1]
    p100 = q[..., 1, 0, 0]
    p110 = q[..., 1, 1, 0]

    noncomplier = p001 + p011 + p100 + p110
    c1 = 1.0 - noncomplier
    if np.any(c1 <= 0.0):
        raise InstrumentIrrelevantError(
            "complier prevalence is <= 0; effect coordinates are undefined")

    with np.errstate(divide="ignore", invalid="ignore"):
        if np.any(noncomplier == 0.0):
            # All compliers: the taker mix carries no probability.
            raise DegenerateStratumError(
                "at_frac", "no non-compliers; at_frac is undefined")
        c2 = (p100 + p110) / noncomplier
        nt_mass = p001 + p011
        if np.any(nt_mass == 0.0):
            raise DegenerateStratumError(
                "nt_risk", "never-taker stratum has zero mass")
        c3 = p011 / nt_mass
        at_mass = p100 + p110
        if np.any(at_mass == 0.0):
            raise DegenerateStratumError(
                "at_risk", "always-taker stratum has zero mass")
        c4 = p110 / at_mass

        num = (q[..., 1, 1, 1] - p110) * (q[..., 0, 1, 0] - p011)
        den = (q[..., 1, 0, 1] - p100) * (q[..., 0, 0, 0] - p001)
        if np.any(den == 0.0):
            raise DegenerateStratumError(
                "odds_product", "a complier arm risk sits on the boundary")
        op = num / den

        if scale is Scale.ADDITIVE:
            ey = q[..., 0, 1, :] + q[..., 1, 1, :]
            ed = q[..., 1, 0, :] + q[..., 1, 1, :]
            theta = (ey[..., 1] - ey[..., 0]) / (ed[..., 1] - ed[..., 0])
        elif scale is Scale.MULTIPLICATIVE:
            untreated_shift = p011 - q[..., 0, 1, 0]
            if np.any(untreated_shift == 0.0):
                raise DegenerateStratumError(
                    "effect", "untreated complier risk is zero; the ratio "
                    "effect is undefined")
            theta = -(q[..., 1, 1, 1] - p110) / untreated_shift
        else:
            raise DomainError(f"unknown scale {scale!r}")

    return StructuralPoint(scale, theta, c1, c2, c3, c4, op)


def conditional_margins(cp: CellProbs) -> Margins:
    """Per-arm outcome/treatment margins of a cell table.

    >>> sp = StructuralPoint(Scale.ADDITIVE, 0.2, 0.5, 0.5, 0.5, 0.5, 1.0)
    >>> m = conditional_margins(inverse_map(sp))
    >>> [round(float(v[..., 1]), 12) for v in (m.p_y, m.p_d, m.p_dy)]
    [0.55, 0.75, 0.425]
    """
    q = cp.p
    return Margins(
        p_y=q[..., 0, 1, :] + q[..., 1, 1, :],
        p_d=q[..., 1, 0, :] + q[..., 1, 1, :],
        p_dy=q[..., 1, 1, :],
        p_d0y=q[..., 0, 1, :],
    )


def check_delta(cp: CellProbs, tol: float = 1e-9) -> DeltaReport:
    """Membership check for the monotone observed-data polytope.

    Slack convention: every constraint is written as ``slack >= 0``;
    normalization contributes ``-|sum - 1|``.  ``ok`` requires all slacks
    above ``-tol``.
    """
    q = cp.p
    slacks = {
        "nonneg": np.min(q, axis=(-3, -2, -1)),
        "norm_z0": -np.abs(np.sum(q[..., 0], axis=(-2, -1)) - 1.0),
        "norm_z1": -np.abs(np.sum(q[..., 1], axis=(-2, -1)) - 1.0),
        # Always-taker margins rise with z, never-taker margins fall.
        "mono_d1y0": q[..., 1, 0, 1] - q[..., 1, 0, 0],
        "mono_d1y1": q[..., 1, 1, 1] - q[..., 1, 1, 0],
        "mono_d0y0": q[..., 0, 0, 0] - q[..., 0, 0, 1],
        "mono_d0y1": q[..., 0, 1, 0] - q[..., 0, 1, 1],
    }
    ok = np.ones(q.shape[:-3], dtype=bool)
    for slack in slacks.values():
        ok = ok & (slack >= -tol)
    return DeltaReport(ok=ok, slacks=slacks, tol=tol)


def feasible_delta_range(mean, pi):
    """Range of E(W | Z=1) - E(W | Z=0) over laws with E(W) = mean.

    W is binary and P(Z=1) = pi, both conditional on the same covariate
    value.  Returns (low, high) arrays; the interval is never empty for
    mean in [0, 1] and pi in (0, 1).
    """
    a = _as_float(mean)
    p = _as_float(pi)
    _validate_unit(a, "mean")
    if np.any(p <= 0) or np.any(p >= 1):
        raise DomainError("pi must lie strictly inside (0, 1)")
    low = np.maximum(-a / (1.0 - p), -(1.0 - a) / p)
    high = np.minimum((1.0 - a) / (1.0 - p), a / p)
    return low, high
