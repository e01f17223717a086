"""Synthetic data generator and covariate-misspecification scenarios.

The generator draws one continuous covariate, evaluates the structural
curves, and samples (Z, D, Y) from the implied cell table.  The design
matrix also carries three decoy columns that the true curves never use:

``v2``
    an independent uniform draw, for deliberately wrong instrument models,
``s1`` / ``s2``
    coarse sample-block indicators (first half; all but the first tenth),
    for deliberately wrong structural nuisance models.

The ``bth`` / ``psc`` / ``opc`` / ``bad`` scenarios wire those columns
into the estimators: ``bth`` gives every model the real covariate,
``psc`` breaks the structural nuisances, ``opc`` breaks the instrument
model, ``bad`` breaks both.  The effect curve always uses the real
covariate; the target is never misspecified.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .modelspec import CurveModel, Link, ModelSet, eval_structural, make_modelset
from .params import DomainError, Scale, conditional_margins, inverse_map

__all__ = [
    "DgpSpec",
    "ScenarioDesign",
    "SCENARIOS",
    "dgp_modelset",
    "generate_dataset",
    "build_scenario_design",
    "scenario_modelset",
    "instrument_strength",
    "population_curves",
]

SCENARIOS = ("bth", "psc", "opc", "bad")

_REAL_COLS = ("intercept", "x2")
_DECOY_INSTRUMENT_COLS = ("intercept", "v2")
_DECOY_NUISANCE_COLS = ("s1", "s2")


@dataclass(frozen=True)
class DgpSpec:
    """Coefficients of the generating curves; defaults give a moderately
    strong instrument (first-stage strength about 0.41) and a unit-scale
    heterogeneous effect."""

    n: int = 1000
    seed: int = 0
    scale: Scale = Scale.ADDITIVE
    effect_coef: tuple = (0.0, -1.0)
    complier_coef: tuple = (-0.4, 0.8)
    at_frac_coef: tuple = (-0.4, 0.8)
    nt_risk_coef: tuple = (-0.4, 0.8)
    at_risk_coef: tuple = (-0.4, 0.8)
    odds_product_coef: tuple = (-0.4, 1.0)
    instrument_coef: tuple = (0.1, -1.0)
    one_sided: bool = False


def dgp_modelset(spec: DgpSpec) -> ModelSet:
    """The generating curves as a ModelSet over columns (intercept, x2)."""
    ms = make_modelset(spec.scale, (0, 1), (0, 1), (0, 1),
                       one_sided=spec.one_sided)
    packed = list(spec.effect_coef) + list(spec.complier_coef)
    if not spec.one_sided:
        packed += list(spec.at_frac_coef)
    packed += list(spec.nt_risk_coef)
    if not spec.one_sided:
        packed += list(spec.at_risk_coef)
    packed += list(spec.odds_product_coef)
    ms = ms.replace_coefs(np.asarray(packed, dtype=float))
    return replace(ms, instrument=CurveModel(
        Link.EXPIT, (0, 1), np.asarray(spec.instrument_coef, dtype=float)))


def generate_dataset(spec: DgpSpec) -> Dataset:
    """Draw a dataset; identical specs give identical bytes.

    The random stream order is fixed: covariate, decoy covariate,
    instrument, then the (D, Y) cell draw.
    """
    if spec.n < 1:
        raise DomainError("n must be positive")
    rng = np.random.default_rng(spec.seed)
    n = spec.n
    u = rng.uniform(-1.0, 1.0, n)
    v = rng.uniform(-1.0, 1.0, n)

    x = np.column_stack([
        np.ones(n),
        u,
        v,
        (np.arange(n) < n // 2).astype(float),
        (np.arange(n) >= n // 10).astype(float),
    ])
    colnames = ("intercept", "x2", "v2", "s1", "s2")

    ms = dgp_modelset(spec)
    sp = eval_structural(ms, x[:, :2])
    pi = ms.instrument.value(x[:, :2])
    z = (rng.random(n) < pi).astype(np.int64)

    cells = inverse_map(sp).p                      # (n, 2, 2, 2)
    arm = cells[np.arange(n), :, :, z]             # (n, d, y)
    flat = arm.reshape(n, 4)                       # order (0,0),(0,1),(1,0),(1,1)
    cum = np.cumsum(flat, axis=1)
    draw = rng.random(n)
    cat = np.sum(draw[:, None] >= cum, axis=1)
    cat = np.minimum(cat, 3)
    d = cat // 2
    y = cat % 2
    return Dataset(x=x, z=z, d=d, y=y, colnames=colnames)


@dataclass(frozen=True)
class ScenarioDesign:
    """Column selectors handed to the estimators for one scenario."""

    scenario: str
    target_cols: tuple
    nuisance_cols: tuple
    instrument_cols: tuple


def build_scenario_design(data: Dataset, scenario: str,
                          outcome_model_kept: bool = False) -> ScenarioDesign:
    """Map a scenario tag to column selectors on a simulated dataset.

    ``outcome_model_kept`` is for estimators whose only structural
    nuisance is an outcome regression that stays correctly specified in
    the ``bad`` scenario (their headline comparison breaks the instrument
    model alone); those admit only ``bth`` and ``bad``.
    """
    if scenario not in SCENARIOS:
        raise DomainError(f"unknown scenario {scenario!r}; expected one of "
                          f"{SCENARIOS}")
    real = data.cols(_REAL_COLS)
    decoy_instr = data.cols(_DECOY_INSTRUMENT_COLS)
    decoy_nuis = data.cols(_DECOY_NUISANCE_COLS)

    if outcome_model_kept:
        if scenario not in ("bth", "bad"):
            raise DomainError(
                f"scenario {scenario!r} is not defined for this estimator")
        instr = real if scenario == "bth" else decoy_instr
        return ScenarioDesign(scenario, real, real, instr)

    instr = real if scenario in ("bth", "psc") else decoy_instr
    nuis = real if scenario in ("bth", "opc") else decoy_nuis
    return ScenarioDesign(scenario, real, nuis, instr)


def scenario_modelset(data: Dataset, scenario: str, scale: Scale,
                      one_sided: bool = False,
                      outcome_model_kept: bool = False) -> ModelSet:
    """Zero-initialized ModelSet wired for one scenario."""
    design = build_scenario_design(data, scenario,
                                   outcome_model_kept=outcome_model_kept)
    return make_modelset(scale, design.target_cols, design.nuisance_cols,
                         design.instrument_cols, one_sided=one_sided)


def instrument_strength(source, bins: int = 20) -> float:
    """Average conditional first-stage effect E[P(D=1|Z=1,X) - P(D=1|Z=0,X)].

    Given a DgpSpec this is the exact model truth (Gauss-Legendre over the
    covariate law); given a Dataset it is a nonparametric plug-in from
    equal-count covariate bins.
    """
    if isinstance(source, DgpSpec):
        nodes, weights = np.polynomial.legendre.leggauss(200)
        ms = dgp_modelset(source)
        x = np.column_stack([np.ones_like(nodes), nodes])
        sp = eval_structural(ms, x)
        return float(np.sum(weights * sp.complier_prob) / 2.0)

    data = source
    u = data.x[:, data.col("x2")] if "x2" in data.colnames \
        else data.x[:, min(1, data.x.shape[1] - 1)]
    edges = np.quantile(u, np.linspace(0.0, 1.0, bins + 1))
    edges[0] -= 1e-9
    edges[-1] += 1e-9
    which = np.searchsorted(edges, u, side="right") - 1
    total = 0.0
    used = 0
    for b in range(bins):
        rows = which == b
        z1 = rows & (data.z == 1)
        z0 = rows & (data.z == 0)
        if not (np.any(z1) and np.any(z0)):
            continue
        diff = data.d[z1].mean() - data.d[z0].mean()
        total += diff * np.sum(rows)
        used += np.sum(rows)
    if used == 0:
        raise DomainError("no covariate bin contains both instrument arms")
    return float(total / used)


def population_curves(spec: DgpSpec, u) -> dict:
    """Model-truth conditional curves at covariate values ``u``.

    Returns the instrument propensity, per-arm cell margins, and the
    marginal (instrument-averaged) outcome/treatment regressions; useful
    for oracle checks and diagnostics.
    """
    u = np.asarray(u, dtype=float)
    x = np.column_stack([np.ones_like(u), u])
    ms = dgp_modelset(spec)
    sp = eval_structural(ms, x)
    pi = ms.instrument.value(x)
    margins = conditional_margins(inverse_map(sp))
    f = np.stack([1.0 - pi, pi], axis=-1)
    e_y = np.sum(f * margins.p_y, axis=-1)
    e_d = np.sum(f * margins.p_d, axis=-1)
    e_dy = np.sum(f * margins.p_dy, axis=-1)
    e_d0y = np.sum(f * margins.p_d0y, axis=-1)
    return {
        "structural": sp,
        "pi": pi,
        "margins": margins,
        "e_y": e_y,
        "e_d": e_d,
        "e_y_treated": e_dy / e_d,
        "e_y_untreated": e_d0y / (1.0 - e_d),
    }
