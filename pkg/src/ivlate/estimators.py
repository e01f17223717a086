"""Maximum-likelihood and doubly robust effect estimators.

Estimation targets the coefficients of the conditional complier-effect
curve.  ``fit_mle`` maximizes the full observed-data likelihood over all
structural curves at once.  ``fit_dr`` keeps the likelihood fit only as a
nuisance stage and re-solves the effect coefficients from an estimating
equation that is also unbiased when the structural nuisance curves are
wrong but the instrument propensity is right (and vice versa); the
``weight_mode`` switch chooses between plain design-column weights and the
variance-minimizing weight.  ``fit_dr_simple`` swaps the structural
nuisance stage for ordinary regressions of the outcome and treatment.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .data import Dataset
from .modelspec import ModelSet, apply_link, eval_structural, theta_gradient
from .optimize import (
    VAR_FLOOR,
    OptimConfig,
    SolveReport,
    fd_value_and_grad,
    fit_logistic,
    minimize_smooth,
    solve_moment,
)
from .params import Scale, StructuralPoint, solve_complier_risks

__all__ = [
    "FitResult",
    "joint_nll",
    "fit_mle",
    "compute_H",
    "expected_H",
    "optimal_omega",
    "fit_dr",
    "fit_dr_simple",
]


@dataclass
class FitResult:
    """Outcome of one estimator run on one dataset."""

    estimator: str
    scale: Scale
    alpha: np.ndarray
    nuisances: dict = field(default_factory=dict)
    converged: bool = False
    criterion: float = np.nan
    model: ModelSet | None = None
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Joint likelihood


def _structural_values(ms: ModelSet, x: np.ndarray, coefs: np.ndarray) -> dict:
    """Structural coordinates for a (B, k) block of packed coefficients.

    Returns arrays of shape (B, n); pinned coordinates under one-sided
    compliance come back as scalar zeros that broadcast.
    """
    slices, total = ms.coef_slices()
    out = {}
    for name, curve in ms.free_curves():
        block = coefs[:, slices[name]]
        out[name] = apply_link(curve.link, block @ curve.design(x).T)
    if ms.one_sided:
        out["at_frac"] = np.zeros(1)
        out["at_risk"] = np.zeros(1)
    return out

def _nll_batch(ms: ModelSet, data: Dataset, coefs: np.ndarray) -> np.ndarray:
    """Negative log-likelihood for each row of a packed-coefficient block."""
    coefs = np.atleast_2d(np.asarray(coefs, dtype=float))
    vals = _structural_values(ms, data.x, coefs)
    risks = solve_complier_risks(vals["effect"], vals["odds_product"],
                                 ms.scale)
    c1 = vals["complier"]
    c2 = vals["at_frac"]
    c3 = vals["nt_risk"]
    c4 = vals["at_risk"]

    p011 = (1.0 - c1) * (1.0 - c2) * c3
    p001 = (1.0 - c1) * (1.0 - c2) * (1.0 - c3)
    p110 = (1.0 - c1) * c2 * c4
    p100 = (1.0 - c1) * c2 * (1.0 - c4)
    p111 = risks.risk1 * c1 + p110
    p010 = risks.risk0 * c1 + p011
    p101 = 1.0 - p001 - p011 - p111
    p000 = 1.0 - p010 - p100 - p110

    d, y, z = data.d, data.y, data.z
    w = {
        (0, 0, 0): p000, (0, 0, 1): p001, (0, 1, 0): p010, (0, 1, 1): p011,
        (1, 0, 0): p100, (1, 0, 1): p101, (1, 1, 0): p110, (1, 1, 1): p111,
    }
    prob = np.zeros((coefs.shape[0], data.n))
    for (dd, yy, zz), cell in w.items():
        mask = (d == dd) & (y == yy) & (z == zz)
        if np.any(mask):
            prob[:, mask] = np.broadcast_to(cell, prob.shape)[:, mask]

    bad = np.any(prob <= 0.0, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        nll = -np.sum(np.log(np.maximum(prob, 1e-300)), axis=1)
    nll[bad] = np.inf
    return nll


def joint_nll(ms: ModelSet, data: Dataset):
    """Joint NLL and its central-finite-difference gradient at ms's coefs.

    Any realized cell probability at or below zero makes the value +inf;
    the gradient is then meaningless and comes back as NaN.
    """
    vg = fd_value_and_grad(lambda block: _nll_batch(ms, data, block))
    return vg(ms.pack_coefs())


def fit_mle(ms: ModelSet, data: Dataset,
            cfg: OptimConfig = OptimConfig(), x0=None) -> FitResult:
    """Joint maximum likelihood over every free structural curve.

    Starts from ``x0`` (default: the coefficients stored in ``ms``) and,
    if that search fails to converge, retries from ``cfg.restarts``
    seeded jitters.
    """
    vg = fd_value_and_grad(lambda block: _nll_batch(ms, data, block))
    start = ms.pack_coefs() if x0 is None else np.asarray(x0, dtype=float)

    report = minimize_smooth(vg, start, cfg)
    if not report.converged:
        rng = np.random.default_rng(cfg.seed)
        best = report
        for _ in range(max(0, cfg.restarts)):
            jitter = start + rng.normal(scale=0.5, size=start.shape)
            rep = minimize_smooth(vg, jitter, cfg)
            if rep.converged:
                best = rep
                break
            if rep.objective_or_residual < best.objective_or_residual:
                best = rep
        report = best

    fitted = ms.replace_coefs(report.solution)
    nuisances = {name: curve.coef for name, curve in fitted.free_curves()
                 if name != "effect"}
    return FitResult(
        estimator="mle",
        scale=ms.scale,
        alpha=fitted.effect.coef,
        nuisances=nuisances,
        converged=report.converged,
        criterion=report.objective_or_residual,
        model=fitted,
        diagnostics={"iterations": report.iterations,
                     "message": report.message},
    )


# ---------------------------------------------------------------------------
# Doubly robust estimating equations


def compute_H(y, d, effect, scale: Scale) -> np.ndarray:
    """Effect-removed outcome: y - d*effect (additive), y*effect^-d (ratio)."""
    y = np.asarray(y, dtype=float)
    d = np.asarray(d, dtype=float)
    theta = np.asarray(effect, dtype=float)
    if scale is Scale.ADDITIVE:
        return y - d * theta
    return y * np.where(d > 0, 1.0 / theta, 1.0)


def expected_H(sp: StructuralPoint) -> np.ndarray:
    """Model-implied E(H | X); free of the instrument arm."""
    risks = solve_complier_risks(sp.effect, sp.odds_product, sp.scale)
    c1 = np.asarray(sp.complier_prob, dtype=float)
    c2 = np.asarray(sp.at_frac, dtype=float)
    c3 = np.asarray(sp.nt_risk, dtype=float)
    c4 = np.asarray(sp.at_risk, dtype=float)
    base = risks.risk0 * c1 + (1.0 - c1) * (1.0 - c2) * c3
    if sp.scale is Scale.ADDITIVE:
        return base + (1.0 - c1) * c2 * (c4 - sp.effect)
    return base + (1.0 - c1) * c2 * c4 / np.asarray(sp.effect, dtype=float)


def optimal_omega(sp: StructuralPoint, pi, grad_theta):
    """Variance-minimizing weight for the effect estimating equation.

    Built from the model-implied conditional variance of H in each
    instrument arm; arms are combined as v1/pi + v0/(1-pi).  Returns the
    (n, p) weight matrix and the number of rows whose combined variance
    hit the floor.
    """
    from .params import conditional_margins, inverse_map

    pi = np.asarray(pi, dtype=float)
    theta = np.asarray(sp.effect, dtype=float)
    margins = conditional_margins(inverse_map(sp))
    eh = expected_H(sp)

    if sp.scale is Scale.ADDITIVE:
        eh2 = margins.p_y + theta[..., None] ** 2 * margins.p_d \
            - 2.0 * theta[..., None] * margins.p_dy
    else:
        eh2 = margins.p_dy / theta[..., None] ** 2 + margins.p_d0y
    v = eh2 - eh[..., None] ** 2
    combined = v[..., 1] / pi + v[..., 0] / (1.0 - pi)
    floored = int(np.sum(combined <= VAR_FLOOR))
    combined = np.maximum(combined, VAR_FLOOR)

    risks = solve_complier_risks(theta, sp.odds_product, sp.scale)
    if sp.scale is Scale.ADDITIVE:
        lead = -np.asarray(sp.complier_prob, dtype=float)
    else:
        lead = -risks.risk1 * np.asarray(sp.complier_prob, dtype=float) \
            / theta ** 2
    omega = (lead / combined)[:, None] * np.asarray(grad_theta, dtype=float)
    return omega, floored


def _instrument_fit(ms: ModelSet, data: Dataset, cfg: OptimConfig):
    cols = ms.instrument.cols
    report = fit_logistic(data.z, data.x[:, cols], cfg)
    curve = replace(ms.instrument, coef=report.solution)
    pi = curve.value(data.x)
    return curve, pi, report


def _dr_moment_factory(ms: ModelSet, data: Dataset, pi, weight_mode: str):
    """Estimating-equation moment as a function of the effect coefficients.

    The structural nuisance coordinates are frozen at the curves stored in
    ``ms``; the effect (and hence H, E(H|X), and the optimal weight) moves
    with alpha.
    """
    x = data.x
    sp_fixed = eval_structural(ms, x)
    z = data.z.astype(float)
    f_z = np.where(data.z == 1, pi, 1.0 - pi)
    signed = (2.0 * z - 1.0) / f_z
    design = ms.effect.design(x)

    def moment(alpha):
        theta = apply_link(ms.effect.link, design @ alpha)
        sp = StructuralPoint(ms.scale, theta, sp_fixed.complier_prob,
                             sp_fixed.at_frac, sp_fixed.nt_risk,
                             sp_fixed.at_risk, sp_fixed.odds_product)
        resid = compute_H(data.y, data.d, theta, ms.scale) - expected_H(sp)
        if weight_mode == "identity":
            omega = design
        else:
            ms_alpha = replace(ms, effect=replace(ms.effect, coef=np.asarray(
                alpha, dtype=float)))
            omega, _ = optimal_omega(sp, pi, theta_gradient(ms_alpha, x))
        return (omega * (signed * resid)[:, None]).mean(axis=0)

    return moment


def _solve_effect_moment(moment, starts, cfg: OptimConfig) -> SolveReport:
    best = None
    for start in starts:
        rep = solve_moment(moment, np.asarray(start, dtype=float), cfg)
        if rep.converged:
            return rep
        if best is None or rep.objective_or_residual \
                < best.objective_or_residual:
            best = rep
    return best


def fit_dr(ms: ModelSet, data: Dataset, cfg: OptimConfig = OptimConfig(),
           weight_mode: str = "identity", alpha0=None,
           stage1: FitResult | None = None) -> FitResult:
    """Doubly robust effect fit.

    Stage 1 fits every structural curve by joint maximum likelihood (and
    the instrument by logistic regression); stage 2 re-solves the effect
    coefficients from the weighted estimating equation, recomputing
    E(H|X) at each candidate alpha.  ``weight_mode`` is ``"identity"``
    (effect-design columns) or ``"optimal"``.
    """
    if weight_mode not in ("identity", "optimal"):
        raise ValueError(f"unknown weight_mode {weight_mode!r}")
    if stage1 is None:
        stage1 = fit_mle(ms, data, cfg)
    ms_fit = stage1.model
    curve, pi, gamma_report = _instrument_fit(ms, data, cfg)
    ms_fit = replace(ms_fit, instrument=curve)

    moment = _dr_moment_factory(ms_fit, data, pi, weight_mode)
    p = ms.effect.n_coef
    starts = [np.zeros(p)] if alpha0 is None \
        else [np.asarray(alpha0, dtype=float)]
    starts.append(stage1.alpha)
    report = _solve_effect_moment(moment, starts, cfg)

    alpha = report.solution
    fitted = replace(ms_fit, effect=replace(ms_fit.effect, coef=alpha))
    nuisances = {name: c.coef for name, c in fitted.free_curves()
                 if name != "effect"}
    nuisances["instrument"] = curve.coef
    tag = "dru" if weight_mode == "identity" else "drw"
    return FitResult(
        estimator=tag,
        scale=ms.scale,
        alpha=alpha,
        nuisances=nuisances,
        converged=bool(report.converged and stage1.converged
                       and gamma_report.converged),
        criterion=report.objective_or_residual,
        model=fitted,
        diagnostics={"stage1_converged": stage1.converged,
                     "message": report.message},
    )


def fit_dr_simple(ms: ModelSet, data: Dataset,
                  cfg: OptimConfig = OptimConfig(), alpha0=None) -> FitResult:
    """Doubly robust fit with ordinary regressions as the nuisance stage.

    Additive: E(H|X; alpha) = E(Y|X) - effect(X; alpha) E(D|X).
    Multiplicative: E(D|X) E(Y|D=1,X) / effect + (1-E(D|X)) E(Y|D=0,X).
    Nuisance regressions are logistic on the structural-curve columns.
    """
    x = data.x
    cols = ms.complier.cols
    design_nuis = x[:, cols]
    curve, pi, gamma_report = _instrument_fit(ms, data, cfg)

    nuisances = {"instrument": curve.coef}
    ok = gamma_report.converged
    if ms.scale is Scale.ADDITIVE:
        rep_y = fit_logistic(data.y, design_nuis, cfg)
        rep_d = fit_logistic(data.d, design_nuis, cfg)
        mu_y = expit(design_nuis @ rep_y.solution)
        mu_d = expit(design_nuis @ rep_d.solution)
        nuisances["outcome"] = rep_y.solution
        nuisances["treatment"] = rep_d.solution
        ok = ok and rep_y.converged and rep_d.converged

        def eh(theta):
            return mu_y - theta * mu_d
    else:
        treated = data.d == 1
        if not np.any(treated) or np.all(treated):
            raise ValueError("both treatment arms required")
        rep_d = fit_logistic(data.d, design_nuis, cfg)
        rep_y1 = fit_logistic(data.y[treated], design_nuis[treated], cfg)
        rep_y0 = fit_logistic(data.y[~treated], design_nuis[~treated], cfg)
        mu_d = expit(design_nuis @ rep_d.solution)
        mu_y1 = expit(design_nuis @ rep_y1.solution)
        mu_y0 = expit(design_nuis @ rep_y0.solution)
        nuisances["treatment"] = rep_d.solution
        nuisances["outcome_treated"] = rep_y1.solution
        nuisances["outcome_untreated"] = rep_y0.solution
        ok = ok and rep_d.converged and rep_y1.converged and rep_y0.converged

        def eh(theta):
            return mu_d * mu_y1 / theta + (1.0 - mu_d) * mu_y0

    f_z = np.where(data.z == 1, pi, 1.0 - pi)
    signed = (2.0 * data.z.astype(float) - 1.0) / f_z
    design = ms.effect.design(x)

    def moment(alpha):
        theta = apply_link(ms.effect.link, design @ alpha)
        resid = compute_H(data.y, data.d, theta, ms.scale) - eh(theta)
        return (design * (signed * resid)[:, None]).mean(axis=0)

    p = ms.effect.n_coef
    starts = [np.zeros(p)] if alpha0 is None \
        else [np.asarray(alpha0, dtype=float), np.zeros(p)]
    report = _solve_effect_moment(moment, starts, cfg)

    return FitResult(
        estimator="dru.simple",
        scale=ms.scale,
        alpha=report.solution,
        nuisances=nuisances,
        converged=bool(report.converged and ok),
        criterion=report.objective_or_residual,
        diagnostics={"message": report.message},
    )
