"""Alternative estimators used as benchmarks in the simulation harness.

Each fits the same effect curve as the main estimators but swaps the
nuisance machinery:

``fit_reg_ogburn``
    stacked regression moments with a polynomial outcome-index model,
``fit_dr_ogburn``
    a doubly robust step around that fit, with the outcome index frozen
    (``weight_mode`` picks plain or variance-minimizing weights),
``fit_mle_wang`` / ``fit_dru_wang``
    a two-stage likelihood built from risk-difference links for the
    treatment and outcome arms, and its doubly robust counterpart,
``fit_ls_abadie``
    compliance-weighted least squares,
``fit_mle_crude``
    the naive conditional-on-treatment contrast that ignores
    confounding; it serves as the bias yardstick.

All reuse the shared small-scale optimizers; none of them depends on the
joint structural likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import Dataset
from .estimators import (
    FitResult,
    _instrument_fit,
    _solve_effect_moment,
    compute_H,
)
from .modelspec import Link, ModelSet, apply_link
from .optimize import (
    VAR_FLOOR,
    OptimConfig,
    fd_value_and_grad,
    fit_logistic,
    minimize_smooth,
    solve_moment,
)
from .params import DomainError, Scale, solve_complier_risks

__all__ = [
    "RdlinkFit",
    "fit_rdlink",
    "fit_reg_ogburn",
    "fit_dr_ogburn",
    "fit_mle_wang",
    "fit_dru_wang",
    "fit_ls_abadie",
    "fit_mle_crude",
]


def _power_design(x: np.ndarray, cols, degree: int) -> np.ndarray:
    """Selected columns plus powers 2..degree of the last selected column."""
    base = x[:, list(cols)]
    t = base[:, -1]
    extras = [t ** k for k in range(2, degree + 1)]
    return np.column_stack([base] + extras)


# ---------------------------------------------------------------------------
# Risk-difference link model for a binary response given a binary condition


@dataclass(frozen=True)
class RdlinkFit:
    """Two-curve fit of P(R=1 | C, X): a contrast between the C arms plus
    an odds-product curve pinning the arm levels."""

    contrast_coef: np.ndarray
    odds_coef: np.ndarray
    converged: bool
    nll: float
    iterations: int
    message: str


def fit_rdlink(resp, cond, contrast_design, odds_design, scale: Scale,
               cfg: OptimConfig = OptimConfig(), contrast_factor=None,
               x0=None) -> RdlinkFit:
    """Maximum likelihood for a binary response with a linked arm contrast.

    The contrast between the ``cond`` arms follows the scale's effect link
    (tanh for a risk difference, exp for a risk ratio) on
    ``contrast_design``; the odds product is log-linear in
    ``odds_design``.  ``contrast_factor`` optionally multiplies the linked
    contrast by a fixed per-row factor (used when the contrast is a
    product of an effect curve and a frozen first-stage contrast).
    """
    resp = np.asarray(resp)
    cond = np.asarray(cond)
    p1 = contrast_design.shape[1]
    p2 = odds_design.shape[1]
    link = Link.TANH if scale is Scale.ADDITIVE else Link.EXP

    def nll_batch(block):
        block = np.atleast_2d(np.asarray(block, dtype=float))
        contrast = apply_link(link, block[:, :p1] @ contrast_design.T)
        if contrast_factor is not None:
            contrast = contrast * contrast_factor
        odds = apply_link(Link.EXP, block[:, p1:] @ odds_design.T)
        risks = solve_complier_risks(contrast, odds, scale)
        level = np.where(cond == 1, risks.risk1, risks.risk0)
        prob = np.where(resp == 1, level, 1.0 - level)
        bad = np.any(prob <= 0.0, axis=1)
        nll = -np.sum(np.log(np.maximum(prob, 1e-300)), axis=1)
        nll[bad] = np.inf
        return nll

    vg = fd_value_and_grad(nll_batch)
    start = np.zeros(p1 + p2) if x0 is None else np.asarray(x0, dtype=float)
    report = minimize_smooth(vg, start, cfg)
    if not report.converged:
        rng = np.random.default_rng(cfg.seed)
        best = report
        for _ in range(max(0, cfg.restarts)):
            rep = minimize_smooth(vg, start + rng.normal(scale=0.5,
                                                         size=start.shape),
                                  cfg)
            if rep.converged:
                best = rep
                break
            if rep.objective_or_residual < best.objective_or_residual:
                best = rep
        report = best
    return RdlinkFit(
        contrast_coef=report.solution[:p1],
        odds_coef=report.solution[p1:],
        converged=report.converged,
        nll=report.objective_or_residual,
        iterations=report.iterations,
        message=report.message,
    )


# ---------------------------------------------------------------------------
# Stacked regression moments


def fit_reg_ogburn(ms: ModelSet, data: Dataset,
                   cfg: OptimConfig = OptimConfig(), x0=None) -> FitResult:
    """Effect fit from stacked instrument-times-residual moments.

    E(H|X) is modeled directly: linear in a cubic expansion of the
    nuisance columns on the additive scale, log-linear in a quadratic
    expansion on the multiplicative scale.  The residual H - E(H|X) is
    orthogonalized against that expansion and against the instrument
    times the effect-curve gradient, giving an exactly identified system
    in (alpha, xi).
    """
    x = data.x
    eff_design = ms.effect.design(x)
    p = eff_design.shape[1]
    additive = ms.scale is Scale.ADDITIVE
    v = _power_design(x, ms.complier.cols, 3 if additive else 2)
    z = data.z.astype(float)

    def moment(params):
        alpha = params[:p]
        xi = params[p:]
        theta = apply_link(ms.effect.link, eff_design @ alpha)
        h = compute_H(data.y, data.d, theta, ms.scale)
        if additive:
            ehat = v @ xi
            r = h - ehat
            block1 = v * r[:, None]
            block2 = eff_design * (z * (1.0 - theta ** 2) * r)[:, None]
        else:
            ehat = apply_link(Link.EXP, v @ xi)
            r = h - ehat
            block1 = v * (ehat * r)[:, None]
            block2 = eff_design * (z * theta * r)[:, None]
        return np.concatenate([block1.mean(axis=0), block2.mean(axis=0)])

    start = np.zeros(p + v.shape[1]) if x0 is None \
        else np.asarray(x0, dtype=float)
    report = solve_moment(moment, start, cfg)
    alpha = report.solution[:p]
    xi = report.solution[p:]
    return FitResult(
        estimator="reg.ogburn",
        scale=ms.scale,
        alpha=alpha,
        nuisances={"outcome_index": xi},
        converged=report.converged,
        criterion=report.objective_or_residual,
        diagnostics={"message": report.message},
    )


def fit_dr_ogburn(ms: ModelSet, data: Dataset,
                  cfg: OptimConfig = OptimConfig(),
                  weight_mode: str = "identity",
                  reg: FitResult | None = None) -> FitResult:
    """Doubly robust step around the stacked-moment fit.

    The outcome-index model is frozen at the stacked-moment estimate, so
    only the effect coefficients move.  ``weight_mode="identity"`` uses
    the effect design columns as weights; ``"optimal"`` scales them by a
    frozen efficiency factor built from a first-stage treatment contrast
    and a working variance regression, both evaluated at the
    stacked-moment alpha.
    """
    if weight_mode not in ("identity", "optimal"):
        raise ValueError(f"unknown weight_mode {weight_mode!r}")
    if reg is None:
        reg = fit_reg_ogburn(ms, data, cfg)

    x = data.x
    eff_design = ms.effect.design(x)
    additive = ms.scale is Scale.ADDITIVE
    v = _power_design(x, ms.complier.cols, 3 if additive else 2)
    xi = reg.nuisances["outcome_index"]
    ehat = v @ xi if additive else apply_link(Link.EXP, v @ xi)

    curve, pi, gamma_report = _instrument_fit(ms, data, cfg)
    f_z = np.where(data.z == 1, pi, 1.0 - pi)
    signed = (2.0 * data.z.astype(float) - 1.0) / f_z

    weights_ok = True
    if weight_mode == "identity":
        omega = eff_design
    else:
        nuis_design = x[:, list(ms.complier.cols)]
        v_design = _power_design(x, ms.complier.cols, 2)
        theta_reg = apply_link(ms.effect.link, eff_design @ reg.alpha)
        resid_reg = signed * (compute_H(data.y, data.d, theta_reg, ms.scale)
                              - ehat)
        sq = resid_reg ** 2
        if additive:
            stage = fit_rdlink(data.d, data.z, nuis_design, nuis_design,
                               Scale.ADDITIVE, cfg)
            weights_ok = stage.converged
            first_stage = np.tanh(nuis_design @ stage.contrast_coef)
            zeta, *_ = np.linalg.lstsq(v_design, sq, rcond=None)
            var_hat = np.maximum(v_design @ zeta, VAR_FLOOR)
            scale_row = -(1.0 - theta_reg ** 2) * first_stage / var_hat
        else:
            dy = (data.d * data.y).astype(float)
            dy_design = np.column_stack([data.z.astype(float), nuis_design])
            dy_rep = fit_logistic(dy, dy_design, cfg)
            weights_ok = dy_rep.converged
            psi_z = dy_rep.solution[0]
            base = nuis_design @ dy_rep.solution[1:]
            contrast = expit(psi_z + base) - expit(base)
            zeta0, *_ = np.linalg.lstsq(v_design,
                                        np.log(np.maximum(sq, 1e-10)),
                                        rcond=None)

            def var_moment(zeta):
                # variances live on a modest scale; cap the exponent so a
                # wild trial step cannot overflow the squared residual
                fitted = np.exp(np.clip(v_design @ zeta, -30.0, 30.0))
                return (v_design * (fitted * (sq - fitted))[:, None]) \
                    .mean(axis=0)

            var_rep = solve_moment(var_moment, zeta0, cfg)
            zeta = var_rep.solution if var_rep.converged else zeta0
            var_hat = np.maximum(
                np.exp(np.clip(v_design @ zeta, -30.0, 30.0)), VAR_FLOOR)
            scale_row = -contrast / (theta_reg * var_hat)
        omega = eff_design * scale_row[:, None]

    def moment(alpha):
        theta = apply_link(ms.effect.link, eff_design @ alpha)
        resid = compute_H(data.y, data.d, theta, ms.scale) - ehat
        return (omega * (signed * resid)[:, None]).mean(axis=0)

    p = eff_design.shape[1]
    report = _solve_effect_moment(moment, [reg.alpha, np.zeros(p)], cfg)
    tag = "dru.ogburn" if weight_mode == "identity" else "drw.ogburn"
    return FitResult(
        estimator=tag,
        scale=ms.scale,
        alpha=report.solution,
        nuisances={"outcome_index": xi, "instrument": curve.coef},
        converged=bool(report.converged and reg.converged
                       and gamma_report.converged and weights_ok),
        criterion=report.objective_or_residual,
        diagnostics={"stacked_converged": reg.converged,
                     "message": report.message},
    )


# ---------------------------------------------------------------------------
# Two-stage risk-difference likelihood


def fit_mle_wang(ms: ModelSet, data: Dataset,
                 cfg: OptimConfig = OptimConfig()) -> FitResult:
    """Two-stage likelihood: treatment arm contrast, then outcome.

    Stage one fits a risk-difference model of D given Z; stage two fits Y
    given Z with the outcome contrast constrained to the effect curve
    times the frozen stage-one contrast.  Additive scale only.
    """
    if ms.scale is not Scale.ADDITIVE:
        raise DomainError("two-stage contrast likelihood is additive-only")
    x = data.x
    nuis_design = x[:, list(ms.complier.cols)]
    eff_design = ms.effect.design(x)

    stage1 = fit_rdlink(data.d, data.z, nuis_design, nuis_design,
                        Scale.ADDITIVE, cfg)
    d_contrast = np.tanh(nuis_design @ stage1.contrast_coef)
    stage2 = fit_rdlink(data.y, data.z, eff_design, nuis_design,
                        Scale.ADDITIVE, cfg, contrast_factor=d_contrast)

    return FitResult(
        estimator="mle.wang",
        scale=ms.scale,
        alpha=stage2.contrast_coef,
        nuisances={"treatment_contrast": stage1.contrast_coef,
                   "treatment_odds": stage1.odds_coef,
                   "outcome_odds": stage2.odds_coef},
        converged=bool(stage1.converged and stage2.converged),
        criterion=stage2.nll,
        diagnostics={"stage1_message": stage1.message,
                     "message": stage2.message},
    )


def fit_dru_wang(ms: ModelSet, data: Dataset,
                 cfg: OptimConfig = OptimConfig(),
                 wang: FitResult | None = None) -> FitResult:
    """Doubly robust effect fit with two-stage-likelihood nuisances.

    E(D|Z=0,X) and E(Y|Z=0,X) are frozen at the two-stage fit; the effect
    coefficients re-solve the propensity-weighted estimating equation.
    Additive scale only.
    """
    if ms.scale is not Scale.ADDITIVE:
        raise DomainError("two-stage contrast likelihood is additive-only")
    if wang is None:
        wang = fit_mle_wang(ms, data, cfg)
    x = data.x
    nuis_design = x[:, list(ms.complier.cols)]
    eff_design = ms.effect.design(x)

    d_contrast = np.tanh(nuis_design @ wang.nuisances["treatment_contrast"])
    d_odds = apply_link(Link.EXP,
                        nuis_design @ wang.nuisances["treatment_odds"])
    e_d0 = solve_complier_risks(d_contrast, d_odds, Scale.ADDITIVE).risk0

    theta_wang = np.tanh(eff_design @ wang.alpha)
    y_odds = apply_link(Link.EXP, nuis_design @ wang.nuisances["outcome_odds"])
    e_y0 = solve_complier_risks(theta_wang * d_contrast, y_odds,
                                Scale.ADDITIVE).risk0

    curve, pi, gamma_report = _instrument_fit(ms, data, cfg)
    f_z = np.where(data.z == 1, pi, 1.0 - pi)
    signed = (2.0 * data.z.astype(float) - 1.0) / f_z
    y = data.y.astype(float)
    d = data.d.astype(float)

    def moment(alpha):
        theta = np.tanh(eff_design @ alpha)
        resid = y - d * theta - e_y0 + e_d0 * theta
        return (eff_design * (signed * resid)[:, None]).mean(axis=0)

    p = eff_design.shape[1]
    report = _solve_effect_moment(moment, [wang.alpha, np.zeros(p)], cfg)
    return FitResult(
        estimator="dru.wang",
        scale=ms.scale,
        alpha=report.solution,
        nuisances={"treatment_risk_untreated_arm": e_d0.mean(),
                   "instrument": curve.coef},
        converged=bool(report.converged and wang.converged
                       and gamma_report.converged),
        criterion=report.objective_or_residual,
        diagnostics={"message": report.message},
    )


# ---------------------------------------------------------------------------
# Compliance-weighted least squares


def fit_ls_abadie(ms: ModelSet, data: Dataset,
                  cfg: OptimConfig = OptimConfig()) -> FitResult:
    """Weighted least squares under compliance weights.

    Rows are reweighted so that, in expectation, only compliers
    contribute; the outcome model is the effect curve for the treated
    plus (additive) or times (multiplicative) a logistic baseline.  The
    fitted propensity is clipped away from 0 and 1 before entering the
    weights.
    """
    x = data.x
    curve, pi, gamma_report = _instrument_fit(ms, data, cfg)
    pi_c = np.clip(pi, 1e-4, 1.0 - 1e-4)
    clipped = int(np.sum(pi != pi_c))
    z = data.z.astype(float)
    d = data.d.astype(float)
    y = data.y.astype(float)
    w = 1.0 - d * (1.0 - z) / (1.0 - pi_c) - (1.0 - d) * z / pi_c

    eff_design = ms.effect.design(x)
    nuis_design = x[:, list(ms.complier.cols)]
    p = eff_design.shape[1]
    additive = ms.scale is Scale.ADDITIVE

    def obj_batch(block):
        block = np.atleast_2d(np.asarray(block, dtype=float))
        theta = apply_link(ms.effect.link, block[:, :p] @ eff_design.T)
        mu = expit(block[:, p:] @ nuis_design.T)
        if additive:
            m = d * theta + mu
        else:
            m = np.where(d > 0, theta * mu, mu)
        return np.mean(w * (y - m) ** 2, axis=1)

    vg = fd_value_and_grad(obj_batch)
    start = np.zeros(p + nuis_design.shape[1])
    report = minimize_smooth(vg, start, cfg)
    if not report.converged:
        rng = np.random.default_rng(cfg.seed)
        best = report
        for _ in range(max(0, cfg.restarts)):
            rep = minimize_smooth(vg, start + rng.normal(scale=0.5,
                                                         size=start.shape),
                                  cfg)
            if rep.converged:
                best = rep
                break
            if rep.objective_or_residual < best.objective_or_residual:
                best = rep
        report = best

    return FitResult(
        estimator="ls.abadie",
        scale=ms.scale,
        alpha=report.solution[:p],
        nuisances={"baseline": report.solution[p:],
                   "instrument": curve.coef},
        converged=bool(report.converged and gamma_report.converged),
        criterion=report.objective_or_residual,
        diagnostics={"clipped_propensities": clipped,
                     "message": report.message},
    )


# ---------------------------------------------------------------------------
# Naive conditional contrast


def fit_mle_crude(ms: ModelSet, data: Dataset,
                  cfg: OptimConfig = OptimConfig()) -> FitResult:
    """Conditional-on-treatment outcome contrast; ignores confounding.

    Fits the effect link to the observed treated-versus-untreated outcome
    contrast given X, with a log-linear odds-product curve on the same
    columns.  A plain logistic fit of treatment on X is reported alongside
    for reference.  Covariate misspecification scenarios do not apply:
    every model term uses the effect-curve columns.
    """
    x = data.x
    eff_design = ms.effect.design(x)
    rd = fit_rdlink(data.y, data.d, eff_design, eff_design, ms.scale, cfg)
    d_rep = fit_logistic(data.d, eff_design, cfg)
    return FitResult(
        estimator="mle.crude",
        scale=ms.scale,
        alpha=rd.contrast_coef,
        nuisances={"outcome_odds": rd.odds_coef,
                   "treatment": d_rep.solution},
        converged=bool(rd.converged),
        criterion=rd.nll,
        diagnostics={"treatment_converged": d_rep.converged,
                     "message": rd.message},
    )
