"""Estimator checks against independent oracles.

The likelihood is checked against a per-row loop over the structural map,
E(H|X) and the variance weight against brute-force enumeration over the
eight observed cells, and the optimizer output against scipy's BFGS on
the same objective.  Solved estimating equations are re-evaluated from
public pieces to confirm stationarity.
"""
from __future__ import annotations

import numpy as np
import pytest
import scipy.optimize

from helpers import fd_gradient
from ivlate.data import Dataset
from ivlate.estimators import (
    compute_H,
    expected_H,
    fit_dr,
    fit_dr_simple,
    fit_mle,
    joint_nll,
    optimal_omega,
)
from ivlate.modelspec import apply_link, eval_structural, theta_gradient
from ivlate.optimize import VAR_FLOOR, OptimConfig
from ivlate.params import Scale, StructuralPoint, inverse_map
from ivlate.simulate import DgpSpec, generate_dataset, scenario_modelset

CFG = OptimConfig(seed=3)


def random_points(scale: Scale, m: int, seed: int) -> StructuralPoint:
    rng = np.random.default_rng(seed)
    if scale is Scale.ADDITIVE:
        effect = rng.uniform(-0.9, 0.9, m)
    else:
        effect = rng.uniform(0.1, 3.0, m)
    return StructuralPoint(
        scale, effect,
        rng.uniform(0.05, 0.95, m), rng.uniform(0.05, 0.95, m),
        rng.uniform(0.05, 0.95, m), rng.uniform(0.05, 0.95, m),
        rng.uniform(0.2, 5.0, m))


def enumerate_eh(sp: StructuralPoint, z: int, power: int = 1) -> np.ndarray:
    """E(H^power | X, Z=z) by summing over the eight observed cells."""
    cells = inverse_map(sp).p
    total = np.zeros(cells.shape[:-3])
    for d in (0, 1):
        for y in (0, 1):
            h = compute_H(y, d, sp.effect, sp.scale)
            total = total + h ** power * cells[..., d, y, z]
    return total


class TestEffectRemovedOutcome:
    def test_additive_definition(self):
        h = compute_H([1, 0, 1], [1, 1, 0], 0.3, Scale.ADDITIVE)
        assert np.allclose(h, [0.7, -0.3, 1.0])

    def test_multiplicative_definition(self):
        h = compute_H([1, 0, 1], [1, 1, 0], 2.0, Scale.MULTIPLICATIVE)
        assert np.allclose(h, [0.5, 0.0, 1.0])

    def test_multiplicative_untreated_ignores_tiny_effect(self):
        h = compute_H([1, 1], [0, 0], 1e-300, Scale.MULTIPLICATIVE)
        assert np.allclose(h, [1.0, 1.0])


class TestExpectedH:
    def test_worked_value(self):
        sp = StructuralPoint(Scale.ADDITIVE, 0.2, 0.5, 0.5, 0.5, 0.5, 1.0)
        assert expected_H(sp) == pytest.approx(0.4, abs=1e-12)

    @pytest.mark.parametrize("scale", [Scale.ADDITIVE, Scale.MULTIPLICATIVE])
    def test_matches_enumeration_in_both_arms(self, scale):
        sp = random_points(scale, 300, seed=5)
        eh = expected_H(sp)
        assert np.allclose(eh, enumerate_eh(sp, 0), atol=1e-12)
        assert np.allclose(eh, enumerate_eh(sp, 1), atol=1e-12)

    def test_one_sided_reduces_to_untreated_outcome_mean(self):
        rng = np.random.default_rng(8)
        m = 100
        sp = StructuralPoint(
            Scale.ADDITIVE, rng.uniform(-0.5, 0.5, m),
            rng.uniform(0.05, 0.95, m), np.zeros(m),
            rng.uniform(0.05, 0.95, m), np.zeros(m),
            rng.uniform(0.2, 5.0, m))
        cells = inverse_map(sp).p
        e_y_z0 = cells[..., 0, 1, 0] + cells[..., 1, 1, 0]
        assert np.allclose(expected_H(sp), e_y_z0, atol=1e-12)


class TestOptimalOmega:
    @pytest.mark.parametrize("scale", [Scale.ADDITIVE, Scale.MULTIPLICATIVE])
    def test_matches_enumeration(self, scale):
        m = 200
        sp = random_points(scale, m, seed=9)
        rng = np.random.default_rng(10)
        pi = rng.uniform(0.2, 0.8, m)
        grad = rng.normal(size=(m, 2))

        omega, floored = optimal_omega(sp, pi, grad)
        assert floored == 0

        eh = expected_H(sp)
        v0 = enumerate_eh(sp, 0, power=2) - eh ** 2
        v1 = enumerate_eh(sp, 1, power=2) - eh ** 2
        combined = v1 / pi + v0 / (1.0 - pi)
        theta = sp.effect
        from ivlate.params import solve_complier_risks
        if scale is Scale.ADDITIVE:
            lead = -np.asarray(sp.complier_prob)
        else:
            risks = solve_complier_risks(theta, sp.odds_product, scale)
            lead = -risks.risk1 * np.asarray(sp.complier_prob) / theta ** 2
        expect = (lead / combined)[:, None] * grad
        assert np.allclose(omega, expect, rtol=1e-10, atol=1e-12)

    def test_floor_engages_on_degenerate_outcome(self):
        m = 4
        sp = StructuralPoint(Scale.ADDITIVE, np.zeros(m), np.zeros(m),
                             np.zeros(m), np.zeros(m), np.full(m, 0.5),
                             np.ones(m))
        omega, floored = optimal_omega(sp, np.full(m, 0.5), np.ones((m, 2)))
        assert floored == m
        assert np.all(np.isfinite(omega))
        # lead term is -complier_prob = 0, so the floored weight is exactly 0
        assert np.allclose(omega, 0.0)
        assert VAR_FLOOR > 0


class TestJointLikelihood:
    def setup_method(self):
        self.data = generate_dataset(DgpSpec(n=300, seed=21))
        self.ms = scenario_modelset(self.data, "bth", Scale.ADDITIVE)
        rng = np.random.default_rng(4)
        self.coefs = rng.normal(scale=0.3, size=self.ms.pack_coefs().shape)

    def loop_nll(self, ms, data):
        total = 0.0
        for i in range(data.n):
            sp = eval_structural(ms, data.x[i:i + 1])
            cells = inverse_map(sp).p[0]
            total -= np.log(cells[data.d[i], data.y[i], data.z[i]])
        return total

    def test_value_matches_row_loop(self):
        ms = self.ms.replace_coefs(self.coefs)
        value, _ = joint_nll(ms, self.data)
        assert value == pytest.approx(self.loop_nll(ms, self.data), rel=1e-10)

    def test_gradient_matches_independent_differences(self):
        ms = self.ms.replace_coefs(self.coefs)
        _, grad = joint_nll(ms, self.data)
        oracle = fd_gradient(
            lambda c: self.loop_nll(self.ms.replace_coefs(c), self.data),
            self.coefs, h=1e-5)
        assert np.allclose(grad, oracle, rtol=1e-4, atol=1e-4)

    def test_data_outside_model_support_gives_inf(self):
        # one-sided model assigns probability 0 to (d=1, z=0) rows
        assert np.any((self.data.d == 1) & (self.data.z == 0))
        ms = scenario_modelset(self.data, "bth", Scale.ADDITIVE,
                               one_sided=True)
        value, _ = joint_nll(ms, self.data)
        assert np.isinf(value)


class TestMle:
    def test_agrees_with_scipy_on_same_objective(self):
        data = generate_dataset(DgpSpec(n=1200, seed=33))
        ms = scenario_modelset(data, "bth", Scale.ADDITIVE)
        fit = fit_mle(ms, data, CFG)
        assert fit.converged

        def fun(c):
            return joint_nll(ms.replace_coefs(c), data)

        res = scipy.optimize.minimize(fun, ms.pack_coefs(), jac=True,
                                      method="BFGS")
        ours, _ = joint_nll(ms.replace_coefs(fit.model.pack_coefs()), data)
        assert ours <= res.fun + 1e-4
        assert np.allclose(fit.model.pack_coefs(), res.x, atol=5e-3)

    @pytest.mark.parametrize("scale", [Scale.ADDITIVE, Scale.MULTIPLICATIVE])
    def test_recovers_generating_coefficients(self, scale):
        spec = DgpSpec(n=8000, seed=14, scale=scale)
        data = generate_dataset(spec)
        ms = scenario_modelset(data, "bth", scale)
        fit = fit_mle(ms, data, CFG)
        assert fit.converged
        assert np.allclose(fit.alpha, spec.effect_coef, atol=0.2)
        assert np.allclose(fit.nuisances["complier"], spec.complier_coef,
                           atol=0.25)

    def test_one_sided_fit(self):
        spec = DgpSpec(n=4000, seed=6, one_sided=True)
        data = generate_dataset(spec)
        ms = scenario_modelset(data, "bth", Scale.ADDITIVE, one_sided=True)
        fit = fit_mle(ms, data, CFG)
        assert fit.converged
        assert set(fit.nuisances) == {"complier", "nt_risk", "odds_product"}
        assert np.allclose(fit.alpha, spec.effect_coef, atol=0.25)

    def test_deterministic(self):
        data = generate_dataset(DgpSpec(n=500, seed=2))
        ms = scenario_modelset(data, "bth", Scale.ADDITIVE)
        a = fit_mle(ms, data, CFG)
        b = fit_mle(ms, data, CFG)
        assert np.array_equal(a.alpha, b.alpha)
        assert a.criterion == b.criterion


def external_moment(fit, data, weight_mode):
    """Rebuild the estimating equation from public pieces at fit.alpha."""
    ms = fit.model
    x = data.x
    sp = eval_structural(ms, x)
    pi = ms.instrument.value(x)
    f_z = np.where(data.z == 1, pi, 1.0 - pi)
    signed = (2.0 * data.z - 1.0) / f_z
    theta = np.asarray(sp.effect)
    resid = compute_H(data.y, data.d, theta, ms.scale) - expected_H(sp)
    if weight_mode == "identity":
        omega = ms.effect.design(x)
    else:
        omega, _ = optimal_omega(sp, pi, theta_gradient(ms, x))
    return (omega * (signed * resid)[:, None]).mean(axis=0)


@pytest.fixture(scope="module")
def fits():
    data = generate_dataset(DgpSpec(n=2000, seed=44))
    ms = scenario_modelset(data, "bth", Scale.ADDITIVE)
    stage1 = fit_mle(ms, data, CFG)
    dru = fit_dr(ms, data, CFG, weight_mode="identity", stage1=stage1)
    drw = fit_dr(ms, data, CFG, weight_mode="optimal", stage1=stage1)
    return data, stage1, dru, drw


class TestDoublyRobust:

    def test_converged_and_tagged(self, fits):
        _, _, dru, drw = fits
        assert dru.converged and drw.converged
        assert dru.estimator == "dru"
        assert drw.estimator == "drw"

    def test_stationarity_recomputed_externally(self, fits):
        data, _, dru, drw = fits
        assert np.max(np.abs(external_moment(dru, data, "identity"))) < 1e-6
        assert np.max(np.abs(external_moment(drw, data, "optimal"))) < 1e-6

    def test_shared_stage_one_changes_nothing(self, fits):
        data, stage1, dru, _ = fits
        ms = scenario_modelset(data, "bth", Scale.ADDITIVE)
        solo = fit_dr(ms, data, CFG, weight_mode="identity")
        assert np.allclose(solo.alpha, dru.alpha, atol=1e-9)

    def test_wrong_nuisance_scenario_still_near_truth(self):
        spec = DgpSpec(n=12000, seed=55)
        data = generate_dataset(spec)
        ms = scenario_modelset(data, "psc", Scale.ADDITIVE)
        fit = fit_dr(ms, data, CFG, weight_mode="optimal")
        assert fit.converged
        assert np.allclose(fit.alpha, spec.effect_coef, atol=0.2)

    def test_wrong_instrument_scenario_still_near_truth(self):
        spec = DgpSpec(n=12000, seed=56)
        data = generate_dataset(spec)
        ms = scenario_modelset(data, "opc", Scale.ADDITIVE)
        fit = fit_dr(ms, data, CFG, weight_mode="optimal")
        assert fit.converged
        assert np.allclose(fit.alpha, spec.effect_coef, atol=0.2)

    def test_multiplicative_scale(self):
        spec = DgpSpec(n=6000, seed=58, scale=Scale.MULTIPLICATIVE)
        data = generate_dataset(spec)
        ms = scenario_modelset(data, "bth", Scale.MULTIPLICATIVE)
        dru = fit_dr(ms, data, CFG, weight_mode="identity")
        drw = fit_dr(ms, data, CFG, weight_mode="optimal")
        assert dru.converged and drw.converged
        assert np.allclose(dru.alpha, spec.effect_coef, atol=0.25)
        assert np.allclose(drw.alpha, spec.effect_coef, atol=0.25)
        assert np.max(np.abs(external_moment(dru, data, "identity"))) < 1e-6

    def test_rejects_unknown_weight_mode(self):
        data = generate_dataset(DgpSpec(n=100, seed=1))
        ms = scenario_modelset(data, "bth", Scale.ADDITIVE)
        with pytest.raises(ValueError):
            fit_dr(ms, data, CFG, weight_mode="slick")


class TestDrSimple:
    def test_stationarity_and_recovery(self):
        spec = DgpSpec(n=8000, seed=61)
        data = generate_dataset(spec)
        ms = scenario_modelset(data, "bth", Scale.ADDITIVE)
        fit = fit_dr_simple(ms, data, OptimConfig(grad_tol=1e-10, seed=3))
        assert fit.converged
        assert fit.estimator == "dru.simple"
        assert fit.criterion < 1e-9
        assert np.allclose(fit.alpha, spec.effect_coef, atol=0.2)

    def test_multiplicative_recovery(self):
        spec = DgpSpec(n=8000, seed=62, scale=Scale.MULTIPLICATIVE)
        data = generate_dataset(spec)
        ms = scenario_modelset(data, "bth", Scale.MULTIPLICATIVE)
        fit = fit_dr_simple(ms, data, CFG)
        assert fit.converged
        assert np.allclose(fit.alpha, spec.effect_coef, atol=0.25)

    def test_multiplicative_needs_both_treatment_arms(self):
        base = generate_dataset(DgpSpec(n=80, seed=3))
        data = Dataset(x=base.x, z=base.z, d=np.zeros(base.n, dtype=int),
                       y=base.y, colnames=base.colnames)
        ms = scenario_modelset(data, "bth", Scale.MULTIPLICATIVE)
        with pytest.raises(ValueError):
            fit_dr_simple(ms, data, CFG)
