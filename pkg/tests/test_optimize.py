from __future__ import annotations

import numpy as np
import pytest
from scipy.optimize import minimize as scipy_minimize
from scipy.special import expit

from ivlate.optimize import (
    OptimConfig,
    SolveReport,
    fd_value_and_grad,
    fit_least_squares,
    fit_logistic,
    floored_values,
    minimize_smooth,
    solve_moment,
)
from ivlate.params import DomainError

RNG = np.random.default_rng(11)


def quadratic(x):
    center = np.array([1.0, -2.0, 0.5])
    diag = np.array([1.0, 4.0, 0.25])
    diff = x - center
    return float(diff @ (diag * diff)), 2.0 * diag * diff


def rosenbrock(x):
    a, b = x
    value = (1.0 - a) ** 2 + 100.0 * (b - a ** 2) ** 2
    grad = np.array([
        -2.0 * (1.0 - a) - 400.0 * a * (b - a ** 2),
        200.0 * (b - a ** 2),
    ])
    return value, grad


class TestMinimizeSmooth:
    def test_quadratic_exact(self):
        rep = minimize_smooth(quadratic, np.zeros(3))
        assert rep.converged
        assert np.allclose(rep.solution, [1.0, -2.0, 0.5], atol=1e-6)

    def test_rosenbrock(self):
        rep = minimize_smooth(rosenbrock, np.array([-1.2, 1.0]),
                              OptimConfig(max_iter=2000, grad_tol=1e-8))
        assert rep.converged
        assert np.allclose(rep.solution, [1.0, 1.0], atol=1e-6)

    def test_deterministic(self):
        a = minimize_smooth(rosenbrock, np.array([-1.2, 1.0]))
        b = minimize_smooth(rosenbrock, np.array([-1.2, 1.0]))
        assert np.array_equal(a.solution, b.solution)
        assert a.iterations == b.iterations

    def test_nonfinite_start_reports_failure(self):
        def bad(x):
            return np.inf, np.zeros_like(x)

        rep = minimize_smooth(bad, np.zeros(2))
        assert isinstance(rep, SolveReport)
        assert not rep.converged
        assert "not finite" in rep.message

    def test_nonfinite_region_is_avoided(self):
        # Finite only on a ball; minimum at the origin.
        def walled(x):
            if np.linalg.norm(x) > 2.0:
                return np.inf, np.full_like(x, np.nan)
            return float(x @ x), 2.0 * x

        rep = minimize_smooth(walled, np.array([1.5, -1.0]))
        assert rep.converged
        assert np.allclose(rep.solution, 0.0, atol=1e-6)

    def test_convergence_flag_tracks_gradient(self):
        rep = minimize_smooth(quadratic, np.zeros(3),
                              OptimConfig(max_iter=2))
        assert not rep.converged

    def test_fd_value_and_grad_matches_analytic(self):
        def batch(block):
            diff = block - np.array([1.0, -2.0, 0.5])
            return np.sum(diff ** 2 * np.array([1.0, 4.0, 0.25]), axis=1)

        vg = fd_value_and_grad(batch)
        for _ in range(10):
            x = RNG.normal(size=3)
            value, grad = vg(x)
            want_value, want_grad = quadratic(x)
            assert value == pytest.approx(want_value, rel=1e-12)
            assert np.allclose(grad, want_grad, rtol=1e-6, atol=1e-8)


class TestSolveMoment:
    def test_linear_system(self):
        a = np.array([[2.0, 1.0], [0.5, -3.0]])

        def moment(x):
            return a @ x - np.array([1.0, 2.0])

        rep = solve_moment(moment, np.zeros(2))
        assert rep.converged
        assert np.allclose(a @ rep.solution, [1.0, 2.0], atol=1e-8)

    def test_nonlinear_system(self):
        def moment(x):
            return np.array([
                expit(x[0]) - 0.25,
                np.tanh(x[1]) + expit(x[0]) - 0.75,
            ])

        rep = solve_moment(moment, np.zeros(2), OptimConfig(grad_tol=1e-10))
        assert rep.converged
        assert np.allclose(moment(rep.solution), 0.0, atol=1e-8)

    def test_restarts_rescue_bad_start(self):
        # Gradient of ||m||^2 vanishes at the start; jitter must escape.
        def moment(x):
            return np.array([x[0] ** 3 - 8.0])

        rep = solve_moment(moment, np.zeros(1),
                           OptimConfig(max_iter=200, restarts=5, seed=3))
        assert rep.converged
        assert rep.solution[0] == pytest.approx(2.0, abs=1e-6)

    def test_rootless_system_reports_failure(self):
        def moment(x):
            return np.array([x[0] ** 2 + 1.0])

        rep = solve_moment(moment, np.zeros(1))
        assert not rep.converged
        assert rep.objective_or_residual >= 1.0 - 1e-9

    def test_deterministic_across_calls(self):
        def moment(x):
            return np.array([np.cos(x[0]) - x[0]])

        a = solve_moment(moment, np.zeros(1), OptimConfig(seed=42))
        b = solve_moment(moment, np.zeros(1), OptimConfig(seed=42))
        assert np.array_equal(a.solution, b.solution)


class TestFitLogistic:
    def make_data(self, n=400):
        x = np.column_stack([np.ones(n), RNG.uniform(-1, 1, n),
                             RNG.normal(size=n)])
        beta = np.array([0.3, -1.2, 0.7])
        y = (RNG.random(n) < expit(x @ beta)).astype(float)
        return y, x

    def test_matches_scipy_mle(self):
        y, x = self.make_data()

        def nll_and_grad(beta):
            mu = expit(x @ beta)
            nll = -np.sum(y * np.log(mu) + (1 - y) * np.log1p(-mu))
            return nll, x.T @ (mu - y)

        oracle = scipy_minimize(nll_and_grad, np.zeros(3), jac=True,
                                method="BFGS",
                                options={"gtol": 1e-10}).x
        rep = fit_logistic(y, x)
        assert rep.converged
        assert np.allclose(rep.solution, oracle, atol=1e-6)

    def test_is_irls_fixed_point(self):
        y, x = self.make_data()
        beta = fit_logistic(y, x).solution
        mu = expit(x @ beta)
        w = mu * (1.0 - mu)
        z = x @ beta + (y - mu) / w
        sw = np.sqrt(w)
        again, *_ = np.linalg.lstsq(x * sw[:, None], z * sw, rcond=None)
        assert np.max(np.abs(again - beta)) < 1e-8

    def test_separation_is_flagged_and_capped(self):
        x = np.column_stack([np.ones(40), np.linspace(-1, 1, 40)])
        y = (x[:, 1] > 0).astype(float)
        rep = fit_logistic(y, x)
        assert "separation" in rep.message
        assert np.max(np.abs(rep.solution)) <= 30.0 + 1e-12

    def test_rank_deficient_design_rejected(self):
        x = np.column_stack([np.ones(20), np.ones(20)])
        y = (RNG.random(20) < 0.5).astype(float)
        with pytest.raises(DomainError):
            fit_logistic(y, x)

    def test_nonbinary_outcome_rejected(self):
        x = np.ones((5, 1))
        with pytest.raises(DomainError):
            fit_logistic(np.array([0.0, 1.0, 0.5, 0.0, 1.0]), x)


class TestFitLeastSquares:
    def test_matches_normal_equations(self):
        x = np.column_stack([np.ones(60), RNG.normal(size=60),
                             RNG.normal(size=60)])
        y = x @ np.array([1.0, -0.5, 2.0]) + RNG.normal(scale=0.1, size=60)
        rep = fit_least_squares(y, x)
        oracle = np.linalg.solve(x.T @ x, x.T @ y)
        assert np.allclose(rep.solution, oracle, atol=1e-10)

    def test_positivity_flooring_on_consumption(self):
        x = np.column_stack([np.ones(30), np.linspace(-2, 2, 30)])
        y = x[:, 1]  # fits straddle zero
        rep = fit_least_squares(y, x, positivity=True)
        fitted = floored_values(x, rep.solution)
        assert np.all(fitted >= 1e-6)
        assert "positivity" in rep.message
