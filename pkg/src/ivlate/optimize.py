"""Deterministic numerical engines: smooth minimization, moment-equation
solving, logistic and least-squares fits.

Everything here is plain numpy and fully deterministic given its inputs;
randomness enters only through the multi-start jitter of ``solve_moment``,
seeded from the config.  Objectives are allowed to return non-finite
values away from their domain; the searches treat those points as
uphill and report failure instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .params import DomainError

__all__ = [
    "VAR_FLOOR",
    "SEPARATION_CAP",
    "OptimConfig",
    "SolveReport",
    "minimize_smooth",
    "solve_moment",
    "fit_logistic",
    "fit_least_squares",
    "floored_values",
    "fd_value_and_grad",
]

# Fitted variances and variance-like weights are floored here when consumed.
VAR_FLOOR = 1e-6
# Logistic coefficients beyond this sup-norm are treated as separation.
SEPARATION_CAP = 30.0

_ARMIJO = 1e-4
_MIN_STEP = 1e-14


@dataclass(frozen=True)
class OptimConfig:
    max_iter: int = 300
    grad_tol: float = 1e-5
    step_tol: float = 1e-12
    restarts: int = 3
    seed: int = 0


@dataclass(frozen=True)
class SolveReport:
    solution: np.ndarray
    objective_or_residual: float
    converged: bool
    iterations: int
    message: str


def fd_value_and_grad(batch_fun, h: float = 1e-6):
    """Turn a batched objective into a (value, gradient) callable.

    ``batch_fun`` maps an (m, k) coefficient block to m objective values;
    the gradient is taken by central differences with per-coordinate step
    ``h * max(1, |x_i|)``, all 2k+1 evaluations in one batch.
    """

    def value_and_grad(x):
        x = np.asarray(x, dtype=float)
        k = x.size
        steps = h * np.maximum(1.0, np.abs(x))
        block = np.tile(x, (2 * k + 1, 1))
        block[np.arange(1, k + 1), np.arange(k)] += steps
        block[np.arange(k + 1, 2 * k + 1), np.arange(k)] -= steps
        values = np.asarray(batch_fun(block), dtype=float)
        center = values[0]
        fwd = values[1:k + 1]
        bwd = values[k + 1:]
        with np.errstate(invalid="ignore"):
            grad = (fwd - bwd) / (2.0 * steps)
        # Fall back to one-sided differences on a domain edge.
        if np.isfinite(center):
            only_fwd = np.isfinite(fwd) & ~np.isfinite(bwd)
            only_bwd = ~np.isfinite(fwd) & np.isfinite(bwd)
            grad[only_fwd] = (fwd[only_fwd] - center) / steps[only_fwd]
            grad[only_bwd] = (center - bwd[only_bwd]) / steps[only_bwd]
        return center, grad

    return value_and_grad


def minimize_smooth(objective, x0, cfg: OptimConfig = OptimConfig()) -> SolveReport:
    """Quasi-Newton (BFGS) descent with backtracking line search.

    ``objective(x)`` returns ``(value, gradient)``.  Convergence means the
    gradient sup-norm dropped to ``cfg.grad_tol`` or below; a stall (step
    below ``cfg.step_tol`` or an exhausted line search) returns the best
    point found with ``converged=False`` unless the gradient already
    qualifies.
    """
    x = np.asarray(x0, dtype=float).copy()
    k = x.size
    f, g = objective(x)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        return SolveReport(x, float(f), False, 0,
                           "objective not finite at the starting point")

    hinv = np.eye(k)
    message = "iteration budget exhausted"
    converged = False
    iterations = 0

    for iterations in range(1, cfg.max_iter + 1):
        if np.max(np.abs(g)) <= cfg.grad_tol:
            converged = True
            message = "gradient tolerance reached"
            iterations -= 1
            break

        direction = -hinv @ g
        slope = float(direction @ g)
        if not np.isfinite(slope) or slope >= 0.0:
            hinv = np.eye(k)
            direction = -g
            slope = float(direction @ g)

        t = 1.0
        f_new = np.inf
        while t >= _MIN_STEP:
            cand = x + t * direction
            f_new, g_new = objective(cand)
            if np.isfinite(f_new) and f_new <= f + _ARMIJO * t * slope:
                break
            t *= 0.5
        else:
            message = "line search failed"
            break

        step = t * direction
        if not np.all(np.isfinite(g_new)):
            x = cand
            f = f_new
            message = "gradient not finite at accepted point"
            break

        s_y = g_new - g
        x, f = cand, f_new
        sy = float(step @ s_y)
        if sy > 1e-12 * np.linalg.norm(step) * np.linalg.norm(s_y):
            rho = 1.0 / sy
            left = np.eye(k) - rho * np.outer(step, s_y)
            hinv = left @ hinv @ left.T + rho * np.outer(step, step)
        g = g_new

        if np.max(np.abs(step)) <= cfg.step_tol * max(1.0, np.max(np.abs(x))):
            message = "step size underflow"
            break

    if not converged and np.all(np.isfinite(g)) \
            and np.max(np.abs(g)) <= cfg.grad_tol:
        converged = True
        message = "gradient tolerance reached"

    return SolveReport(x, float(f), converged, iterations, message)


def _fd_jacobian(moment, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    m0 = np.asarray(moment(x), dtype=float)
    jac = np.empty((m0.size, x.size))
    for j in range(x.size):
        step = h * max(1.0, abs(x[j]))
        hi = x.copy()
        lo = x.copy()
        hi[j] += step
        lo[j] -= step
        jac[:, j] = (np.asarray(moment(hi)) - np.asarray(moment(lo))) \
            / (2.0 * step)
    return jac


def _moment_descent(moment, x0, cfg: OptimConfig):
    """One start: damped Gauss-Newton on ||m||^2 with Newton polish."""
    x = np.asarray(x0, dtype=float).copy()
    m = np.asarray(moment(x), dtype=float)
    if not np.all(np.isfinite(m)):
        return SolveReport(x, np.inf, False, 0,
                           "moment not finite at the starting point")
    best_norm = float(np.max(np.abs(m)))

    message = "iteration budget exhausted"
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iter + 1):
        norm = float(np.max(np.abs(m)))
        if norm <= cfg.grad_tol:
            converged = True
            message = "residual tolerance reached"
            iterations -= 1
            break

        jac = _fd_jacobian(moment, x)
        if not np.all(np.isfinite(jac)):
            message = "jacobian not finite"
            break
        step, *_ = np.linalg.lstsq(jac, -m, rcond=None)

        sq = float(m @ m)
        t = 1.0
        accepted = False
        with np.errstate(over="ignore"):
            while t >= _MIN_STEP:
                cand = x + t * step
                m_new = np.asarray(moment(cand), dtype=float)
                if np.all(np.isfinite(m_new)) \
                        and float(m_new @ m_new) <= (1.0 - _ARMIJO * t) * sq:
                    accepted = True
                    break
                t *= 0.5
        if not accepted:
            # Levenberg fallback: damp the normal equations instead.
            jtj = jac.T @ jac
            lam = 1e-4 * (np.trace(jtj) / max(1, jtj.shape[0]) + 1.0)
            for _ in range(12):
                try:
                    damped = np.linalg.solve(
                        jtj + lam * np.eye(jtj.shape[0]), -jac.T @ m)
                except np.linalg.LinAlgError:
                    break
                cand = x + damped
                m_new = np.asarray(moment(cand), dtype=float)
                if np.all(np.isfinite(m_new)) and float(m_new @ m_new) < sq:
                    accepted = True
                    break
                lam *= 10.0
            if not accepted:
                message = "no descent direction on the squared residual"
                break

        rel_step = np.max(np.abs(cand - x)) / max(1.0, np.max(np.abs(x)))
        x, m = cand, m_new
        best_norm = float(np.max(np.abs(m)))
        if rel_step <= cfg.step_tol:
            message = "step size underflow"
            break

    if np.max(np.abs(m)) <= cfg.grad_tol:
        converged = True
        message = "residual tolerance reached"

    return SolveReport(x, float(np.max(np.abs(m))), converged, iterations,
                       message)


def solve_moment(moment, x0, cfg: OptimConfig = OptimConfig()) -> SolveReport:
    """Root of a square or stacked moment system.

    Runs a damped Gauss-Newton search on the squared residual from ``x0``
    and, if that start fails to converge, from ``cfg.restarts`` seeded
    jitters of ``x0``.  Convergence means the residual sup-norm reached
    ``cfg.grad_tol``; the best report (smallest residual) is returned
    either way.
    """
    x0 = np.asarray(x0, dtype=float)
    best = _moment_descent(moment, x0, cfg)
    if best.converged:
        return best

    rng = np.random.default_rng(cfg.seed)
    for _ in range(max(0, cfg.restarts)):
        start = x0 + rng.normal(scale=0.5, size=x0.shape) \
            * (1.0 + np.abs(x0))
        rep = _moment_descent(moment, start, cfg)
        if rep.converged:
            return rep
        if rep.objective_or_residual < best.objective_or_residual:
            best = rep
    return best


def fit_logistic(y, design, cfg: OptimConfig = OptimConfig()) -> SolveReport:
    """Bernoulli maximum likelihood by iteratively reweighted least squares.

    The returned coefficients satisfy one further IRLS step to within
    1e-8 on regular problems.  Separated data are detected by the
    coefficient sup-norm crossing ``SEPARATION_CAP``; the coefficients are
    capped there and the report message flags it.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(design, dtype=float)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise DomainError("design must be (n, k) with matching outcome")
    if np.any((y != 0) & (y != 1)):
        raise DomainError("logistic outcome must be binary")
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise DomainError("design matrix is rank deficient")

    beta = np.zeros(x.shape[1])
    message = "iteration budget exhausted"
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iter + 1):
        lp = x @ beta
        mu = expit(lp)
        w = np.maximum(mu * (1.0 - mu), 1e-10)
        z = lp + (y - mu) / w
        sw = np.sqrt(w)
        beta_new, *_ = np.linalg.lstsq(x * sw[:, None], z * sw, rcond=None)
        shift = np.max(np.abs(beta_new - beta))
        beta = beta_new
        if np.max(np.abs(beta)) > SEPARATION_CAP:
            beta = np.clip(beta, -SEPARATION_CAP, SEPARATION_CAP)
            converged = True
            message = "separation detected; coefficients capped"
            break
        if shift <= 1e-10:
            converged = True
            message = "IRLS fixed point reached"
            break

    mu = expit(x @ beta)
    nll = -float(np.sum(y * np.log(np.maximum(mu, 1e-300))
                        + (1.0 - y) * np.log(np.maximum(1.0 - mu, 1e-300))))
    return SolveReport(beta, nll, converged, iterations, message)


def fit_least_squares(targets, design, positivity: bool = False) -> SolveReport:
    """Ordinary least squares.

    ``positivity`` does not constrain the coefficients; it signals that
    consumers will pass the fitted values through ``floored_values`` so
    the fit can be used as a variance model.
    """
    y = np.asarray(targets, dtype=float)
    x = np.asarray(design, dtype=float)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise DomainError("design must be (n, k) with matching targets")
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise DomainError("design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    rmse = float(np.sqrt(np.mean((y - x @ coef) ** 2)))
    note = "OLS fit (positivity floor applies on consumption)" if positivity \
        else "OLS fit"
    return SolveReport(coef, rmse, True, 1, note)


def floored_values(design, coef, floor: float = VAR_FLOOR) -> np.ndarray:
    """Fitted values clipped from below; use for variance-like fits."""
    return np.maximum(np.asarray(design, dtype=float) @ coef, floor)
