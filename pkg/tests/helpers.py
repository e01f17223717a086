"""Shared independent oracles for the test suite.

Everything here recomputes target quantities by a different route than the
package (bisection instead of closed forms, vertex enumeration instead of
interval algebra, finite differences instead of hand gradients) so the two
sides can disagree.
"""

from __future__ import annotations

import numpy as np

from ivlate.params import Scale


def bisect_complier_risk0(effect, odds_product, scale, iters=200):
    """Untreated complier risk by bisection on the defining system.

    Additive: g(p0) = (p0 + theta) p0 - op (1 - p0 - theta)(1 - p0) is
    increasing on the bracket [max(0, -theta), min(1, 1 - theta)].
    Multiplicative: g(p0) = theta p0^2 - op (1 - theta p0)(1 - p0) on
    [0, min(1, 1/theta)].  Vectorized over broadcastable inputs.
    """
    theta = np.asarray(effect, dtype=float)
    op = np.asarray(odds_product, dtype=float)
    theta, op = np.broadcast_arrays(theta, op)

    if scale is Scale.ADDITIVE:
        lo = np.maximum(0.0, -theta)
        hi = np.minimum(1.0, 1.0 - theta)

        def g(p0):
            return (p0 + theta) * p0 - op * (1.0 - p0 - theta) * (1.0 - p0)
    else:
        th = np.maximum(theta, 1e-10)
        lo = np.zeros_like(th)
        with np.errstate(divide="ignore"):
            hi = np.minimum(1.0, 1.0 / th)

        def g(p0):
            return th * p0 ** 2 - op * (1.0 - th * p0) * (1.0 - p0)

    lo = lo.copy()
    hi = hi.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pos = g(mid) > 0.0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    return 0.5 * (lo + hi)


def vertex_delta_range(mean, pi):
    """Range of w1 - w0 over {(w1, w0) in [0,1]^2 : pi w1 + (1-pi) w0 = mean}.

    The feasible set is a segment; its extreme points lie where the line
    crosses the faces of the unit square, so enumerating those crossings
    and taking min/max of w1 - w0 solves the linear program exactly.
    """
    eps = 1e-12
    cands = []
    for w1 in (0.0, 1.0):
        w0 = (mean - pi * w1) / (1.0 - pi)
        if -eps <= w0 <= 1.0 + eps:
            cands.append((w1, min(max(w0, 0.0), 1.0)))
    for w0 in (0.0, 1.0):
        w1 = (mean - (1.0 - pi) * w0) / pi
        if -eps <= w1 <= 1.0 + eps:
            cands.append((min(max(w1, 0.0), 1.0), w0))
    deltas = [w1 - w0 for w1, w0 in cands]
    return min(deltas), max(deltas)


def fd_gradient(fun, x, h=1e-6):
    """Central-difference gradient of a scalar function, one axis at a time."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (fun(hi) - fun(lo)) / (2.0 * step)
    return grad


def sorted_quantile(values, q):
    """Empirical quantile by explicit sorting + linear interpolation."""
    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    pos = q * (n - 1)
    lo = int(np.floor(pos))
    hi = int(np.ceil(pos))
    frac = pos - lo
    return v[lo] * (1.0 - frac) + v[hi] * frac
