"""Slow, independent reference computations used by the verification suites.

Nothing here is used on the training path.  Each oracle solves its problem
from the definition (numerical minimization, plain loops, enumeration,
bisection) rather than through the closed forms it is meant to check.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(f, lo, hi, iters=100):
    """Vectorized golden-section minimization of a unimodal ``f`` on ``[lo, hi]``.

    100 iterations shrink the bracket by ``0.618^100 < 1e-20``.

    ``f`` maps an array of points to an array of values of the same shape;
    ``lo`` and ``hi`` are arrays of bounds, one problem per entry.
    """
    a = np.array(lo, dtype=np.float64)
    b = np.array(hi, dtype=np.float64)
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        left = fc < fd
        # keep [a, d] where the left probe is lower, else [c, b]
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = b - GOLDEN * (b - a)
        d_new = a + GOLDEN * (b - a)
        c, d = c_new, d_new
        fc, fd = f(c), f(d)
    return 0.5 * (a + b)


def prox_l1_oracle(x, lam, delta):
    """``argmin_y (y - x)^2 / (2 delta) + lam |y|`` per coordinate, numerically."""
    x = np.asarray(x, dtype=np.float64)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), x.shape)
    delta = np.broadcast_to(np.asarray(delta, dtype=np.float64), x.shape)
    lo = np.minimum(x, 0.0) - 1.0
    hi = np.maximum(x, 0.0) + 1.0

    def f(y):
        return (y - x) ** 2 / (2.0 * delta) + lam * np.abs(y)

    y = golden_section(f, lo, hi)
    # the exact minimizer may sit on the kink at 0; compare against it directly
    return np.where(f(np.zeros_like(y)) <= f(y), 0.0, y)


def prox_group_oracle(x, lam, delta):
    """Block prox of ``lam sqrt(n) ||y||`` by a line search on ``||y||``.

    The minimizer is parallel to ``x``, so only its length ``s`` in
    ``[0, ||x||]`` is searched.
    """
    x = np.asarray(x, dtype=np.float64)
    nrm = float(np.linalg.norm(x))
    if nrm == 0.0:
        return np.zeros_like(x)
    w = lam * math.sqrt(x.size)

    def f(s):
        return (s - nrm) ** 2 / (2.0 * delta) + w * s

    s = float(golden_section(f, np.array([0.0]), np.array([nrm]))[0])
    if f(0.0) <= f(s):
        s = 0.0
    return (s / nrm) * x


def gd_trajectory(grad_fn, theta0, tau, steps):
    """Plain gradient descent, one row per iterate including the start."""
    theta = np.array(theta0, dtype=np.float64, copy=True)
    out = [theta.copy()]
    for _ in range(steps):
        theta = theta - tau * grad_fn(theta)
        out.append(theta.copy())
    return np.array(out)


def gd_minimum(problem, theta0, tol=1e-12, max_steps=200000):
    """Long-horizon GD until the gradient norm drops below ``tol``."""
    tau = 1.0 / problem.smoothness() if hasattr(problem, "smoothness") else 1e-2
    theta = np.array(theta0, dtype=np.float64, copy=True)
    for _ in range(max_steps):
        g = problem.gradient(theta)
        if np.linalg.norm(g) < tol:
            break
        theta = theta - tau * g
    return theta, problem.loss(theta)


def all_batches(n, b):
    return [np.array(c) for c in itertools.combinations(range(n), b)]


def enumerate_estimator(estimator, n, b):
    """Values of ``estimator(batch)`` over every size-``b`` subset of ``range(n)``.

    Returns ``(mean, variance)`` with variance ``E||g - mean||^2``.
    """
    vals = np.array([estimator(batch) for batch in all_batches(n, b)])
    mean = vals.mean(axis=0)
    var = float(np.mean(np.sum((vals - mean) ** 2, axis=1)))
    return mean, var


def bisect_density_scale(scores, sizes, sparsity, tol=1e-13):
    """Solve ``sum size * min(1, a * score) = (1 - sparsity) sum size`` for ``a`` by bisection."""
    scores = np.asarray(scores, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.float64)
    target = (1.0 - sparsity) * sizes.sum()

    def mass(a):
        return float(np.sum(sizes * np.minimum(1.0, a * scores)))

    lo, hi = 0.0, 1.0
    while mass(hi) < target:
        hi *= 2.0
        if hi > 1e300:
            raise ValueError("target density unreachable")
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if mass(mid) < target:
            lo = mid
        else:
            hi = mid
    return np.minimum(1.0, hi * scores)


def mean_density(densities, sizes) -> float:
    sizes = np.asarray(sizes, dtype=np.float64)
    return float(np.sum(np.asarray(densities) * sizes) / sizes.sum())
