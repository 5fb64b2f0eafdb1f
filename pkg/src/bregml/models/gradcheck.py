"""Central finite-difference oracle for problem gradients."""
from __future__ import annotations

import warnings

import numpy as np

from ..errors import KinkProximity


def fd_gradient(f, theta, h=1e-6) -> np.ndarray:
    theta = np.array(theta, dtype=np.float64, copy=True)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + h
        fp = f(theta)
        theta[i] = old - h
        fm = f(theta)
        theta[i] = old
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


def fd_check(problem, theta, h=1e-6, batch=None) -> float:
    """Max over coordinates of ``|analytic - fd| / max(1, |analytic|)``.

    Warns with :class:`KinkProximity` when some ReLU pre-activation is within
    ``10 h`` of zero, where the central difference is unreliable.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    theta = problem.layout.check(theta)
    if problem.min_preactivation(theta) < 10 * h:
        warnings.warn("pre-activation within 10h of a ReLU kink", KinkProximity, stacklevel=2)
    analytic = problem.gradient(theta, batch)
    numeric = fd_gradient(lambda t: problem.loss(t, batch), theta, h)
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
