"""Finite-sum objectives ``L(theta) = (1/n) sum_j L_j(theta)``.

Every problem exposes ``loss(theta, batch=None)`` and
``gradient(theta, batch=None)``; ``batch`` is an index array into ``range(n)``
and ``None`` means all terms.  Minibatches are drawn without replacement.
"""
from __future__ import annotations

import numpy as np

from ..param_space import Group, GroupLayout
from .flops import forward_flops
from .network import Affine, NetworkSpec, ReLU


def sample_batch(rng: np.random.Generator, n: int, b: int) -> np.ndarray:
    """Sorted indices of a size-``b`` minibatch drawn without replacement."""
    if not 1 <= b <= n:
        raise ValueError(f"batch size must lie in [1, {n}], got {b}")
    return np.sort(rng.choice(n, size=b, replace=False))


class FiniteSumProblem:
    """Base class; subclasses implement ``_loss_grad(theta, idx)``."""

    n: int
    layout: GroupLayout

    @property
    def dim(self) -> int:
        return self.layout.total_dim

    def _indices(self, batch):
        if batch is None:
            return slice(None)
        idx = np.asarray(batch, dtype=np.int64)
        if idx.size == 0 or idx.min() < 0 or idx.max() >= self.n:
            raise ValueError("batch indices out of range")
        return idx

    def loss(self, theta, batch=None) -> float:
        return self._loss_grad(self.layout.check(theta), self._indices(batch), False)[0]

    def gradient(self, theta, batch=None) -> np.ndarray:
        return self._loss_grad(self.layout.check(theta), self._indices(batch), True)[1]

    def loss_and_grad(self, theta, batch=None):
        return self._loss_grad(self.layout.check(theta), self._indices(batch), True)

    def term_gradient(self, theta, j: int) -> np.ndarray:
        return self.gradient(theta, [j])

    def min_preactivation(self, theta) -> float:
        return float("inf")

    def forward_flops(self, theta=None) -> int:
        raise NotImplementedError

    def accuracy(self, theta, batch=None):
        return None


def full_gradient(problem: FiniteSumProblem, theta) -> np.ndarray:
    return problem.gradient(theta)


def minibatch_gradient(problem: FiniteSumProblem, theta, batch) -> np.ndarray:
    return problem.gradient(theta, batch)


class QuadraticProblem(FiniteSumProblem):
    """``L_j(theta) = 0.5 (theta - c_j)^T A_j (theta - c_j)`` with PSD ``A_j``."""

    def __init__(self, A, c, layout=None):
        self.A = np.asarray(A, dtype=np.float64)
        self.c = np.asarray(c, dtype=np.float64)
        if self.A.ndim != 3 or self.c.shape != self.A.shape[:2] or self.A.shape[1] != self.A.shape[2]:
            raise ValueError("A must be (n, d, d) and c (n, d)")
        self.n, d = self.c.shape
        self.layout = layout if layout is not None else GroupLayout([Group("theta", d)])
        if self.layout.total_dim != d:
            raise ValueError("layout does not match problem dimension")

    @classmethod
    def isotropic(cls, c, layout=None):
        c = np.asarray(c, dtype=np.float64)
        if c.ndim == 1:
            c = c[:, None]
        n, d = c.shape
        return cls(np.broadcast_to(np.eye(d), (n, d, d)).copy(), c, layout)

    def _loss_grad(self, theta, idx, want_grad):
        r = theta[None, :] - self.c[idx]
        Ar = np.einsum("jab,jb->ja", self.A[idx], r)
        loss = float(0.5 * np.mean(np.einsum("ja,ja->j", r, Ar)))
        return loss, (Ar.mean(axis=0) if want_grad else None)

    @property
    def hessian(self) -> np.ndarray:
        return self.A.mean(axis=0)

    def minimizer(self) -> np.ndarray:
        rhs = np.einsum("jab,jb->a", self.A, self.c) / self.n
        return np.linalg.solve(self.hessian, rhs)

    def optimal_loss(self) -> float:
        return self.loss(self.minimizer())

    def smoothness(self) -> float:
        """Largest eigenvalue of the averaged Hessian."""
        return float(np.linalg.eigvalsh(self.hessian)[-1])

    def strong_convexity(self) -> float:
        return float(np.linalg.eigvalsh(self.hessian)[0])

    def term_smoothness(self) -> float:
        """Common Lipschitz constant of the per-term gradients."""
        return float(max(np.linalg.eigvalsh(a)[-1] for a in self.A))

    def forward_flops(self, theta=None) -> int:
        d = self.dim
        nnz = d if theta is None else int(np.count_nonzero(theta))
        return 2 * d * nnz


def make_quadratic(n, d, seed, cond=10.0, layout=None) -> QuadraticProblem:
    """Random strongly convex finite-sum quadratic with distinct term centres."""
    rng = np.random.default_rng(seed)
    A = np.empty((n, d, d))
    for j in range(n):
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        eig = np.exp(rng.uniform(0.0, np.log(cond), size=d))
        A[j] = (q * eig) @ q.T
        A[j] = 0.5 * (A[j] + A[j].T)
    c = rng.standard_normal((n, d))
    return QuadraticProblem(A, c, layout)


class LeastSquaresProblem(FiniteSumProblem):
    """``L_j(theta) = 0.5 (<x_j, theta> - y_j)^2``."""

    def __init__(self, X, y, layout=None):
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64).reshape(-1)
        self.n, d = self.X.shape
        if self.y.shape[0] != self.n:
            raise ValueError("X and y disagree on the number of samples")
        self.layout = layout if layout is not None else GroupLayout([Group("weight", d)])

    def _loss_grad(self, theta, idx, want_grad):
        Xb = self.X[idx]
        r = Xb @ theta - self.y[idx]
        loss = float(0.5 * np.mean(r * r))
        return loss, ((Xb.T @ r) / r.shape[0] if want_grad else None)

    def forward_flops(self, theta=None) -> int:
        nnz = self.dim if theta is None else int(np.count_nonzero(theta))
        return 2 * nnz


def make_sparse_regression(n, d, k_true, noise, seed):
    """Gaussian design with a ``k_true``-sparse ground truth of unit magnitudes.

    Draw order from ``default_rng(seed)``: design ``X``, support, signs, noise.
    Returns ``(problem, theta_true)``.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if not 0 <= k_true <= d:
        raise ValueError("k_true must lie in [0, d]")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    support = np.sort(rng.choice(d, size=k_true, replace=False))
    signs = rng.choice([-1.0, 1.0], size=k_true)
    theta_true = np.zeros(d)
    theta_true[support] = signs
    y = X @ theta_true + noise * rng.standard_normal(n)
    return LeastSquaresProblem(X, y), theta_true


class NetworkProblem(FiniteSumProblem):
    """Empirical loss of a :class:`NetworkSpec` on a fixed dataset."""

    def __init__(self, net: NetworkSpec, X, Y):
        self.net = net
        self.layout = net.layout
        self.X = np.asarray(X, dtype=np.float64)
        self.Y = np.asarray(Y)
        self.n = self.X.shape[0]
        if self.n == 0 or self.Y.shape[0] != self.n:
            raise ValueError("dataset must be nonempty with one target per sample")

    def _loss_grad(self, theta, idx, want_grad):
        if want_grad:
            return self.net.loss_and_grad(theta, self.X[idx], self.Y[idx])
        return float(self.net.losses(theta, self.X[idx], self.Y[idx]).mean()), None

    def min_preactivation(self, theta) -> float:
        return self.net.min_preactivation(theta, self.X)

    def forward_flops(self, theta=None) -> int:
        return forward_flops(self.net, theta)

    def predict(self, theta, X=None):
        out = self.net.forward(theta, self.X if X is None else X)
        return out.argmax(axis=1) if self.net.head == "softmax_ce" else out

    def accuracy(self, theta, batch=None, X=None, Y=None):
        if self.net.head != "softmax_ce":
            return None
        if X is None:
            idx = self._indices(batch)
            X, Y = self.X[idx], self.Y[idx]
        return float(np.mean(self.predict(theta, X) == np.asarray(Y).reshape(-1)))


def make_two_blobs(n, d, separation, seed, hidden=()):
    """Two Gaussian blobs at ``+-separation/2`` along a random unit direction.

    Labels are 0/1 (equivalently -1/+1).  ``hidden=()`` gives logistic
    regression; e.g. ``hidden=(16,)`` a one-hidden-layer ReLU network.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if d < 1:
        raise ValueError("d must be positive")
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    labels = rng.integers(0, 2, size=n)
    centres = np.outer(2.0 * labels - 1.0, 0.5 * separation * direction)
    X = centres + rng.standard_normal((n, d))
    layers = []
    width = d
    for h in hidden:
        layers += [Affine(width, int(h)), ReLU()]
        width = int(h)
    layers.append(Affine(width, 2))
    net = NetworkSpec((d,), layers, head="softmax_ce")
    return NetworkProblem(net, X, labels)
