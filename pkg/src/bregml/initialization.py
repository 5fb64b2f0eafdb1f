"""Sparse, variance-preserving network initialization.

Dense weights are drawn uniformly on ``[-sqrt(6/fan_in), sqrt(6/fan_in)]``
(variance ``2/fan_in``), multiplied by a Bernoulli(``r_l``) mask and the
survivors rescaled, by ``1/sqrt(r_l)`` to keep the variance or by a fixed
factor.  Biases start at zero and are never masked.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleDensity
from .models.network import Affine, NetworkSpec
from .regularizers import BregmanState, RegularizerSpec, initial_state

MASKS = ("uniform", "er", "erk")
# Fixed alternative to the variance-preserving rescale (which is 10 at 99% sparsity).
FIXED_RESCALE = 5.0


@dataclass(frozen=True)
class InitScheme:
    mask: str = "uniform"
    sparsity: float = 0.99
    rescale: str | float = "variance"

    def __post_init__(self):
        if self.mask not in MASKS:
            raise ValueError(f"unknown mask scheme {self.mask!r}")
        if not 0.0 <= self.sparsity < 1.0:
            raise ValueError("target sparsity must lie in [0, 1)")
        if self.rescale != "variance" and not float(self.rescale) > 0:
            raise ValueError("rescale must be 'variance' or a positive factor")


def run_streams(seed) -> dict:
    """Independent generators for weight draws, mask draws and minibatches.

    Spawned from ``SeedSequence(seed)`` in the order weights, masks, batches.
    """
    weights, masks, batches = np.random.SeedSequence(seed).spawn(3)
    return {"weights": np.random.default_rng(weights),
            "masks": np.random.default_rng(masks),
            "batches": np.random.default_rng(batches)}


def mask_scores(net: NetworkSpec, kind: str = "er") -> np.ndarray:
    """Raw density score per parametric layer.

    ER: ``(n_in + n_out) / (n_in n_out)`` with channel counts for convolutions;
    ERK additionally folds the kernel in: ``(n_in + n_out + 2k) / (n_in n_out k^2)``.
    """
    if kind not in MASKS:
        raise ValueError(f"unknown mask scheme {kind!r}")
    out = []
    for _, layer, _, _ in net.parametric():
        if isinstance(layer, Affine):
            n_in, n_out, k = layer.n_in, layer.n_out, None
        else:
            n_in, n_out, k = layer.c_in, layer.c_out, layer.k
        if kind == "uniform":
            out.append(1.0)
        elif kind == "erk" and k is not None:
            out.append((n_in + n_out + 2 * k) / (n_in * n_out * k * k))
        else:
            out.append((n_in + n_out) / (n_in * n_out))
    return np.array(out)


def erk_scale(scores, sizes, sparsity: float) -> np.ndarray:
    """Densities ``min(1, alpha * score)`` whose size-weighted mean is ``1 - sparsity``.

    Layers that would exceed density 1 are clamped and ``alpha`` is re-solved
    over the rest until no new layer clamps.
    """
    scores = np.asarray(scores, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.float64)
    if scores.shape != sizes.shape or scores.size == 0:
        raise ValueError("need one score per layer")
    if np.any(scores <= 0) or np.any(sizes <= 0):
        raise InfeasibleDensity("scores and sizes must be positive")
    if not 0.0 <= sparsity < 1.0:
        raise InfeasibleDensity(f"target sparsity {sparsity} outside [0, 1)")
    target = (1.0 - sparsity) * sizes.sum()
    clamped = np.zeros(scores.size, dtype=bool)
    while True:
        free = ~clamped
        budget = target - sizes[clamped].sum()
        alpha = budget / (sizes[free] * scores[free]).sum()
        over = free & (alpha * scores > 1.0)
        if not over.any():
            break
        clamped |= over
        if clamped.all():
            break
    dens = np.where(clamped, 1.0, alpha * scores)
    if np.any(dens <= 0) or np.any(dens > 1.0 + 1e-12):
        raise InfeasibleDensity("could not reach the requested sparsity")
    return np.minimum(dens, 1.0)


def layer_densities(net: NetworkSpec, scheme: InitScheme) -> np.ndarray:
    sizes = [net.layout.groups[gw].size for _, _, gw, _ in net.parametric()]
    return erk_scale(mask_scores(net, scheme.mask), sizes, scheme.sparsity)


def rescale_factor(scheme: InitScheme, density: float) -> float:
    if density >= 1.0:
        return 1.0
    if scheme.rescale == "variance":
        return 1.0 / np.sqrt(density)
    return float(scheme.rescale)


def sparse_weights(net: NetworkSpec, scheme: InitScheme, seed) -> np.ndarray:
    """Initial parameter vector ``theta^(0)``."""
    streams = seed if isinstance(seed, dict) else run_streams(seed)
    theta = np.zeros(net.n_params)
    dens = layer_densities(net, scheme)
    for (i, layer, gw, _), r in zip(net.parametric(), dens):
        size = net.layout.groups[gw].size
        fan_in = layer.n_in if isinstance(layer, Affine) else layer.c_in * layer.k ** 2
        bound = np.sqrt(6.0 / fan_in)
        w = streams["weights"].uniform(-bound, bound, size=size)
        if r < 1.0:
            keep = streams["masks"].random(size) < r
            w = np.where(keep, w * rescale_factor(scheme, r), 0.0)
        theta[net.layout.slice(gw)] = w
    return theta


def sparse_init(net: NetworkSpec, spec: RegularizerSpec, scheme: InitScheme, seed) -> BregmanState:
    """``(theta^(0), v^(0))`` with ``v^(0)`` the minimal-norm subgradient."""
    if spec.layout != net.layout:
        raise ValueError("regularizer layout does not match the network")
    return initial_state(spec, sparse_weights(net, scheme, seed))


def weight_sparsity(net: NetworkSpec, theta) -> np.ndarray:
    """Fraction of zero weights per parametric layer (biases excluded)."""
    theta = net.layout.check(theta)
    return np.array([float(np.mean(theta[net.layout.slice(gw)] == 0))
                     for _, _, gw, _ in net.parametric()])
