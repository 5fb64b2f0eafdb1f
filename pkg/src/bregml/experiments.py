"""Desk-scale experiments shared by the acceptance tests and the demos.

Each function runs one seed and returns plain numbers, so callers can
average over seeds and compare against thresholds.
"""
from __future__ import annotations

import numpy as np

from .initialization import InitScheme, layer_densities, run_streams, sparse_init, sparse_weights, weight_sparsity
from .models import make_sparse_regression, make_two_blobs
from .models.network import Affine, NetworkSpec, ReLU
from .optimizers import MLConfig, cosine, run
from .param_space import total_sparsity
from .regularizers import L1, RegularizerSpec, Zero, initial_state

RECOVERY = {"n": 200, "d": 500, "k_true": 10, "noise": 0.05, "lam": 1.0, "steps": 1000}
ABLATION = {"n": 200, "d": 10, "separation": 4.0, "hidden": (32,), "sparsity": 0.9,
            "tau": 0.1, "batch": 32, "steps": 1500}


def _f1(theta, truth) -> float:
    sup, ref = theta != 0, truth != 0
    denom = sup.sum() + ref.sum()
    return 1.0 if denom == 0 else float(2 * np.sum(sup & ref) / denom)


def sparse_recovery(seed, m=99, lam=None, steps=None) -> dict:
    """L1-regularized least squares from a zero start, exact gradients, cosine steps.

    ``tau0 = 1 / lambda_max(X^T X / n)``.  Returns support F1 against the
    ground truth and the final sparsity.
    """
    p = RECOVERY
    lam = p["lam"] if lam is None else lam
    steps = p["steps"] if steps is None else steps
    prob, truth = make_sparse_regression(p["n"], p["d"], p["k_true"], p["noise"], seed)
    L = float(np.linalg.eigvalsh(prob.X.T @ prob.X / prob.n)[-1])
    spec = RegularizerSpec.uniform(prob.layout, L1(lam), 1.0)
    cfg = MLConfig(m=m, tau=cosine(1.0 / L, steps), record=False)
    state = initial_state(spec, np.zeros(prob.dim))
    state, _, _ = run(prob, spec, cfg, state, steps, np.random.default_rng(seed))
    return {"f1": _f1(state.theta, truth), "sparsity": total_sparsity(state.theta),
            "loss": prob.loss(state.theta)}


def blobs_training(seed, lam, m, dense=False) -> dict:
    """One-hidden-layer MLP on two blobs with minibatch ML LinBreg.

    ``dense=True`` is the reference: no regularizer, dense init, plain SGD
    with the same steps and batches.
    """
    p = ABLATION
    prob = make_two_blobs(p["n"], p["d"], p["separation"], seed, hidden=p["hidden"])
    streams = run_streams(seed)
    if dense:
        spec = RegularizerSpec.uniform(prob.layout, Zero(), 1.0)
        theta0 = sparse_weights(prob.net, InitScheme(sparsity=0.0), streams)
        m = 0
    else:
        spec = RegularizerSpec.from_config(prob.layout, {"weights": {"term": "l1", "lam": lam}})
        theta0 = sparse_weights(prob.net, InitScheme(sparsity=p["sparsity"]), streams)
    cfg = MLConfig(m=m, tau=cosine(p["tau"], p["steps"]), batch_fine=p["batch"],
                   batch_coarse=p["batch"], record=False)
    state = initial_state(spec, theta0)
    state, _, _ = run(prob, spec, cfg, state, p["steps"], streams["batches"])
    return {"sparsity": total_sparsity(state.theta), "accuracy": prob.accuracy(state.theta),
            "loss": prob.loss(state.theta)}


def init_sparsity(seed, widths=(32, 32, 64, 128, 256), sparsity=0.99) -> list[tuple[int, float]]:
    """``(layer size, achieved weight sparsity)`` for every layer of an MLP.

    Consecutive widths give Affine layers of ``w_i * w_{i+1}`` weights.
    """
    layers = []
    for a, b in zip(widths[:-1], widths[1:]):
        layers += [Affine(a, b), ReLU()]
    net = NetworkSpec((widths[0],), layers[:-1])
    spec = RegularizerSpec.uniform(net.layout, Zero())
    state = sparse_init(net, spec, InitScheme("uniform", sparsity), seed)
    sizes = [net.layout.groups[gw].size for _, _, gw, _ in net.parametric()]
    assert np.allclose(layer_densities(net, InitScheme("uniform", sparsity)), 1.0 - sparsity)
    return list(zip(sizes, weight_sparsity(net, state.theta).tolist()))
