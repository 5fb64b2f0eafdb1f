"""Forward-pass FLOP counts for affine and convolutional layers.

A multiply-add counts as 2 FLOPs and every bias add as 1.  In the sparse
count only nonzero weights (scalar entries for affine layers, kernel entries
for convolutions) contribute multiply-adds; bias adds are always counted.
Activations, pooling and normalization are not counted.
"""
from __future__ import annotations

import numpy as np

from .network import Affine, Conv2D, NetworkSpec


def layer_flops(net: NetworkSpec, theta=None) -> list[dict]:
    """Per-layer breakdown; ``theta=None`` gives the dense count."""
    if theta is not None:
        theta = net.layout.check(theta)
    rows = []
    for i, layer, gw, _ in net.parametric():
        size = net.layout.groups[gw].size
        nnz = size if theta is None else int(np.count_nonzero(theta[net.layout.slice(gw)]))
        if isinstance(layer, Affine):
            positions = 1
            bias = layer.n_out
        else:
            _, h, w = net.shapes[i + 1]
            positions = h * w
            bias = layer.c_out * h * w
        rows.append({"layer": i, "weights": size, "nonzero": nnz,
                     "flops": 2 * nnz * positions + bias})
    return rows


def forward_flops(net: NetworkSpec, theta=None) -> int:
    """Dense (``theta=None``) or sparse forward FLOPs for one sample."""
    return int(sum(r["flops"] for r in layer_flops(net, theta)))
