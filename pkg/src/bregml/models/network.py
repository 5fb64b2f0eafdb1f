"""Small feed-forward networks with hand-written reverse-mode gradients.

Layer vocabulary: :class:`Affine`, :class:`Conv2D` (stride 1, no padding) and
:class:`ReLU`.  An affine layer that follows a convolution flattens its input
in ``(c, h, w)`` order.  Parameters live in one flat vector whose layout has a
weight group and a bias group per parametric layer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..param_space import Group, GroupLayout


@dataclass(frozen=True)
class Affine:
    n_in: int
    n_out: int


@dataclass(frozen=True)
class Conv2D:
    c_in: int
    c_out: int
    k: int


@dataclass(frozen=True)
class ReLU:
    pass


HEADS = ("mse", "softmax_ce")


class NetworkSpec:
    """Layer stack plus loss head, with the induced parameter layout."""

    def __init__(self, input_shape, layers, head="softmax_ce"):
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        self.input_shape = tuple(int(s) for s in input_shape)
        self.layers = tuple(layers)
        self.head = head
        self.shapes = [self.input_shape]  # activation shape before each layer
        groups = []
        self.param_slices = {}
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Affine):
                if int(np.prod(shape)) != layer.n_in:
                    raise ValueError(f"layer {i}: expects {layer.n_in} inputs, got shape {shape}")
                groups.append(Group(f"layer{i}.weight", layer.n_in * layer.n_out, "weight"))
                groups.append(Group(f"layer{i}.bias", layer.n_out, "bias"))
                shape = (layer.n_out,)
            elif isinstance(layer, Conv2D):
                if len(shape) != 3 or shape[0] != layer.c_in:
                    raise ValueError(f"layer {i}: expects ({layer.c_in}, h, w), got {shape}")
                h, w = shape[1] - layer.k + 1, shape[2] - layer.k + 1
                if h < 1 or w < 1:
                    raise ValueError(f"layer {i}: kernel larger than input")
                groups.append(Group(f"layer{i}.weight", layer.c_in * layer.c_out * layer.k ** 2,
                                    "conv_kernel", (layer.c_in, layer.c_out, layer.k)))
                groups.append(Group(f"layer{i}.bias", layer.c_out, "bias"))
                shape = (layer.c_out, h, w)
            elif isinstance(layer, ReLU):
                pass
            else:
                raise TypeError(f"unsupported layer {layer!r}")
            self.shapes.append(shape)
        if not groups:
            raise ValueError("network has no parametric layers")
        self.output_shape = shape
        self.layout = GroupLayout(groups)

    @property
    def n_params(self) -> int:
        return self.layout.total_dim

    def parametric(self):
        """Yield ``(layer_index, layer, weight_group, bias_group)``."""
        g = 0
        for i, layer in enumerate(self.layers):
            if isinstance(layer, (Affine, Conv2D)):
                yield i, layer, g, g + 1
                g += 2

    def _params(self, theta):
        theta = self.layout.check(theta)
        out = {}
        for i, layer, gw, gb in self.parametric():
            w = theta[self.layout.slice(gw)]
            if isinstance(layer, Affine):
                w = w.reshape(layer.n_out, layer.n_in)
            else:
                w = w.reshape(layer.c_out, layer.c_in, layer.k, layer.k)
            out[i] = (w, theta[self.layout.slice(gb)])
        return out

    def forward(self, theta, X):
        """Network output for a batch ``X`` of shape ``(b, *input_shape)``."""
        out, _ = self._forward(self._params(theta), X)
        return out

    def _forward(self, params, X):
        a = np.asarray(X, dtype=np.float64)
        cache = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Affine):
                w, b = params[i]
                flat = a.reshape(a.shape[0], -1)
                cache.append(flat)
                a = flat @ w.T + b
            elif isinstance(layer, Conv2D):
                w, b = params[i]
                patches = np.lib.stride_tricks.sliding_window_view(a, (layer.k, layer.k), axis=(2, 3))
                cache.append((a.shape, patches))
                a = np.einsum("bchwij,ocij->bohw", patches, w, optimize=True) + b[None, :, None, None]
            else:
                cache.append(a)
                a = np.maximum(a, 0.0)
        return a, cache

    def head_loss(self, out, Y):
        """Per-sample losses and the gradient of their *sum* w.r.t. ``out``."""
        if self.head == "mse":
            Y = np.asarray(Y, dtype=np.float64).reshape(out.shape)
            r = out - Y
            return 0.5 * np.sum(r.reshape(r.shape[0], -1) ** 2, axis=1), r
        labels = np.asarray(Y, dtype=np.int64).reshape(-1)
        z = out - out.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        rows = np.arange(out.shape[0])
        grad = np.exp(logp)
        grad[rows, labels] -= 1.0
        return -logp[rows, labels], grad

    def loss_and_grad(self, theta, X, Y):
        """Mean loss over the batch and its gradient w.r.t. ``theta``."""
        params = self._params(theta)
        out, cache = self._forward(params, X)
        losses, dout = self.head_loss(out, Y)
        bsz = out.shape[0]
        grad = np.zeros(self.layout.total_dim)
        slot = {i: (gw, gb) for i, _, gw, gb in self.parametric()}
        d = dout / bsz
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if isinstance(layer, Affine):
                w, _ = params[i]
                flat = cache[i]
                gw, gb = slot[i]
                grad[self.layout.slice(gw)] = (d.T @ flat).reshape(-1)
                grad[self.layout.slice(gb)] = d.sum(axis=0)
                if i:
                    d = (d @ w).reshape((bsz,) + self.shapes[i])
            elif isinstance(layer, Conv2D):
                w, _ = params[i]
                in_shape, patches = cache[i]
                gw, gb = slot[i]
                grad[self.layout.slice(gw)] = np.einsum(
                    "bohw,bchwij->ocij", d, patches, optimize=True).reshape(-1)
                grad[self.layout.slice(gb)] = d.sum(axis=(0, 2, 3))
                if i:
                    dx = np.zeros(in_shape)
                    ho, wo = d.shape[2], d.shape[3]
                    for p in range(layer.k):
                        for q in range(layer.k):
                            dx[:, :, p:p + ho, q:q + wo] += np.einsum(
                                "bohw,oc->bchw", d, w[:, :, p, q], optimize=True)
                    d = dx
            else:
                d = d * (cache[i] > 0)
        return float(losses.mean()), grad

    def losses(self, theta, X, Y):
        out = self.forward(theta, X)
        return self.head_loss(out, Y)[0]

    def min_preactivation(self, theta, X) -> float:
        """Smallest ``|pre-activation|`` feeding any ReLU (inf without ReLUs)."""
        _, cache = self._forward(self._params(theta), X)
        vals = [np.abs(cache[i]).min() for i, layer in enumerate(self.layers)
                if isinstance(layer, ReLU)]
        return float(min(vals)) if vals else float("inf")

    def describe(self) -> dict:
        layers = []
        for layer in self.layers:
            if isinstance(layer, Affine):
                layers.append({"type": "affine", "n_in": layer.n_in, "n_out": layer.n_out})
            elif isinstance(layer, Conv2D):
                layers.append({"type": "conv2d", "c_in": layer.c_in, "c_out": layer.c_out, "k": layer.k})
            else:
                layers.append({"type": "relu"})
        return {"input_shape": list(self.input_shape), "layers": layers, "head": self.head}


def build_network(input_shape, layers, head="softmax_ce") -> NetworkSpec:
    """Network from a config-style layer list.

    Entries are ``{"type": "affine", "out": n}``, ``{"type": "conv2d",
    "out": c, "k": k}`` or ``{"type": "relu"}``; input sizes are inferred.
    """
    shape = tuple(input_shape)
    built = []
    for entry in layers:
        unknown = set(entry) - {"type", "out", "k", "n_in", "n_out", "c_in", "c_out"}
        if unknown:
            raise ValueError(f"unknown layer keys: {sorted(unknown)}")
        kind = entry["type"]
        if kind == "affine":
            n_in = int(np.prod(shape))
            n_out = int(entry.get("out", entry.get("n_out", 0)))
            built.append(Affine(n_in, n_out))
            shape = (n_out,)
        elif kind == "conv2d":
            if len(shape) != 3:
                raise ValueError("conv2d needs a (c, h, w) input")
            c_out, k = int(entry.get("out", entry.get("c_out", 0))), int(entry["k"])
            built.append(Conv2D(shape[0], c_out, k))
            shape = (c_out, shape[1] - k + 1, shape[2] - k + 1)
        elif kind == "relu":
            built.append(ReLU())
        else:
            raise ValueError(f"unknown layer type {kind!r}")
    return NetworkSpec(input_shape, built, head)
