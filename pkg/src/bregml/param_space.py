"""Flat parameter vectors split into contiguous named groups.

A parameter vector is a plain 1-D float64 ``numpy`` array; the
:class:`GroupLayout` that goes with it says which index range belongs to which
layer.  Convolution weights are stored in ``(c_out, c_in, k, k)`` order, so each
kernel slice ``K_ij`` is a contiguous run of ``k*k`` entries.
"""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from .errors import LayoutMismatch, NoConvLayers

ROLES = ("weight", "bias", "conv_kernel")


@dataclass(frozen=True)
class Group:
    name: str
    size: int
    role: str = "weight"
    conv_shape: tuple[int, int, int] | None = None  # (c_in, c_out, k)

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"group {self.name!r} must have size >= 1")
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role == "conv_kernel":
            if self.conv_shape is None:
                raise ValueError(f"conv group {self.name!r} needs conv_shape")
            c_in, c_out, k = self.conv_shape
            if c_in * c_out * k * k != self.size:
                raise ValueError(
                    f"conv group {self.name!r}: {c_in}*{c_out}*{k}^2 != {self.size}")

    @property
    def n_kernels(self) -> int:
        c_in, c_out, _ = self.conv_shape
        return c_in * c_out

    @property
    def kernel_size(self) -> int:
        return self.conv_shape[2] ** 2


class GroupLayout:
    """Ordered partition of ``[0, d)`` into contiguous groups."""

    def __init__(self, groups):
        self.groups = tuple(groups)
        if not self.groups:
            raise ValueError("layout needs at least one group")
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise ValueError("group names must be unique")
        sizes = np.array([g.size for g in self.groups], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        self.total_dim = int(self.offsets[-1])

    @classmethod
    def from_sizes(cls, sizes, role="weight"):
        return cls(Group(f"g{i}", int(s), role) for i, s in enumerate(sizes))

    def __len__(self):
        return len(self.groups)

    def __eq__(self, other):
        return isinstance(other, GroupLayout) and self.groups == other.groups

    def __hash__(self):
        return hash(self.groups)

    def __repr__(self):
        return f"GroupLayout(d={self.total_dim}, groups={[g.name for g in self.groups]})"

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    def slice(self, g: int) -> slice:
        return slice(int(self.offsets[g]), int(self.offsets[g + 1]))

    def index(self, name: str) -> int:
        for i, g in enumerate(self.groups):
            if g.name == name:
                return i
        raise KeyError(name)

    def group_ids(self) -> np.ndarray:
        """Group index of every coordinate."""
        return np.repeat(np.arange(len(self.groups)), self.sizes)

    def check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.total_dim:
            raise LayoutMismatch(
                f"expected vector of length {self.total_dim}, got shape {x.shape}")
        return x

    def split(self, x):
        x = self.check(x)
        return [x[self.slice(g)] for g in range(len(self.groups))]

    def conv_groups(self) -> list[int]:
        return [i for i, g in enumerate(self.groups) if g.role == "conv_kernel"]

    def kernels(self, x, g: int) -> np.ndarray:
        """Kernel slices of conv group ``g`` as a ``(c_out, c_in, k*k)`` view."""
        grp = self.groups[g]
        if grp.role != "conv_kernel":
            raise ValueError(f"group {grp.name!r} is not a conv kernel")
        c_in, c_out, k = grp.conv_shape
        return self.check(x)[self.slice(g)].reshape(c_out, c_in, k * k)

    def to_dict(self) -> dict:
        out = []
        for g in self.groups:
            entry = {"name": g.name, "size": g.size, "role": g.role}
            if g.conv_shape is not None:
                entry["conv_shape"] = list(g.conv_shape)
            out.append(entry)
        return {"groups": out}

    @classmethod
    def from_dict(cls, data: dict) -> "GroupLayout":
        groups = []
        for e in data["groups"]:
            shape = tuple(e["conv_shape"]) if e.get("conv_shape") is not None else None
            groups.append(Group(e["name"], int(e["size"]), e.get("role", "weight"), shape))
        return cls(groups)


def nonzero_groups(layout: GroupLayout, theta, tol: float = 0.0) -> np.ndarray:
    """Boolean mask over groups: True where some entry exceeds ``tol`` in magnitude."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    theta = layout.check(theta)
    peak = np.maximum.reduceat(np.abs(theta), layout.offsets[:-1])
    return peak > tol


def total_sparsity(theta) -> float:
    """Fraction of exactly-zero entries."""
    theta = np.asarray(theta)
    if theta.size == 0:
        return 0.0
    return float(np.count_nonzero(theta == 0)) / theta.size


def conv_sparsity(layout: GroupLayout, theta) -> float:
    """Fraction of (input, output) kernel slices that are entirely zero."""
    conv = layout.conv_groups()
    if not conv:
        raise NoConvLayers("layout has no conv_kernel groups")
    live = 0
    total = 0
    for g in conv:
        kern = layout.kernels(theta, g)
        live += int(np.count_nonzero(np.any(kern != 0, axis=-1)))
        total += layout.groups[g].n_kernels
    return 1.0 - live / total


def encode_array(x) -> str:
    return base64.b64encode(np.asarray(x, dtype="<f8").tobytes()).decode("ascii")


def decode_array(text: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype="<f8").astype(np.float64)


def checkpoint_dict(layout: GroupLayout, theta, **extra) -> dict:
    """JSON-ready checkpoint; extra arrays (e.g. ``v``) are encoded the same way."""
    out = {"layout": layout.to_dict(), "values": encode_array(layout.check(theta))}
    for key, arr in extra.items():
        out[key] = encode_array(layout.check(arr))
    return out


def save_checkpoint(path, layout: GroupLayout, theta, **extra):
    with open(path, "w") as fh:
        json.dump(checkpoint_dict(layout, theta, **extra), fh, indent=1, sort_keys=True)


def load_checkpoint(path):
    """Return ``(layout, theta, extras)`` from a checkpoint file."""
    with open(path) as fh:
        data = json.load(fh)
    layout = GroupLayout.from_dict(data["layout"])
    theta = layout.check(decode_array(data["values"]))
    extras = {k: layout.check(decode_array(v))
              for k, v in data.items() if k not in ("layout", "values")}
    return layout, theta, extras
