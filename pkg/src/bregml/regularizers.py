"""Group-separable regularizers, their elastic-net envelope and proximal maps.

``J(theta) = sum_g J_g(theta_g)`` where each group carries one of

* :class:`Zero`    -- no penalty,
* :class:`L1`      -- ``lam * ||x||_1``,
* :class:`GroupL2` -- ``lam * sum_b sqrt(n_b) * ||x_b||_2`` over blocks ``b`` of
  the group (the whole group by default, or fixed-size blocks such as conv
  kernels).

The envelope is ``J_delta = J + ||.||^2 / (2 delta)``.  A linearized Bregman
state ``(theta, v)`` is feasible when ``v`` is a subgradient of ``J_delta`` at
``theta``, which is equivalent to ``theta == prox_{delta J}(delta v)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleInput, LayoutMismatch
from .param_space import GroupLayout

# Feasibility assertions; off under ``python -O``.
CHECKS = __debug__

FEASIBILITY_ATOL = 1e-12


@dataclass(frozen=True)
class Zero:
    name = "zero"

    def value(self, x):
        return 0.0

    def prox(self, x, delta):
        return np.array(x, dtype=np.float64, copy=True)

    def subgradient(self, x):
        return np.zeros_like(x)

    def unit_sizes(self, size):
        return np.ones(size, dtype=np.int64)


@dataclass(frozen=True)
class L1:
    lam: float
    name = "l1"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("L1 needs lam > 0")

    def value(self, x):
        return self.lam * float(np.abs(x).sum())

    def prox(self, x, delta):
        return np.sign(x) * np.maximum(np.abs(x) - delta * self.lam, 0.0)

    def subgradient(self, x):
        return self.lam * np.sign(x)

    def unit_sizes(self, size):
        return np.ones(size, dtype=np.int64)


@dataclass(frozen=True)
class GroupL2:
    """Block soft-shrinkage penalty; ``block=None`` treats the group as one block."""

    lam: float
    block: int | None = None
    name = "group_l2"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("GroupL2 needs lam > 0")
        if self.block is not None and self.block < 1:
            raise ValueError("block size must be positive")

    def _blocks(self, x):
        x = np.asarray(x, dtype=np.float64)
        b = x.size if self.block is None else self.block
        if x.size % b:
            raise LayoutMismatch(f"group of size {x.size} not divisible into blocks of {b}")
        return x.reshape(-1, b), b

    def value(self, x):
        xb, b = self._blocks(x)
        return self.lam * math.sqrt(b) * float(np.linalg.norm(xb, axis=1).sum())

    def prox(self, x, delta):
        xb, b = self._blocks(x)
        norms = np.linalg.norm(xb, axis=1)
        thr = delta * self.lam * math.sqrt(b)
        live = norms > thr
        factor = np.zeros_like(norms)
        factor[live] = 1.0 - thr / norms[live]
        out = xb * factor[:, None]
        out[~live] = 0.0
        return out.reshape(-1)

    def subgradient(self, x):
        xb, b = self._blocks(x)
        norms = np.linalg.norm(xb, axis=1)
        out = np.zeros_like(xb)
        nz = norms > 0
        out[nz] = self.lam * math.sqrt(b) * xb[nz] / norms[nz, None]
        return out.reshape(-1)

    def unit_sizes(self, size):
        b = size if self.block is None else self.block
        return np.full(size // b, b, dtype=np.int64)


TERMS = {"zero": Zero, "l1": L1, "group_l2": GroupL2}


@dataclass(frozen=True)
class RegularizerSpec:
    layout: GroupLayout
    terms: tuple
    delta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if len(self.terms) != len(self.layout):
            raise LayoutMismatch(
                f"{len(self.terms)} terms for {len(self.layout)} groups")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        for g, t in zip(self.layout.groups, self.terms):
            if isinstance(t, GroupL2):
                t._blocks(np.zeros(g.size))

    @classmethod
    def uniform(cls, layout, term, delta=1.0, bias=Zero()):
        """Same ``term`` on every weight/conv group, ``bias`` on bias groups."""
        terms = [bias if g.role == "bias" else term for g in layout.groups]
        return cls(layout, terms, delta)

    @classmethod
    def from_config(cls, layout: GroupLayout, cfg: dict) -> "RegularizerSpec":
        """Build from a config block.

        ``{"delta": 1.0, "weights": {...}, "bias": {...}, "groups": {name: {...}}}``
        where each term is ``{"term": "l1", "lam": 0.01}``; ``group_l2`` accepts
        ``"blocks": "group" | "kernel"``.
        """
        unknown = set(cfg) - {"delta", "weights", "bias", "groups"}
        if unknown:
            raise ValueError(f"unknown regularizer keys: {sorted(unknown)}")
        weights = cfg.get("weights", {"term": "zero"})
        bias = cfg.get("bias", {"term": "zero"})
        overrides = cfg.get("groups", {})
        for name in overrides:
            layout.index(name)
        terms = []
        for g in layout.groups:
            entry = overrides.get(g.name, bias if g.role == "bias" else weights)
            terms.append(_term_from_dict(entry, g))
        return cls(layout, terms, float(cfg.get("delta", 1.0)))

    def to_dict(self) -> dict:
        groups = {}
        for g, t in zip(self.layout.groups, self.terms):
            entry = {"term": t.name}
            if not isinstance(t, Zero):
                entry["lam"] = t.lam
            if isinstance(t, GroupL2) and t.block is not None:
                entry["block"] = t.block
            groups[g.name] = entry
        return {"delta": self.delta, "groups": groups}

    def unit_ids(self) -> np.ndarray:
        """Id of the smallest separable unit each coordinate belongs to.

        L1 and Zero groups split into scalars, GroupL2 into its blocks.
        Restriction operators select whole units.
        """
        sizes = np.concatenate([t.unit_sizes(g.size)
                                for g, t in zip(self.layout.groups, self.terms)])
        return np.repeat(np.arange(sizes.size), sizes)


def _term_from_dict(entry: dict, group):
    unknown = set(entry) - {"term", "lam", "blocks", "block"}
    if unknown:
        raise ValueError(f"unknown term keys: {sorted(unknown)}")
    kind = entry.get("term", "zero")
    if kind not in TERMS:
        raise ValueError(f"unknown regularizer term {kind!r}")
    if kind == "zero":
        return Zero()
    lam = float(entry["lam"])
    if kind == "l1":
        return L1(lam)
    block = entry.get("block")
    if entry.get("blocks", "group") == "kernel":
        if group.role != "conv_kernel":
            return GroupL2(lam)
        block = group.kernel_size
    return GroupL2(lam, block)


@dataclass(frozen=True)
class BregmanState:
    """Primal iterate ``theta`` and dual variable ``v`` of a linearized Bregman run."""

    theta: np.ndarray
    v: np.ndarray = field(repr=False)

    def copy(self):
        return BregmanState(self.theta.copy(), self.v.copy())


def _pieces(spec: RegularizerSpec, x):
    x = spec.layout.check(x)
    return [(t, x[spec.layout.slice(g)]) for g, t in enumerate(spec.terms)]


def eval_J(spec: RegularizerSpec, theta) -> float:
    return float(sum(t.value(xg) for t, xg in _pieces(spec, theta)))


def eval_J_delta(spec: RegularizerSpec, theta) -> float:
    theta = spec.layout.check(theta)
    return eval_J(spec, theta) + float(theta @ theta) / (2.0 * spec.delta)


def prox(spec: RegularizerSpec, x) -> np.ndarray:
    """``prox_{delta J}(x)``; callers usually pass ``x = delta * v``."""
    return np.concatenate([t.prox(xg, spec.delta) for t, xg in _pieces(spec, x)])


def mirror(spec: RegularizerSpec, v) -> np.ndarray:
    """Primal point of a dual variable: ``prox_{delta J}(delta v)``."""
    return prox(spec, spec.delta * spec.layout.check(v))


def feasibility_gap(spec: RegularizerSpec, theta, v) -> float:
    theta = spec.layout.check(theta)
    return float(np.max(np.abs(mirror(spec, v) - theta), initial=0.0))


def contains_subgradient(spec: RegularizerSpec, theta, v,
                         atol: float = FEASIBILITY_ATOL) -> bool:
    """Whether ``v`` lies in the subdifferential of ``J_delta`` at ``theta``."""
    try:
        return feasibility_gap(spec, theta, v) <= atol
    except LayoutMismatch:
        return False


def check_state(spec: RegularizerSpec, state: BregmanState, what="state"):
    gap = feasibility_gap(spec, state.theta, state.v)
    if not gap <= FEASIBILITY_ATOL:
        raise InfeasibleInput(f"{what}: prox(delta v) differs from theta by {gap:.3e}")


def initial_subgradient(spec: RegularizerSpec, theta) -> np.ndarray:
    """Minimal-norm selection ``theta/delta + p`` with ``p`` in dJ(theta)."""
    theta = spec.layout.check(theta)
    p = np.concatenate([t.subgradient(xg) for t, xg in _pieces(spec, theta)])
    return theta / spec.delta + p


def initial_state(spec: RegularizerSpec, theta) -> BregmanState:
    theta = np.array(spec.layout.check(theta), copy=True)
    return BregmanState(theta, initial_subgradient(spec, theta))


def bregman_div(spec: RegularizerSpec, theta_new, theta, p) -> float:
    """``J_delta(theta_new) - J_delta(theta) - <p, theta_new - theta>``.

    ``p`` must be a subgradient of ``J_delta`` at ``theta``; the value is then
    nonnegative up to rounding.
    """
    theta_new = spec.layout.check(theta_new)
    theta = spec.layout.check(theta)
    p = spec.layout.check(p)
    if CHECKS and not contains_subgradient(spec, theta, p):
        raise InfeasibleInput("p is not a subgradient of J_delta at theta")
    return eval_J_delta(spec, theta_new) - eval_J_delta(spec, theta) - float(p @ (theta_new - theta))


def sym_bregman(theta, theta_other, v, v_other) -> float:
    """Symmetrized divergence ``<v - v_other, theta - theta_other>``."""
    theta = np.asarray(theta, dtype=np.float64)
    theta_other = np.asarray(theta_other, dtype=np.float64)
    return float((np.asarray(v) - np.asarray(v_other)) @ (theta - theta_other))
