"""Two-level transfer machinery: restriction, prolongation and the coarse problem.

A :class:`RestrictionMap` selects a sorted set of fine coordinates made of
whole selection units (layout groups by default, or the separable units of a
regularizer, i.e. scalars for L1).  ``restrict`` gathers those coordinates and
``prolong`` scatters them back with zeros elsewhere, so ``restrict(prolong(x))``
is the identity on the coarse space.
"""
from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from . import regularizers as regs
from .errors import LayoutMismatch
from .param_space import Group, GroupLayout
from .regularizers import BregmanState, GroupL2, RegularizerSpec


class RestrictionMap:
    """Coordinate selection ``R`` with ``P = R^T``."""

    def __init__(self, layout: GroupLayout, coords):
        coords = np.asarray(coords, dtype=np.int64)
        if coords.ndim != 1 or coords.size == 0:
            raise ValueError("restriction needs a nonempty 1-D coordinate list")
        if np.any(np.diff(coords) <= 0):
            raise ValueError("coordinates must be strictly increasing")
        if coords[0] < 0 or coords[-1] >= layout.total_dim:
            raise ValueError("coordinate out of range")
        self.layout = layout
        self.coords = coords
        self.coords.setflags(write=False)
        gid = layout.group_ids()[coords]
        self.selected, counts = np.unique(gid, return_counts=True)
        self.counts = counts
        groups = []
        for g, c in zip(self.selected, counts):
            fine = layout.groups[g]
            if c == fine.size:
                groups.append(fine)
            else:
                role = "weight" if fine.role == "conv_kernel" else fine.role
                groups.append(Group(fine.name, int(c), role))
        self.coarse_layout = GroupLayout(groups)

    @property
    def coarse_dim(self) -> int:
        return int(self.coords.size)

    @property
    def fine_dim(self) -> int:
        return self.layout.total_dim

    def restrict(self, x) -> np.ndarray:
        return self.layout.check(x)[self.coords]

    def prolong(self, xh) -> np.ndarray:
        xh = self.coarse_layout.check(xh)
        out = np.zeros(self.fine_dim)
        out[self.coords] = xh
        return out

    def lift(self, anchor, xh) -> np.ndarray:
        """``anchor + P(xh - R anchor)``, computed as an exact slice copy."""
        out = np.array(self.layout.check(anchor), copy=True)
        out[self.coords] = self.coarse_layout.check(xh)
        return out

    def mask(self) -> np.ndarray:
        m = np.zeros(self.fine_dim, dtype=bool)
        m[self.coords] = True
        return m

    def __repr__(self):
        return f"RestrictionMap(D={self.coarse_dim} of d={self.fine_dim}, groups={self.selected.tolist()})"


def build_restriction(layout: GroupLayout, theta, policy="nonzero", units=None):
    """Restriction for the current iterate, or ``None`` when nothing is selected.

    ``policy`` is ``"nonzero"`` (units holding a nonzero entry), ``"all"``, or
    an explicit sequence of layout group indices.  ``units`` gives the unit id
    of each coordinate (see :meth:`RegularizerSpec.unit_ids`); by default each
    layout group is one unit.
    """
    theta = layout.check(theta)
    if isinstance(policy, str):
        if policy == "all":
            return RestrictionMap(layout, np.arange(layout.total_dim))
        if policy != "nonzero":
            raise ValueError(f"unknown restriction policy {policy!r}")
        if units is None:
            units = layout.group_ids()
        units = np.asarray(units)
        if units.shape != theta.shape:
            raise LayoutMismatch("units must label every coordinate")
        active = np.zeros(int(units[-1]) + 1, dtype=bool)
        active[units[theta != 0]] = True
        coords = np.flatnonzero(active[units])
    elif isinstance(policy, Sequence):
        groups = list(policy)
        if sorted(set(groups)) != groups:
            raise ValueError("explicit groups must be strictly increasing")
        if groups and (groups[0] < 0 or groups[-1] >= len(layout)):
            raise ValueError("explicit group index out of range")
        coords = np.concatenate([np.arange(layout.offsets[g], layout.offsets[g + 1])
                                 for g in groups] or [np.zeros(0, np.int64)])
    else:
        raise ValueError(f"unknown restriction policy {policy!r}")
    if coords.size == 0:
        return None
    return RestrictionMap(layout, coords)


def restrict(R: RestrictionMap, x) -> np.ndarray:
    return R.restrict(x)


def prolong(R: RestrictionMap, xh) -> np.ndarray:
    return R.prolong(xh)


class CoarseObjective:
    """Coarse loss ``L(anchor + P(xh - R anchor))`` and its gradient.

    The anchor is copied on construction so the fine iterate can move on.
    Passing ``batch`` evaluates the minibatch version of the loss.
    """

    def __init__(self, problem, anchor, R: RestrictionMap):
        self.problem = problem
        self.R = R
        self.anchor = np.array(R.layout.check(anchor), copy=True)
        self.anchor.setflags(write=False)
        self.start = R.restrict(self.anchor)

    def lift(self, xh) -> np.ndarray:
        return self.R.lift(self.anchor, xh)

    def loss(self, xh, batch=None) -> float:
        return self.problem.loss(self.lift(xh), batch)

    def gradient(self, xh, batch=None) -> np.ndarray:
        return self.R.restrict(self.problem.gradient(self.lift(xh), batch))


def coarse_loss(problem, anchor, R: RestrictionMap) -> CoarseObjective:
    return CoarseObjective(problem, anchor, R)


def coarse_regularizer(spec: RegularizerSpec, R: RestrictionMap) -> RegularizerSpec:
    """Terms of the selected groups re-indexed onto the coarse layout."""
    terms = []
    for g, count in zip(R.selected, R.counts):
        term = spec.terms[g]
        if isinstance(term, GroupL2) and term.block is None and count != spec.layout.groups[g].size:
            raise ValueError(
                f"group {spec.layout.groups[g].name!r} is a single GroupL2 block "
                "and must be selected whole")
        terms.append(term)
    return RegularizerSpec(R.coarse_layout, terms, spec.delta)


def restrict_state(state: BregmanState, R: RestrictionMap, spec=None,
                   coarse_spec=None) -> BregmanState:
    """``(R theta, R v)``; feasibility is re-checked when ``spec`` is given."""
    out = BregmanState(R.restrict(state.theta), R.restrict(state.v))
    if regs.CHECKS and spec is not None:
        if coarse_spec is None:
            coarse_spec = coarse_regularizer(spec, R)
        regs.check_state(spec, state, "fine state")
        regs.check_state(coarse_spec, out, "restricted state")
    return out


def merge_state(fine: BregmanState, R: RestrictionMap, coarse_final: BregmanState,
                spec=None, coarse_spec=None) -> BregmanState:
    """Write the coarse result back into the fine state.

    Selected coordinates take the coarse values, all others keep the fine
    values bit for bit.
    """
    if regs.CHECKS and spec is not None:
        if coarse_spec is None:
            coarse_spec = coarse_regularizer(spec, R)
        regs.check_state(coarse_spec, coarse_final, "coarse state")
    out = BregmanState(R.lift(fine.theta, coarse_final.theta),
                       R.lift(fine.v, coarse_final.v))
    if regs.CHECKS and spec is not None:
        regs.check_state(spec, out, "merged state")
    return out


def coarse_criterion(grad, R: RestrictionMap, kappa: float, eps: float) -> bool:
    """Use the coarse model iff ``|R g| >= kappa |g|`` and ``|R g| > eps``."""
    grad = np.asarray(grad, dtype=np.float64)
    rg = _norm(R.restrict(grad))
    return rg >= kappa * _norm(grad) and rg > eps


def _norm(x) -> float:
    # rescaled so tiny entries do not square to zero
    s = float(np.max(np.abs(x))) if x.size else 0.0
    return 0.0 if s == 0.0 else s * float(np.linalg.norm(x / s))
