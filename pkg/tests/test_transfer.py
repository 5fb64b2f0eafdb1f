import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bregml import regularizers as regs
from bregml.errors import LayoutMismatch
from bregml.models import QuadraticProblem, fd_gradient, make_quadratic
from bregml.param_space import Group, GroupLayout
from bregml.regularizers import L1, BregmanState, GroupL2, RegularizerSpec, Zero, eval_J
from bregml.transfer import (
    RestrictionMap,
    build_restriction,
    coarse_criterion,
    coarse_loss,
    coarse_regularizer,
    merge_state,
    prolong,
    restrict,
    restrict_state,
)
from bregml.verify import random_feasible_state

LAYOUT = GroupLayout.from_sizes([2, 1, 2])


def test_build_restriction_examples():
    R = build_restriction(LAYOUT, [0, 0, 7, 0, 0])
    assert R.selected.tolist() == [1] and R.coarse_dim == 1
    assert restrict(R, [0, 0, 7, 0, 0]).tolist() == [7.0]
    assert prolong(R, [9.0]).tolist() == [0, 0, 9, 0, 0]
    assert build_restriction(LAYOUT, np.zeros(5)) is None


def test_all_groups_is_identity():
    R = build_restriction(LAYOUT, np.zeros(5), "all")
    x = np.arange(5.0)
    assert R.selected.tolist() == [0, 1, 2]
    assert np.array_equal(restrict(R, x), x) and np.array_equal(prolong(R, x), x)


def test_explicit_policy_and_validation():
    R = build_restriction(LAYOUT, np.zeros(5), [0, 2])
    assert R.coords.tolist() == [0, 1, 3, 4]
    with pytest.raises(ValueError):
        build_restriction(LAYOUT, np.zeros(5), [2, 0])
    with pytest.raises(ValueError):
        build_restriction(LAYOUT, np.zeros(5), [3])
    with pytest.raises(ValueError):
        build_restriction(LAYOUT, np.zeros(5), "some")
    with pytest.raises(LayoutMismatch):
        restrict(R, np.zeros(4))
    with pytest.raises(LayoutMismatch):
        prolong(R, np.zeros(5))


def test_unit_restriction_selects_scalars_for_l1():
    spec = RegularizerSpec(LAYOUT, [L1(1.0), Zero(), GroupL2(1.0)])
    R = build_restriction(LAYOUT, [0, 3, 0, 1, 0], "nonzero", spec.unit_ids())
    assert R.coords.tolist() == [1, 3, 4]
    assert R.selected.tolist() == [0, 2]
    cspec = coarse_regularizer(spec, R)
    assert cspec.terms == (L1(1.0), GroupL2(1.0)) and cspec.layout.sizes.tolist() == [1, 2]


def test_partial_whole_group_block_rejected():
    spec = RegularizerSpec(LAYOUT, [GroupL2(1.0), Zero(), Zero()])
    R = RestrictionMap(LAYOUT, [0, 2])
    with pytest.raises(ValueError):
        coarse_regularizer(spec, R)


@settings(max_examples=100)
@given(st.integers(0, 2 ** 32 - 1))
def test_projection_identities(seed):
    rng = np.random.default_rng(seed)
    layout = GroupLayout.from_sizes([3, 1, 4, 2])
    theta = rng.normal(size=10) * (rng.random(10) < 0.5)
    R = build_restriction(layout, theta, "nonzero", np.arange(10))
    if R is None:
        return
    xh = rng.normal(size=R.coarse_dim)
    x = rng.normal(size=10)
    assert np.array_equal(R.restrict(R.prolong(xh)), xh)
    p = R.prolong(R.restrict(x))
    assert np.array_equal(R.prolong(R.restrict(p)), p)
    y = rng.normal(size=10)
    # P R is symmetric: <PRx, y> == <x, PRy>
    assert abs(p @ y - x @ R.prolong(R.restrict(y))) <= 1e-12 * (1 + np.abs(x) @ np.abs(y))
    assert np.linalg.norm(R.restrict(x)) <= np.linalg.norm(x)
    assert np.linalg.norm(R.prolong(xh)) == np.linalg.norm(xh)


def test_coarse_loss_hand_example():
    prob = QuadraticProblem.isotropic(np.zeros((1, 2)))
    anchor = np.array([1.0, 2.0])
    R = RestrictionMap(prob.layout, [1])
    obj = coarse_loss(prob, anchor, R)
    assert obj.loss(obj.start) == prob.loss(anchor)
    assert obj.loss([3.0]) == 0.5 * (1 + 9)
    assert obj.gradient([2.0]).tolist() == [2.0]


def test_coarse_objective_copies_anchor_and_matches_fd():
    rng = np.random.default_rng(4)
    prob = make_quadratic(4, 6, seed=2)
    anchor = rng.normal(size=6)
    R = RestrictionMap(prob.layout, [0, 2, 5])
    obj = coarse_loss(prob, anchor, R)
    anchor[:] = 0.0
    assert obj.anchor.any()
    xh = rng.normal(size=3)
    fd = fd_gradient(obj.loss, xh, 1e-6)
    g = obj.gradient(xh)
    assert np.max(np.abs(g - fd) / np.maximum(1, np.abs(g))) <= 1e-5
    assert np.array_equal(obj.gradient(obj.start), R.restrict(prob.gradient(obj.anchor)))


def test_coarse_regularizer_additivity():
    rng = np.random.default_rng(5)
    layout = GroupLayout([Group("w", 4), Group("b", 2, "bias"), Group("u", 6)])
    spec = RegularizerSpec(layout, [L1(0.3), Zero(), GroupL2(0.5, 3)], 1.0)
    for _ in range(20):
        theta = rng.normal(size=12) * (rng.random(12) < 0.6)
        R = build_restriction(layout, theta, "nonzero", spec.unit_ids())
        if R is None:
            continue
        rest = theta.copy()
        rest[R.coords] = 0.0
        total = eval_J(coarse_regularizer(spec, R), R.restrict(theta)) + eval_J(spec, rest)
        assert abs(total - eval_J(spec, theta)) <= 1e-12


FAMILIES = {
    "l1": lambda layout: RegularizerSpec.uniform(layout, L1(0.6), 1.5),
    "group_l2": lambda layout: RegularizerSpec.uniform(layout, GroupL2(0.3), 0.8),
    "kernel_blocks": lambda layout: RegularizerSpec(layout, [GroupL2(0.4, 2), Zero(), L1(0.2)], 2.0),
}


@pytest.mark.parametrize("family", sorted(FAMILIES))
def test_state_transfer_keeps_feasibility(family):
    layout = GroupLayout([Group("w", 6), Group("b", 2, "bias"), Group("u", 3)])
    spec = FAMILIES[family](layout)
    rng = np.random.default_rng(len(family))
    for _ in range(100):
        state = random_feasible_state(spec, rng)
        R = build_restriction(layout, state.theta, "nonzero", spec.unit_ids())
        if R is None:
            continue
        cspec = coarse_regularizer(spec, R)
        cs = restrict_state(state, R, spec, cspec)
        assert regs.contains_subgradient(cspec, cs.theta, cs.v)
        assert merge_state(state, R, cs, spec, cspec).theta.tobytes() == state.theta.tobytes()
        moved = random_feasible_state(cspec, rng)
        merged = merge_state(state, R, moved, spec, cspec)
        assert regs.contains_subgradient(spec, merged.theta, merged.v)
        keep = ~R.mask()
        assert merged.theta[keep].tobytes() == state.theta[keep].tobytes()
        assert merged.v[keep].tobytes() == state.v[keep].tobytes()


def test_zero_state_restricts_to_zero():
    spec = RegularizerSpec.uniform(LAYOUT, L1(1.0))
    R = build_restriction(LAYOUT, np.zeros(5), "all")
    cs = restrict_state(BregmanState(np.zeros(5), np.zeros(5)), R, spec)
    assert not cs.theta.any() and not cs.v.any()


def test_restrict_state_flags_infeasible_input():
    if not regs.CHECKS:
        pytest.skip("checks compiled out")
    spec = RegularizerSpec.uniform(LAYOUT, L1(1.0))
    bad = BregmanState(np.array([1.0, 0, 0, 0, 0]), np.array([1.0, 0, 0, 0, 0]))
    R = build_restriction(LAYOUT, bad.theta)
    with pytest.raises(regs.InfeasibleInput):
        restrict_state(bad, R, spec)


def test_coarse_criterion_examples():
    layout = GroupLayout.from_sizes([1, 1])
    R = RestrictionMap(layout, [0])
    assert coarse_criterion([3.0, 4.0], R, 0.5, 0.1)
    assert not coarse_criterion([0.0, 4.0], R, 0.5, 0.1)
    assert coarse_criterion([1e-300, 4.0], R, 0.0, 0.0)
    assert not coarse_criterion([1.0, 4.0], R, 0.5, 0.1)
