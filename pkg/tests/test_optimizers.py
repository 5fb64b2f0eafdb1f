import math

import numpy as np
import pytest

from bregml.errors import NonFiniteGradient
from bregml.models import QuadraticProblem, make_quadratic
from bregml.optimizers import (
    MLConfig,
    constant,
    cosine,
    cosine_schedule,
    harmonic,
    linbreg_step,
    ml_cycle,
    run,
    vr_coarse_gradient,
)
from bregml.regularizers import L1, BregmanState, RegularizerSpec, Zero, initial_state
from bregml.transfer import CoarseObjective, RestrictionMap
from bregml.verify import decrease_instance, feasibility_runs, gd_equivalence, vr_instance


def _half_square():
    prob = QuadraticProblem.isotropic(np.zeros((1, 1)))
    return prob, RegularizerSpec.uniform(prob.layout, Zero(), 1.0)


def test_linbreg_step_is_gradient_descent_without_regularizer():
    prob, spec = _half_square()
    state = BregmanState(np.array([1.0]), np.array([1.0]))
    new = linbreg_step(spec, state, prob.gradient(state.theta), 0.5)
    assert new.theta.tolist() == [0.5] and new.v.tolist() == [0.5]


def test_zero_gradient_leaves_state():
    spec = RegularizerSpec.uniform(make_quadratic(2, 3, 0).layout, L1(0.5))
    state = initial_state(spec, [1.0, 0.0, -2.0])
    new = linbreg_step(spec, state, np.zeros(3), 0.3)
    assert new.theta.tobytes() == state.theta.tobytes()
    assert new.v.tobytes() == state.v.tobytes()


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_gradient_raises(bad):
    _, spec = _half_square()
    with pytest.raises(NonFiniteGradient):
        linbreg_step(spec, BregmanState(np.zeros(1), np.zeros(1)), [bad], 0.1)


def test_non_finite_gradient_reports_step():
    prob, spec = _half_square()

    class Broken(QuadraticProblem):
        def gradient(self, theta, batch=None):
            return np.full_like(theta, np.nan)

    broken = Broken(prob.A, prob.c)
    with pytest.raises(NonFiniteGradient) as info:
        ml_cycle(BregmanState(np.zeros(1), np.zeros(1)), broken, spec, MLConfig(m=0), step=17)
    assert info.value.step == 17


@pytest.mark.parametrize("seed", range(5))
def test_trajectory_matches_gradient_descent(seed):
    assert gd_equivalence(seed) <= 1e-15


def test_m0_is_plain_linbreg():
    prob = make_quadratic(3, 4, 1)
    spec = RegularizerSpec.uniform(prob.layout, L1(0.1))
    state = initial_state(spec, [1.0, 0.0, 2.0, 0.0])
    cfg = MLConfig(m=0, tau=0.05)
    new, trace = ml_cycle(state, prob, spec, cfg)
    ref = linbreg_step(spec, state, prob.gradient(state.theta), 0.05)
    assert not trace.coarse and trace.steps == 1
    assert [e.phase for e in trace.entries] == ["fine"]
    assert new.theta.tobytes() == ref.theta.tobytes()


def test_empty_restriction_falls_back_to_fine_step():
    prob = make_quadratic(3, 4, 1)
    spec = RegularizerSpec.uniform(prob.layout, L1(0.1))
    state = BregmanState(np.zeros(4), np.zeros(4))
    _, trace = ml_cycle(state, prob, spec, MLConfig(m=5, tau=0.05))
    assert trace.empty_restriction and not trace.coarse and trace.steps == 1


def test_cycle_layout_and_budget():
    prob = make_quadratic(3, 4, 1)
    spec = RegularizerSpec.uniform(prob.layout, L1(0.1))
    state = initial_state(spec, [1.0, 0.0, 2.0, 0.0])
    _, trace = ml_cycle(state, prob, spec, MLConfig(m=3, tau=0.05), step=10)
    assert [e.phase for e in trace.entries] == ["coarse"] * 3 + ["fine"]
    assert [e.step for e in trace.entries] == [10, 11, 12, 13]
    _, rec, traces = run(prob, spec, MLConfig(m=3, tau=0.05), state, 10, np.random.default_rng(0))
    assert len(rec) == 10 and [t.steps for t in traces] == [4, 4, 2]
    assert rec.column("step").tolist() == list(range(10))


def test_criterion_policy_can_skip_coarse_phase():
    prob = make_quadratic(3, 4, 1)
    spec = RegularizerSpec.uniform(prob.layout, L1(0.1))
    state = initial_state(spec, [1.0, 0.0, 0.0, 0.0])
    _, never = ml_cycle(state, prob, spec, MLConfig(m=3, policy="criterion", kappa=2.0))
    _, always = ml_cycle(state, prob, spec, MLConfig(m=3, policy="criterion", kappa=0.0, eps=0.0))
    assert not never.coarse and never.steps == 1
    assert always.coarse and always.steps == 4


def test_config_validation():
    with pytest.raises(ValueError):
        MLConfig(m=-1)
    with pytest.raises(ValueError):
        MLConfig(policy="sometimes")
    cfg = MLConfig(tau=cosine(1.0, 10), coarse_tau=0.2)
    assert cfg.fine_tau(5) == 0.5 and cfg.coarse_tau_at(5) == 0.2
    assert MLConfig(tau=0.3).coarse_tau_at(7) == 0.3


def test_schedules():
    assert cosine_schedule(0.1, 100, 0) == 0.1
    assert cosine_schedule(0.1, 100, 100) == 0.0
    assert math.isclose(cosine_schedule(0.1, 100, 50), 0.05, rel_tol=1e-15)
    with pytest.raises(ValueError):
        cosine_schedule(0.1, 100, 101)
    assert constant(0.3)(1000) == 0.3
    assert cosine(1.0, 10)(20) == 0.0
    h = harmonic(1.0, 5)
    assert [h(t) for t in (0, 4, 5, 10)] == [1.0, 1.0, 0.5, 1.0 / 3.0]


@pytest.mark.parametrize("seed", range(4))
def test_exact_gradient_cycles_never_increase_loss(seed):
    audit = decrease_instance(seed, cycles=60)
    assert audit.coarse_phases > 0
    assert audit.loss_increases == 0, audit.max_increase


def test_feasibility_and_frozen_support_over_trajectories():
    for name, seed, audit in feasibility_runs(seeds=range(2), steps=200):
        assert audit.feasibility <= 1e-12, (name, seed)
        assert audit.coherence <= 1e-12, (name, seed)
        assert audit.support_growth == 0 and audit.frozen_moved == 0, (name, seed)


def test_vr_gradient_examples():
    rng = np.random.default_rng(2)
    prob = make_quadratic(4, 5, 2)
    anchor = np.array([1.0, 0.0, -0.5, 2.0, 0.0])
    R = RestrictionMap(prob.layout, [0, 2, 3])
    obj = CoarseObjective(prob, anchor, R)
    full = prob.gradient(anchor)
    for batch in ([0, 1], [3], [2, 0, 1]):
        est = vr_coarse_gradient(prob, anchor, full, R, obj.start, np.array(batch))
        assert est.tobytes() == R.restrict(full).tobytes()
    th = obj.start + rng.normal(size=3)
    est = vr_coarse_gradient(prob, anchor, full, R, th, None)
    assert np.max(np.abs(est - obj.gradient(th))) <= 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_vr_unbiased_with_bounded_variance(seed):
    mean_gap, ratio, anchor_gap = vr_instance(seed, n_points=20)
    assert mean_gap <= 1e-12 and ratio <= 1.0 and anchor_gap == 0.0


def test_vanishing_coarse_steps_reach_the_minimum():
    m = 4
    for seed in range(10):
        prob = make_quadratic(20, 8, seed)
        spec = RegularizerSpec.uniform(prob.layout, Zero(), 1.0)
        L = prob.smoothness()
        cfg = MLConfig(m=m, tau=0.9 / L, coarse_tau=harmonic(0.25 / L, m + 1),
                       batch_coarse=4, restriction="all")
        state = initial_state(spec, np.random.default_rng(seed).normal(scale=3.0, size=8))
        _, rec, _ = run(prob, spec, cfg, state, 2000, np.random.default_rng(seed))
        losses = np.array(rec.column("loss"))
        tail = losses[-len(losses) // 10:].mean()
        star = prob.optimal_loss()
        assert abs(tail - star) <= 0.05 * abs(star)


def test_run_is_reproducible():
    prob = make_quadratic(20, 6, 3)
    spec = RegularizerSpec.uniform(prob.layout, L1(0.05))
    cfg = MLConfig(m=4, tau=0.05, batch_fine=4, batch_coarse=4, vr=True)
    state = initial_state(spec, np.ones(6))
    a = run(prob, spec, cfg, state, 50, np.random.default_rng(9))[0]
    b = run(prob, spec, cfg, state, 50, np.random.default_rng(9))[0]
    assert a.theta.tobytes() == b.theta.tobytes() and a.v.tobytes() == b.v.tobytes()


def test_evaluate_hook_schedule():
    prob = make_quadratic(3, 3, 0)
    spec = RegularizerSpec.uniform(prob.layout, Zero())
    _, rec, _ = run(prob, spec, MLConfig(m=2, tau=0.05), initial_state(spec, np.ones(3)), 10,
                    evaluate=lambda s, t: {"loss": prob.loss(s.theta)}, eval_every=4)
    assert [e["step"] for e in rec.evals] == [6, 9, 10]
