"""Invariant and oracle suites behind ``bregml verify``.

Each suite returns a list of :class:`Check` rows.  The helpers that drive
whole trajectories (:func:`trajectory_audit`) are reused by the test-suite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import oracles
from . import regularizers as regs
from .diagnostics import RunRecord, StepEntry, expected_step_flops, training_flop_ratio
from .models import build_network, fd_check, make_quadratic, make_two_blobs
from .models.network import HEADS
from .models.problems import NetworkProblem, QuadraticProblem
from .optimizers import MLConfig, ml_cycle, vr_coarse_gradient
from .param_space import Group, GroupLayout, nonzero_groups
from .regularizers import L1, BregmanState, GroupL2, RegularizerSpec, Zero, initial_state, prox
from .transfer import (
    CoarseObjective,
    RestrictionMap,
    build_restriction,
    coarse_regularizer,
    merge_state,
    restrict_state,
)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


# ----------------------------------------------------------------- prox


def prox_battery(n_instances=1000, seed=0, family="l1"):
    """Largest gap between the closed-form prox and the numerical minimizer."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        size = int(rng.integers(1, 9))
        delta = float(np.exp(rng.uniform(np.log(0.05), np.log(5.0))))
        lam = float(np.exp(rng.uniform(np.log(0.01), np.log(2.0))))
        x = rng.normal(scale=rng.uniform(0.1, 3.0), size=size)
        layout = GroupLayout.from_sizes([size])
        if family == "l1":
            got = prox(RegularizerSpec(layout, [L1(lam)], delta), x)
            ref = oracles.prox_l1_oracle(x, lam, delta)
        else:
            got = prox(RegularizerSpec(layout, [GroupL2(lam)], delta), x)
            ref = oracles.prox_group_oracle(x, lam, delta)
        worst = max(worst, float(np.max(np.abs(got - ref))))
    return worst


def suite_prox() -> list[Check]:
    out = []
    for fam in ("l1", "group_l2"):
        worst = prox_battery(family=fam)
        out.append(Check(f"prox {fam} vs numerical minimizer (1000)", worst <= 1e-6,
                         f"max abs gap {worst:.2e}"))
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(200):
        d = 6
        delta = float(rng.uniform(0.1, 4.0))
        lam = float(rng.uniform(0.0, 2.0)) or 0.5
        v = rng.normal(scale=2.0, size=d)
        spec = RegularizerSpec(GroupLayout.from_sizes([d]), [L1(lam)], delta)
        closed = delta * np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)
        worst = max(worst, float(np.max(np.abs(prox(spec, delta * v) - closed))))
    out.append(Check("two soft-shrinkage forms agree", worst <= 1e-12, f"max gap {worst:.2e}"))
    rng = np.random.default_rng(2)
    ok = True
    for _ in range(200):
        spec = RegularizerSpec(GroupLayout.from_sizes([5, 4]), [L1(0.7), GroupL2(0.4)],
                               float(rng.uniform(0.2, 3.0)))
        x, y = rng.normal(size=9) * 2, rng.normal(size=9) * 2
        ok &= np.linalg.norm(prox(spec, x) - prox(spec, y)) <= np.linalg.norm(x - y) * (1 + 1e-12)
    out.append(Check("prox is nonexpansive", bool(ok)))
    return out


# ------------------------------------------------------------- transfer


def random_feasible_state(spec: RegularizerSpec, rng, scale=2.0) -> BregmanState:
    """``(prox(delta v), v)`` for a random ``v``; feasible by construction."""
    v = rng.normal(scale=scale, size=spec.layout.total_dim)
    return BregmanState(regs.mirror(spec, v), v)


def _families(layout):
    return {"l1": RegularizerSpec.uniform(layout, L1(0.6), 1.5),
            "group_l2": RegularizerSpec.uniform(layout, GroupL2(0.3), 0.8),
            "mixed": RegularizerSpec(layout, [L1(0.5), Zero(), GroupL2(0.4, 2), Zero()], 1.0)}


def suite_transfer() -> list[Check]:
    out = []
    rng = np.random.default_rng(3)
    layout = GroupLayout([Group("w0", 6), Group("b0", 2, "bias"), Group("w1", 4), Group("b1", 1, "bias")])
    worst_rp = 0.0
    proj_ok = True
    for _ in range(100):
        x = rng.normal(size=layout.total_dim)
        x[rng.random(x.size) < 0.5] = 0.0
        R = build_restriction(layout, x)
        if R is None:
            continue
        xh = rng.normal(size=R.coarse_dim)
        worst_rp = max(worst_rp, float(np.max(np.abs(R.restrict(R.prolong(xh)) - xh))))
        y = rng.normal(size=layout.total_dim)
        pr = R.prolong(R.restrict(y))
        proj_ok &= np.array_equal(R.prolong(R.restrict(pr)), pr)
        proj_ok &= np.linalg.norm(R.restrict(y)) <= np.linalg.norm(y)
    out.append(Check("restrict(prolong(x)) == x", worst_rp == 0.0, f"max gap {worst_rp:.1e}"))
    out.append(Check("prolong(restrict(.)) is a coordinate projection", bool(proj_ok)))

    for fam, spec in _families(layout).items():
        bad = 0
        for _ in range(100):
            state = random_feasible_state(spec, rng)
            R = build_restriction(layout, state.theta, "nonzero", spec.unit_ids())
            if R is None:
                continue
            cspec = coarse_regularizer(spec, R)
            cs = restrict_state(state, R)
            bad += not regs.contains_subgradient(cspec, cs.theta, cs.v)
            moved = random_feasible_state(cspec, rng)
            merged = merge_state(state, R, moved)
            bad += not regs.contains_subgradient(spec, merged.theta, merged.v)
            keep = ~R.mask()
            bad += not (np.array_equal(merged.theta[keep], state.theta[keep])
                        and np.array_equal(merged.v[keep], state.v[keep]))
        out.append(Check(f"restrict/merge keep feasibility ({fam})", bad == 0, f"{bad} failures"))

    worst = 0.0
    for seed in range(20):
        prob = make_quadratic(6, layout.total_dim, seed, layout=layout)
        theta = rng.normal(size=layout.total_dim)
        theta[rng.random(theta.size) < 0.4] = 0.0
        R = build_restriction(layout, theta, "nonzero", np.arange(theta.size))
        if R is None:
            continue
        obj = CoarseObjective(prob, theta, R)
        worst = max(worst, float(np.max(np.abs(obj.gradient(obj.start) - R.restrict(prob.gradient(theta))))))
    out.append(Check("first-order coherence at the anchor", worst <= 1e-12, f"max gap {worst:.1e}"))
    return out


# ------------------------------------------------------------ optimizer


@dataclass
class Audit:
    """Worst-case statistics collected over a trajectory."""

    steps: int = 0
    coarse_phases: int = 0
    feasibility: float = 0.0
    coherence: float = 0.0
    support_growth: int = 0
    frozen_moved: int = 0
    loss_increases: int = 0
    max_increase: float = 0.0
    losses: list = field(default_factory=list)


def trajectory_audit(problem, spec, config: MLConfig, state: BregmanState, steps: int, rng,
                     monotone_slack=None) -> tuple[BregmanState, Audit]:
    """Run ``steps`` steps and check every iterate.

    Records the worst feasibility gap (fine and coarse views), the coherence
    error of every coarse invocation, growth of the active-group count inside
    a coarse phase, movement of coordinates outside the restriction, and,
    when ``monotone_slack`` is given, every step whose loss rises by more than
    ``monotone_slack * (1 + |loss|)``.
    """
    audit = Audit()
    layout = spec.layout
    config = MLConfig(**{**config.__dict__, "check": True})
    ctx = {}

    def loss_step(theta):
        loss = problem.loss(theta)
        prev = audit.losses[-1] if audit.losses else None
        audit.losses.append(loss)
        if monotone_slack is not None and prev is not None:
            rise = loss - prev
            if rise > monotone_slack * (1.0 + abs(prev)):
                audit.loss_increases += 1
            audit.max_increase = max(audit.max_increase, rise)

    def callback(ev):
        audit.steps += 1
        audit.feasibility = max(audit.feasibility, regs.feasibility_gap(spec, ev.theta, ev.v))
        if ev.phase == "coarse":
            audit.feasibility = max(audit.feasibility, regs.feasibility_gap(
                ev.coarse_spec, ev.coarse_state.theta, ev.coarse_state.v))
            active = int(nonzero_groups(layout, ev.theta).sum())
            if ctx.get("R") is not ev.restriction:
                ctx.update(R=ev.restriction, active=int(nonzero_groups(layout, ctx["theta"]).sum()),
                           frozen=ctx["theta"][~ev.restriction.mask()].copy())
            if active > ctx["active"]:
                audit.support_growth += 1
            ctx["active"] = active
            if not np.array_equal(ev.theta[~ev.restriction.mask()], ctx["frozen"]):
                audit.frozen_moved += 1
        else:
            ctx["R"] = None
        ctx["theta"] = ev.theta
        if monotone_slack is not None:
            loss_step(ev.theta)

    ctx["theta"] = state.theta
    if monotone_slack is not None:
        audit.losses.append(problem.loss(state.theta))
    t = 0
    while t < steps:
        state, trace = ml_cycle(state, problem, spec, config, rng, step=t,
                                budget=steps - t, callback=callback)
        if trace.coarse:
            audit.coarse_phases += 1
            audit.coherence = max(audit.coherence, trace.coherence_error)
        t += trace.steps
    return state, audit


def relative_smoothness(problem: QuadraticProblem, spec: RegularizerSpec) -> float:
    """``L`` with ``L(y) <= L(x) + <g, y - x> + L D_{J_delta}(y, x)``: ``delta * lambda_max``."""
    return spec.delta * problem.smoothness()


def gd_equivalence(seed, steps=100, d=8, n=5):
    """Max coordinate gap between LinBreg with ``J = 0, delta = 1`` and plain GD."""
    from .optimizers import linbreg_step

    prob = make_quadratic(n, d, seed)
    spec = RegularizerSpec.uniform(prob.layout, Zero(), 1.0)
    tau = 0.9 / prob.smoothness()
    theta0 = np.random.default_rng(seed).normal(size=d)
    ref = oracles.gd_trajectory(prob.gradient, theta0, tau, steps)
    state = initial_state(spec, theta0)
    worst = float(np.max(np.abs(state.theta - ref[0])))
    for k in range(steps):
        state = linbreg_step(spec, state, prob.gradient(state.theta), tau)
        worst = max(worst, float(np.max(np.abs(state.theta - ref[k + 1]))))
    return worst


def rate_instance(seed, steps=150):
    """Fine-only, ``J = 0`` run on a random quadratic; returns ``rate_check`` output."""
    from .diagnostics import rate_check

    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 21))
    prob = make_quadratic(int(rng.integers(2, 8)), d, seed, cond=float(rng.uniform(2, 50)))
    spec = RegularizerSpec.uniform(prob.layout, Zero(), 1.0)
    tau = 0.9 / prob.smoothness()
    state = initial_state(spec, rng.normal(scale=3.0, size=d))
    cfg = MLConfig(m=0, tau=tau)
    losses = [prob.loss(state.theta)]
    for t in range(steps):
        state, _ = ml_cycle(state, prob, spec, cfg, rng, step=t)
        losses.append(prob.loss(state.theta))
    loss_star = prob.optimal_loss()
    # below ~1e-10 relative the gap is dominated by rounding in L and L*
    return rate_check(losses, loss_star, prob.strong_convexity() * tau,
                      floor=1e-10 * (1.0 + abs(loss_star)))


def decrease_instance(seed, cycles=200, m=4, slack=1e-12):
    """Exact-gradient ML LinBreg on a quadratic with L1; counts loss increases."""
    rng = np.random.default_rng(seed)
    d = int(rng.integers(4, 17))
    prob = make_quadratic(int(rng.integers(2, 6)), d, seed, cond=float(rng.uniform(2, 20)))
    spec = RegularizerSpec.uniform(prob.layout, L1(float(rng.uniform(0.01, 0.3))),
                                   float(rng.uniform(0.5, 2.0)))
    L = relative_smoothness(prob, spec)
    cfg = MLConfig(m=m, tau=0.9 / L, coarse_tau=0.25 / L)
    theta0 = rng.normal(scale=2.0, size=d)
    theta0[rng.random(d) < 0.5] = 0.0
    state = initial_state(spec, theta0)
    return trajectory_audit(prob, spec, cfg, state, cycles * (m + 1), rng, monotone_slack=slack)[1]


def feasibility_runs(seeds=range(5), steps=500):
    """ML LinBreg with minibatches on a quadratic and a two-layer MLP."""
    audits = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        prob = make_quadratic(20, 12, seed)
        spec = RegularizerSpec.uniform(prob.layout, L1(0.05), 1.0)
        cfg = MLConfig(m=9, tau=0.5 / prob.smoothness(), batch_fine=5, batch_coarse=5)
        state = initial_state(spec, rng.normal(size=12))
        audits.append(("quadratic", seed, trajectory_audit(prob, spec, cfg, state, steps, rng)[1]))

        prob = make_two_blobs(64, 6, 3.0, seed, hidden=(16,))
        spec = RegularizerSpec.uniform(prob.layout, L1(0.01), 1.0)
        cfg = MLConfig(m=9, tau=0.1, batch_fine=16, batch_coarse=16, vr=bool(seed % 2))
        theta0 = rng.normal(scale=0.5, size=prob.dim)
        theta0[rng.random(prob.dim) < 0.5] = 0.0
        state = initial_state(spec, theta0)
        audits.append(("mlp", seed, trajectory_audit(prob, spec, cfg, state, steps, rng)[1]))
    return audits


def suite_optimizer() -> list[Check]:
    out = []
    worst = max(gd_equivalence(s) for s in range(5))
    out.append(Check("J=0, delta=1 matches gradient descent (100 steps)", worst <= 1e-15,
                     f"max gap {worst:.1e}"))
    res = [rate_instance(s) for s in range(20)]
    fails = sum(not ok for ok, _ in res)
    out.append(Check("linear rate on 20 quadratics", fails == 0,
                     f"{fails} violations, worst ratio {max(w for _, w in res):.3f}"))
    audits = [decrease_instance(s) for s in range(20)]
    inc = sum(a.loss_increases for a in audits)
    out.append(Check("exact ML LinBreg never increases the loss (20 x 200 cycles)", inc == 0,
                     f"{inc} increases, largest rise {max(a.max_increase for a in audits):.1e}"))
    runs = feasibility_runs()
    feas = max(a.feasibility for _, _, a in runs)
    coh = max(a.coherence for _, _, a in runs + [(None, None, a) for a in audits])
    grow = sum(a.support_growth + a.frozen_moved for _, _, a in runs) + sum(
        a.support_growth + a.frozen_moved for a in audits)
    out.append(Check("feasibility at every iterate", feas <= 1e-12, f"max gap {feas:.1e}"))
    out.append(Check("coarse gradient coherent at every invocation", coh <= 1e-12, f"max gap {coh:.1e}"))
    out.append(Check("support frozen in coarse phases", grow == 0, f"{grow} violations"))
    return out


# ------------------------------------------------------------------- vr


def vr_instance(seed, n=4, b=2, d=5, n_points=50):
    """Exhaustive check of the variance-reduced coarse gradient.

    Returns ``(mean_gap, worst_variance_ratio, anchor_gap)``.
    """
    rng = np.random.default_rng(seed)
    prob = make_quadratic(n, d, seed)
    anchor = rng.normal(size=d)
    anchor[rng.random(d) < 0.4] = 0.0
    if not anchor.any():
        anchor[0] = 1.0
    R = build_restriction(prob.layout, anchor, "nonzero", np.arange(d))
    obj = CoarseObjective(prob, anchor, R)
    full = prob.gradient(anchor)
    Lj = prob.term_smoothness()
    mean_gap = anchor_gap = 0.0
    ratio = 0.0
    for batch in oracles.all_batches(n, b):
        est = vr_coarse_gradient(prob, anchor, full, R, obj.start, batch)
        anchor_gap = max(anchor_gap, float(np.max(np.abs(est - R.restrict(full)))))
    for _ in range(n_points):
        th = obj.start + rng.normal(size=R.coarse_dim)
        mean, var = oracles.enumerate_estimator(
            lambda batch: vr_coarse_gradient(prob, anchor, full, R, th, batch), n, b)
        mean_gap = max(mean_gap, float(np.max(np.abs(mean - obj.gradient(th)))))
        bound = Lj ** 2 * (n - b) / (b * (n - 1)) * float(np.sum((th - obj.start) ** 2))
        ratio = max(ratio, var / bound)
    return mean_gap, ratio, anchor_gap


def suite_vr() -> list[Check]:
    res = [vr_instance(s) for s in range(5)]
    mean_gap = max(r[0] for r in res)
    ratio = max(r[1] for r in res)
    anchor_gap = max(r[2] for r in res)
    return [Check("estimator unbiased over all batches", mean_gap <= 1e-12, f"max gap {mean_gap:.1e}"),
            Check("variance within the finite-population bound", ratio <= 1.0, f"worst ratio {ratio:.3f}"),
            Check("estimator exact at the coarse start", anchor_gap == 0.0, f"max gap {anchor_gap:.1e}")]


# ---------------------------------------------------------------- flops


def constant_support_record(f_sparse, f_dense, m, cycles) -> RunRecord:
    rec = RunRecord(f_dense)
    t = 0
    for _ in range(cycles):
        for phase in ["coarse"] * m + ["fine"]:
            rec.append(StepEntry(t, phase, 0.0, 0.1, 0, 0, 0.0, math.nan, f_sparse))
            t += 1
    return rec


def suite_flops() -> list[Check]:
    f_d = 1000.0
    ex = [expected_step_flops(300.0, f_d, 0) == 2 * 300.0 + f_d,
          expected_step_flops(f_d, f_d, 57) == 3 * f_d,
          math.isclose(expected_step_flops(0.1 * f_d, f_d, 99), 0.309 * f_d, rel_tol=1e-15)]
    ratio = training_flop_ratio(constant_support_record(0.1 * f_d, f_d, 99, 5))
    closed = expected_step_flops(0.1 * f_d, f_d, 99) / (3 * f_d)
    limit = expected_step_flops(0.1 * f_d, f_d, 10 ** 6)
    return [Check("expected step FLOPs examples", all(ex)),
            Check("trace ratio matches closed form", abs(ratio - closed) <= 1e-12,
                  f"{ratio!r} vs {closed!r}"),
            Check("m -> infinity approaches 3 f_S", abs(limit / (0.3 * f_d) - 1) <= 1e-3,
                  f"relative gap {abs(limit / (0.3 * f_d) - 1):.1e}")]


SUITES = {"prox": suite_prox, "transfer": suite_transfer, "optimizer": suite_optimizer,
          "vr": suite_vr, "flops": suite_flops}


def run_suite(name: str) -> list[Check]:
    if name == "all":
        return [c for fn in SUITES.values() for c in fn()]
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name]()


# ------------------------------------------------------------- gradients


def random_network_problem(rng, head, conv) -> NetworkProblem:
    """Small random Affine/Conv2D/ReLU network with a 6-sample dataset."""
    layers = []
    if conv:
        shape = (int(rng.integers(1, 3)), int(rng.integers(4, 6)), int(rng.integers(4, 6)))
        layers += [{"type": "conv2d", "out": int(rng.integers(1, 4)), "k": int(rng.integers(1, 3))},
                   {"type": "relu"}]
    else:
        shape = (int(rng.integers(2, 6)),)
    layers += [{"type": "affine", "out": int(rng.integers(2, 6))}, {"type": "relu"},
               {"type": "affine", "out": 3}]
    net = build_network(shape, layers, head)
    X = rng.normal(size=(6,) + shape)
    Y = rng.integers(0, 3, size=6) if head == "softmax_ce" else rng.normal(size=(6, 3))
    return NetworkProblem(net, X, Y)


def gradient_battery(n_instances=50, seed=0, h=1e-6):
    """Worst relative FD error over random networks at points away from ReLU kinks.

    Instances cycle through both heads, with and without a convolution.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(n_instances):
        prob = random_network_problem(rng, HEADS[i % 2], conv=bool((i // 2) % 2))
        for _ in range(1000):
            theta = rng.normal(scale=0.7, size=prob.dim)
            if prob.min_preactivation(theta) > 10 * h:
                break
        else:
            raise RuntimeError("no point away from the ReLU kinks")
        worst = max(worst, fd_check(prob, theta, h))
    return worst
