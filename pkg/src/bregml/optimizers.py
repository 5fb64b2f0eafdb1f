"""Linearized Bregman steps and the two-level (multilevel) LinBreg cycle.

One cycle from a feasible state ``(theta, v)``:

1. decide whether to use the coarse model (always, or by the gradient
   criterion);
2. if so, restrict to the active units, take ``m`` LinBreg steps on the
   coarse loss with minibatch (optionally variance-reduced) gradients, and
   merge the result back;
3. take one LinBreg step on the full problem.

Setting ``m = 0`` gives plain LinBreg.
"""
from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from . import regularizers as regs
from .diagnostics import RunRecord, StepEntry
from .errors import NonFiniteGradient
from .models.problems import sample_batch
from .param_space import conv_sparsity
from .regularizers import BregmanState, RegularizerSpec, mirror
from .transfer import (
    CoarseObjective,
    RestrictionMap,
    build_restriction,
    coarse_criterion,
    coarse_regularizer,
    merge_state,
    restrict_state,
)

log = logging.getLogger(__name__)

Schedule = Callable[[int], float]


def linbreg_step(spec: RegularizerSpec, state: BregmanState, grad, tau: float) -> BregmanState:
    """``v <- v - tau g``, ``theta <- prox_{delta J}(delta v)``."""
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("gradient contains NaN or Inf")
    v = state.v - tau * grad
    return BregmanState(mirror(spec, v), v)


def cosine_schedule(tau0: float, total: int, t: int) -> float:
    if not 0 <= t <= total:
        raise ValueError("t must lie in [0, total]")
    return tau0 * (1.0 + math.cos(math.pi * t / total)) / 2.0


def constant(tau: float) -> Schedule:
    return lambda t: tau


def cosine(tau0: float, total: int) -> Schedule:
    return lambda t: cosine_schedule(tau0, total, min(t, total))


def harmonic(tau0: float, period: int) -> Schedule:
    """``tau0 / (k + 1)`` with ``k = t // period`` the cycle index."""
    if period < 1:
        raise ValueError("period must be positive")
    return lambda t: tau0 / (t // period + 1)


@dataclass
class MLConfig:
    """Hyperparameters of multilevel LinBreg.

    ``tau``/``coarse_tau`` are floats or schedules of the global step index;
    ``coarse_tau=None`` reuses the fine schedule.  Batch sizes of ``None``
    mean exact gradients.
    """

    m: int = 99
    policy: str = "always"
    kappa: float = 0.5
    eps: float = 1e-8
    restriction: object = "nonzero"
    tau: float | Schedule = 0.1
    coarse_tau: float | Schedule | None = None
    batch_fine: int | None = None
    batch_coarse: int | None = None
    vr: bool = False
    check: bool = False
    record: bool = True

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("m must be nonnegative")
        if self.policy not in ("always", "criterion"):
            raise ValueError(f"unknown coarse policy {self.policy!r}")
        if self.policy == "criterion" and not (self.kappa >= 0 and self.eps >= 0):
            raise ValueError("kappa and eps must be nonnegative")

    def fine_tau(self, t: int) -> float:
        return float(self.tau(t) if callable(self.tau) else self.tau)

    def coarse_tau_at(self, t: int) -> float:
        if self.coarse_tau is None:
            return self.fine_tau(t)
        return float(self.coarse_tau(t) if callable(self.coarse_tau) else self.coarse_tau)


@dataclass
class StepEvent:
    """Passed to ``callback`` after every iterate (fine view of the state)."""

    step: int
    phase: str
    theta: np.ndarray
    v: np.ndarray
    coarse_state: BregmanState | None = None
    restriction: RestrictionMap | None = None
    coarse_spec: RegularizerSpec | None = None


@dataclass
class CycleTrace:
    coarse: bool = False
    empty_restriction: bool = False
    coarse_dim: int = 0
    coherence_error: float | None = None
    steps: int = 0
    sym_bregman: list = field(default_factory=list)
    entries: list = field(default_factory=list)


def vr_coarse_gradient(problem, anchor, anchor_full_grad, R: RestrictionMap, theta_hat, batch):
    """Variance-reduced coarse gradient.

    ``grad L_b(lift(theta_hat)) restricted + R grad L(anchor) - grad L_b(anchor) restricted``,
    where ``L_b`` is the minibatch loss.  Equals ``R grad L(anchor)`` exactly at
    ``theta_hat = R anchor``.
    """
    lifted = R.lift(anchor, theta_hat)
    here = R.restrict(problem.gradient(lifted, batch))
    there = R.restrict(problem.gradient(anchor, batch))
    return R.restrict(anchor_full_grad) + (here - there)


def _step(spec, state, grad, tau, t):
    try:
        return linbreg_step(spec, state, grad, tau)
    except NonFiniteGradient as exc:
        err = NonFiniteGradient(f"step {t}: {exc}")
        err.step = t
        raise err from None


def _grad(problem, theta, batch_size, rng):
    if batch_size is None or batch_size >= problem.n:
        return problem.gradient(theta)
    return problem.gradient(theta, sample_batch(rng, problem.n, batch_size))


def _entry(problem, layout, units, step, phase, theta, tau, f_sparse):
    nz = theta != 0
    nnz = int(np.count_nonzero(nz))
    active = int(np.unique(units[nz]).size) if nnz else 0
    csp = conv_sparsity(layout, theta) if layout.conv_groups() else float("nan")
    return StepEntry(step=step, phase=phase, loss=problem.loss(theta), tau=tau,
                     active_units=active, nonzeros=nnz,
                     sparsity=1.0 - nnz / theta.size, conv_sparsity=csp,
                     f_sparse=float(f_sparse))


def ml_cycle(state: BregmanState, problem, spec: RegularizerSpec, config: MLConfig,
             rng: np.random.Generator | None = None, step: int = 0, budget: int | None = None,
             callback=None, units=None):
    """One outer iteration; returns ``(state, CycleTrace)``.

    ``step`` is the global index of the first step taken, ``budget`` caps the
    number of steps (coarse steps are dropped first).
    """
    rng = rng if rng is not None else np.random.default_rng()
    layout = spec.layout
    units = spec.unit_ids() if units is None else units
    check = config.check and regs.CHECKS
    trace = CycleTrace()
    t = step
    m = config.m if budget is None else min(config.m, budget - 1)
    if check:
        regs.check_state(spec, state, "cycle input")

    R = None
    pre_grad = None
    if m > 0:
        R = build_restriction(layout, state.theta, config.restriction, units)
        if R is None:
            trace.empty_restriction = True
            log.debug("step %d: empty restriction, taking a fine step", t)
        elif config.policy == "criterion":
            pre_grad = _grad(problem, state.theta, config.batch_fine, rng)
            if not coarse_criterion(pre_grad, R, config.kappa, config.eps):
                R = None

    if R is not None:
        trace.coarse = True
        trace.coarse_dim = R.coarse_dim
        f_sparse = problem.forward_flops(state.theta)
        cspec = coarse_regularizer(spec, R)
        obj = CoarseObjective(problem, state.theta, R)
        cs = restrict_state(state, R, spec if check else None, cspec)
        anchor_grad = problem.gradient(obj.anchor) if (config.vr or check) else None
        if check:
            trace.coherence_error = float(np.max(np.abs(
                obj.gradient(obj.start) - R.restrict(anchor_grad))))
        for _ in range(m):
            batch = None
            if config.batch_coarse is not None and config.batch_coarse < problem.n:
                batch = sample_batch(rng, problem.n, config.batch_coarse)
            if config.vr:
                g = vr_coarse_gradient(problem, obj.anchor, anchor_grad, R, cs.theta, batch)
            else:
                g = obj.gradient(cs.theta, batch)
            tau = config.coarse_tau_at(t)
            new = _step(cspec, cs, g, tau, t)
            trace.sym_bregman.append(regs.sym_bregman(new.theta, cs.theta, new.v, cs.v))
            cs = new
            if check:
                regs.check_state(cspec, cs, f"coarse iterate {t}")
            if config.record or callback is not None:
                lifted = obj.lift(cs.theta)
                if config.record:
                    trace.entries.append(
                        _entry(problem, layout, units, t, "coarse", lifted, tau, f_sparse))
                if callback is not None:
                    callback(StepEvent(t, "coarse", lifted, R.lift(state.v, cs.v), cs, R, cspec))
            t += 1
        state = merge_state(state, R, cs, spec if check else None, cspec)
        g = _grad(problem, state.theta, config.batch_fine, rng)
    else:
        g = pre_grad if pre_grad is not None else _grad(problem, state.theta, config.batch_fine, rng)

    f_sparse = problem.forward_flops(state.theta)
    tau = config.fine_tau(t)
    state = _step(spec, state, g, tau, t)
    if check:
        regs.check_state(spec, state, f"fine iterate {t}")
    if config.record:
        trace.entries.append(_entry(problem, layout, units, t, "fine", state.theta, tau, f_sparse))
    if callback is not None:
        callback(StepEvent(t, "fine", state.theta, state.v))
    trace.steps = t - step + 1
    return state, trace


def run(problem, spec: RegularizerSpec, config: MLConfig, state: BregmanState, steps: int,
        rng: np.random.Generator | None = None, callback=None, evaluate=None, eval_every=None):
    """Run cycles until ``steps`` steps are taken.

    Returns ``(state, RunRecord, traces)``.  ``evaluate(state, step)`` may
    return a dict that is stored in ``RunRecord.evals`` at the first cycle
    boundary after every ``eval_every`` steps, and at the end.
    """
    rng = rng if rng is not None else np.random.default_rng()
    record = RunRecord(float(problem.forward_flops()))
    units = spec.unit_ids()
    traces = []
    t = 0
    next_eval = eval_every
    while t < steps:
        state, trace = ml_cycle(state, problem, spec, config, rng, step=t,
                                budget=steps - t, callback=callback, units=units)
        record.extend(trace.entries)
        traces.append(trace)
        t += trace.steps
        if evaluate is not None and eval_every and t >= next_eval:
            record.evals.append({"step": t, **evaluate(state, t)})
            next_eval += eval_every
    if evaluate is not None and (not record.evals or record.evals[-1]["step"] != t):
        record.evals.append({"step": t, **evaluate(state, t)})
    return state, record, traces
