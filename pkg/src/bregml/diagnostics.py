"""Run records, training-FLOP accounting and convergence-rate checks.

A training step costs ``3 f_S`` when only the active parameters are touched
(sparse forward plus a backward at twice the forward cost) and ``2 f_S + f_D``
when the full gradient is needed.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import IncompleteTrace


@dataclass
class StepEntry:
    step: int
    phase: str  # "fine" or "coarse"
    loss: float
    tau: float
    active_units: int
    nonzeros: int
    sparsity: float
    conv_sparsity: float
    f_sparse: float
    step_flops: float = 0.0
    cumulative_flops: float = 0.0


CSV_COLUMNS = [f.name for f in fields(StepEntry)]


def step_cost(phase: str, f_sparse: float, f_dense: float) -> float:
    if phase == "coarse":
        return 3.0 * f_sparse
    return 2.0 * f_sparse + f_dense


@dataclass
class RunRecord:
    """Per-step trace of one run plus periodic evaluation rows."""

    f_dense: float
    steps: list = field(default_factory=list)
    evals: list = field(default_factory=list)

    def append(self, entry: StepEntry):
        if self.steps and entry.step <= self.steps[-1].step:
            raise ValueError("step indices must be strictly increasing")
        entry.step_flops = step_cost(entry.phase, entry.f_sparse, self.f_dense)
        prev = self.steps[-1].cumulative_flops if self.steps else 0.0
        entry.cumulative_flops = prev + entry.step_flops
        self.steps.append(entry)

    def extend(self, entries):
        for e in entries:
            self.append(e)

    def __len__(self):
        return len(self.steps)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.steps])

    @property
    def losses(self) -> np.ndarray:
        return self.column("loss")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for e in self.steps:
                w.writerow([_fmt(v) for v in asdict(e).values()])

    def write_evals_csv(self, path):
        if not self.evals:
            return
        keys = list(self.evals[0])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys)
            for row in self.evals:
                w.writerow([_fmt(row.get(k)) for k in keys])

    @classmethod
    def read_csv(cls, path, f_dense: float) -> "RunRecord":
        rec = cls(f_dense)
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rec.steps.append(StepEntry(
                    step=int(row["step"]), phase=row["phase"], loss=float(row["loss"]),
                    tau=float(row["tau"]), active_units=int(row["active_units"]),
                    nonzeros=int(row["nonzeros"]), sparsity=float(row["sparsity"]),
                    conv_sparsity=float(row["conv_sparsity"]), f_sparse=float(row["f_sparse"]),
                    step_flops=float(row["step_flops"]),
                    cumulative_flops=float(row["cumulative_flops"])))
        return rec


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def expected_step_flops(f_sparse: float, f_dense: float, m: int) -> float:
    """Mean cost per step when every ``(m+1)``-th step needs the full gradient."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    if f_sparse > f_dense:
        raise ValueError("sparse FLOPs cannot exceed dense FLOPs")
    return (m * 3.0 * f_sparse + (2.0 * f_sparse + f_dense)) / (m + 1)


def training_flop_ratio(record: RunRecord, f_dense: float | None = None) -> float:
    """Training FLOPs of a trace relative to dense SGD (``3 f_D`` per step)."""
    if f_dense is None:
        f_dense = record.f_dense
    if not record.steps or not f_dense > 0:
        raise IncompleteTrace("trace is empty or has no dense FLOP count")
    total = math.fsum(step_cost(e.phase, e.f_sparse, f_dense) for e in record.steps)
    return total / (len(record.steps) * 3.0 * f_dense)


def rate_check(losses, loss_star: float, rate: float, slack: float = 1e-9, floor: float = 0.0):
    """Check ``L_k - L* <= (1 - rate)^k (L_0 - L*) (1 + slack)`` for every ``k``.

    Steps whose bound has fallen below ``floor`` are not asserted; pass a
    floor near the rounding level of ``L*`` when the trace runs long enough
    to reach it.  Returns ``(ok, worst)`` where ``worst`` is the largest
    observed ratio of the gap to its bound (0 when the bound is vacuous).
    """
    if not 0 < rate < 1:
        raise ValueError("rate must lie in (0, 1)")
    losses = np.asarray(losses, dtype=np.float64)
    gap0 = losses[0] - loss_star
    ok = True
    worst = 0.0
    for k, lk in enumerate(losses):
        gap = lk - loss_star
        bound = (1.0 - rate) ** k * gap0
        if k > 0 and bound < floor:
            break
        if gap > bound * (1.0 + slack):
            ok = False
        if k == 0:
            continue
        if bound > 0:
            worst = max(worst, gap / bound)
        elif gap > 0:
            worst = math.inf
    return ok, worst
