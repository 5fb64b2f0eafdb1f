import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bregml.diagnostics import (
    RunRecord,
    StepEntry,
    expected_step_flops,
    rate_check,
    training_flop_ratio,
)
from bregml.errors import IncompleteTrace
from bregml.verify import constant_support_record

F_D = 1000.0


def test_expected_step_flops_examples():
    assert expected_step_flops(300.0, F_D, 0) == 2 * 300.0 + F_D
    assert expected_step_flops(F_D, F_D, 0) == expected_step_flops(F_D, F_D, 57) == 3 * F_D
    assert math.isclose(expected_step_flops(0.1 * F_D, F_D, 99), 0.309 * F_D, rel_tol=1e-15)
    with pytest.raises(ValueError):
        expected_step_flops(2 * F_D, F_D, 1)
    with pytest.raises(ValueError):
        expected_step_flops(F_D, F_D, -1)


@given(st.floats(0.0, 1.0), st.integers(0, 1000))
def test_expected_step_flops_monotone_in_m(frac, m):
    a = expected_step_flops(frac * F_D, F_D, m)
    b = expected_step_flops(frac * F_D, F_D, m + 1)
    assert b <= a * (1 + 1e-15)
    assert 3 * frac * F_D * (1 - 1e-15) <= b <= 3 * F_D * (1 + 1e-15)


def test_large_m_limit():
    assert abs(expected_step_flops(0.1 * F_D, F_D, 10 ** 6) / (0.3 * F_D) - 1) <= 1e-3


def test_training_flop_ratio_examples():
    assert training_flop_ratio(constant_support_record(F_D, F_D, 0, 7)) == 1.0
    ratio = training_flop_ratio(constant_support_record(0.1 * F_D, F_D, 99, 3))
    assert abs(ratio - 0.103) <= 1e-12
    with pytest.raises(IncompleteTrace):
        training_flop_ratio(RunRecord(F_D))
    with pytest.raises(IncompleteTrace):
        training_flop_ratio(constant_support_record(1.0, 0.0, 0, 1))


def test_record_bookkeeping_and_csv_roundtrip(tmp_path):
    rec = constant_support_record(250.0, F_D, 2, 2)
    assert rec.column("step_flops").tolist() == [750.0, 750.0, 1500.0] * 2
    assert rec.steps[-1].cumulative_flops == 6000.0
    with pytest.raises(ValueError):
        rec.append(StepEntry(0, "fine", 0.0, 0.1, 0, 0, 0.0, math.nan, 1.0))
    rec.write_csv(tmp_path / "trace.csv")
    back = RunRecord.read_csv(tmp_path / "trace.csv", F_D)
    assert len(back) == len(rec)
    for a, b in zip(rec.steps, back.steps):
        for key in ("step", "phase", "loss", "tau", "f_sparse", "step_flops", "cumulative_flops"):
            assert getattr(a, key) == getattr(b, key)
        assert math.isnan(b.conv_sparsity)
    assert training_flop_ratio(back) == training_flop_ratio(rec)


def test_evals_csv(tmp_path):
    rec = RunRecord(F_D)
    rec.write_evals_csv(tmp_path / "none.csv")
    assert not (tmp_path / "none.csv").exists()
    rec.evals = [{"step": 5, "loss": 0.25}, {"step": 10, "loss": 0.125}]
    rec.write_evals_csv(tmp_path / "evals.csv")
    assert (tmp_path / "evals.csv").read_text() == "step,loss\n5,0.25\n10,0.125\n"


def test_rate_check_examples():
    a, tau = 2.0, 0.3
    gd = [0.5 * a * (1 - a * tau) ** (2 * k) for k in range(50)]
    ok, worst = rate_check(gd, 0.0, a * tau)
    assert ok and worst <= 1.0
    assert not rate_check([1.0] * 5, 0.0, 0.1)[0]
    assert rate_check([2.0] * 5, 2.0, 0.5) == (True, 0.0)
    with pytest.raises(ValueError):
        rate_check([1.0], 0.0, 1.5)


def test_rate_check_floor_skips_rounding_level():
    # exact halving, then stuck at a rounding plateau
    losses = [0.5 ** k for k in range(40)] + [1e-11] * 5
    assert not rate_check(losses, 0.0, 0.5)[0]
    assert rate_check(losses, 0.0, 0.5, floor=1e-10)[0]


def test_loss_accessor():
    rec = constant_support_record(1.0, 2.0, 1, 2)
    assert isinstance(rec.losses, np.ndarray) and rec.losses.shape == (4,)
