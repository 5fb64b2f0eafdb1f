import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bregml.errors import LayoutMismatch, NoConvLayers
from bregml.param_space import (
    Group,
    GroupLayout,
    conv_sparsity,
    load_checkpoint,
    nonzero_groups,
    save_checkpoint,
    total_sparsity,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def conv_layout(c_in=2, c_out=2, k=1):
    return GroupLayout([Group("conv", c_in * c_out * k * k, "conv_kernel", (c_in, c_out, k)),
                        Group("bias", c_out, "bias")])


def test_layout_offsets_cover_range():
    layout = GroupLayout.from_sizes([2, 1, 2])
    assert layout.total_dim == 5
    assert [layout.slice(g) for g in range(3)] == [slice(0, 2), slice(2, 3), slice(3, 5)]
    assert layout.group_ids().tolist() == [0, 0, 1, 2, 2]


def test_layout_rejects_bad_groups():
    with pytest.raises(ValueError):
        Group("w", 0)
    with pytest.raises(ValueError):
        Group("k", 5, "conv_kernel", (2, 2, 1))
    with pytest.raises(ValueError):
        GroupLayout([Group("a", 1), Group("a", 2)])


def test_check_rejects_wrong_length():
    with pytest.raises(LayoutMismatch):
        GroupLayout.from_sizes([2, 3]).check(np.zeros(4))


def test_nonzero_groups_examples():
    layout = GroupLayout.from_sizes([2, 1, 2])
    assert nonzero_groups(layout, [0, 0, 7, 0, 0]).tolist() == [False, True, False]
    assert not nonzero_groups(layout, np.zeros(5)).any()
    one = GroupLayout.from_sizes([3])
    assert nonzero_groups(one, [1e-14, 0, 0], tol=1e-12).tolist() == [False]


def test_total_sparsity_examples():
    assert total_sparsity([0, 0, 1, 0]) == 0.75
    assert total_sparsity(np.zeros(10)) == 1.0
    assert total_sparsity([1, 2, 3]) == 0.0


def test_conv_sparsity_examples():
    layout = conv_layout()
    assert conv_sparsity(layout, [1, 0, 0, 0, 5, 5]) == 0.75
    assert conv_sparsity(layout, [0, 0, 0, 0, 1, 1]) == 1.0
    assert conv_sparsity(layout, [1, 2, 3, 4, 0, 0]) == 0.0
    with pytest.raises(NoConvLayers):
        conv_sparsity(GroupLayout.from_sizes([3]), np.ones(3))


def test_kernel_slices_are_contiguous():
    layout = conv_layout(c_in=2, c_out=3, k=2)
    theta = np.arange(layout.total_dim, dtype=float)
    kern = layout.kernels(theta, 0)
    assert kern.shape == (3, 2, 4)
    assert kern[1, 0].tolist() == [8, 9, 10, 11]


@given(arrays(np.float64, st.integers(1, 40), elements=st.sampled_from([0.0, 1.0, -2.5, 1e-300])))
def test_sparsity_plus_density_is_one(theta):
    assert total_sparsity(theta) + np.count_nonzero(theta) / theta.size == 1.0


@given(arrays(np.float64, 12, elements=finite), st.floats(0, 10), st.floats(0, 10))
def test_nonzero_groups_monotone_in_tol(theta, a, b):
    layout = GroupLayout.from_sizes([3, 4, 5])
    lo, hi = sorted((a, b))
    assert not np.any(nonzero_groups(layout, theta, hi) & ~nonzero_groups(layout, theta, lo))


@settings(max_examples=50)
@given(arrays(np.float64, 12, elements=st.sampled_from([0.0, 1.0, -3.0, 0.5])),
       st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3))
def test_conv_sparsity_scale_invariant(values, c):
    layout = GroupLayout([Group("conv", 12, "conv_kernel", (3, 1, 2))])
    assert conv_sparsity(layout, values) == conv_sparsity(layout, c * values)


def test_checkpoint_roundtrip(tmp_path):
    layout = conv_layout(2, 3, 2)
    rng = np.random.default_rng(0)
    theta, v = rng.normal(size=layout.total_dim), rng.normal(size=layout.total_dim)
    path = tmp_path / "ck.json"
    save_checkpoint(path, layout, theta, v=v)
    got_layout, got_theta, extras = load_checkpoint(path)
    assert got_layout == layout
    assert np.array_equal(got_theta, theta) and np.array_equal(extras["v"], v)
    assert set(json.loads(path.read_text())) == {"layout", "values", "v"}
