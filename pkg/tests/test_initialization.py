import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bregml.errors import InfeasibleDensity
from bregml.initialization import (
    FIXED_RESCALE,
    InitScheme,
    erk_scale,
    layer_densities,
    mask_scores,
    rescale_factor,
    run_streams,
    sparse_init,
    sparse_weights,
    weight_sparsity,
)
from bregml.models.network import Affine, Conv2D, NetworkSpec, ReLU
from bregml.oracles import bisect_density_scale, mean_density
from bregml.regularizers import L1, RegularizerSpec, contains_subgradient

MLP = NetworkSpec((16,), [Affine(16, 32), ReLU(), Affine(32, 2)])
CNN = NetworkSpec((16, 5, 5), [Conv2D(16, 32, 3), ReLU(), Affine(32 * 9, 4)])


def test_er_and_erk_scores():
    assert mask_scores(MLP, "er")[0] == 48 / 512 == 0.09375
    assert mask_scores(CNN, "erk")[0] == 54 / 4608
    assert mask_scores(CNN, "er")[0] == 48 / 512
    one = NetworkSpec((4, 3, 3), [Conv2D(4, 6, 1)])
    assert mask_scores(one, "erk")[0] == (4 + 6 + 2) / 24
    assert mask_scores(MLP, "uniform").tolist() == [1.0, 1.0]


def test_erk_scale_examples():
    assert erk_scale([0.3], [50], 0.8).tolist() == [pytest.approx(0.2, abs=1e-15)]
    assert erk_scale([0.2, 0.05], [100, 900], 0.0).tolist() == [1.0, 1.0]
    dens = erk_scale([0.2, 0.05], [100, 900], 0.9)
    assert abs(mean_density(dens, [100, 900]) - 0.1) <= 1e-6
    assert np.allclose(dens, bisect_density_scale([0.2, 0.05], [100, 900], 0.9), atol=1e-9)


def test_erk_scale_clamps_and_rejects():
    dens = erk_scale([1.0, 0.01], [10, 1000], 0.5)
    assert dens[0] == 1.0 and abs(mean_density(dens, [10, 1000]) - 0.5) <= 1e-12
    with pytest.raises(InfeasibleDensity):
        erk_scale([0.0, 1.0], [10, 10], 0.5)
    with pytest.raises(InfeasibleDensity):
        erk_scale([1.0], [10], 1.0)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.floats(1e-4, 10.0), st.integers(1, 10000)), min_size=1, max_size=6),
       st.floats(0.0, 0.999))
def test_erk_scale_matches_bisection(layers, sparsity):
    scores, sizes = zip(*layers)
    dens = erk_scale(scores, sizes, sparsity)
    assert np.all(dens > 0) and np.all(dens <= 1.0)
    assert abs(mean_density(dens, sizes) - (1.0 - sparsity)) <= 1e-6
    assert np.allclose(dens, bisect_density_scale(scores, sizes, sparsity), atol=1e-9)


def test_rescale_factors():
    assert math.isclose(rescale_factor(InitScheme(sparsity=0.99), 0.01), 10.0, rel_tol=1e-15)
    assert FIXED_RESCALE == 5.0
    assert rescale_factor(InitScheme(rescale=FIXED_RESCALE), 0.01) == 5.0
    assert rescale_factor(InitScheme(), 1.0) == 1.0
    with pytest.raises(ValueError):
        InitScheme(sparsity=1.0)
    with pytest.raises(ValueError):
        InitScheme(mask="random")


def test_dense_init_is_he_uniform():
    theta = sparse_weights(MLP, InitScheme(sparsity=0.0), 0)
    w = theta[MLP.layout.slice(0)]
    assert np.count_nonzero(w) == w.size
    assert np.max(np.abs(w)) <= math.sqrt(6 / 16)
    assert abs(w.var() / (2 / 16) - 1) < 0.2
    assert not theta[MLP.layout.slice(1)].any()


def test_sparse_init_hits_target_and_is_feasible():
    net = NetworkSpec((100,), [Affine(100, 100), ReLU(), Affine(100, 10)])
    spec = RegularizerSpec.uniform(net.layout, L1(0.01))
    scheme = InitScheme(sparsity=0.99)
    state = sparse_init(net, spec, scheme, 3)
    assert contains_subgradient(spec, state.theta, state.v)
    # binomial std of the zero fraction is 0.1 pp at 10000 weights
    assert abs(weight_sparsity(net, state.theta)[0] - 0.99) <= 0.005
    surv = state.theta[net.layout.slice(0)]
    surv = surv[surv != 0]
    assert np.max(np.abs(surv)) <= math.sqrt(6 / 100) * 10 + 1e-15
    assert np.max(np.abs(surv)) > math.sqrt(6 / 100)


def test_seed_reproducibility_and_stream_independence():
    spec = RegularizerSpec.uniform(MLP.layout, L1(0.01))
    a = sparse_init(MLP, spec, InitScheme(sparsity=0.5), 7)
    b = sparse_init(MLP, spec, InitScheme(sparsity=0.5), 7)
    c = sparse_init(MLP, spec, InitScheme(sparsity=0.5), 8)
    assert a.theta.tobytes() == b.theta.tobytes() and a.v.tobytes() == b.v.tobytes()
    assert a.theta.tobytes() != c.theta.tobytes()
    s1, s2 = run_streams(1), run_streams(1)
    assert s1["batches"].random() == s2["batches"].random()
    assert s1["weights"].random() != s1["masks"].random()


def test_layer_densities_by_scheme():
    dens = layer_densities(CNN, InitScheme(mask="erk", sparsity=0.95))
    sizes = [CNN.layout.groups[gw].size for _, _, gw, _ in CNN.parametric()]
    assert abs(mean_density(dens, sizes) - 0.05) <= 1e-12
    assert layer_densities(MLP, InitScheme(mask="uniform", sparsity=0.7)).tolist() == \
        pytest.approx([0.3, 0.3], abs=1e-15)


def test_layout_mismatch_rejected():
    spec = RegularizerSpec.uniform(CNN.layout, L1(0.01))
    with pytest.raises(ValueError):
        sparse_init(MLP, spec, InitScheme(), 0)
