"""Differentiable finite-sum problems, networks, FLOP counts and data readers."""
from .datasets import read_csv, read_idx, write_csv, write_idx
from .flops import forward_flops, layer_flops
from .gradcheck import fd_check, fd_gradient
from .network import Affine, Conv2D, NetworkSpec, ReLU, build_network
from .problems import (
    FiniteSumProblem,
    LeastSquaresProblem,
    NetworkProblem,
    QuadraticProblem,
    full_gradient,
    make_quadratic,
    make_sparse_regression,
    make_two_blobs,
    minibatch_gradient,
    sample_batch,
)
