"""Sparse training with linearized Bregman iterations and a two-level (coarse/fine) variant."""
from .diagnostics import RunRecord, expected_step_flops, rate_check, training_flop_ratio
from .errors import (
    IncompleteTrace,
    InfeasibleDensity,
    InfeasibleInput,
    KinkProximity,
    LayoutMismatch,
    NoConvLayers,
    NonFiniteGradient,
)
from .initialization import InitScheme, erk_scale, mask_scores, sparse_init
from .optimizers import MLConfig, cosine_schedule, linbreg_step, ml_cycle, run, vr_coarse_gradient
from .param_space import Group, GroupLayout, conv_sparsity, nonzero_groups, total_sparsity
from .regularizers import (
    L1,
    BregmanState,
    GroupL2,
    RegularizerSpec,
    Zero,
    contains_subgradient,
    initial_state,
    prox,
)
from .transfer import RestrictionMap, build_restriction, coarse_loss, merge_state, restrict_state

__version__ = "0.1.0"
