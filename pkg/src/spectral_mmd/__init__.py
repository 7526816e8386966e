"""Spectral-regularized kernel two-sample tests."""

from .kernels import Kernel, KernelFamily, bandwidth_grid, gram, median_heuristic
from .spectral import (
    EigenSystem,
    PooledOperator,
    Regularizer,
    RegularizerKind,
    centered_kernel_eigs,
    eta_hat,
    g_matrix,
    mmd_u_stat,
    pooled_operator,
    regularizer_value,
)
from .testing import (
    SplitData,
    TestOutcome,
    adaptive_test,
    kernel_grid,
    lambda_grid,
    mmd_chebyshev_test,
    mmd_permutation_test,
    single_level_test,
    split_samples,
)

__version__ = "0.1.0"
