"""Block-averaged kernel two-sample tests (B-tests)."""

from .data import PairedSample, SampleSet, load_csv, pair_samples, pool, split_half, write_csv
from .estimators import block_mmd_u, block_size, btest_statistic, full_mmd_u, h_stat
from .kernels import KernelSpec, center_gram, eval_kernel, gram, median_bandwidth
from .nulls import (
    BTestConfig,
    NullKind,
    TestResult,
    gamma_null,
    gaussian_null,
    permutation_null,
    run_test,
    spectral_constants,
    spectrum_null,
    threshold_and_pvalue,
)
from .selection import SelectionStrategy, candidate_ratios, select_kernel

__all__ = [
    "BTestConfig",
    "KernelSpec",
    "NullKind",
    "PairedSample",
    "SampleSet",
    "SelectionStrategy",
    "TestResult",
    "block_mmd_u",
    "block_size",
    "btest_statistic",
    "candidate_ratios",
    "center_gram",
    "eval_kernel",
    "full_mmd_u",
    "gamma_null",
    "gaussian_null",
    "gram",
    "h_stat",
    "load_csv",
    "median_bandwidth",
    "pair_samples",
    "permutation_null",
    "pool",
    "run_test",
    "select_kernel",
    "spectral_constants",
    "spectrum_null",
    "split_half",
    "threshold_and_pvalue",
    "write_csv",
]

__version__ = "0.1.0"
