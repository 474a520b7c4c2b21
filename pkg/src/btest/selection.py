"""Kernel choice: fixed bandwidth, median heuristic, or max-ratio over a grid."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .data import PairedSample, pool, split_half
from .errors import BTestError, ConfigError, SelectionError
from .estimators import btest_statistic
from .kernels import DEFAULT_GRID, KernelSpec, median_bandwidth
from .nulls import gaussian_null

RATIO_EPS = 1e-8


@dataclass(frozen=True)
class SelectionStrategy:
    """``kind`` is "fixed", "median" or "maxratio".

    ``sigma`` is the bandwidth of a fixed kernel; ``grid`` the candidate
    bandwidths of max-ratio selection.
    """

    kind: str
    sigma: float | None = None
    grid: tuple[float, ...] = DEFAULT_GRID
    max_pairs: int = 1_000_000

    def __post_init__(self):
        if self.kind not in ("fixed", "median", "maxratio"):
            raise ConfigError(f"unknown kernel strategy {self.kind!r}")
        if self.kind == "fixed" and not (self.sigma is not None and self.sigma > 0):
            raise ConfigError("a fixed kernel needs a positive bandwidth")
        if self.kind == "maxratio":
            grid = tuple(float(g) for g in self.grid)
            if not grid or any(not g > 0 for g in grid):
                raise ConfigError("max-ratio grid must be non-empty and positive")
            object.__setattr__(self, "grid", grid)

    @classmethod
    def fixed(cls, sigma: float) -> "SelectionStrategy":
        return cls("fixed", sigma=float(sigma))

    @classmethod
    def median(cls, max_pairs: int = 1_000_000) -> "SelectionStrategy":
        return cls("median", max_pairs=max_pairs)

    @classmethod
    def max_ratio(cls, grid=DEFAULT_GRID) -> "SelectionStrategy":
        return cls("maxratio", grid=tuple(grid))

    @property
    def needs_training_split(self) -> bool:
        return self.kind == "maxratio"

    def describe(self) -> str:
        if self.kind == "fixed":
            return f"fixed:{self.sigma:g}"
        return self.kind


@dataclass(frozen=True)
class CandidateRatio:
    sigma: float
    ratio: float
    statistic: float
    stddev: float
    degenerate: bool = False


def candidate_ratios(grid, train: PairedSample, block_size: int, weight: float = 1.0) -> list[CandidateRatio]:
    """statistic / (stddev + eps) for each bandwidth, in grid order.

    The statistic and its standard deviation are those of the B-test at
    ``block_size`` on the training split, with each candidate kernel scaled by
    ``weight``. A candidate whose block values have no spread gets ratio 0 and
    ``degenerate=True``.
    """
    out = []
    for sigma in grid:
        spec = KernelSpec.gaussian(sigma, weight)
        stat, blocks = btest_statistic(spec, train, block_size)
        try:
            sd = math.sqrt(gaussian_null(blocks).variance)
        except BTestError:
            out.append(CandidateRatio(float(sigma), 0.0, stat, 0.0, True))
            continue
        ratio = stat / (sd + RATIO_EPS)
        if not math.isfinite(ratio):
            out.append(CandidateRatio(float(sigma), 0.0, stat, sd, True))
            continue
        out.append(CandidateRatio(float(sigma), ratio, stat, sd))
    return out


def select_kernel(strategy: SelectionStrategy, train: PairedSample, block_size: int, seed=0) -> KernelSpec:
    """Kernel for testing, chosen using only ``train``.

    Max-ratio picks the single grid bandwidth with the largest ratio; ties go
    to the smaller bandwidth.
    """
    if strategy.kind == "fixed":
        return KernelSpec.gaussian(strategy.sigma)
    if strategy.kind == "median":
        return KernelSpec.gaussian(median_bandwidth(pool(train), strategy.max_pairs, seed))
    ratios = candidate_ratios(strategy.grid, train, block_size)
    usable = [c for c in ratios if not c.degenerate]
    if not usable:
        raise SelectionError("every candidate kernel is degenerate on the training split")
    best = max(usable, key=lambda c: (c.ratio, -c.sigma))
    return KernelSpec.gaussian(best.sigma)


def choose_kernel(strategy: SelectionStrategy, s: PairedSample, block_size_for, seed=0):
    """Apply ``strategy`` to a full sample; returns (kernel, sample left for testing).

    Max-ratio trains on a seeded half and leaves the other half for testing.
    ``block_size_for`` maps a sample size to the block size used at that size.
    """
    if strategy.needs_training_split:
        train, test = split_half(s, seed)
        b = block_size_for(test.n)
        return select_kernel(strategy, train, min(b, train.n), seed), test
    return select_kernel(strategy, s, block_size_for(s.n), seed), s
