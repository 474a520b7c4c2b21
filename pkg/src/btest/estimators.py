"""Block-averaged MMD estimators.

A block of B pairs z_a = (x_a, y_a) yields the unbiased estimate

    eta(i) = 1 / (B (B - 1)) * sum_{a != b} h(z_a, z_b),
    h(z, z') = k(x, x') + k(y, y') - k(x, y') - k(x', y),

and the B-test statistic is the mean of eta(i) over n // B disjoint blocks.
B = 2 gives the linear-time estimate, B = n the quadratic-time U-statistic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import PairedSample
from .errors import BlockTooSmall, ConfigError, DimError, TooFewSamples
from .kernels import KernelSpec, sq_distances

# Rough cap on float64 temporaries (blocks x B x B x dims) held per chunk of blocks.
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class BlockLayout:
    block_size: int
    num_blocks: int
    dropped: int

    @classmethod
    def for_sample(cls, n: int, block_size: int) -> "BlockLayout":
        if block_size < 2:
            raise BlockTooSmall(f"block size must be at least 2, got {block_size}")
        if n < block_size:
            raise TooFewSamples(f"{n} pairs cannot fill a block of size {block_size}")
        m = n // block_size
        return cls(block_size, m, n - m * block_size)

    @property
    def used(self) -> int:
        return self.block_size * self.num_blocks


@dataclass(frozen=True, eq=False)
class BlockStats:
    values: np.ndarray
    layout: BlockLayout
    kernel: KernelSpec
    kernel_evaluations: int = field(default=0, compare=False)

    @property
    def mean(self) -> float:
        return math.fsum(self.values) / len(self.values)


def h_stat(spec: KernelSpec, z, z_prime) -> float:
    """h(z, z') for pairs z = (x, y) and z' = (x', y')."""
    x, y = (np.atleast_1d(np.asarray(p, dtype=np.float64)) for p in z)
    xp, yp = (np.atleast_1d(np.asarray(p, dtype=np.float64)) for p in z_prime)
    if not (x.shape == y.shape == xp.shape == yp.shape):
        raise DimError("all four points must share a dimension")

    def k(a, b):
        # accumulate dimension by dimension, in the same order as the block code
        d2 = 0.0
        for u, v in zip(a, b):
            d2 += (u - v) * (u - v)
        return float(spec(d2))

    cross = sorted((k(x, yp), k(xp, y)))
    return (k(x, xp) + k(y, yp)) - (cross[0] + cross[1])


def _pair_index(block_size: int):
    """Flat indices of the strict upper triangle and of the off-diagonal of a B x B matrix."""
    iu, ju = np.triu_indices(block_size, 1)
    off = np.flatnonzero(~np.eye(block_size, dtype=bool))
    return iu * block_size + ju, off


def _sq_dist_blocks(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # (c, B, d) x (c, B, d) -> (c, B, B); elementwise differences keep d2[a, b] == d2[b, a]
    out = np.zeros((a.shape[0], a.shape[1], b.shape[1]))
    for k in range(a.shape[2]):
        diff = a[:, :, None, k] - b[:, None, :, k]
        diff *= diff
        out += diff
    return out


def _block_values(spec: KernelSpec, x: np.ndarray, y: np.ndarray, block_size: int):
    """eta(i) for x, y already reshaped to (m, B, d). Returns (values, kernel evaluations).

    Kernel values inside a block are sorted before summing, which makes each
    block value exactly invariant to reordering the pairs within the block.
    """
    m, b, d = x.shape
    upper, off = _pair_index(b)
    chunk = max(1, _CHUNK_ELEMENTS // (3 * b * b * max(d, 2)))
    out = np.empty(m)
    evaluations = 0
    for start in range(0, m, chunk):
        xs = x[start : start + chunk]
        ys = y[start : start + chunk]
        c = xs.shape[0]
        sums = []
        for left, right, keep in ((xs, xs, upper), (ys, ys, upper), (xs, ys, off)):
            d2 = _sq_dist_blocks(left, right).reshape(c, b * b)[:, keep]
            kv = spec(d2)
            evaluations += kv.size
            kv.sort(axis=1)
            sums.append(kv.sum(axis=1))
        sxx, syy, sxy = sums
        # sum_{a != b} h = 2 * (upper(xx) + upper(yy)) - 2 * offdiag(xy)
        out[start : start + chunk] = 2.0 * ((sxx + syy) - sxy) / (b * (b - 1))
    return out, evaluations


def block_mmd_u(spec: KernelSpec, block: PairedSample) -> float:
    if block.n < 2:
        raise BlockTooSmall(f"a block needs at least 2 pairs, got {block.n}")
    x = block.x.points[None]
    y = block.y.points[None]
    values, _ = _block_values(spec, x, y, block.n)
    return float(values[0])


def btest_statistic(spec: KernelSpec, s: PairedSample, block_size: int) -> tuple[float, BlockStats]:
    """Mean of per-block U-statistics over contiguous blocks of ``block_size`` pairs.

    Trailing pairs that do not fill a block are dropped.
    """
    layout = BlockLayout.for_sample(s.n, int(block_size))
    m, b = layout.num_blocks, layout.block_size
    x = s.x.points[: layout.used].reshape(m, b, s.d)
    y = s.y.points[: layout.used].reshape(m, b, s.d)
    values, evaluations = _block_values(spec, x, y, b)
    values.setflags(write=False)
    blocks = BlockStats(values, layout, spec, evaluations)
    return blocks.mean, blocks


def full_mmd_u(spec: KernelSpec, s: PairedSample) -> float:
    """Quadratic-time U-statistic over all n pairs, from the three Gram blocks."""
    n = s.n
    if n < 2:
        raise TooFewSamples(f"need at least 2 pairs, got {n}")
    kxx = spec(sq_distances(s.x.points))
    kyy = spec(sq_distances(s.y.points))
    kxy = spec(sq_distances(s.x.points, s.y.points))
    diag = n * spec.total_weight
    sxx = kxx.sum() - diag
    syy = kyy.sum() - diag
    sxy = kxy.sum() - np.trace(kxy)
    return float((sxx + syy - 2.0 * sxy) / (n * (n - 1)))


def block_size(n: int, gamma: float = 0.5) -> int:
    """B = n**gamma rounded to the nearest integer, clamped to [2, n]."""
    if not 0.0 < gamma < 1.0:
        raise ConfigError(f"gamma must lie in (0, 1), got {gamma}")
    if n < 2:
        raise TooFewSamples(f"need at least 2 pairs, got {n}")
    b = math.floor(n**gamma + 0.5)
    return int(min(max(b, 2), n))


def expected_kernel_evaluations(n: int, block_size: int) -> int:
    layout = BlockLayout.for_sample(n, block_size)
    b = layout.block_size
    return layout.num_blocks * b * (b - 1) * 2
