"""Null distributions, thresholds and p-values, and the ``run_test`` driver."""

from __future__ import annotations

import enum
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg, stats

from .data import PairedSample, make_rng, pool
from .errors import (
    ConfigError,
    DegenerateVariance,
    FitError,
    NumericalError,
    ResourceLimit,
    TooFewBlocks,
)
from .estimators import BlockStats, block_size as block_size_rule, btest_statistic, full_mmd_u
from .kernels import KernelSpec, center_gram, gram

#: Largest pooled sample (2n) the spectrum and gamma nulls will eigendecompose / hold.
DEFAULT_SPECTRUM_CAP = 4000

Estimator = Callable[[KernelSpec, PairedSample], float]


class NullKind(str, enum.Enum):
    GAUSSIAN = "clt"
    PERMUTATION = "permutation"
    SPECTRUM = "spectrum"
    GAMMA = "gamma"


@dataclass(frozen=True, eq=False)
class NullModel:
    """Fitted distribution of the test statistic under P = Q.

    Only the fields relevant to ``kind`` are set:

    * GAUSSIAN: ``variance`` of the block average.
    * PERMUTATION / SPECTRUM: sorted ``draws`` of the statistic; SPECTRUM
      also keeps the ``eigenvalues`` it simulated from.
    * GAMMA: ``shape`` and ``scale`` of the gamma fitted to one block's
      positive part, plus ``loc``/``block_size``/``num_blocks`` mapping it onto
      the statistic's scale.
    """

    kind: NullKind
    variance: float | None = None
    draws: np.ndarray | None = None
    eigenvalues: np.ndarray | None = None
    shape: float | None = None
    scale: float | None = None
    block_size: int = 1
    num_blocks: int = 1

    @property
    def fitted_mean(self) -> float:
        return self.shape * self.scale

    @property
    def fitted_variance(self) -> float:
        return self.shape * self.scale**2

    def gamma_dist(self):
        """Frozen scipy distribution of the statistic under the gamma model.

        One block: B * eta(i) ~ G - mean(G) with G ~ Gamma(shape, scale). The
        mean of m blocks is therefore a shifted Gamma(m * shape, scale / (m B)).
        """
        m, b = self.num_blocks, self.block_size
        return stats.gamma(
            a=m * self.shape, loc=-self.fitted_mean / b, scale=self.scale / (m * b)
        )


@dataclass
class TestResult:
    __test__ = False

    statistic: float
    threshold: float
    p_value: float
    reject: bool
    alpha: float
    elapsed: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["elapsed_s"] = out.pop("elapsed")
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")


def gaussian_null(blocks: BlockStats) -> NullModel:
    """Normal null for the block average, variance estimated from the block values."""
    values = np.asarray(blocks.values, dtype=np.float64)
    m = len(values)
    if m < 2:
        raise TooFewBlocks(f"the Gaussian null needs at least 2 blocks, got {m}")
    variance = float(np.var(values, ddof=1)) / m
    if not (math.isfinite(variance) and variance > 0):
        raise DegenerateVariance("block values have zero variance")
    return NullModel(
        NullKind.GAUSSIAN,
        variance=variance,
        block_size=blocks.layout.block_size,
        num_blocks=m,
    )


def _tie_tolerance(stat: float, draws: np.ndarray) -> float:
    # Statistics equal up to summation order count as ties.
    scale = max(abs(stat), float(np.max(np.abs(draws))) if len(draws) else 0.0)
    return 1e-10 * scale


def threshold_and_pvalue(model: NullModel, stat: float, alpha: float) -> TestResult:
    """Upper-tail threshold and p-value of ``stat`` under ``model``.

    The decision is ``stat > threshold``. For the Gaussian and gamma models
    this matches ``p_value < alpha`` exactly away from the tie point. For the
    resampling models the threshold is the linearly interpolated (type 7)
    quantile of the draws and the p-value is ``(1 + #{draws >= stat}) /
    (1 + #draws)``; the two can disagree only when ``stat`` lies between the
    interpolated quantile and the next larger draw.
    """
    _check_alpha(alpha)
    stat = float(stat)
    if model.kind is NullKind.GAUSSIAN:
        sd = math.sqrt(model.variance)
        threshold = float(stats.norm.ppf(1.0 - alpha)) * sd
        p_value = float(stats.norm.sf(stat / sd))
    elif model.kind in (NullKind.PERMUTATION, NullKind.SPECTRUM):
        draws = model.draws
        threshold = float(np.quantile(draws, 1.0 - alpha))
        exceed = int(np.count_nonzero(draws >= stat - _tie_tolerance(stat, draws)))
        p_value = (1 + exceed) / (1 + len(draws))
    elif model.kind is NullKind.GAMMA:
        dist = model.gamma_dist()
        threshold = float(dist.ppf(1.0 - alpha))
        p_value = float(dist.sf(stat))
    else:  # pragma: no cover
        raise ConfigError(f"unknown null kind {model.kind}")
    return TestResult(
        statistic=stat,
        threshold=threshold,
        p_value=p_value,
        reject=bool(stat > threshold),
        alpha=float(alpha),
        diagnostics={"null": model.kind.value},
    )


def btest_estimator(block_size: int) -> Estimator:
    """The B-test statistic at a fixed block size, as an estimator callable."""

    def estimator(spec: KernelSpec, s: PairedSample) -> float:
        return btest_statistic(spec, s, block_size)[0]

    estimator.block_size = block_size
    return estimator


def _permuted_mmd_u(k: np.ndarray, perms: np.ndarray, total_weight: float) -> np.ndarray:
    """full_mmd_u for every row of ``perms`` (length-2n index permutations of the pooled Gram).

    With w = +1 on the x half and -1 on the y half,
    sum_{a != b} h = w' K w - 2 n k(x, x) + 2 sum_a K[x_a, y_a].
    """
    two_n = k.shape[0]
    n = two_n // 2
    out = np.empty(len(perms))
    chunk = max(1, (1 << 24) // (two_n * 8))
    for start in range(0, len(perms), chunk):
        p = perms[start : start + chunk]
        c = len(p)
        w = np.empty((c, two_n))
        rows = np.arange(c)[:, None]
        w[rows, p[:, :n]] = 1.0
        w[rows, p[:, n:]] = -1.0
        quad = np.einsum("ij,ij->i", w @ k, w)
        paired = k[p[:, :n], p[:, n:]].sum(axis=1)
        out[start : start + c] = (quad - 2.0 * n * total_weight + 2.0 * paired) / (n * (n - 1))
    return out


def permutation_null(
    spec: KernelSpec,
    s: PairedSample,
    estimator: Estimator = full_mmd_u,
    num_shuffles: int = 1000,
    seed=0,
) -> NullModel:
    """Resample the statistic over random re-splits of the pooled 2n points.

    For the quadratic-time estimator the pooled Gram matrix is computed once
    and every shuffle is evaluated from it; any other estimator is recomputed
    on the permuted data.
    """
    if num_shuffles < 100:
        raise ConfigError(f"num_shuffles must be at least 100, got {num_shuffles}")
    rng = make_rng(seed)
    n = s.n
    pooled = pool(s).points
    perms = np.stack([rng.permutation(2 * n) for _ in range(num_shuffles)])
    if estimator is full_mmd_u:
        draws = _permuted_mmd_u(gram(spec, pool(s)).values, perms, spec.total_weight)
    else:
        draws = np.array(
            [
                estimator(spec, PairedSample.from_arrays(pooled[p[:n]], pooled[p[n:]]))
                for p in perms
            ]
        )
    draws.sort()
    draws.setflags(write=False)
    b = getattr(estimator, "block_size", n)
    return NullModel(NullKind.PERMUTATION, draws=draws, block_size=b, num_blocks=n // b)


def _pooled_centred_gram(spec: KernelSpec, s: PairedSample, cap: int) -> np.ndarray:
    size = 2 * s.n
    if size > cap:
        raise ResourceLimit(f"pooled sample of {size} points exceeds the cap of {cap}")
    return center_gram(gram(spec, pool(s))).values


def _offdiag_second_moment(kc: np.ndarray) -> float:
    """U-statistic estimate of E[kc(x, x')^2] over distinct points."""
    size = kc.shape[0]
    return (float(np.sum(kc * kc)) - float(np.sum(np.diag(kc) ** 2))) / (size * (size - 1))


def gram_spectrum(
    spec: KernelSpec, s: PairedSample, cap: int = DEFAULT_SPECTRUM_CAP, debias: bool = True
) -> np.ndarray:
    """Estimated eigenvalues of the centred kernel operator, in decreasing order.

    Eigenvalues of the centred pooled Gram matrix divided by 2n; negative
    values are clipped to zero and those below 1e-12 times the largest are
    dropped.

    The Gram diagonal adds roughly E[kc(x, x)^2] / 2n to sum(lam^2), which for
    narrow kernels overstates the null variance by tens of percent at a few
    hundred points. With ``debias`` the eigenvalues are rescaled so that
    sum(lam^2) equals the off-diagonal estimate of E[kc(x, x')^2]; the factor
    tends to 1 as n grows.
    """
    kc = _pooled_centred_gram(spec, s, cap)
    try:
        eigs = linalg.eigvalsh(kc)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    eigs = np.clip(eigs[::-1], 0.0, None) / kc.shape[0]
    if eigs.size == 0 or eigs[0] <= 0:
        return np.zeros(0)
    eigs = eigs[eigs >= 1e-12 * eigs[0]]
    if debias:
        target = _offdiag_second_moment(kc)
        current = float(np.sum(eigs**2))
        eigs = eigs * math.sqrt(max(target, 0.0) / current)
    return eigs


def spectrum_null(
    spec: KernelSpec,
    s: PairedSample,
    num_draws: int = 500,
    seed=0,
    block_size: int | None = None,
    cap: int = DEFAULT_SPECTRUM_CAP,
    debias: bool = True,
) -> NullModel:
    """Simulate the weighted chi-square null from the Gram spectrum.

    One block satisfies B * eta(i) ~ sum_l lam_l (z_l^2 - 2) with z_l ~ N(0, 2).
    The average of m independent blocks replaces z_l^2 by 2 * chi2_m / m.
    """
    b = s.n if block_size is None else int(block_size)
    m = s.n // b
    if m < 1:
        raise ConfigError(f"block size {b} exceeds the sample size {s.n}")
    eigs = gram_spectrum(spec, s, cap, debias)
    rng = make_rng(seed)
    if eigs.size:
        z2 = 2.0 * rng.chisquare(m, size=(num_draws, eigs.size)) / m
        draws = (z2 - 2.0) @ eigs / b
    else:
        draws = np.zeros(num_draws)
    draws.sort()
    draws.setflags(write=False)
    eigs.setflags(write=False)
    return NullModel(NullKind.SPECTRUM, draws=draws, eigenvalues=eigs, block_size=b, num_blocks=m)


def spectral_constants(eigs) -> tuple[float, float]:
    """(2 sum lam^2, 8 sum lam^3): variance and third-moment constants of sum_l lam_l (u_l^2 - 1).

    These are stated for unit-variance Gaussians u_l. For eigenvalues in the
    ``sum lam (z^2 - 2)``, z ~ N(0, 2) form used by ``spectrum_null`` pass
    ``2 * eigs``.
    """
    lam = np.asarray(eigs, dtype=np.float64)
    if lam.size and np.any(lam < 0):
        raise ValueError("eigenvalues must be non-negative")
    return float(2.0 * np.sum(lam**2)), float(8.0 * np.sum(lam**3))


def gamma_null(
    spec: KernelSpec,
    s: PairedSample,
    block_size: int | None = None,
    cap: int = DEFAULT_SPECTRUM_CAP,
    debias: bool = True,
) -> NullModel:
    """Two-moment gamma approximation to the null.

    A gamma is matched to the positive part G = sum_l lam_l z_l^2 of one block's
    limit (the biased statistic), whose mean 2 tr(Kc) / 2n and variance
    8 |Kc|_F^2 / (2n)^2 need no eigendecomposition. The unbiased block
    statistic is G minus its mean. ``debias`` takes the variance from the
    off-diagonal entries only, as in ``gram_spectrum``.
    """
    b = s.n if block_size is None else int(block_size)
    if s.n < 2:
        raise FitError("gamma fit needs at least 2 pairs")
    kc = _pooled_centred_gram(spec, s, cap)
    size = kc.shape[0]
    mean = 2.0 * float(np.trace(kc)) / size
    if debias:
        var = 8.0 * _offdiag_second_moment(kc)
    else:
        var = 8.0 * float(np.sum(kc * kc)) / size**2
    if not (mean > 1e-14 and var > 1e-28):
        raise FitError(f"non-positive moment estimates (mean={mean:g}, var={var:g})")
    return NullModel(
        NullKind.GAMMA,
        shape=mean**2 / var,
        scale=var / mean,
        block_size=b,
        num_blocks=s.n // b,
    )


@dataclass(frozen=True)
class BTestConfig:
    """Block policy, level and null model of a test.

    ``block_size`` wins over ``gamma`` when both are given; ``block_size=None``
    means ``round(n ** gamma)``. A block size equal to n gives the
    quadratic-time test.
    """

    block_size: int | None = None
    gamma: float = 0.5
    alpha: float = 0.05
    null: NullKind = NullKind.GAUSSIAN
    num_shuffles: int = 1000
    num_draws: int = 500
    seed: int = 0
    spectrum_cap: int = DEFAULT_SPECTRUM_CAP

    def __post_init__(self):
        object.__setattr__(self, "null", NullKind(self.null))
        _check_alpha(self.alpha)
        if self.block_size is not None and self.block_size < 2:
            raise ConfigError(f"block size must be at least 2, got {self.block_size}")
        if self.block_size is None and not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")

    def resolve_block_size(self, n: int) -> int:
        if self.block_size is not None:
            return self.block_size
        return block_size_rule(n, self.gamma)


def _skewness(values: np.ndarray) -> float | None:
    if len(values) < 3 or np.ptp(values) == 0:
        return None
    return float(stats.skew(values))


def run_test(config: BTestConfig, s: PairedSample, spec: KernelSpec) -> TestResult:
    """Compute the statistic, fit the configured null and decide."""
    start = time.perf_counter()
    b = config.resolve_block_size(s.n)
    if b == s.n:
        stat = full_mmd_u(spec, s)
        blocks = None
        estimator = full_mmd_u
    else:
        stat, blocks = btest_statistic(spec, s, b)
        estimator = btest_estimator(b)

    if config.null is NullKind.GAUSSIAN:
        if blocks is None:
            raise TooFewBlocks("the Gaussian null needs at least 2 blocks; use a smaller block size")
        model = gaussian_null(blocks)
    elif config.null is NullKind.PERMUTATION:
        model = permutation_null(spec, s, estimator, config.num_shuffles, config.seed)
    elif config.null is NullKind.SPECTRUM:
        model = spectrum_null(spec, s, config.num_draws, config.seed, b, config.spectrum_cap)
    else:
        model = gamma_null(spec, s, b, config.spectrum_cap)

    result = threshold_and_pvalue(model, stat, config.alpha)
    result.elapsed = time.perf_counter() - start
    num_blocks = s.n // b
    result.diagnostics.update(
        {
            "block_size": b,
            "num_blocks": num_blocks,
            "dropped": s.n - num_blocks * b,
            "n": s.n,
            "kernel": spec.describe(),
            "skewness": _skewness(blocks.values) if blocks is not None else None,
            "block_values": blocks.values.tolist() if blocks is not None and num_blocks <= 10_000 else None,
        }
    )
    return result
