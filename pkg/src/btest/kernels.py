"""Gaussian RBF kernels, their non-negative combinations and Gram matrices.

The Gaussian convention throughout is ``exp(-|a - b|^2 / (2 sigma^2))`` so a
bandwidth is on the same scale as a distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .data import SampleSet, make_rng
from .errors import DegenerateData, DimError, TooFewSamples

#: Base-kernel bandwidths 2^-15 ... 2^10 used for multiple-kernel selection.
DEFAULT_GRID = tuple(2.0**p for p in range(-15, 11))


@dataclass(frozen=True)
class KernelSpec:
    """Non-negative combination ``sum_j weight_j * exp(-r^2 / (2 sigma_j^2))``."""

    terms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        terms = tuple((float(s), float(w)) for s, w in self.terms)
        if not terms:
            raise ValueError("a kernel needs at least one term")
        for sigma, weight in terms:
            if not (np.isfinite(sigma) and sigma > 0):
                raise ValueError(f"bandwidth must be positive, got {sigma}")
            if not (np.isfinite(weight) and weight >= 0):
                raise ValueError(f"weight must be non-negative, got {weight}")
        if not any(w > 0 for _, w in terms):
            raise ValueError("at least one weight must be positive")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def gaussian(cls, sigma: float, weight: float = 1.0) -> "KernelSpec":
        return cls(((sigma, weight),))

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([s for s, _ in self.terms])

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.terms])

    @property
    def total_weight(self) -> float:
        return float(sum(w for _, w in self.terms))

    def describe(self) -> str:
        return " + ".join(f"{w:g}*rbf(sigma={s:g})" for s, w in self.terms)

    def __call__(self, sqdist):
        """Kernel values from squared distances (any array shape)."""
        sqdist = np.asarray(sqdist, dtype=np.float64)
        if len(self.terms) == 1:
            sigma, weight = self.terms[0]
            out = np.exp(sqdist * (-0.5 / sigma**2))
            return out if weight == 1.0 else weight * out
        out = np.zeros_like(sqdist)
        for sigma, weight in self.terms:
            if weight > 0:
                out += weight * np.exp(sqdist * (-0.5 / sigma**2))
        return out


@dataclass(frozen=True, eq=False)
class GramMatrix:
    values: np.ndarray
    spec: KernelSpec | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DimError(f"Gram matrix must be square, got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def size(self) -> int:
        return self.values.shape[0]


def eval_kernel(spec: KernelSpec, a, b) -> float:
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise DimError(f"points have different dimensions: {a.shape} vs {b.shape}")
    diff = a - b
    return float(spec(np.dot(diff, diff)))


def sq_distances(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Pairwise squared Euclidean distances (exactly zero on the diagonal when b is None)."""
    if b is None:
        d2 = cdist(a, a, "sqeuclidean")
        np.fill_diagonal(d2, 0.0)
        return d2
    if a.shape[1] != b.shape[1]:
        raise DimError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return cdist(a, b, "sqeuclidean")


def base_grams(spec: KernelSpec, s: SampleSet) -> np.ndarray:
    """One unweighted Gram matrix per kernel term, shape (terms, n, n)."""
    d2 = sq_distances(s.points)
    return np.stack([np.exp(d2 * (-0.5 / sigma**2)) for sigma, _ in spec.terms])


def gram(spec: KernelSpec, s: SampleSet) -> GramMatrix:
    d2 = sq_distances(s.points)
    values = spec(d2)
    # cdist may be asymmetric in the last ulp
    values = 0.5 * (values + values.T)
    np.fill_diagonal(values, spec.total_weight)
    return GramMatrix(values, spec)


def center_gram(g: GramMatrix) -> GramMatrix:
    """Double-centred Gram matrix ``H G H`` with ``H = I - 11^T / m``."""
    k = g.values
    row = k.mean(axis=1, keepdims=True)
    col = k.mean(axis=0, keepdims=True)
    centred = k - row - col + k.mean()
    return GramMatrix(0.5 * (centred + centred.T), g.spec)


def median_bandwidth(s: SampleSet, max_pairs: int = 1_000_000, seed=0) -> float:
    """Median Euclidean distance over distinct pairs of rows.

    When there are more than ``max_pairs`` pairs, the median is taken over
    ``max_pairs`` pairs sampled uniformly (with replacement) using ``seed``.
    """
    n = s.n
    if n < 2:
        raise TooFewSamples("median heuristic needs at least two points")
    total = n * (n - 1) // 2
    if total <= max_pairs:
        dist = pdist(s.points)
    else:
        rng = make_rng(seed)
        i = rng.integers(0, n, size=max_pairs)
        j = rng.integers(0, n - 1, size=max_pairs)
        j = j + (j >= i)  # uniform over j != i
        diff = s.points[i] - s.points[j]
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    med = float(np.median(dist))
    if med <= 0:
        if not np.any(dist > 0):
            raise DegenerateData("all pairwise distances are zero")
        raise DegenerateData("median pairwise distance is zero")
    return med
