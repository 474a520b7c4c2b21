"""Sample containers, CSV ingestion and seeded pairing/splitting."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimError, EmptyInput, ParseError, TooFewSamples

logger = logging.getLogger(__name__)


def make_rng(seed) -> np.random.Generator:
    """Return a PCG64 generator for ``seed``.

    Accepts an int, a ``SeedSequence`` or an existing ``Generator`` (returned
    unchanged). Two generators built from the same int produce identical
    streams.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    if seed is None:
        raise ValueError("an explicit seed is required")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def seed_int(seed) -> int:
    """A 64-bit integer seed derived deterministically from ``seed``."""
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(1, np.uint64)[0])
    return int(seed)


def child_seeds(seed, count: int) -> list[np.random.SeedSequence]:
    """Independent child seeds of ``seed``.

    Unlike ``SeedSequence.spawn`` this does not mutate its argument, so calling
    it twice with the same seed yields the same children.
    """
    if isinstance(seed, np.random.SeedSequence):
        entropy, key = seed.entropy, tuple(seed.spawn_key)
    else:
        entropy, key = int(seed), ()
    return [np.random.SeedSequence(entropy, spawn_key=key + (i,)) for i in range(count)]


@dataclass(frozen=True, eq=False)
class SampleSet:
    """n points in d dimensions drawn from one distribution."""

    points: np.ndarray
    label: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise EmptyInput(f"expected a non-empty n x d matrix, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("sample contains NaN or Inf")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n


@dataclass(frozen=True, eq=False)
class PairedSample:
    """Equal-sized samples whose rows are paired by index: z_i = (x_i, y_i)."""

    x: SampleSet
    y: SampleSet

    def __post_init__(self):
        if self.x.n != self.y.n:
            raise DimError(f"paired samples need equal sizes, got {self.x.n} and {self.y.n}")
        if self.x.d != self.y.d:
            raise DimError(f"dimension mismatch: {self.x.d} vs {self.y.d}")

    @classmethod
    def from_arrays(cls, x, y) -> "PairedSample":
        return cls(SampleSet(x, "x"), SampleSet(y, "y"))

    @property
    def n(self) -> int:
        return self.x.n

    @property
    def d(self) -> int:
        return self.x.d

    def take(self, index) -> "PairedSample":
        """Sub-sample of the pairs at ``index`` (pairs stay together)."""
        index = np.asarray(index)
        return PairedSample(
            SampleSet(self.x.points[index], self.x.label),
            SampleSet(self.y.points[index], self.y.label),
        )


def load_csv(path, has_header: bool = False, label: str | None = None) -> SampleSet:
    """Read one sample per row from a comma-separated file."""
    path = Path(path)
    rows = []
    width = None
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if has_header and lineno == 1:
                continue
            if not record or all(not cell.strip() for cell in record):
                continue
            if width is None:
                width = len(record)
            elif len(record) != width:
                raise ParseError(
                    f"{path}: row {lineno} has {len(record)} columns, expected {width}",
                    row=lineno,
                )
            values = []
            for col, cell in enumerate(record, start=1):
                try:
                    value = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {lineno}, column {col}: not a number: {cell!r}",
                        row=lineno,
                        column=col,
                    ) from None
                if not math.isfinite(value):
                    raise ParseError(
                        f"{path}: row {lineno}, column {col}: non-finite value",
                        row=lineno,
                        column=col,
                    )
                values.append(value)
            rows.append(values)
    if not rows:
        raise EmptyInput(f"{path}: no data rows")
    return SampleSet(np.array(rows, dtype=np.float64), label if label is not None else path.stem)


def write_csv(sample: SampleSet, path, header: list[str] | None = None) -> None:
    # repr() gives the shortest string that round-trips the float exactly
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in sample.points:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def pair_samples(x: SampleSet, y: SampleSet, seed) -> PairedSample:
    """Form pairs z_i = (x_i, y_i) after shuffling each sample independently.

    Samples of unequal size are truncated to the smaller one (with a warning).
    """
    if x.d != y.d:
        raise DimError(f"dimension mismatch: {x.d} vs {y.d}")
    sx, sy = child_seeds(seed, 2)
    px = make_rng(sx).permutation(x.n)
    py = make_rng(sy).permutation(y.n)
    n = min(x.n, y.n)
    if x.n != y.n:
        logger.warning("unequal sample sizes %d and %d; truncating both to %d", x.n, y.n, n)
    return PairedSample(
        SampleSet(x.points[px[:n]], x.label), SampleSet(y.points[py[:n]], y.label)
    )


def split_half(s: PairedSample, seed) -> tuple[PairedSample, PairedSample]:
    """Shuffle the pairs and split them into (train, test) of sizes floor(n/2), n - floor(n/2)."""
    if s.n < 2:
        raise TooFewSamples(f"need at least 2 pairs to split, got {s.n}")
    perm = make_rng(seed).permutation(s.n)
    half = s.n // 2
    return s.take(np.sort(perm[:half])), s.take(np.sort(perm[half:]))


def pool(s: PairedSample) -> SampleSet:
    """All x rows followed by all y rows."""
    return SampleSet(np.vstack([s.x.points, s.y.points]), "pooled")
