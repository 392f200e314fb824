"""Dyadic interval arithmetic on (0, 1] and the multi-resolution counts pyramid.

Bins at level ``j`` are the half-open intervals ``(k 2^-j, (k+1) 2^-j]``,
``k = 0 .. 2^j - 1``.  The pyramid stores, for every level up to ``j_max``,
how many sample points fall in each bin; it is the sufficient statistic for
every estimator in this package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from adahaar.errors import ValidationError

__all__ = [
    "DyadicInterval",
    "CountsPyramid",
    "bin_index",
    "build_pyramid",
    "linear_estimate",
    "max_level",
    "read_sample",
]


@dataclass(frozen=True)
class DyadicInterval:
    """The interval ``(k 2^-j, (k+1) 2^-j]`` at resolution level ``j``."""

    j: int
    k: int

    def __post_init__(self):
        if self.j < 0:
            raise ValidationError(f"level must be >= 0, got {self.j}")
        if not 0 <= self.k < 2**self.j:
            raise ValidationError(
                f"index {self.k} out of range [0, {2**self.j - 1}] at level {self.j}"
            )

    @property
    def left(self) -> float:
        return math.ldexp(self.k, -self.j)

    @property
    def right(self) -> float:
        return math.ldexp(self.k + 1, -self.j)

    @property
    def width(self) -> float:
        return math.ldexp(1.0, -self.j)

    def parent(self) -> "DyadicInterval":
        if self.j == 0:
            raise ValidationError("the root interval has no parent")
        return DyadicInterval(self.j - 1, self.k >> 1)

    def children(self) -> tuple["DyadicInterval", "DyadicInterval"]:
        return (DyadicInterval(self.j + 1, 2 * self.k),
                DyadicInterval(self.j + 1, 2 * self.k + 1))

    def contains(self, x: float) -> bool:
        return self.left < x <= self.right


def bin_index(x, j: int):
    """Index ``k`` of the level-``j`` bin containing ``x``.

    ``ldexp(x, j)`` is exact (it only shifts the exponent), so
    ``ceil(x 2^j) - 1`` lands dyadic boundary points in the bin to their
    left, honouring the half-open convention even in floating point.
    Accepts scalars or arrays; raises for any ``x`` outside (0, 1].
    """
    if j < 0:
        raise ValidationError(f"level must be >= 0, got {j}")
    arr = np.asarray(x, dtype=np.float64)
    if arr.size and (np.any(arr <= 0.0) or np.any(arr > 1.0)):
        raise ValidationError("sample values must lie in (0, 1]")
    k = np.ceil(np.ldexp(arr, j)).astype(np.int64) - 1
    return int(k) if np.isscalar(x) or arr.ndim == 0 else k


def max_level(n: int, d: float = 1.0) -> int:
    """Largest level whose bin width still satisfies ``2^-j >= d (log n)^2 / n``."""
    if n <= 1:
        raise ValidationError(f"sample size must exceed 1, got {n}")
    if d <= 0:
        raise ValidationError(f"d must be positive, got {d}")
    lim = d * math.log(n) ** 2 / n
    if lim > 1.0:
        raise ValidationError(f"no admissible level: d (log n)^2 / n = {lim:g} > 1")
    j = 0
    while math.ldexp(1.0, -(j + 1)) >= lim:
        j += 1
    return j


class CountsPyramid:
    """Per-level dyadic bin counts of a sample on (0, 1].

    Attributes
    ----------
    n : int
        Total sample size (including points outside (0, 1]).
    j_max : int
        Finest stored level.
    counts : tuple of ndarray
        ``counts[j][k]`` is the number of points in bin ``(j, k)``; level
        ``j`` has ``2^j`` entries and coarse counts are the sums of their
        two children.
    n_dropped : int
        Points outside (0, 1], dropped from every level but kept in ``n``.
    """

    def __init__(self, n: int, counts: list[np.ndarray], n_dropped: int = 0,
                 d: float = 1.0):
        if n <= 1:
            raise ValidationError(f"sample size must exceed 1, got {n}")
        j_max = len(counts) - 1
        if j_max < 0:
            raise ValidationError("counts must hold at least level 0")
        if math.ldexp(1.0, -j_max) < d * math.log(n) ** 2 / n:
            raise ValidationError(
                f"j_max={j_max} too fine: 2^-j_max < d (log n)^2 / n "
                f"= {d * math.log(n) ** 2 / n:g} (n={n}, d={d})"
            )
        frozen = []
        for j, c in enumerate(counts):
            a = np.ascontiguousarray(c, dtype=np.int64)
            if a.shape != (2**j,):
                raise ValidationError(f"level {j} must have {2**j} bins, got {a.shape}")
            if np.any(a < 0):
                raise ValidationError(f"negative count at level {j}")
            a.flags.writeable = False
            frozen.append(a)
        for j in range(j_max):
            if not np.array_equal(frozen[j], frozen[j + 1].reshape(-1, 2).sum(axis=1)):
                raise ValidationError(f"aggregation mismatch between levels {j} and {j + 1}")
        if frozen[0][0] + n_dropped > n:
            raise ValidationError("counts exceed the declared sample size")
        self.n = n
        self.j_max = j_max
        self.counts = tuple(frozen)
        self.n_dropped = int(n_dropped)

    @classmethod
    def from_finest(cls, n: int, finest: np.ndarray, n_dropped: int = 0,
                    d: float = 1.0) -> "CountsPyramid":
        """Build all levels by aggregating a finest-level count vector."""
        finest = np.ascontiguousarray(finest, dtype=np.int64)
        j_max = int(round(math.log2(len(finest))))
        if 2**j_max != len(finest):
            raise ValidationError("finest level length must be a power of two")
        levels = [finest]
        for _ in range(j_max):
            levels.append(levels[-1].reshape(-1, 2).sum(axis=1))
        return cls(n, levels[::-1], n_dropped=n_dropped, d=d)

    def chain_matrix(self) -> np.ndarray:
        """Estimates ``f_n(j, .)`` for every finest bin and level.

        Returns the ``(2^j_max, j_max + 1)`` matrix whose row ``m`` holds the
        histogram estimates along the ancestor chain of finest bin ``m``.
        """
        B = 2**self.j_max
        F = np.empty((B, self.j_max + 1), dtype=np.float64)
        for j in range(self.j_max + 1):
            vals = np.ldexp(self.counts[j].astype(np.float64), j) / self.n
            F[:, j] = np.repeat(vals, B // 2**j)
        return F


def build_pyramid(sample, j_max: int, d: float = 1.0) -> CountsPyramid:
    """Count a sample into all dyadic levels up to ``j_max``.

    Points outside (0, 1] are dropped silently and reported through
    ``n_dropped``; ``n`` stays the full sample size so that estimates keep
    the 1/n normalisation.
    """
    xs = np.asarray(sample, dtype=np.float64)
    if xs.ndim != 1:
        xs = xs.ravel()
    n = xs.size
    inside = xs[(xs > 0.0) & (xs <= 1.0)]
    if n <= 1:
        raise ValidationError(f"sample size must exceed 1, got {n}")
    k = np.ceil(np.ldexp(inside, j_max)).astype(np.int64) - 1
    finest = np.bincount(k, minlength=2**j_max)
    return CountsPyramid.from_finest(n, finest, n_dropped=n - inside.size, d=d)


def linear_estimate(p: CountsPyramid, j: int, k: int) -> float:
    """Histogram estimate ``2^j N_{j,k} / n`` on bin ``(j, k)``."""
    if not 0 <= j <= p.j_max:
        raise ValidationError(f"level {j} outside [0, {p.j_max}]")
    return math.ldexp(float(p.counts[j][k]), j) / p.n


def read_sample(path) -> np.ndarray:
    """Read newline-separated decimal literals; blank lines are skipped.

    Malformed lines abort with the offending line number.
    """
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise ValidationError(
                    f"{path}: line {lineno}: not a decimal literal: {text!r}"
                ) from None
    return np.asarray(values, dtype=np.float64)
