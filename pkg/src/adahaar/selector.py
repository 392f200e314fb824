"""Local resolution level selection and the adaptive histogram estimator.

For each finest bin the selector walks the candidate levels from coarse to
fine and keeps the first one whose estimate is statistically compatible with
every finer estimate along the bin's ancestor chain:

    sqrt(n 2^-j') |f_n(j', x) - f_n(j, x)|  <=  zeta * sqrt(f_n(j, x))

for all j' with j < j' <= j_max.  If no candidate passes, the finest level is
used.  All quantities are constant on finest bins, so everything is computed
per bin index; the adaptive estimate is a step function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from adahaar import _kernels
from adahaar.dyadic import CountsPyramid, bin_index
from adahaar.errors import ValidationError

__all__ = [
    "SelectionMap",
    "adaptive_estimate",
    "estimate_at",
    "fine_weights",
    "lepski_select",
    "select_all",
    "select_and_estimate",
    "sup_weights",
]


@dataclass(frozen=True)
class SelectionMap:
    """Chosen level per finest bin; constant on each bin by construction."""

    start_level: int
    j_max: int
    jhat: np.ndarray

    def __post_init__(self):
        if np.any(self.jhat < self.start_level) or np.any(self.jhat > self.j_max):
            raise ValidationError("selected levels must lie in [start_level, j_max]")
        self.jhat.flags.writeable = False


def fine_weights(n: int, levels: np.ndarray) -> np.ndarray:
    """``sqrt(n 2^-j)`` per level; the test statistic's scale factor."""
    return np.sqrt(np.ldexp(float(n), -np.asarray(levels)))


def sup_weights(n: int, levels: np.ndarray) -> np.ndarray:
    """``sqrt(n 2^-j / log n)`` per level; the sup-statistic normalisation."""
    return np.sqrt(np.ldexp(float(n), -np.asarray(levels)) / math.log(n))


def chain_tables(F: np.ndarray, n: int, j0: int = 0):
    """Shared precomputation for selection on an estimate matrix.

    ``F[:, l]`` holds estimates at level ``j0 + l``.  Returns
    ``(sqrtF, inv_s, maxstat)`` with ``inv_s = 1/sqrt(F)`` and the
    zero-count convention ``1/0 := 0``.
    """
    L = F.shape[1]
    levels = np.arange(j0, j0 + L)
    sqrtF = np.sqrt(F)
    inv_s = np.zeros_like(sqrtF)
    np.divide(1.0, sqrtF, out=inv_s, where=F > 0.0)
    maxstat = _kernels.pair_maxstat(np.ascontiguousarray(F), fine_weights(n, levels))
    return sqrtF, inv_s, maxstat


def _check_args(p: CountsPyramid, J: int, zeta: float):
    if not 0 <= J <= p.j_max:
        raise ValidationError(f"start level {J} outside [0, {p.j_max}]")
    if not zeta >= 0.0:
        raise ValidationError(f"threshold must be >= 0, got {zeta}")


def select_and_estimate(p: CountsPyramid, J: int, zeta: float):
    """Selection map and adaptive estimate for every finest bin."""
    _check_args(p, J, zeta)
    F = p.chain_matrix()
    sqrtF, _, maxstat = chain_tables(F, p.n)
    sel = _kernels.select_levels(sqrtF, maxstat, zeta, J)
    fhat = np.take_along_axis(F, sel[:, None], axis=1)[:, 0]
    return SelectionMap(J, p.j_max, sel), fhat


def select_all(p: CountsPyramid, J: int, zeta: float) -> SelectionMap:
    """Selected level for every finest bin."""
    return select_and_estimate(p, J, zeta)[0]


def lepski_select(p: CountsPyramid, J: int, m: int, zeta: float) -> int:
    """Selected level for the single finest bin ``m``."""
    if not 0 <= m < 2**p.j_max:
        raise ValidationError(f"bin index {m} outside [0, {2**p.j_max - 1}]")
    return int(select_all(p, J, zeta).jhat[m])


def adaptive_estimate(p: CountsPyramid, J: int, zeta: float) -> np.ndarray:
    """Adaptive histogram values, one per finest bin (a step function)."""
    return select_and_estimate(p, J, zeta)[1]


def estimate_at(p: CountsPyramid, fhat: np.ndarray, x) -> np.ndarray:
    """Evaluate a per-bin step function at points of (0, 1]."""
    return fhat[bin_index(x, p.j_max)]
