"""Pure-numpy implementation of the hot kernels.

Each function here has a compiled twin in ``_core.pyx``.  The two must stay
bitwise identical: every floating-point expression is written with a pinned
evaluation order, and reductions use only exact operations (max, integer
suffix minima).
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def pair_maxstat(F: np.ndarray, root: np.ndarray) -> np.ndarray:
    """Worst standardised contrast against all finer levels.

    ``F`` is a (B, L) matrix of histogram estimates along chains;
    ``root[c]`` is ``sqrt(n 2^-level(c))``.  Returns ``(B, L)`` with
    ``out[:, c] = max_{c' > c} root[c'] * |F[:, c'] - F[:, c]|`` and 0 in the
    last column (no finer level to compare against).
    """
    B, L = F.shape
    A = np.abs(F[:, None, :] - F[:, :, None]) * root[None, None, :]
    finer = np.triu(np.ones((L, L), dtype=bool), k=1)
    A = np.where(finer[None, :, :], A, -1.0)
    return np.maximum(A.max(axis=2), 0.0)


def select_levels(sqrtF: np.ndarray, maxstat: np.ndarray, zeta: float,
                  base: int) -> np.ndarray:
    """First admissible level at or above ``base``, else the finest level.

    A level ``c`` is admissible when ``maxstat[:, c] <= zeta * sqrtF[:, c]``;
    the extra ``maxstat == 0`` clause only matters for ``zeta = inf`` where
    ``inf * 0`` would otherwise poison the comparison.
    """
    B, L = sqrtF.shape
    with np.errstate(invalid="ignore"):  # inf * 0 -> nan is handled by the | clause
        adm = (maxstat <= zeta * sqrtF) | (maxstat == 0.0)
    idx = np.where(adm, np.arange(L, dtype=np.int64)[None, :], L)
    suff = np.minimum.accumulate(idx[:, ::-1], axis=1)[:, ::-1]
    sel = np.where(suff == L, L - 1, suff)
    return sel[:, base].astype(np.int64, copy=True)


def t_stats(F: np.ndarray, sqrtF: np.ndarray, inv_s: np.ndarray,
            maxstat: np.ndarray, w: np.ndarray, zeta: float) -> np.ndarray:
    """Chain sup statistic per row.

    For every base level ``b`` the selector restarts at ``b``; the statistic
    is ``max_b w[b] * |F[:, sel(b)] - F[:, b]| * inv_s[:, b]`` where ``w[b]``
    is ``sqrt(n 2^-level(b) / log n)`` and ``inv_s`` is ``1/sqrt(F)`` with the
    zero-count convention ``1/0 := 0``.
    """
    B, L = F.shape
    with np.errstate(invalid="ignore"):  # inf * 0 -> nan is handled by the | clause
        adm = (maxstat <= zeta * sqrtF) | (maxstat == 0.0)
    idx = np.where(adm, np.arange(L, dtype=np.int64)[None, :], L)
    suff = np.minimum.accumulate(idx[:, ::-1], axis=1)[:, ::-1]
    sel = np.where(suff == L, L - 1, suff)
    Fsel = np.take_along_axis(F, sel, axis=1)
    term = (w[None, :] * np.abs(Fsel - F)) * inv_s
    return term.max(axis=1)
