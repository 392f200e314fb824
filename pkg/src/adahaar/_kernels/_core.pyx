# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the numpy kernels.

Bitwise parity with ``numpy_impl`` is load-bearing (the backend is picked at
import time and outputs must not depend on the pick), so every float
expression mirrors the numpy evaluation order exactly.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

BACKEND_NAME = "compiled"


def pair_maxstat(double[:, ::1] F, double[::1] root):
    cdef Py_ssize_t B = F.shape[0]
    cdef Py_ssize_t L = F.shape[1]
    out_arr = np.empty((B, L), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, cp
    cdef double mx, v, fc
    with nogil:
        for r in range(B):
            for c in range(L):
                mx = 0.0
                fc = F[r, c]
                for cp in range(c + 1, L):
                    v = fabs(F[r, cp] - fc) * root[cp]
                    if v > mx:
                        mx = v
                out[r, c] = mx
    return out_arr


def select_levels(double[:, ::1] sqrtF, double[:, ::1] maxstat, double zeta,
                  Py_ssize_t base):
    cdef Py_ssize_t B = sqrtF.shape[0]
    cdef Py_ssize_t L = sqrtF.shape[1]
    out_arr = np.empty(B, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef Py_ssize_t r, c, best
    cdef double ms
    with nogil:
        for r in range(B):
            best = L
            for c in range(L - 1, base - 1, -1):
                ms = maxstat[r, c]
                if ms <= zeta * sqrtF[r, c] or ms == 0.0:
                    best = c
            out[r] = best if best < L else L - 1
    return out_arr


def t_stats(double[:, ::1] F, double[:, ::1] sqrtF, double[:, ::1] inv_s,
            double[:, ::1] maxstat, double[::1] w, double zeta):
    cdef Py_ssize_t B = F.shape[0]
    cdef Py_ssize_t L = F.shape[1]
    out_arr = np.empty(B, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t r, c, best
    cdef double ms, t, tmax
    with nogil:
        for r in range(B):
            # suffix scan: best admissible level at or above each base
            tmax = 0.0
            best = L
            for c in range(L - 1, -1, -1):
                ms = maxstat[r, c]
                if ms <= zeta * sqrtF[r, c] or ms == 0.0:
                    best = c
                # base = c: selected level is `best` (or finest when none)
                if best < L:
                    t = (w[c] * fabs(F[r, best] - F[r, c])) * inv_s[r, c]
                else:
                    t = (w[c] * fabs(F[r, L - 1] - F[r, c])) * inv_s[r, c]
                if t > tmax:
                    tmax = t
            out[r] = tmax
    return out_arr
