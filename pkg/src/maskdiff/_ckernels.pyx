# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Potts-chain conditional kernel (see ``_pykernels`` for the contract)."""
import numpy as np

from libc.stdint cimport int32_t, int64_t


def potts_conditional_logprobs(const int64_t[:, ::1] x,
                               const int32_t[:, ::1] labels,
                               const double[:, :, ::1] log_powers,
                               double log_K):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t L = x.shape[1]
    out_arr = np.empty((n, L), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t[::1] lft = np.empty(L, dtype=np.intp)
    cdef Py_ssize_t[::1] rgt = np.empty(L, dtype=np.intp)
    cdef Py_ssize_t[::1] stack = np.empty(L, dtype=np.intp)
    cdef Py_ssize_t r, i, top, a, b
    cdef int64_t xi
    cdef double v

    with nogil:
        for r in range(n):
            # nearest position to each side revealed strictly earlier (larger label)
            top = 0
            for i in range(L):
                while top > 0 and labels[r, stack[top - 1]] <= labels[r, i]:
                    top -= 1
                lft[i] = stack[top - 1] if top > 0 else -1
                stack[top] = i
                top += 1
            top = 0
            for i in range(L - 1, -1, -1):
                while top > 0 and labels[r, stack[top - 1]] <= labels[r, i]:
                    top -= 1
                rgt[i] = stack[top - 1] if top > 0 else -1
                stack[top] = i
                top += 1
            for i in range(L):
                a = lft[i]
                b = rgt[i]
                xi = x[r, i]
                if a < 0 and b < 0:
                    v = -log_K
                elif b < 0:
                    v = log_powers[i - a, x[r, a], xi]
                elif a < 0:
                    v = log_powers[b - i, xi, x[r, b]]
                else:
                    v = (log_powers[i - a, x[r, a], xi]
                         + log_powers[b - i, xi, x[r, b]]
                         - log_powers[b - a, x[r, a], x[r, b]])
                out[r, i] = v
    return out_arr
