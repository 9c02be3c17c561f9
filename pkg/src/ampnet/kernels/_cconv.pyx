# cython: language_level=3
"""Compiled gather/scatter for 3x3, stride-1, zero-pad-1 convolution.

Layout is channel-major ``(C, N, H, W)``; columns are ``(C*9, N*H*W)`` with
row index ``c*9 + dy*3 + dx``. The scatter accumulates taps in the same
``(dy, dx)`` order as the NumPy fallback so both backends agree bit-for-bit.
"""
import numpy as np

cimport numpy as cnp
from libc.string cimport memcpy, memset

cnp.import_array()


def im2col3x3(const double[:, :, :, ::1] x):
    cdef Py_ssize_t C = x.shape[0], N = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t HW = H * W, P = N * HW
    out_arr = np.empty((C * 9, P), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double *dst
    cdef const double *src
    cdef Py_ssize_t c, n, h, dy, dx, sh, lo, hi
    with nogil:
        for c in range(C):
            for dy in range(3):
                for dx in range(3):
                    # valid output columns for this tap: w in [lo, hi)
                    lo = 1 if dx == 0 else 0
                    hi = W - 1 if dx == 2 else W
                    for n in range(N):
                        for h in range(H):
                            dst = &out[c * 9 + dy * 3 + dx, n * HW + h * W]
                            sh = h + dy - 1
                            if sh < 0 or sh >= H:
                                memset(dst, 0, W * sizeof(double))
                                continue
                            src = &x[c, n, sh, 0]
                            if lo == 1:
                                dst[0] = 0.0
                            if hi == W - 1:
                                dst[W - 1] = 0.0
                            memcpy(dst + lo, src + lo + dx - 1, (hi - lo) * sizeof(double))
    return out_arr


def col2im3x3(const double[:, ::1] cols, Py_ssize_t C, Py_ssize_t N,
              Py_ssize_t H, Py_ssize_t W):
    if cols.shape[0] != C * 9 or cols.shape[1] != N * H * W:
        raise ValueError(
            f"columns of shape {(cols.shape[0], cols.shape[1])} do not match "
            f"feature map {(C, N, H, W)}"
        )
    out_arr = np.zeros((C, N, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef double *dst
    cdef const double *src
    cdef Py_ssize_t c, n, h, w, dy, dx, th, lo, hi, HW = H * W
    with nogil:
        # (dy, dx) outermost keeps the accumulation order of the fallback
        for c in range(C):
            for dy in range(3):
                for dx in range(3):
                    # target columns w receive source column w - dx + 1
                    lo = 1 if dx == 2 else 0
                    hi = W - 1 if dx == 0 else W
                    for n in range(N):
                        for h in range(H):
                            th = h - dy + 1
                            if th < 0 or th >= H:
                                continue
                            dst = &out[c, n, h, 0]
                            src = &cols[c * 9 + dy * 3 + dx, n * HW + th * W]
                            for w in range(lo, hi):
                                dst[w] += src[w - dx + 1]
    return out_arr
