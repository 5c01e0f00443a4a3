# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled spatial kernels: windowed box mean and nuclear-norm map.

The nuclear-norm kernel calls LAPACK dgesdd (singular values only) per
pixel on a reused workspace, which avoids materialising the full window
tensor the numpy fallback builds.
"""

from libc.stdlib cimport free, malloc
from libc.string cimport memcpy, memset

from scipy.linalg.cython_lapack cimport dgesdd

import numpy as np

from ..errors import NumericalError


def box_mean(double[:, ::1] arr, int t):
    """Mean over a (2t+1)x(2t+1) window, zero padded, fixed divisor."""
    cdef Py_ssize_t h = arr.shape[0]
    cdef Py_ssize_t w = arr.shape[1]
    cdef Py_ssize_t i, j
    cdef int win = 2 * t + 1
    cdef double inv_area = 1.0 / (<double> win * <double> win)
    cdef double acc

    rows_np = np.empty((h, w), dtype=np.float64)
    out_np = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] rows = rows_np
    cdef double[:, ::1] out = out_np

    # horizontal moving sum, zeros outside
    for i in range(h):
        acc = 0.0
        for j in range(min(t + 1, w)):
            acc += arr[i, j]
        rows[i, 0] = acc
        for j in range(1, w):
            if j + t < w:
                acc += arr[i, j + t]
            if j - t - 1 >= 0:
                acc -= arr[i, j - t - 1]
            rows[i, j] = acc

    # vertical moving sum over the row sums
    for j in range(w):
        acc = 0.0
        for i in range(min(t + 1, h)):
            acc += rows[i, j]
        out[0, j] = acc * inv_area
        for i in range(1, h):
            if i + t < h:
                acc += rows[i + t, j]
            if i - t - 1 >= 0:
                acc -= rows[i - t - 1, j]
            out[i, j] = acc * inv_area

    return out_np


def nuclear_map(double[:, :, ::1] stack, int t):
    """Per-pixel nuclear norm of the (2t+1)^2 x C window matrix.

    Windows extending past the border are zero filled. No division by the
    window area.
    """
    cdef Py_ssize_t c = stack.shape[0]
    cdef Py_ssize_t fh = stack.shape[1]
    cdef Py_ssize_t fw = stack.shape[2]
    cdef int win = 2 * t + 1
    cdef int ww = win * win

    # pixel-major copy so each window row is one contiguous memcpy
    st_np = np.ascontiguousarray(np.transpose(np.asarray(stack), (1, 2, 0)))
    cdef double[:, :, ::1] st = st_np

    # LAPACK reads the row-major (ww, c) buffer as column-major (c, ww);
    # singular values are transpose invariant.
    cdef int m = <int> c
    cdef int n = ww
    cdef int lda = m if m > 0 else 1
    cdef int ldu = 1
    cdef int ldvt = 1
    cdef int minmn = m if m < n else n
    cdef int info = 0
    cdef int lwork = -1
    cdef double wkopt = 0.0
    cdef char jobz = b'N'

    out_np = np.empty((fh, fw), dtype=np.float64)
    cdef double[:, ::1] out = out_np

    cdef double* buf = <double*> malloc(ww * c * sizeof(double))
    cdef double* sv = <double*> malloc(minmn * sizeof(double))
    cdef int* iwork = <int*> malloc(8 * minmn * sizeof(int))
    if buf == NULL or sv == NULL or iwork == NULL:
        free(buf); free(sv); free(iwork)
        raise MemoryError()

    dgesdd(&jobz, &m, &n, buf, &lda, sv, NULL, &ldu, NULL, &ldvt,
           &wkopt, &lwork, iwork, &info)
    lwork = <int> wkopt
    cdef double* work = <double*> malloc(lwork * sizeof(double))
    if work == NULL:
        free(buf); free(sv); free(iwork)
        raise MemoryError()

    cdef Py_ssize_t x, y, py, px, k
    cdef int dy, dx, r
    cdef Py_ssize_t bad_x = -1, bad_y = -1
    cdef double total

    for y in range(fh):
        for x in range(fw):
            memset(buf, 0, ww * c * sizeof(double))
            for dy in range(-t, t + 1):
                py = y + dy
                if py < 0 or py >= fh:
                    continue
                for dx in range(-t, t + 1):
                    px = x + dx
                    if px < 0 or px >= fw:
                        continue
                    r = (dy + t) * win + (dx + t)
                    memcpy(buf + r * c, &st[py, px, 0], c * sizeof(double))
            dgesdd(&jobz, &m, &n, buf, &lda, sv, NULL, &ldu, NULL, &ldvt,
                   work, &lwork, iwork, &info)
            if info != 0:
                bad_x = x
                bad_y = y
                break
            total = 0.0
            for k in range(minmn):
                total += sv[k]
            out[y, x] = total
        if bad_x >= 0:
            break

    free(buf); free(sv); free(iwork); free(work)
    if bad_x >= 0:
        raise NumericalError(
            f"SVD did not converge at pixel ({bad_y}, {bad_x})")
    return out_np
