# cython: language_level=3
"""Compiled twins of the kernels in ``_pykernels``.

Operation order matches the numpy fallback exactly; do not enable fast-math.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport NAN, isnan

cnp.import_array()


cdef void _ewma_pass(const double[::1] values, const unsigned char[::1] present,
                     double alpha, bint reverse, double[::1] out) noexcept nogil:
    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t k, i
    cdef double state = 0.0
    cdef bint seeded = False
    for k in range(n):
        i = n - 1 - k if reverse else k
        if present[i]:
            if seeded:
                state = alpha * values[i] + (1.0 - alpha) * state
            else:
                state = values[i]
                seeded = True
        out[i] = state if seeded else NAN


def ewma_pass(values, present, double alpha, bint reverse=False):
    cdef double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef unsigned char[::1] p = np.ascontiguousarray(present, dtype=np.uint8)
    out = np.empty(v.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        _ewma_pass(v, p, alpha, reverse, o)
    return out


def ewma_fill(values, present, double alpha):
    cdef double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef unsigned char[::1] p = np.ascontiguousarray(present, dtype=np.uint8)
    cdef Py_ssize_t n = v.shape[0]
    fwd_arr = np.empty(n, dtype=np.float64)
    bwd_arr = np.empty(n, dtype=np.float64)
    out_arr = np.array(v, dtype=np.float64, copy=True)
    cdef double[::1] fwd = fwd_arr
    cdef double[::1] bwd = bwd_arr
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    cdef double f, b
    with nogil:
        _ewma_pass(v, p, alpha, False, fwd)
        _ewma_pass(v, p, alpha, True, bwd)
        for i in range(n):
            if p[i]:
                continue
            f = fwd[i]
            b = bwd[i]
            if isnan(f):
                out[i] = b
            elif isnan(b):
                out[i] = f
            else:
                out[i] = 0.5 * (f + b)
    return out_arr


def im2col_1d(x, Py_ssize_t kernel, Py_ssize_t stride, Py_ssize_t dilation, Py_ssize_t t_out):
    cdef const double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    cdef Py_ssize_t c = xv.shape[1]
    cols_arr = np.empty((n, t_out, c, kernel), dtype=np.float64)
    cdef double[:, :, :, ::1] cols = cols_arr
    cdef Py_ssize_t a, t, ch, k, base
    with nogil:
        for a in range(n):
            for t in range(t_out):
                base = t * stride
                for ch in range(c):
                    for k in range(kernel):
                        cols[a, t, ch, k] = xv[a, ch, base + k * dilation]
    return cols_arr


def col2im_1d(cols, Py_ssize_t t, Py_ssize_t stride, Py_ssize_t dilation):
    cdef const double[:, :, :, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64)
    cdef Py_ssize_t n = cv.shape[0]
    cdef Py_ssize_t t_out = cv.shape[1]
    cdef Py_ssize_t c = cv.shape[2]
    cdef Py_ssize_t kernel = cv.shape[3]
    dx_arr = np.zeros((n, c, t), dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t a, ch, k, s
    # tap-major accumulation keeps the same per-element order as the fallback
    with nogil:
        for a in range(n):
            for ch in range(c):
                for k in range(kernel):
                    for s in range(t_out):
                        dx[a, ch, k * dilation + s * stride] += cv[a, s, ch, k]
    return dx_arr


def horner2d(coeffs, v, d):
    cdef const double[:, ::1] cf = np.ascontiguousarray(coeffs, dtype=np.float64)
    vb, db = np.broadcast_arrays(np.asarray(v, dtype=np.float64), np.asarray(d, dtype=np.float64))
    shape = vb.shape
    cdef const double[::1] vv = np.ascontiguousarray(vb).ravel()
    cdef const double[::1] dd = np.ascontiguousarray(db).ravel()
    cdef Py_ssize_t m = vv.shape[0]
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t nv = cf.shape[0]
    cdef Py_ssize_t nd = cf.shape[1]
    cdef Py_ssize_t p, i, j
    cdef double acc, row
    with nogil:
        for p in range(m):
            acc = 0.0
            for i in range(nv - 1, -1, -1):
                row = 0.0
                for j in range(nd - 1, -1, -1):
                    row = row * dd[p] + cf[i, j]
                acc = acc * vv[p] + row
            out[p] = acc
    return out_arr.reshape(shape)
