# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled row scatter-add and CSR mat-vec kernels.

Accumulation order matches the numpy fallback (entry order, row-major),
so both backends agree bitwise.
"""

ctypedef fused real:
    float
    double


def scatter_add_rows(real[:, ::1] out, const long long[::1] idx,
                     const real[:, ::1] src):
    cdef Py_ssize_t m = src.shape[0]
    cdef Py_ssize_t d = src.shape[1]
    cdef Py_ssize_t i, j, r
    for i in range(m):
        r = <Py_ssize_t> idx[i]
        for j in range(d):
            out[r, j] += src[i, j]


def csr_matvec(const long long[::1] indptr, const long long[::1] indices,
               const real[::1] data, const real[:, ::1] x, real[:, ::1] out):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t i, j, k, c
    cdef real a
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            c = <Py_ssize_t> indices[k]
            a = data[k]
            for j in range(d):
                out[i, j] += a * x[c, j]


def csr_matvec_t(const long long[::1] indptr, const long long[::1] indices,
                 const real[::1] data, const real[:, ::1] g, real[:, ::1] out):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = g.shape[1]
    cdef Py_ssize_t i, j, k, c
    cdef real a
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            c = <Py_ssize_t> indices[k]
            a = data[k]
            for j in range(d):
                out[c, j] += a * g[i, j]
