# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: Jacobi-preconditioned CG on CSR storage and the Bernoulli function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, sqrt, expm1

cnp.import_array()


cdef inline void _csr_matvec(const int[::1] indptr, const int[::1] indices,
                             const double[::1] data, const double[::1] x,
                             double[::1] y) noexcept nogil:
    cdef Py_ssize_t i, p
    cdef double acc
    for i in range(y.shape[0]):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            acc += data[p] * x[indices[p]]
        y[i] = acc


def pcg_csr(const int[::1] indptr, const int[::1] indices, const double[::1] data,
            const double[::1] b, double[::1] x, const double[::1] dinv,
            double rtol, int maxiter, const double[::1] nullvec):
    """Solve A x = b in place; returns (iterations, final residual norm).

    ``nullvec`` (length 0 to disable) is a unit vector projected out of the
    residual each step, for consistent singular systems.
    """
    cdef Py_ssize_t n = b.shape[0], i
    cdef int it = 0
    cdef double rz, rz_new, alpha, beta, pap, bnorm = 0.0, rnorm, proj
    cdef bint project = nullvec.shape[0] == n
    r_arr = np.empty(n); z_arr = np.empty(n); p_arr = np.empty(n); q_arr = np.empty(n)
    cdef double[::1] r = r_arr, z = z_arr, p = p_arr, q = q_arr

    with nogil:
        for i in range(n):
            bnorm += b[i] * b[i]
        bnorm = sqrt(bnorm)
        _csr_matvec(indptr, indices, data, x, q)
        for i in range(n):
            r[i] = b[i] - q[i]
        if project:
            proj = 0.0
            for i in range(n):
                proj += r[i] * nullvec[i]
            for i in range(n):
                r[i] -= proj * nullvec[i]
        rnorm = 0.0
        rz = 0.0
        for i in range(n):
            z[i] = dinv[i] * r[i]
            p[i] = z[i]
            rz += r[i] * z[i]
            rnorm += r[i] * r[i]
        rnorm = sqrt(rnorm)
        if bnorm == 0.0:
            bnorm = 1.0
        while rnorm > rtol * bnorm and it < maxiter:
            _csr_matvec(indptr, indices, data, p, q)
            pap = 0.0
            for i in range(n):
                pap += p[i] * q[i]
            if pap == 0.0:
                break
            alpha = rz / pap
            rnorm = 0.0
            rz_new = 0.0
            for i in range(n):
                x[i] += alpha * p[i]
                r[i] -= alpha * q[i]
            if project:
                proj = 0.0
                for i in range(n):
                    proj += r[i] * nullvec[i]
                for i in range(n):
                    r[i] -= proj * nullvec[i]
            for i in range(n):
                z[i] = dinv[i] * r[i]
                rz_new += r[i] * z[i]
                rnorm += r[i] * r[i]
            rnorm = sqrt(rnorm)
            beta = rz_new / rz
            rz = rz_new
            for i in range(n):
                p[i] = z[i] + beta * p[i]
            it += 1
    return it, rnorm


def bernoulli(const double[::1] x):
    """B(x) = x / (exp(x) - 1), with the removable singularity at 0 filled in."""
    cdef Py_ssize_t n = x.shape[0], i
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef double xi
    with nogil:
        for i in range(n):
            xi = x[i]
            if fabs(xi) < 1e-5:
                out[i] = 1.0 - 0.5 * xi + xi * xi / 12.0
            elif xi > 700.0:
                out[i] = xi * exp(-xi)
            else:
                out[i] = xi / expm1(xi)
    return out_arr
