"""Pure-Python/numpy fallback of the compiled kernels (same algorithms, same signatures)."""

import numpy as np
import scipy.sparse as sp


def pcg_csr(indptr, indices, data, b, x, dinv, rtol, maxiter, nullvec):
    n = b.shape[0]
    A = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    project = nullvec.shape[0] == n
    bnorm = float(np.sqrt(b @ b)) or 1.0
    r = b - A @ x
    if project:
        r -= (r @ nullvec) * nullvec
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    rnorm = float(np.sqrt(r @ r))
    it = 0
    while rnorm > rtol * bnorm and it < maxiter:
        q = A @ p
        pap = float(p @ q)
        if pap == 0.0:
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * q
        if project:
            r -= (r @ nullvec) * nullvec
        z = dinv * r
        rz_new = float(r @ z)
        rnorm = float(np.sqrt(r @ r))
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return it, rnorm


def bernoulli(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-5
    big = x > 700.0
    mid = ~(small | big)
    xs = x[small]
    out[small] = 1.0 - 0.5 * xs + xs * xs / 12.0
    out[big] = x[big] * np.exp(-x[big])
    out[mid] = x[mid] / np.expm1(x[mid])
    return out
