"""Kernel backend selection and the solver-facing wrappers.

The compiled extension ``cellsim._kernels`` provides conjugate gradients
and is used when importable; set ``CELL_SIM_KERNELS=python`` to force the
numpy fallback. The Bernoulli function defaults to the numpy version, whose
vectorised ``expm1`` is faster than the compiled scalar loop (see
``benchmarks/bench_kernels.py``); the compiled one stays selectable by name.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("CELL_SIM_KERNELS", "auto") != "python":
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on build
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"


class LinearSolverError(RuntimeError):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


def get_backend(name: str | None = None):
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels as mod  # type: ignore[attr-defined]
        return mod
    raise ValueError(name)


def bernoulli(x, backend: str | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    flat = np.ascontiguousarray(x.ravel())
    impl = _kernels_py if backend is None else get_backend(backend)
    return np.asarray(impl.bernoulli(flat)).reshape(x.shape)


def pcg(A: sp.spmatrix, b: np.ndarray, x0: np.ndarray | None = None, rtol: float = 1e-10,
        maxiter: int | None = None, nullspace: np.ndarray | None = None,
        backend: str | None = None) -> tuple[np.ndarray, int, float]:
    """Jacobi-preconditioned conjugate gradients for symmetric positive (semi)definite A.

    ``nullspace`` is a vector spanning the kernel of a singular consistent
    system; it is normalised and projected out of the residual.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    b = np.ascontiguousarray(b, dtype=float)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float, copy=True)
    diag = A.diagonal()
    dinv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    if nullspace is not None:
        nv = np.asarray(nullspace, dtype=float)
        nv = np.ascontiguousarray(nv / np.linalg.norm(nv))
    else:
        nv = np.zeros(0)
    maxiter = 20 * n if maxiter is None else maxiter
    it, res = get_backend(backend).pcg_csr(
        A.indptr.astype(np.int32), A.indices.astype(np.int32), A.data.astype(float),
        b, x, dinv, float(rtol), int(maxiter), nv,
    )
    bnorm = float(np.linalg.norm(b)) or 1.0
    if res > rtol * bnorm:
        raise LinearSolverError(
            f"CG did not converge: {it} iterations, residual {res:.3e} (target {rtol * bnorm:.3e})",
            iterations=it, residual=res,
        )
    return x, it, res
