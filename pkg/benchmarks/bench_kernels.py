"""Compare the compiled and pure-Python kernel backends.

Times Jacobi-preconditioned CG on the Poisson matrix of a cell mesh and the
Bernoulli function on a large array, checks both backends agree, and prints
a small table. Usage: ``python benchmarks/bench_kernels.py [nr ntheta]``.
"""

from __future__ import annotations

import sys
import timeit

import numpy as np

from cellsim import kernels
from cellsim.electrostatics import stiffness_matrix
from cellsim.mesh import CellMesh


def _best(fn, repeat=3):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(nr: int = 128, ntheta: int = 64) -> dict:
    try:
        kernels.get_backend("compiled")
    except ImportError:
        print("compiled backend not built; run `pip install -e . --no-build-isolation`")
        return {}
    mesh = CellMesh(0.5, nr, ntheta)
    K = stiffness_matrix(mesh)
    n = K.shape[0]
    rng = np.random.default_rng(0)
    b = rng.standard_normal(n)
    b -= b.mean()
    ones = np.ones(n)
    x_arg = rng.uniform(-30, 30, 1_000_000)
    # one Scharfetter-Gummel assembly evaluates B on every face of the mesh
    x_faces = rng.uniform(-3, 3, 2 * n)

    rows = []
    out = {}
    for name in ("python", "compiled"):
        t_cg = _best(lambda: kernels.pcg(K, b, rtol=1e-10, nullspace=ones, backend=name))
        t_be = _best(lambda: kernels.bernoulli(x_arg, backend=name))
        t_bf = _best(lambda: [kernels.bernoulli(x_faces, backend=name) for _ in range(200)]) / 200
        out[name] = (t_cg, t_be, t_bf)
        rows.append((name, t_cg, t_be, t_bf))
    xp, itp, _ = kernels.pcg(K, b, rtol=1e-10, nullspace=ones, backend="python")
    xc, itc, _ = kernels.pcg(K, b, rtol=1e-10, nullspace=ones, backend="compiled")
    diff_cg = float(np.max(np.abs(xp - xc)) / np.max(np.abs(xp)))
    diff_be = float(np.max(np.abs(kernels.bernoulli(x_arg, "python") - kernels.bernoulli(x_arg, "compiled"))))

    print(f"mesh {nr}x{ntheta} ({n} unknowns); CG iterations python={itp} compiled={itc}")
    print(f"{'backend':10s} {'pcg [s]':>10s} {'bernoulli 1e6 [s]':>18s} {'bernoulli faces [us]':>21s}")
    for name, t_cg, t_be, t_bf in rows:
        print(f"{name:10s} {t_cg:10.4f} {t_be:18.4f} {1e6 * t_bf:21.1f}")
    sp = [out["python"][i] / out["compiled"][i] for i in range(3)]
    print(f"{'speed-up':10s} {sp[0]:10.2f} {sp[1]:18.2f} {sp[2]:21.2f}")
    print(f"max relative CG difference {diff_cg:.2e}; max Bernoulli difference {diff_be:.2e}")
    return out


if __name__ == "__main__":
    args = [int(a) for a in sys.argv[1:3]]
    main(*args)
