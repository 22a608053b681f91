"""Time the flux kernels on both backends and check they agree.

    python benchmarks/bench_kernels.py [--twice-j 6] [--grid 64] [--repeat 5]

The eigenvector grid comes from a real sphere around a diabolical point of
the J=3 biaxial model, so the workload matches what the search evaluates.
"""

import argparse
import time

import numpy as np

from diabolo.kernels import available_backends, backend_module
from diabolo.spin import Biaxial, HamiltonianModel, SpinQuantum, assemble_batch
from diabolo.topology import sphere_fields


def eigenvector_grid(twice_j: int, n: int) -> np.ndarray:
    model = HamiltonianModel(SpinQuantum(twice_j), Biaxial(1.0, 0.1))
    center = np.array([0.5 * 0.9380831519646859, 0.0, 0.0])
    fields = sphere_fields(center, 0.2, n, n)
    shape = fields.shape[:-1]
    _, vecs = np.linalg.eigh(assemble_batch(model, fields.reshape(-1, 3)))
    return np.ascontiguousarray(vecs.reshape(*shape, *vecs.shape[-2:]))


def best_time(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--twice-j", type=int, default=6)
    ap.add_argument("--grid", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    U = eigenvector_grid(args.twice_j, args.grid)
    dim = U.shape[-1]
    ks = list(range(1, dim))
    print(f"grid {U.shape[0]}x{U.shape[1]}, dim {dim}")
    results = {}
    for name in available_backends():
        mod = backend_module(name)
        results[name] = (mod.level_flux(U, True), mod.subspace_flux(U, True, ks))
        t_level = best_time(lambda: mod.level_flux(U, True), args.repeat)
        t_sub = best_time(lambda: mod.subspace_flux(U, True, ks), args.repeat)
        print(f"{name:>7}: level_flux {1e3 * t_level:8.2f} ms   subspace_flux {1e3 * t_sub:8.2f} ms")
    if len(results) == 2:
        (lp, sp), (lc, sc) = results["python"], results["cython"]
        diff = max(
            max(float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) for a, b in zip(lp, lc)),
            max(float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) for a, b in zip(sp, sc)),
        )
        print(f"max backend difference: {diff:.2e}")
    else:
        print("compiled backend not built; only the NumPy backend was timed")


if __name__ == "__main__":
    main()
