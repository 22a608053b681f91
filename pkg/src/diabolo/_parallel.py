"""Worker-count handling and chunked batch eigensolves.

``DIABOLO_THREADS`` caps the number of threads used to split large batches.
LAPACK releases the GIL, so threads give real speedup; every chunk is solved
independently, so results do not depend on the worker count.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

_CHUNK = 4096


def worker_count():
    raw = os.environ.get("DIABOLO_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def batched_eigh(matrices):
    """Eigen-decompose a stack of Hermitian matrices, ascending eigenvalues."""
    matrices = np.asarray(matrices)
    n = matrices.shape[0] if matrices.ndim == 3 else 0
    workers = worker_count()
    if workers == 1 or n <= _CHUNK:
        return np.linalg.eigh(matrices)
    bounds = list(range(0, n, _CHUNK)) + [n]
    slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
    energies = np.empty(matrices.shape[:2], dtype=float)
    states = np.empty(matrices.shape, dtype=complex)

    def solve(sl):
        energies[sl], states[sl] = np.linalg.eigh(matrices[sl])

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(solve, slices))
    return energies, states


def batched_eigvalsh(matrices):
    matrices = np.asarray(matrices)
    workers = worker_count()
    n = matrices.shape[0] if matrices.ndim == 3 else 0
    if workers == 1 or n <= _CHUNK:
        return np.linalg.eigvalsh(matrices)
    bounds = list(range(0, n, _CHUNK)) + [n]
    out = np.empty(matrices.shape[:2], dtype=float)

    def solve(pair):
        a, b = pair
        out[a:b] = np.linalg.eigvalsh(matrices[a:b])

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(solve, zip(bounds[:-1], bounds[1:])))
    return out
