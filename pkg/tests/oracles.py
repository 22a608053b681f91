"""Brute-force references used only by the tests."""

from fractions import Fraction
from functools import lru_cache

import numpy as np


def _spin_half_ops(n: int):
    """Total ``J_z`` and ``J_-`` on ``n`` spin-1/2 sites (basis bit 1 = down)."""
    dim = 2**n
    jz = np.zeros(dim)
    jm = np.zeros((dim, dim))
    for s in range(dim):
        downs = bin(s).count("1")
        jz[s] = n / 2 - downs
        for site in range(n):
            if not (s >> site) & 1:
                jm[s | (1 << site), s] = 1.0
    return jz, jm


@lru_cache(maxsize=None)
def dicke_states(n: int) -> dict:
    """``{M: |n/2, M>}`` built by lowering the fully polarized state of ``n`` spins."""
    _, jm = _spin_half_ops(n)
    state = np.zeros(2**n)
    state[0] = 1.0
    J = Fraction(n, 2)
    out = {J: state}
    M = J
    for _ in range(n):
        state = jm @ state
        state = state / np.linalg.norm(state)
        M -= 1
        out[M] = state
    return out


def coupled_overlap(J, M, j) -> float:
    """``<J M| (|j j> (x) |J-j, M-j>)`` with every state built from spin-1/2 sites.

    The first ``2j`` sites carry ``|j j>``, the remaining ``2J - 2j`` carry
    ``|J-j, M-j>``; the product lives in the ``2J``-site space.
    """
    J, M, j = Fraction(J), Fraction(M), Fraction(j)
    n, a = int(2 * J), int(2 * j)
    left = dicke_states(a)[j] if a else np.ones(1)
    right = dicke_states(n - a)[M - j] if n - a else np.ones(1)
    # site index is the bit position: the first a sites are the low bits
    product_state = np.kron(right, left)
    return float(dicke_states(n)[M] @ product_state)
