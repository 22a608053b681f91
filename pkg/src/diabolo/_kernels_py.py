"""NumPy reference implementation of the link-variable flux kernels.

Both kernels take a structured grid of eigenvector matrices ``U`` of shape
``(ni, nj, d, d)`` (column ``k`` of ``U[i, j]`` is the level of rank ``k``)
and return, per selected level or subspace,

* the plaquette phase sum divided by ``2 pi`` (an integer on closed surfaces),
* the largest absolute plaquette phase,
* the smallest plaquette modulus (tiny values flag gauge-ill-defined links).

Plaquette ``(i, j)`` is traversed ``(i,j) -> (i+1,j) -> (i+1,j+1) -> (i,j+1)``;
the caller arranges the grid so this loop is counter-clockwise seen from the
outside of the surface. With ``periodic`` the ``j`` direction wraps around.
"""

import numpy as np


def _plaquettes(lt, lp, periodic):
    # lt: links (i,j)->(i+1,j), shape (ni-1, nj, ...)
    # lp: links (i,j)->(i,j+1), shape (ni, nj or nj-1, ...)
    if periodic:
        lt_next = np.roll(lt, -1, axis=1)
        w = lt * lp[1:] * np.conj(lt_next) * np.conj(lp[:-1])
    else:
        w = lt[:, :-1] * lp[1:] * np.conj(lt[:, 1:]) * np.conj(lp[:-1])
    return w


def _reduce(w):
    phase = np.angle(w)
    flat = phase.reshape(-1, phase.shape[-1])
    raw = flat.sum(axis=0) / (2 * np.pi)
    return raw, np.abs(flat).max(axis=0), np.abs(w).reshape(flat.shape).min(axis=0)


def level_flux(U, periodic):
    """Per-level flux for every column of ``U``; returns arrays of length d."""
    U = np.asarray(U, dtype=complex)
    lt = np.einsum("ijmk,ijmk->ijk", U[:-1].conj(), U[1:])
    if periodic:
        nxt = np.roll(U, -1, axis=1)
        lp = np.einsum("ijmk,ijmk->ijk", U.conj(), nxt)
    else:
        lp = np.einsum("ijmk,ijmk->ijk", U[:, :-1].conj(), U[:, 1:])
    return _reduce(_plaquettes(lt, lp, periodic))


def subspace_flux(U, periodic, ks):
    """Flux of the subspace spanned by the lowest ``k`` levels, for each k."""
    U = np.asarray(U, dtype=complex)
    ks = [int(k) for k in ks]
    kmax = max(ks)
    V = U[..., :kmax]
    Vh = np.conj(np.swapaxes(V, -1, -2))
    ot = Vh[:-1] @ V[1:]
    if periodic:
        op = Vh @ np.roll(V, -1, axis=1)
    else:
        op = Vh[:, :-1] @ V[:, 1:]
    lt = np.stack([np.linalg.det(ot[..., :k, :k]) for k in ks], axis=-1)
    lp = np.stack([np.linalg.det(op[..., :k, :k]) for k in ks], axis=-1)
    return _reduce(_plaquettes(lt, lp, periodic))
