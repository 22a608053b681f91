"""Extended-precision treatment of levels that double precision cannot split.

For large spins the tunnel splittings between paired levels can fall below
``1e-16`` of the spectral width over whole sheets of field space. Inside such
a sheet every double-precision gap looks like a degeneracy and the genuine
diabolical points cannot be told apart. Rounding the matrix entries to
double precision perturbs the splitting by the same amount, so the remedy is
to rebuild the Hamiltonian with exact entries at ``DPS`` digits:

* the nearly degenerate subspace from a double-precision diagonalization is
  polished by one shifted inverse iteration (the convergence factor is the
  ratio of the in-cluster splitting to the gap to the other levels, about
  ``1e-15``), then diagonalized by Rayleigh-Ritz;
* Newton steps use the exact first-order response ``-Q^H J_a Q``;
* dense arithmetic runs on gmpy2 numbers held in numpy object arrays;
* the topological charge of a twofold point is the sign of the Jacobian of
  its Pauli vector, which needs no surface to be sampled across the sheet.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import gmpy2
import mpmath
import numpy as np

from .spin import HamiltonianModel, assemble_hamiltonian

DPS = 40
# double-precision gaps below this fraction of the width are not trusted
FLOAT_RESOLUTION_REL = 1e-12
# a converged extended-precision point closes its gap far below double
# precision; a stationary point of a tiny but finite splitting does not
PRECISE_ZERO_REL = 1e-20
_BITS = int(DPS * 3.33) + 8

# matrices are numpy object arrays of gmpy2.mpc; gmpy2 arithmetic is C level,
# which keeps the dense products about two orders faster than mpmath matrices


def _ctx():
    return gmpy2.context(gmpy2.get_context(), precision=_BITS)


def _mpc_array(a):
    a = np.asarray(a, dtype=complex)
    out = np.empty(a.shape, dtype=object)
    for idx, v in np.ndenumerate(a):
        out[idx] = gmpy2.mpc(v.real, v.imag)
    return out


def _zeros(shape):
    out = np.empty(shape, dtype=object)
    out.fill(gmpy2.mpc(0))
    return out


def _herm(a):
    return np.vectorize(lambda z: z.conjugate(), otypes=[object])(a.T)


def _solve(A, B):
    """Gaussian elimination with partial pivoting; ``B`` has several columns."""
    A = A.copy()
    B = B.copy()
    n = A.shape[0]
    for k in range(n):
        p = k + int(np.argmax([gmpy2.norm(A[i, k]) for i in range(k, n)]))
        if gmpy2.is_zero(A[p, k]):
            raise ZeroDivisionError("singular matrix")
        if p != k:
            A[[k, p]] = A[[p, k]]
            B[[k, p]] = B[[p, k]]
        f = A[k + 1 :, k] / A[k, k]
        A[k + 1 :, k:] -= np.outer(f, A[k, k:])
        B[k + 1 :] -= np.outer(f, B[k])
    X = _zeros(B.shape)
    for k in range(n - 1, -1, -1):
        X[k] = (B[k] - A[k, k + 1 :].dot(X[k + 1 :])) / A[k, k]
    return X


def _orthonormalize(W):
    Q = W.copy()
    for c in range(Q.shape[1]):
        for _ in range(2):
            for b in range(c):
                Q[:, c] -= Q[:, b] * _herm(Q[:, b : b + 1]).dot(Q[:, c])[0]
        norm = gmpy2.sqrt(sum(gmpy2.norm(z) for z in Q[:, c]))
        Q[:, c] = Q[:, c] / norm
    return Q


def _to_mpmath(a):
    return mpmath.matrix([[mpmath.mpc(str(z.real), str(z.imag)) for z in row] for row in a])


def _hermitian_levels(block):
    g = block.shape[0]
    if g == 2:
        a, d = block[0, 0].real, block[1, 1].real
        mid = (a + d) / 2
        half = gmpy2.sqrt(((a - d) / 2) ** 2 + gmpy2.norm(block[0, 1]))
        return [mid - half, mid + half]
    with mpmath.workdps(DPS):
        vals = mpmath.eighe(_to_mpmath(block), eigvals_only=True)
        return sorted(gmpy2.mpfr(str(mpmath.re(v))) for v in vals)


@dataclass
class PreciseRefinement:
    lo: int
    hi: int
    basis: np.ndarray  # d x g, orthonormal
    block: np.ndarray  # g x g
    levels: list  # eigenvalues of ``block``, ascending
    width: float
    # |b - A delta| / |b| of the last Newton system; set by ``newton_step``
    linear_residual: float = 1.0

    def gap(self, r: int) -> float:
        with _ctx():
            return float(self.levels[r - self.lo + 1] - self.levels[r - self.lo])


class PreciseModel:
    """A model rebuilt with ``DPS``-digit matrix entries."""

    def __init__(self, model: HamiltonianModel):
        self.model = model
        self.dim = d = model.spin.dim
        with _ctx():
            j = gmpy2.mpfr(model.spin.twice_j) / 2
            jz = _zeros((d, d))
            jp = _zeros((d, d))
            for i in range(d):
                jz[i, i] = gmpy2.mpc(j - i)
            for col in range(1, d):
                m = j - col
                jp[col - 1, col] = gmpy2.mpc(gmpy2.sqrt(j * (j + 1) - m * (m + 1)))
            jm = jp.T.copy()
            jx = (jp + jm) / 2
            jy = (jp - jm) / gmpy2.mpc(0, 2)
            mats = {"x": jx, "y": jy, "z": jz}
            h0 = _zeros((d, d))
            for term in model.terms():
                prod = np.identity(d, dtype=object) * gmpy2.mpc(1)
                for letter in term.word:
                    prod = prod.dot(mats[letter])
                h0 = h0 + gmpy2.mpfr(term.coefficient) * prod
            h0 = (h0 + _herm(h0)) / 2
        self.jx, self.jy, self.jz = jx, jy, jz
        self.h0 = h0

    def hamiltonian(self, x):
        hx, hy, hz = (gmpy2.mpfr(float(v)) for v in x)
        with _ctx():
            return self.h0 - hx * self.jx - hy * self.jy - hz * self.jz

    def refine(self, x, lo: int, hi: int, energies=None, vectors=None) -> PreciseRefinement:
        """Extended-precision basis and block for ranks ``lo..hi`` at field ``x``."""
        x = np.asarray(x, dtype=float)
        if energies is None:
            energies, vectors = np.linalg.eigh(assemble_hamiltonian(self.model, x))
        with _ctx():
            H = self.hamiltonian(x)
            V = _mpc_array(vectors[:, lo : hi + 1])
            shift = gmpy2.mpfr(float(np.mean(energies[lo : hi + 1])))
            scale = gmpy2.mpfr(max(1.0, float(np.max(np.abs(energies)))))
            eye = np.identity(self.dim, dtype=object)
            W = V
            for offset in (gmpy2.mpfr(10) ** (-(DPS // 2)), gmpy2.mpfr(10) ** (-(DPS // 4))):
                # an offset keeps the solve regular when the shift is an exact eigenvalue
                try:
                    W = _solve(H - eye * (shift + offset * scale), V)
                    break
                except ZeroDivisionError:
                    W = V
            Q = _orthonormalize(W)
            block = _herm(Q).dot(H).dot(Q)
            block = (block + _herm(block)) / 2
            levels = _hermitian_levels(block)
        width = float(energies[-1] - energies[0])
        return PreciseRefinement(lo, hi, Q, block, levels, width)

    def responses(self, ref: PreciseRefinement):
        """``Q^H J_a Q`` for a = x, y, z."""
        Q = ref.basis
        Qh = _herm(Q)
        with _ctx():
            return [Qh.dot(op).dot(Q) for op in (self.jx, self.jy, self.jz)]

    def newton_step(self, ref: PreciseRefinement):
        """Field step that removes the traceless part of the block to first order."""
        g = ref.hi - ref.lo + 1
        resp = self.responses(ref)
        with _ctx():
            trace_b = sum(ref.block[i, i] for i in range(g)) / g
            traces = [sum(r[i, i] for i in range(g)) / g for r in resp]
            rows, rhs = [], []
            for a in range(g):
                for b in range(g):
                    target = ref.block[a, b] - (trace_b if a == b else 0)
                    cols = [r[a, b] - (t if a == b else 0) for r, t in zip(resp, traces)]
                    rows.append([c.real for c in cols])
                    rhs.append(target.real)
                    rows.append([c.imag for c in cols])
                    rhs.append(target.imag)
        with mpmath.workdps(DPS):
            A = mpmath.matrix([[mpmath.mpf(str(v)) for v in row] for row in rows])
            b = [mpmath.mpf(str(v)) for v in rhs]
            # truncated pseudo-inverse; flat directions get no step
            U, S, Vt = mpmath.svd_r(A)
            # entries carry about DPS digits; tiny tunnel gradients are real signal
            cutoff = mpmath.mpf(10) ** (-(DPS - 8)) * max(S)
            delta = [mpmath.mpf(0)] * 3
            for k in range(len(S)):
                if S[k] > cutoff:
                    coef = sum(U[i, k] * b[i] for i in range(A.rows)) / S[k]
                    for i in range(3):
                        delta[i] += coef * Vt[k, i]
            bnorm = mpmath.sqrt(sum(v * v for v in b))
            res = mpmath.sqrt(sum((b[i] - sum(A[i, c] * delta[c] for c in range(3))) ** 2 for i in range(A.rows)))
            ref.linear_residual = float(res / bnorm) if bnorm else 0.0
        return np.array([float(v) for v in delta])

    def closes(self, ref: PreciseRefinement, r: int, eps_deg: float) -> bool:
        """Whether the pair ``(r, r+1)`` is degenerate up to the field's rounding.

        A gap at the working-precision floor counts; so does a small gap that
        the linearized system removes entirely, which is what rounding the
        position to double precision leaves behind. A stationary but finite
        splitting fails both tests.
        """
        gap = ref.gap(r)
        if gap <= min(eps_deg, PRECISE_ZERO_REL) * ref.width:
            return True
        return gap <= eps_deg * ref.width and ref.linear_residual <= 1e-6

    def local_charge(self, ref: PreciseRefinement) -> int:
        """Charge of the lower level of a twofold point, from the Jacobian sign.

        With ``H_eff = d . sigma`` near the point, ``q_lower = -sign det(dd/dH)``;
        the sign is fixed by the spin-1/2 Zeeman case, whose ground level
        carries +1.
        """
        if ref.hi - ref.lo != 1:
            raise ValueError("the Jacobian charge is defined for twofold points only")
        resp = self.responses(ref)
        with _ctx():
            # dd/dH_a is minus the Pauli vector of Q^H J_a Q
            jac = [[-r[0, 1].real, r[0, 1].imag, -(r[0, 0].real - r[1, 1].real) / 2] for r in resp]
            (a, b, c), (d, e, f), (g, h, i) = jac
            det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
            scale = 1
            for col in jac:
                scale *= gmpy2.sqrt(sum(v * v for v in col))
            if scale == 0 or abs(det) <= gmpy2.mpfr(10) ** (-(DPS // 4)) * scale:
                raise ArithmeticError("degenerate Jacobian; the point is not conical")
            return -1 if det > 0 else 1


@lru_cache(maxsize=32)
def precise_model(model: HamiltonianModel) -> PreciseModel:
    return PreciseModel(model)


def window(energies, r: int, tau_factor: float = 8.0):
    """Ranks around the pair ``(r, r+1)`` that are as close as that pair."""
    width = energies[-1] - energies[0]
    g = energies[r + 1] - energies[r]
    tau = max(tau_factor * g, FLOAT_RESOLUTION_REL * width)
    lo, hi = r, r + 1
    while lo > 0 and energies[lo] - energies[lo - 1] <= tau:
        lo -= 1
    while hi < len(energies) - 1 and energies[hi + 1] - energies[hi] <= tau:
        hi += 1
    return lo, hi


@dataclass
class PreciseResult:
    position: np.ndarray
    gap: float
    width: float
    converged: bool
    charge: int | None
    window: tuple


def precise_polish(model: HamiltonianModel, x0, r: int, trust: float, xtol: float, max_iter: int = 40, eps_deg: float = 1e-9):
    """Newton iteration at ``DPS`` digits for the pair ``(r, r+1)``.

    Converged means the last step was below ``xtol`` and the pair closes in
    the sense of ``PreciseModel.closes``. The charge is attached for twofold
    points.
    """
    pm = precise_model(model)
    x = np.asarray(x0, dtype=float).copy()
    ref = None
    step = np.inf
    for _ in range(max_iter):
        E, U = np.linalg.eigh(assemble_hamiltonian(model, x))
        lo, hi = window(E, r)
        ref = pm.refine(x, lo, hi, E, U)
        delta = pm.newton_step(ref)
        step = float(np.linalg.norm(delta))
        if not np.isfinite(step):
            break
        if step > trust:
            delta *= trust / step
        if step <= xtol:
            break
        x = x + delta
    gap = ref.gap(r) if ref is not None else np.inf
    width = ref.width if ref is not None else 0.0
    converged = bool(ref is not None and step <= xtol and pm.closes(ref, r, eps_deg))
    charge = None
    if converged and ref.hi - ref.lo == 1:
        try:
            charge = pm.local_charge(ref)
        except ArithmeticError:
            charge = None
    return PreciseResult(x, float(gap), width, converged, charge, (ref.lo, ref.hi) if ref else (r, r + 1))
