# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled link-variable flux kernels; same contract as ``_kernels_py``."""

import numpy as np

from libc.math cimport atan2, fabs, hypot, M_PI

# overlaps of unit vectors: below this the unpivoted minors lose accuracy
cdef double _SMALL_PIVOT = 0.1


cdef inline double complex _cdot(const double complex[:, :, :, ::1] U,
                                 Py_ssize_t i0, Py_ssize_t j0,
                                 Py_ssize_t i1, Py_ssize_t j1,
                                 Py_ssize_t k, Py_ssize_t d) noexcept nogil:
    cdef double complex s = 0
    cdef Py_ssize_t m
    for m in range(d):
        s = s + U[i0, j0, m, k].conjugate() * U[i1, j1, m, k]
    return s


cdef inline double _arg(double complex z) noexcept nogil:
    return atan2(z.imag, z.real)


cdef inline double _mod(double complex z) noexcept nogil:
    return hypot(z.real, z.imag)


def level_flux(const double complex[:, :, :, ::1] U, bint periodic):
    cdef Py_ssize_t ni = U.shape[0], nj = U.shape[1], d = U.shape[2]
    cdef Py_ssize_t njp = nj if periodic else nj - 1
    cdef Py_ssize_t i, j, k, jn
    lt_arr = np.empty((ni - 1, nj, d), dtype=np.complex128)
    lp_arr = np.empty((ni, nj, d), dtype=np.complex128)
    cdef double complex[:, :, ::1] lt = lt_arr
    cdef double complex[:, :, ::1] lp = lp_arr
    raw_arr = np.zeros(d)
    mx_arr = np.zeros(d)
    mn_arr = np.full(d, np.inf)
    cdef double[::1] raw = raw_arr
    cdef double[::1] mx = mx_arr
    cdef double[::1] mn = mn_arr
    cdef double complex w
    cdef double ph, md
    with nogil:
        for i in range(ni - 1):
            for j in range(nj):
                for k in range(d):
                    lt[i, j, k] = _cdot(U, i, j, i + 1, j, k, d)
        for i in range(ni):
            for j in range(njp):
                jn = j + 1
                if jn == nj:
                    jn = 0
                for k in range(d):
                    lp[i, j, k] = _cdot(U, i, j, i, jn, k, d)
        for i in range(ni - 1):
            for j in range(njp):
                jn = j + 1
                if jn == nj:
                    jn = 0
                for k in range(d):
                    w = lt[i, j, k] * lp[i + 1, j, k] * lt[i, jn, k].conjugate() * lp[i, j, k].conjugate()
                    ph = _arg(w)
                    raw[k] += ph
                    if fabs(ph) > mx[k]:
                        mx[k] = fabs(ph)
                    md = _mod(w)
                    if md < mn[k]:
                        mn[k] = md
        for k in range(d):
            raw[k] = raw[k] / (2 * M_PI)
    return raw_arr, mx_arr, mn_arr


cdef double complex _leading_det(const double complex* O, double complex* work,
                                 Py_ssize_t k, Py_ssize_t ld) noexcept nogil:
    # determinant of O[:k, :k] (row stride ld) by Gaussian elimination with partial pivoting
    cdef Py_ssize_t r, c, p, piv
    cdef double best, a
    cdef double complex det = 1, f, tmp, inv
    for r in range(k):
        for c in range(k):
            work[r * ld + c] = O[r * ld + c]
    for c in range(k):
        piv = c
        best = _mod(work[c * ld + c])
        for r in range(c + 1, k):
            a = _mod(work[r * ld + c])
            if a > best:
                best = a
                piv = r
        if best == 0:
            return 0
        if piv != c:
            for p in range(k):
                tmp = work[c * ld + p]
                work[c * ld + p] = work[piv * ld + p]
                work[piv * ld + p] = tmp
            det = -det
        det = det * work[c * ld + c]
        inv = 1 / work[c * ld + c]
        for r in range(c + 1, k):
            f = work[r * ld + c] * inv
            for p in range(c + 1, k):
                work[r * ld + p] = work[r * ld + p] - f * work[c * ld + p]
    return det


cdef Py_ssize_t _leading_minors(const double complex* O, double complex* work,
                                Py_ssize_t n, double complex* minors) noexcept nogil:
    # minors[k] = det O[:k, :k] for k <= returned count, from one elimination
    # without pivoting; stops before a pivot too small to continue stably
    cdef Py_ssize_t r, c, p
    cdef double complex det = 1, f, inv
    for r in range(n * n):
        work[r] = O[r]
    minors[0] = 1
    for c in range(n):
        det = det * work[c * n + c]
        minors[c + 1] = det
        if _mod(work[c * n + c]) < _SMALL_PIVOT:
            return c + 1
        inv = 1 / work[c * n + c]
        for r in range(c + 1, n):
            f = work[r * n + c] * inv
            for p in range(c + 1, n):
                work[r * n + p] = work[r * n + p] - f * work[c * n + p]
    return n


cdef void _overlap(const double complex* A, const double complex* B,
                   Py_ssize_t kmax, Py_ssize_t d, double complex* O) noexcept nogil:
    # A, B: d x d row-major eigenvector matrices; O[a, b] = sum_m conj(A[m, a]) B[m, b]
    cdef Py_ssize_t a, b, m
    cdef double complex s
    for a in range(kmax):
        for b in range(kmax):
            s = 0
            for m in range(d):
                s = s + A[m * d + a].conjugate() * B[m * d + b]
            O[a * kmax + b] = s


def subspace_flux(const double complex[:, :, :, ::1] U, bint periodic, ks):
    cdef Py_ssize_t ni = U.shape[0], nj = U.shape[1], d = U.shape[2]
    cdef Py_ssize_t njp = nj if periodic else nj - 1
    ks_arr = np.ascontiguousarray(ks, dtype=np.intp)
    cdef Py_ssize_t[::1] kv = ks_arr
    cdef Py_ssize_t nk = kv.shape[0]
    cdef Py_ssize_t kmax = 0
    cdef Py_ssize_t i, j, q, jn
    for q in range(nk):
        if kv[q] > kmax:
            kmax = kv[q]
    lt_arr = np.empty((ni - 1, nj, nk), dtype=np.complex128)
    lp_arr = np.empty((ni, nj, nk), dtype=np.complex128)
    cdef double complex[:, :, ::1] lt = lt_arr
    cdef double complex[:, :, ::1] lp = lp_arr
    O_arr = np.empty((kmax, kmax), dtype=np.complex128)
    W_arr = np.empty((kmax, kmax), dtype=np.complex128)
    cdef double complex[:, ::1] O_mv = O_arr
    cdef double complex[:, ::1] W_mv = W_arr
    cdef double complex* O = &O_mv[0, 0] if kmax > 0 else NULL
    cdef double complex* work = &W_mv[0, 0] if kmax > 0 else NULL
    cdef const double complex* base = &U[0, 0, 0, 0]
    M_arr = np.empty(kmax + 1, dtype=np.complex128)
    cdef double complex[::1] M_mv = M_arr
    cdef double complex* minors = &M_mv[0]
    cdef Py_ssize_t good
    cdef Py_ssize_t cell = d * d
    raw_arr = np.zeros(nk)
    mx_arr = np.zeros(nk)
    mn_arr = np.full(nk, np.inf)
    cdef double[::1] raw = raw_arr
    cdef double[::1] mx = mx_arr
    cdef double[::1] mn = mn_arr
    cdef double complex w
    cdef double ph, md
    with nogil:
        for i in range(ni - 1):
            for j in range(nj):
                _overlap(base + (i * nj + j) * cell, base + ((i + 1) * nj + j) * cell, kmax, d, O)
                good = _leading_minors(O, work, kmax, minors)
                for q in range(nk):
                    if kv[q] <= good:
                        lt[i, j, q] = minors[kv[q]]
                    else:
                        lt[i, j, q] = _leading_det(O, work, kv[q], kmax)
        for i in range(ni):
            for j in range(njp):
                jn = j + 1
                if jn == nj:
                    jn = 0
                _overlap(base + (i * nj + j) * cell, base + (i * nj + jn) * cell, kmax, d, O)
                good = _leading_minors(O, work, kmax, minors)
                for q in range(nk):
                    if kv[q] <= good:
                        lp[i, j, q] = minors[kv[q]]
                    else:
                        lp[i, j, q] = _leading_det(O, work, kv[q], kmax)
        for i in range(ni - 1):
            for j in range(njp):
                jn = j + 1
                if jn == nj:
                    jn = 0
                for q in range(nk):
                    w = lt[i, j, q] * lp[i + 1, j, q] * lt[i, jn, q].conjugate() * lp[i, j, q].conjugate()
                    ph = _arg(w)
                    raw[q] += ph
                    if fabs(ph) > mx[q]:
                        mx[q] = fabs(ph)
                    md = _mod(w)
                    if md < mn[q]:
                        mn[q] = md
        for q in range(nk):
            raw[q] = raw[q] / (2 * M_PI)
    return raw_arr, mx_arr, mn_arr
