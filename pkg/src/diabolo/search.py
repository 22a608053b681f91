"""Locate, classify and cluster the diabolical points of a spin model.

Strategy
--------
1. Cheap seeds: the origin and dense 1-D scans along the 13 axes of cubic
   symmetry (coordinate axes, face and body diagonals); local minima of an
   adjacent gap become polishing starts.
2. Charge accounting on an octree. The diabolicity index of a level pair
   through the surface of a box equals the Chern number of the subspace of
   all levels below the pair, which is computed with link variables on the
   six faces. Whatever part of a box's index is not explained by points
   already found inside it is hunted down by polishing from the box centre
   and, failing that, by splitting the box.
3. Polishing: Newton iterations on the traceless part of the Hamiltonian
   projected onto the nearly degenerate levels (quadratic convergence at
   conical points), with a simplex minimization of the squared gap as
   fallback.
4. Closure under ``H -> -H``, clustering, one Berry-flux sphere per cluster,
   and the sum-rule audit that certifies completeness.

Degeneracy is judged relative to the local spectral width so results are
covariant under ``H0 -> lambda H0``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np
import scipy.optimize

from . import kernels
from ._parallel import batched_eigh, batched_eigvalsh
from .errors import ClusteringError, NearDegeneracyError, ParityError
from .precise import precise_model, precise_polish, window as precise_window
from .spectral import SpectrumResult, label_of_rank, rank_of_label
from .spin import (
    FieldVector,
    HamiltonianModel,
    assemble_batch,
    format_half,
    make_spin_operators,
    parity_check,
    zero_field_matrix,
)
from .topology import (
    GUARD_REL,
    PHASE_LIMIT,
    ChargeVector,
    DiabolicityMultiplet,
    SumRuleReport,
    charges_for_cluster,
    expected_pair_total,
    sphere_flux,
    verify_index_sum_rules,
)

log = logging.getLogger(__name__)

_SCAN_DIRECTIONS = np.array(
    [
        (1, 0, 0), (0, 1, 0), (0, 0, 1),
        (1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1),
        (1, 1, 1), (1, 1, -1), (1, -1, 1), (-1, 1, 1),
    ],
    dtype=float,
)
_SCAN_DIRECTIONS /= np.linalg.norm(_SCAN_DIRECTIONS, axis=1)[:, None]

# fixed, irrational-looking offsets keep box faces off symmetry planes
_ROOT_SHIFT = np.array([0.01234567, -0.02345671, 0.03456712])
_SPLIT_JITTER = np.array(
    [
        (0.5123, 0.4871, 0.5077),
        (0.4642, 0.5318, 0.4789),
        (0.5431, 0.4567, 0.5249),
        (0.4389, 0.5613, 0.5531),
        (0.5702, 0.4231, 0.4413),
        (0.4177, 0.5859, 0.5872),
    ]
)
_MAX_FACE_CELLS = 128


@dataclass
class SearchConfig:
    """Knobs for :func:`find_diabolical_points`.

    ``r_max`` bounds the searched ball (default :func:`bound_region`);
    ``seed_density`` sets the scan sampling (``8 * seed_density`` points per
    line) and the box size below which polishing starts; ``eps_deg`` is the
    relative degeneracy tolerance; ``eps_pos`` the coincidence distance
    (default ``1e-6 * r_max``). ``pairs`` restricts the search to the level
    pairs ``(mu, mu - 1)`` listed by their upper label.
    """

    r_max: Optional[float] = None
    seed_density: int = 21
    eps_deg: float = 1e-9
    eps_pos: Optional[float] = None
    max_polish_iter: int = 60
    deterministic: bool = True
    pairs: Optional[tuple] = None
    face_cells: int = 4
    sphere_grid: tuple = (64, 64)
    cluster_radius_cap: Optional[float] = None
    escalate: bool = True
    symmetric_seeds: bool = True

    def __post_init__(self):
        if self.r_max is not None and not self.r_max > 0:
            raise ValueError("r_max must be positive")
        if not self.eps_deg > 0:
            raise ValueError("eps_deg must be positive")
        if self.eps_pos is not None and not self.eps_pos > 0:
            raise ValueError("eps_pos must be positive")
        if self.seed_density < 2:
            raise ValueError("seed_density must be at least 2")
        if self.pairs is not None:
            self.pairs = tuple(float(p) for p in self.pairs)


@dataclass
class DiabolicalPointRecord:
    """One degenerate run of consecutive levels at one field value."""

    position: FieldVector
    span: tuple
    order: int
    charges: Optional[ChargeVector] = None
    indices: Optional[DiabolicityMultiplet] = None
    cluster_id: int = -1
    residual_gap: float = 0.0
    suspect: bool = False

    @property
    def mu_top(self) -> float:
        return self.span[0]

    @property
    def mu_bottom(self) -> float:
        return self.span[1]

    def position_array(self) -> np.ndarray:
        return self.position.as_array()


@dataclass
class SearchOutcome:
    records: List[DiabolicalPointRecord]
    audit: List[SumRuleReport]
    completeness: List[SumRuleReport]
    region_radius: float
    escalated: bool = False
    unresolved: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.audit) and all(r.passed for r in self.completeness)


# --------------------------------------------------------------------------
# region bounds


def bound_region(model: HamiltonianModel, c: float = 4.0) -> float:
    """``c * ||H0||`` (operator norm), or 1 for a vanishing ``H0``."""
    h0 = zero_field_matrix(model)
    norm = float(np.max(np.abs(np.linalg.eigvalsh(h0)))) if h0.size else 0.0
    return c * norm if norm > 0 else 1.0


def degeneracy_radius(model: HamiltonianModel) -> float:
    """Radius outside which no two levels can cross.

    Adjacent Zeeman levels are ``|H|`` apart and ``H0`` moves each eigenvalue
    within its spectral range (Weyl's inequality), so every gap exceeds
    ``|H| - (max eig H0 - min eig H0)``.
    """
    w = np.linalg.eigvalsh(zero_field_matrix(model))
    return float(w[-1] - w[0])


# --------------------------------------------------------------------------
# classification and clustering


def classify_degeneracy(spectrum, eps_deg: float = 1e-9):
    """Maximal runs of consecutive levels whose adjacent gaps are all tiny.

    Returns ``[((mu_top, mu_bottom), g), ...]`` ordered from the ground level
    up. A gap counts as degenerate when ``<= eps_deg * spectral width``.
    """
    energies = spectrum.energies if isinstance(spectrum, SpectrumResult) else np.asarray(spectrum, dtype=float)
    runs = _runs(energies, eps_deg)
    j = (len(energies) - 1) / 2
    return [((j - lo, j - hi), hi - lo + 1) for lo, hi in runs]


def _runs(energies, eps_deg):
    gaps = np.diff(energies)
    width = energies[-1] - energies[0]
    tiny = gaps <= eps_deg * width
    runs, start = [], None
    for r, t in enumerate(tiny):
        if t and start is None:
            start = r
        if not t and start is not None:
            runs.append((start, r))
            start = None
    if start is not None:
        runs.append((start, len(gaps)))
    return runs


def cluster_points(records, eps_pos: float):
    """Assign ``cluster_id`` to records whose positions agree within ``eps_pos``.

    Groups are connected components of the ``eps_pos`` proximity graph. A
    component whose members are not all within ``eps_pos`` of each other is
    accepted only if every member lies within ``eps_pos`` of the centroid;
    otherwise :class:`ClusteringError` is raised. Cluster ids follow the
    lexicographic order of cluster centroids. Returns the records, sorted.
    """
    records = list(records)
    if not records:
        return records
    pos = np.array([r.position_array() for r in records])
    n = len(records)
    diff = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    near = diff <= eps_pos
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a in range(n):
        for b in np.flatnonzero(near[a]):
            ra, rb = find(a), find(int(b))
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups = {}
    for a in range(n):
        groups.setdefault(find(a), []).append(a)
    centroids = []
    for members in groups.values():
        sub = diff[np.ix_(members, members)]
        centroid = pos[members].mean(axis=0)
        if np.any(sub > eps_pos):
            spread = np.linalg.norm(pos[members] - centroid, axis=1)
            if np.any(spread > eps_pos):
                raise ClusteringError(
                    f"{len(members)} positions chain together beyond eps_pos={eps_pos:g} "
                    f"(max pairwise distance {sub.max():.3g}); use a smaller eps_pos"
                )
        centroids.append((tuple(centroid), members))
    centroids.sort(key=lambda item: item[0])
    for cid, (_, members) in enumerate(centroids):
        for a in members:
            records[a].cluster_id = cid
    records.sort(key=lambda r: (r.cluster_id, -r.span[0]))
    return records


def cluster_multiplicity(records, cluster_id: int) -> int:
    return sum(1 for r in records if r.cluster_id == cluster_id)


def _true_stretches(mask):
    """``[(start, stop)]`` of maximal runs of True in a boolean array."""
    edges = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)))


# --------------------------------------------------------------------------
# polishing


# below this ratio of singular values a Newton direction is treated as flat
_FLAT_RATIO = 1e-10
# a converged double-precision point whose response is this anisotropic sits
# in a sheet of sub-resolution splittings
_SHEET_RATIO = 1e-9
# gaps within this many ulps of the largest eigenvalue are rounding noise
_NOISE_ULPS = 1000
# a sheet walk stops where the pair opens beyond this relative gap
_SHEET_EDGE_REL = 1e-6


@dataclass
class _Polished:
    position: np.ndarray
    gap: float
    width: float
    converged: bool
    suspect: bool
    resolvable: bool = True


class _Problem:
    """Model-bound helpers shared by the search and continuation code."""

    def __init__(self, model: HamiltonianModel, eps_deg: float, max_iter: int = 60):
        self.model = model
        self.ops = make_spin_operators(model.spin)
        self.jvec = self.ops.vector
        self.h0 = zero_field_matrix(model)
        self.dim = model.spin.dim
        self.eps_deg = eps_deg
        self.max_iter = max_iter
        self.evaluations = 0

    def hamiltonian(self, x):
        j = self.jvec
        return self.h0 - x[0] * j[0] - x[1] * j[1] - x[2] * j[2]

    def eig(self, x):
        self.evaluations += 1
        return np.linalg.eigh(self.hamiltonian(x))

    def eigvals(self, x):
        self.evaluations += 1
        return np.linalg.eigvalsh(self.hamiltonian(x))

    def _window(self, E, r):
        g = E[r + 1] - E[r]
        tau = 8.0 * g
        lo, hi = r, r + 1
        while lo > 0 and E[lo] - E[lo - 1] <= tau:
            lo -= 1
        while hi < self.dim - 1 and E[hi + 1] - E[hi] <= tau:
            hi += 1
        return lo, hi

    def _system(self, E, U, r):
        """Linear system whose solution removes the traceless block near ``r``."""
        lo, hi = self._window(E, r)
        P = U[:, lo : hi + 1]
        jeff = np.einsum("im,aij,jn->amn", P.conj(), self.jvec, P)
        g = hi - lo + 1
        eye = np.eye(g)
        ew = E[lo : hi + 1]
        # traceless parts: diag(E) - sum_a delta_a Jeff_a must vanish
        target = np.diag(ew - ew.mean())
        cols = [j_a - np.trace(j_a) / g * eye for j_a in jeff]
        A = np.stack([np.concatenate([c.real.ravel(), c.imag.ravel()]) for c in cols], axis=1)
        b = np.concatenate([target.real.ravel(), target.imag.ravel()])
        return A, b

    def response_spectrum(self, x, r):
        """Singular values and right vectors of the first-order response."""
        E, U = self.eig(x)
        A, _ = self._system(E, U, r)
        _, s, vt = np.linalg.svd(A, full_matrices=False)
        return s, vt

    def flat_directions(self, x, r):
        s, vt = self.response_spectrum(x, r)
        if s[0] == 0:
            return vt
        return vt[s < _SHEET_RATIO * s[0]]

    def resolvable(self, x, r, probe: float) -> bool:
        """Whether double precision can place the point at ``x`` to ``probe``.

        The gap a distance ``probe`` away along every response direction must
        rise clearly above rounding noise; otherwise ``x`` sits in a sheet of
        unresolved splitting. Probing, rather than reading the linear
        response, keeps symmetric points that open quadratically resolvable.
        """
        E = self.eigvals(x)
        noise = _NOISE_ULPS * np.finfo(float).eps * float(np.max(np.abs(E)))
        _, vt = self.response_spectrum(x, r)
        for v in vt:
            for sign in (1.0, -1.0):
                Ep = self.eigvals(x + sign * probe * v)
                if Ep[r + 1] - Ep[r] < noise:
                    return False
        return True

    def _newton(self, x, r, trust, iters):
        best_x, best_rel = x.copy(), np.inf
        stall = 0
        for _ in range(iters):
            E, U = self.eig(x)
            width = E[-1] - E[0]
            rel = (E[r + 1] - E[r]) / width if width > 0 else 0.0
            if rel < best_rel * 0.5:
                stall = 0
            else:
                stall += 1
            if rel < best_rel:
                best_x, best_rel = x.copy(), rel
            if rel <= 1e-4 * self.eps_deg or stall >= 4:
                break
            A, b = self._system(E, U, r)
            delta, *_ = np.linalg.lstsq(A, b, rcond=_FLAT_RATIO)
            step = float(np.linalg.norm(delta))
            if not np.isfinite(step):
                break
            if step > trust:
                delta *= trust / step
            x = x + delta
        return best_x, best_rel

    def _simplex(self, x, r, scale):
        def objective(p):
            E = self.eigvals(p)
            width = E[-1] - E[0]
            return ((E[r + 1] - E[r]) / width) ** 2 if width > 0 else 0.0

        simplex = np.vstack([x, x + scale * np.eye(3)])
        res = scipy.optimize.minimize(
            objective,
            x,
            method="Nelder-Mead",
            options={"initial_simplex": simplex, "xatol": 1e-13 * max(1.0, scale), "fatol": 1e-40, "maxiter": 800},
        )
        return res.x

    def polish(self, x0, r, trust, fallback=True, probe=None) -> _Polished:
        """Drive the gap between ranks ``r`` and ``r+1`` to zero from ``x0``.

        Newton first; the simplex fallback (much slower) only if ``fallback``.
        With ``probe`` set, a converged point inside a sheet of unresolved
        splitting is marked not ``resolvable``: double precision cannot place it.
        """
        x0 = np.asarray(x0, dtype=float)
        x, rel = self._newton(x0, r, trust, self.max_iter)
        if fallback and rel > self.eps_deg:
            y = self._simplex(x, r, max(trust * 0.1, 1e-8))
            y, rel_y = self._newton(y, r, trust, self.max_iter)
            if rel_y < rel:
                x, rel = y, rel_y
        E = self.eigvals(x)
        width = E[-1] - E[0]
        gap = E[r + 1] - E[r]
        converged = gap <= self.eps_deg * width
        suspect = (not converged) and gap <= 10 * self.eps_deg * width
        resolvable = True
        if converged and probe:
            resolvable = self.resolvable(x, r, probe)
        return _Polished(x, float(gap), float(width), bool(converged), bool(suspect), resolvable)


# --------------------------------------------------------------------------
# the search proper


@dataclass
class _Known:
    position: np.ndarray
    runs: list  # [(lo_rank, hi_rank)] inclusive
    D: np.ndarray  # per rank-pair index, length dim - 1
    radius: float
    suspect: bool
    gaps: dict  # run -> residual gap
    precise: set = field(default_factory=set)  # runs indexed by the Jacobian route


@dataclass
class _Box:
    lo: np.ndarray
    hi: np.ndarray
    depth: int

    @property
    def edge(self) -> float:
        return float(np.max(self.hi - self.lo))

    @property
    def center(self):
        return 0.5 * (self.lo + self.hi)

    def contains(self, p) -> bool:
        return bool(np.all(p >= self.lo) and np.all(p < self.hi))


class _Searcher:
    def __init__(self, model: HamiltonianModel, cfg: SearchConfig):
        self.model = model
        self.cfg = cfg
        self.spin = model.spin
        self.dim = model.spin.dim
        self.problem = _Problem(model, cfg.eps_deg, cfg.max_polish_iter)
        self.r_user = cfg.r_max if cfg.r_max is not None else bound_region(model)
        self.radius = min(self.r_user, degeneracy_radius(model) * (1 + 1e-9))
        self.eps_pos = cfg.eps_pos if cfg.eps_pos is not None else 1e-6 * self.r_user
        if cfg.pairs is None:
            self.pair_ranks = list(range(self.dim - 1))
        else:
            self.pair_ranks = sorted({rank_of_label(self.dim, mu) for mu in cfg.pairs})
            if any(r >= self.dim - 1 for r in self.pair_ranks):
                raise ValueError("the top level -J starts no pair")
        self.ks = [r + 1 for r in self.pair_ranks]
        self.known: List[_Known] = []
        self.unresolved = []
        self.stats = {"boxes": 0, "surface_samples": 0, "polishes": 0}
        self.cap = cfg.cluster_radius_cap if cfg.cluster_radius_cap is not None else 0.05 * max(self.radius, 1e-12)
        self.walked = []
        # extended-precision Newton stops below xtol; confirmation is looser
        self.xtol = 1e-12 * max(self.r_user, 1e-300)
        self.xtol_confirm = 1e-3 * self.eps_pos

    # -- known points ---------------------------------------------------
    def _classify_point(self, x):
        """Degenerate runs at ``x`` touching the pairs of interest.

        Returns ``[(run, gap, charge_or_None)]``. Twofold runs that double
        precision cannot resolve are confirmed at extended precision: the
        position must be a Newton fixed point there, otherwise the run is a
        sheet artefact and dropped. Those runs come with their Jacobian charge.
        """
        E, U = self.problem.eig(x)
        width = E[-1] - E[0]
        runs = _runs(E, 10 * self.cfg.eps_deg)
        interesting = set(self.pair_ranks)
        out = []
        for lo, hi in runs:
            if not any(lo <= r < hi for r in interesting):
                continue
            gap = float(np.max(np.diff(E[lo : hi + 1])))
            if hi - lo == 1 and not self.problem.resolvable(x, lo, self.probe):
                confirmed = self._confirm_precise(x, lo, E, U)
                if confirmed is not None:
                    out.append(((lo, hi),) + confirmed)
                continue
            out.append(((lo, hi), gap, None))
        return out

    def _confirm_precise(self, x, r, E=None, U=None):
        pm = precise_model(self.model)
        if E is None:
            E, U = self.problem.eig(x)
        lo, hi = precise_window(E, r)
        if hi - lo != 1:
            return None
        ref = pm.refine(x, lo, hi, E, U)
        step = float(np.linalg.norm(pm.newton_step(ref)))
        if step > self.xtol_confirm or not pm.closes(ref, r, self.cfg.eps_deg):
            return None
        try:
            charge = pm.local_charge(ref)
        except ArithmeticError:
            return None
        return ref.gap(r), charge

    def _nearest_known(self, x, exclude=None):
        best = np.inf
        for k in self.known:
            if k is exclude:
                continue
            best = min(best, float(np.linalg.norm(k.position - x)))
        return best

    def _point_indices(self, x, runs, radius):
        ks = sorted({r + 1 for lo, hi in runs for r in range(lo, hi)})
        D = np.zeros(self.dim - 1, dtype=int)
        if not ks:
            return D, radius
        for _ in range(6):
            try:
                flux = sphere_flux(self.model, x, radius, (24, 24), subspaces=ks)
            except NearDegeneracyError:
                radius *= 0.5
                continue
            ok = flux.min_gap > GUARD_REL * flux.spectral_width
            if np.all(ok) and np.all(np.abs(flux.raw - np.rint(flux.raw)) < 1e-6):
                for k, v in zip(ks, flux.integers()):
                    D[k - 1] = v
                return D, radius
            radius *= 0.5
        raise NearDegeneracyError(f"could not isolate the degeneracy at {tuple(x)} on a small sphere")

    def _float_indices(self, point: _Known):
        runs = [run for run in point.runs if run not in point.precise]
        D = np.zeros(self.dim - 1, dtype=int)
        try:
            Df, point.radius = self._point_indices(point.position, runs, point.radius)
            D += Df
        except NearDegeneracyError:
            # tiny splittings all around: twofold runs fall back to the Jacobian
            for lo, hi in runs:
                confirmed = self._confirm_precise(point.position, lo) if hi - lo == 1 else None
                if confirmed is None:
                    point.suspect = True
                    log.warning("no index for run %s at %s", (lo, hi), tuple(float(v) for v in point.position))
                    continue
                point.precise.add((lo, hi))
                point.D[lo] = confirmed[1]
        for lo, hi in point.precise:
            D[lo] = point.D[lo]
        point.D = D

    def _add_known(self, x, box_edge=None):
        x = np.asarray(x, dtype=float)
        if np.linalg.norm(x) > self.radius * (1 + 1e-9) + self.eps_pos:
            return None
        for k in self.known:
            if np.linalg.norm(k.position - x) <= self.eps_pos:
                return k
        found = self._classify_point(x)
        if not found:
            return None
        E = self.problem.eigvals(x)
        width = E[-1] - E[0]
        runs = [run for run, _, _ in found]
        gaps = {run: gap for run, gap, _ in found}
        suspect = any(gap > self.cfg.eps_deg * width for gap in gaps.values())
        nearest = self._nearest_known(x)
        radius = min(self.cap, 0.45 * nearest)
        if box_edge is not None:
            radius = min(radius, 0.1 * box_edge)
        point = _Known(x, runs, np.zeros(self.dim - 1, dtype=int), radius, suspect, gaps)
        for run, _, charge in found:
            if charge is not None:
                point.precise.add(run)
                point.D[run[0]] = charge
        self._float_indices(point)
        # a new neighbour may sit inside an older sphere: shrink and redo
        for k in self.known:
            dist = float(np.linalg.norm(k.position - x))
            if dist <= 2.2 * k.radius and len(k.precise) < len(k.runs):
                k.radius = 0.45 * dist
                self._float_indices(k)
        self.known.append(point)
        return point

    def _explained(self, box: _Box):
        total = np.zeros(self.dim - 1, dtype=int)
        for k in self.known:
            if box.contains(k.position):
                total += k.D
        return total

    # -- seeds ----------------------------------------------------------
    def _seed(self):
        if not self.cfg.symmetric_seeds:
            return
        n = 8 * self.seed_density + 1
        s = np.linspace(-self.radius, self.radius, n)
        lines = s[None, :, None] * _SCAN_DIRECTIONS[:, None, :]
        pts = lines.reshape(-1, 3)
        E = batched_eigvalsh(assemble_batch(self.model, pts))
        self.stats["surface_samples"] += len(pts)
        width = E[:, -1] - E[:, 0]
        rel = np.diff(E, axis=1) / np.where(width > 0, width, 1.0)[:, None]
        rel = rel.reshape(len(_SCAN_DIRECTIONS), n, -1)
        seeds = [(np.zeros(3), r) for r in self.pair_ranks]
        noise = _NOISE_ULPS * np.finfo(float).eps * np.max(np.abs(E), axis=1).reshape(len(_SCAN_DIRECTIONS), n)
        for li in range(len(_SCAN_DIRECTIONS)):
            for r in self.pair_ranks:
                g = rel[li, :, r]
                flat = g * width.reshape(len(_SCAN_DIRECTIONS), n)[li] < noise[li]
                mins = np.flatnonzero((g[1:-1] < g[:-2]) & (g[1:-1] <= g[2:]) & (g[1:-1] < 0.05)) + 1
                # inside a stretch of sub-noise gaps the minima are rounding
                # artefacts; one seed per stretch is enough
                seeds.extend((lines[li, i], r) for i in mins if not flat[i])
                for a, b in _true_stretches(flat):
                    seeds.append((lines[li, (a + b) // 2], r))
        for x0, r in seeds:
            self._try_polish(x0, r, trust=2 * self.scan_step + 1e-12, fallback=False)

    def _try_polish(self, x0, r, trust, fallback=True):
        self.stats["polishes"] += 1
        res = self.problem.polish(x0, r, trust, fallback, self.probe)
        if res.converged and not res.resolvable:
            return self._sheet(res.position, r)
        if res.converged or res.suspect:
            return self._add_known(res.position)
        return None

    # -- sheets of sub-resolution splitting ---------------------------------
    def _near_walked(self, x, r):
        for rr, pts in self.walked:
            if rr == r and np.min(np.linalg.norm(pts - x, axis=1)) <= 1.5 * self.scan_step:
                return True
        return False

    def _precise_polish(self, x0, r, trust):
        self.stats["precise_polishes"] = self.stats.get("precise_polishes", 0) + 1
        res = precise_polish(self.model, x0, r, trust, self.xtol, eps_deg=self.cfg.eps_deg)
        if res.converged:
            return self._add_known(res.position)
        return None

    def _sheet(self, x, r):
        """Handle a double-precision point inside an unresolvable sheet.

        The nearest genuine point is found by extended-precision Newton; the
        sheet is then walked along its flat directions, re-projected onto
        the sheet at every step, and every local minimum of the refined gap
        seeds another extended-precision Newton run.
        """
        if self._near_walked(x, r):
            return None
        point = self._precise_polish(x, r, trust=self.scan_step)
        flat = self.problem.flat_directions(x, r)
        directions = [d for d in _SCAN_DIRECTIONS if np.linalg.norm(flat @ d) >= 0.99]
        if not directions:
            directions = list(flat)
        pm = precise_model(self.model)
        walked = [x]
        for d in directions:
            line = [(0.0, x, self._refined_gap(pm, x, r))]
            for sign in (1.0, -1.0):
                y = x.copy()
                t = 0.0
                while abs(t) < 2 * self.radius:
                    t += sign * self.scan_step
                    prev = y
                    y, rel = self.problem._newton(y + sign * self.scan_step * d, r, self.scan_step, 8)
                    # re-projection may pull the walker back; that ends the walk
                    stalled = sign * np.dot(y - prev, d) < 0.5 * self.scan_step
                    if np.linalg.norm(y) > self.radius or rel > _SHEET_EDGE_REL or stalled:
                        break
                    line.append((t, y, self._refined_gap(pm, y, r)))
                    walked.append(y)
            line.sort(key=lambda item: item[0])
            gaps = np.array([g for _, _, g in line])
            for i in range(len(line)):
                left = gaps[i - 1] if i > 0 else np.inf
                right = gaps[i + 1] if i + 1 < len(line) else np.inf
                if gaps[i] < left and gaps[i] <= right:
                    self._precise_polish(line[i][1], r, trust=self.scan_step)
        self.walked.append((r, np.array(walked)))
        return point

    def _refined_gap(self, pm, x, r):
        self.stats["precise_evaluations"] = self.stats.get("precise_evaluations", 0) + 1
        E, U = self.problem.eig(x)
        lo, hi = precise_window(E, r)
        return pm.refine(x, lo, hi, E, U).gap(r)

    # -- octree -----------------------------------------------------------
    def _box_surface(self, box: _Box, n: int):
        axes = [np.linspace(box.lo[a], box.hi[a], n + 1) for a in range(3)]
        index = -np.ones((n + 1,) * 3, dtype=np.intp)
        shell = np.zeros((n + 1,) * 3, dtype=bool)
        shell[[0, -1], :, :] = True
        shell[:, [0, -1], :] = True
        shell[:, :, [0, -1]] = True
        ijk = np.argwhere(shell)
        index[shell] = np.arange(len(ijk))
        pts = np.stack([axes[0][ijk[:, 0]], axes[1][ijk[:, 1]], axes[2][ijk[:, 2]]], axis=1)
        faces = []
        ar = np.arange(n + 1)
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            for side in (0, n):
                sel = [None, None, None]
                sel[a] = side
                grid = np.empty((n + 1, n + 1), dtype=np.intp)
                # outward-oriented (u, v): +a face uses (b, c), -a face uses (c, b)
                if side == n:
                    for i in ar:
                        for j in ar:
                            sel[b], sel[c] = i, j
                            grid[i, j] = index[tuple(sel)]
                else:
                    for i in ar:
                        for j in ar:
                            sel[c], sel[b] = i, j
                            grid[i, j] = index[tuple(sel)]
                faces.append(grid)
        return pts, faces

    def _evaluate(self, boxes, cells):
        """Index fluxes through each box surface; ``None`` marks trouble."""
        all_pts, layout = [], []
        offset = 0
        for box, n in zip(boxes, cells):
            pts, faces = self._box_surface(box, n)
            all_pts.append(pts)
            layout.append((offset, faces))
            offset += len(pts)
        pts = np.concatenate(all_pts)
        self.stats["surface_samples"] += len(pts)
        E, U = batched_eigh(assemble_batch(self.model, pts))
        results = []
        for (off, faces), pts_box in zip(layout, all_pts):
            Eb = E[off : off + len(pts_box)]
            Ub = U[off : off + len(pts_box)]
            width = float(np.min(Eb[:, -1] - Eb[:, 0]))
            gaps = np.diff(Eb, axis=1).min(axis=0)
            gap_ok = all(gaps[k - 1] > GUARD_REL * width for k in self.ks)
            if not gap_ok:
                results.append(("trouble", None))
                continue
            raw = np.zeros(len(self.ks))
            mx = np.zeros(len(self.ks))
            for grid in faces:
                r_face, m_face, _ = kernels.subspace_flux(Ub[grid], False, self.ks)
                raw += r_face
                mx = np.maximum(mx, m_face)
            if np.any(mx > PHASE_LIMIT):
                results.append(("coarse", None))
                continue
            if np.any(np.abs(raw - np.rint(raw)) > 1e-6):
                results.append(("trouble", None))
                continue
            D = np.zeros(self.dim - 1, dtype=int)
            for k, v in zip(self.ks, np.rint(raw).astype(int)):
                D[k - 1] = v
            results.append(("ok", D))
        return results

    def _evaluate_refined(self, boxes):
        cells = [self.face_cells] * len(boxes)
        out = [None] * len(boxes)
        todo = list(range(len(boxes)))
        while todo:
            res = self._evaluate([boxes[i] for i in todo], [cells[i] for i in todo])
            again = []
            for i, (status, D) in zip(todo, res):
                if status == "coarse" and cells[i] < _MAX_FACE_CELLS:
                    cells[i] *= 2
                    again.append(i)
                elif status == "ok":
                    out[i] = D
            todo = again
        self.stats["boxes"] += len(boxes)
        return out

    def _children(self, box: _Box, attempt: int):
        inside = [k.position for k in self.known if box.contains(k.position)]
        # jittered split planes ranked by clearance from known points; a retry
        # takes the next-best plane
        candidates = []
        for t in range(3 * len(_SPLIT_JITTER)):
            frac = _SPLIT_JITTER[t % len(_SPLIT_JITTER)]
            if t >= len(_SPLIT_JITTER):
                frac = 0.5 + (frac - 0.5) * (1 + 0.37 * (t // len(_SPLIT_JITTER)))
            mid = box.lo + frac * (box.hi - box.lo)
            if inside:
                rel = np.abs(np.array(inside) - mid) / (box.hi - box.lo)
                score = min(float(rel.min()), 0.05)
            else:
                score = 0.05
            candidates.append((-score, t, mid))
        candidates.sort(key=lambda c: (c[0], c[1]))
        mid = candidates[attempt % len(candidates)][2]
        kids = []
        for corner in range(8):
            lo = box.lo.copy()
            hi = box.hi.copy()
            for a in range(3):
                if corner >> a & 1:
                    lo[a] = mid[a]
                else:
                    hi[a] = mid[a]
            kids.append(_Box(lo, hi, box.depth + 1))
        return kids

    def _resolve(self, box: _Box, D: np.ndarray):
        """Polish inside ``box`` if small enough; return unexplained charge."""
        missing = D - self._explained(box)
        if not missing.any():
            return missing
        if box.edge <= self.polish_edge:
            for r in np.flatnonzero(missing):
                if r not in self.pair_ranks:
                    continue
                self._try_polish(box.center, int(r), trust=box.edge)
                missing = D - self._explained(box)
                if not missing.any():
                    break
        return missing

    def _octree(self):
        half = self.radius * 1.05 + np.max(np.abs(_ROOT_SHIFT)) * self.radius + 1e-12
        center = _ROOT_SHIFT * self.radius
        root = _Box(center - half, center + half, 0)
        (D_root,) = self._evaluate_refined([root])
        scale = 1.0
        while D_root is None and scale < 1.5:
            scale += 0.07
            root = _Box(center - half * scale, center + half * scale, 0)
            (D_root,) = self._evaluate_refined([root])
        if D_root is None:
            raise NearDegeneracyError("the outer search box touches a degeneracy; change r_max")
        self.root_charge = D_root
        pending = []
        missing = self._resolve(root, D_root)
        if missing.any():
            pending.append((root, D_root, 0))
        while pending:
            kids_all, owners = [], []
            for idx, (box, D, attempt) in enumerate(pending):
                kids = self._children(box, attempt)
                kids_all.extend(kids)
                owners.extend([idx] * 8)
            results = self._evaluate_refined(kids_all)
            nxt = []
            for idx, (box, D, attempt) in enumerate(pending):
                kd = [(kids_all[i], results[i]) for i in range(len(kids_all)) if owners[i] == idx]
                bad = any(res is None for _, res in kd)
                if not bad:
                    total = sum(res for _, res in kd)
                    bad = bool(np.any(total != D))
                if bad:
                    if attempt < 6:
                        nxt.append((box, D, attempt + 1))
                    else:
                        self.unresolved.append((box, D - self._explained(box)))
                    continue
                for kid, Dk in kd:
                    missing = self._resolve(kid, Dk)
                    if not missing.any():
                        continue
                    if kid.edge > self.min_edge:
                        nxt.append((kid, Dk, 0))
                    else:
                        self.unresolved.append((kid, missing))
            pending = nxt

    # -- closure and records ------------------------------------------------
    def _inversion_closure(self):
        for k in list(self.known):
            mirror = -k.position
            if any(np.linalg.norm(o.position - mirror) <= self.eps_pos for o in self.known):
                continue
            # time reversal maps H(x) onto H(-x): the mirror is usually exact
            added = self._add_known(mirror)
            trust = max(self.eps_pos, 1e-3 * self.radius)
            for lo, hi in ([] if added is not None else k.runs):
                if (lo, hi) in k.precise:
                    added = self._precise_polish(mirror, lo, trust)
                else:
                    res = self.problem.polish(mirror, lo, trust)
                    if res.converged or res.suspect:
                        added = self._add_known(res.position)
                if added is not None:
                    break
            if added is None:
                log.warning("inversion partner of %s not confirmed", tuple(k.position))

    def _records(self):
        eps_deg = self.cfg.eps_deg
        recs, owners = [], {}
        for k in self.known:
            E = self.problem.eigvals(k.position)
            width = E[-1] - E[0]
            for lo, hi in k.runs:
                gap = k.gaps.get((lo, hi), float(np.max(np.diff(E[lo : hi + 1]))))
                rec = DiabolicalPointRecord(
                    position=FieldVector.of(k.position),
                    span=(label_of_rank(self.spin, lo), label_of_rank(self.spin, hi)),
                    order=hi - lo + 1,
                    residual_gap=float(gap),
                    suspect=bool(gap > eps_deg * width or k.suspect),
                )
                owners[id(rec)] = k
                recs.append(rec)
        recs = cluster_points(recs, self.eps_pos)
        self._attach_charges(recs, owners)
        # an unconverged near-miss with zero index is an avoided crossing
        kept = [r for r in recs if not (r.suspect and not any(r.indices.indices))]
        self.stats["near_misses"] = len(recs) - len(kept)
        return kept

    def _charges_from_indices(self, rec, known):
        lo = rank_of_label(self.dim, rec.span[0])
        hi = rank_of_label(self.dim, rec.span[1])
        D = known.D[lo:hi]
        q = np.zeros(self.dim, dtype=int)
        q[lo : hi + 1] = np.diff(np.concatenate([[0], D, [0]]))
        rec.charges = ChargeVector(q, self.spin)
        rec.indices = DiabolicityMultiplet(rec.span[0], tuple(int(v) for v in D))

    def _attach_charges(self, recs, owners):
        by_cluster = {}
        for r in recs:
            by_cluster.setdefault(r.cluster_id, []).append(r)
        centers = {cid: np.mean([r.position_array() for r in rs], axis=0) for cid, rs in by_cluster.items()}
        cids = sorted(centers)
        pts = np.array([centers[c] for c in cids])
        for idx, cid in enumerate(cids):
            members = by_cluster[cid]
            q = None
            if not any(owners[id(rec)].precise for rec in members):
                others = np.delete(pts, idx, axis=0)
                nearest = float(np.min(np.linalg.norm(others - pts[idx], axis=1))) if len(others) else np.inf
                radius = min(self.cap, 0.5 * nearest)
                for _ in range(5):
                    try:
                        q = charges_for_cluster(self.model, pts[idx], radius, self.cfg.sphere_grid)
                        break
                    except NearDegeneracyError:
                        radius *= 0.5
            if q is None:
                # sheet points (or no usable sphere): per-run indices already known
                for rec in members:
                    self._charges_from_indices(rec, owners[id(rec)])
                continue
            cum = np.cumsum(q.q)
            for rec in members:
                lo = rank_of_label(self.dim, rec.span[0])
                hi = rank_of_label(self.dim, rec.span[1])
                sub = np.zeros(self.dim, dtype=int)
                sub[lo : hi + 1] = q.q[lo : hi + 1]
                rec.charges = ChargeVector(sub, self.spin)
                rec.indices = DiabolicityMultiplet(rec.span[0], tuple(int(v) for v in cum[lo:hi]))

    def run(self, seed_density=None, face_cells=None):
        cfg = self.cfg
        self.seed_density = seed_density or cfg.seed_density
        self.face_cells = face_cells or cfg.face_cells
        self.polish_edge = 4 * self.radius / self.seed_density
        self.scan_step = 2 * self.radius / (8 * self.seed_density)
        self.probe = 0.1 * self.eps_pos
        self.min_edge = max(1e-7 * self.radius, 4 * self.eps_pos)
        clock = time.perf_counter()
        self._seed()
        log.info("seeding: %d points in %.1fs", len(self.known), time.perf_counter() - clock)
        self._octree()
        log.info("octree: %d points, %d boxes in %.1fs", len(self.known), self.stats["boxes"], time.perf_counter() - clock)
        self._inversion_closure()
        records = self._records()
        log.info("records: %d in %.1fs", len(records), time.perf_counter() - clock)
        return records


def _zeeman_records(model: HamiltonianModel, eps_deg: float, grid):
    spin = model.spin
    q = charges_for_cluster(model, np.zeros(3), 1.0, grid)
    rec = DiabolicalPointRecord(
        position=FieldVector(0.0, 0.0, 0.0),
        span=(spin.j, -spin.j),
        order=spin.dim,
        charges=q,
        indices=DiabolicityMultiplet(spin.j, tuple(int(v) for v in np.cumsum(q.q)[:-1])),
        cluster_id=0,
        residual_gap=0.0,
    )
    return [rec]


def _completeness(records, spin, pair_ranks):
    """Sum of cluster charges per level against the Zeeman value ``2 mu``."""
    totals = np.zeros(spin.dim, dtype=int)
    for r in records:
        if r.charges is None:
            continue
        totals += r.charges.q
    reports = []
    full = len(pair_ranks) == spin.dim - 1
    if not full:
        return reports
    for rank, value in enumerate(totals):
        rhs = int(round(2 * (spin.j - rank)))
        reports.append(SumRuleReport("global", f"mu={format_half(spin.j - rank)}", int(value), rhs, abs(int(value) - rhs), bool(value == rhs)))
    return reports


def search(model: HamiltonianModel, cfg: Optional[SearchConfig] = None) -> SearchOutcome:
    """Full search with audit; escalates once when the audit fails."""
    cfg = cfg or SearchConfig()
    if not parity_check(model):
        raise ParityError("H0 contains odd-degree terms; the sum rules and the search assume a time-reversal-even H0")
    h0 = zero_field_matrix(model)
    traceless = h0 - np.trace(h0) / model.spin.dim * np.eye(model.spin.dim)
    if not np.any(np.abs(traceless) > 0):
        recs = _zeeman_records(model, cfg.eps_deg, cfg.sphere_grid)
        audit = verify_index_sum_rules(recs, model.spin, cfg.pairs)
        return SearchOutcome(recs, audit, _completeness(recs, model.spin, list(range(model.spin.dim - 1))), 0.0)

    searcher = _Searcher(model, cfg)
    records = searcher.run()
    audit = verify_index_sum_rules(records, model.spin, cfg.pairs)
    complete = _completeness(records, model.spin, searcher.pair_ranks)
    escalated = False
    if cfg.escalate and not (all(r.passed for r in audit) and all(r.passed for r in complete)):
        log.info("sum-rule audit failed; escalating search")
        bigger = replace(cfg, r_max=2 * searcher.r_user)
        searcher = _Searcher(model, bigger)
        records = searcher.run(seed_density=2 * cfg.seed_density, face_cells=2 * cfg.face_cells)
        audit = verify_index_sum_rules(records, model.spin, cfg.pairs)
        complete = _completeness(records, model.spin, searcher.pair_ranks)
        escalated = True
    stats = dict(searcher.stats)
    stats["evaluations"] = searcher.problem.evaluations
    return SearchOutcome(
        records=records,
        audit=audit,
        completeness=complete,
        region_radius=searcher.radius,
        escalated=escalated,
        unresolved=searcher.unresolved,
        stats=stats,
    )


def find_diabolical_points(model: HamiltonianModel, cfg: Optional[SearchConfig] = None):
    """Diabolical-point records of ``model`` sorted by cluster position."""
    return search(model, cfg).records
