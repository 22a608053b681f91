"""Berry curvature, Chern numbers on closed surfaces in field space, and sum rules.

Orientation convention: the topological charge of level ``mu`` through a
closed surface is ``Q = -(1/2pi) * outward flux of the Berry curvature``.
Numerically it is obtained from gauge-invariant link variables; the sign is
anchored so that a bare spin 1/2 in a Zeeman field has ``Q(+1/2) = +1``,
and more generally ``Q(mu) = 2 mu`` for a surface enclosing all degeneracies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from ._parallel import batched_eigh
from .errors import FluxQuantizationError, NearDegeneracyError, SumRuleError
from .spectral import rank_of_label
from .spin import (
    FieldVector,
    HamiltonianModel,
    SpinQuantum,
    as_field_array,
    assemble_batch,
    assemble_hamiltonian,
    format_half,
    make_spin_operators,
)

GUARD_REL = 1e-8
INTEGER_TOL = 1e-6
INTEGER_HARD_TOL = 1e-3
# plaquette phases beyond this are too coarse to trust the rounding
PHASE_LIMIT = 0.5 * np.pi
# link orientation -> charge sign; calibrated on the spin-1/2 Zeeman monopole
FLUX_SIGN = 1.0


@dataclass(frozen=True)
class CurvatureSample:
    field: FieldVector
    mu: float
    b: np.ndarray


@dataclass(frozen=True)
class ChargeVector:
    """Integer charges indexed by rank (entry 0 is ``mu = +J``)."""

    q: np.ndarray
    spin: SpinQuantum

    def __post_init__(self):
        q = np.asarray(self.q, dtype=int)
        if q.shape != (self.spin.dim,):
            raise ValueError(f"charge vector needs {self.spin.dim} entries, got {q.shape}")
        object.__setattr__(self, "q", q)

    def at(self, mu) -> int:
        return int(self.q[rank_of_label(self.spin.dim, mu)])

    @property
    def total(self) -> int:
        return int(self.q.sum())

    def pair_indices(self) -> np.ndarray:
        """Cumulative sums ``D`` for every adjacent pair ``(mu, mu-1)``, by rank."""
        return np.cumsum(self.q)[:-1]

    def as_dict(self):
        return {float(self.spin.j - r): int(v) for r, v in enumerate(self.q)}

    def __add__(self, other):
        return ChargeVector(self.q + other.q, self.spin)


@dataclass(frozen=True)
class DiabolicityMultiplet:
    """Indices for the adjacent pairs of one degenerate run.

    ``indices[k]`` belongs to the pair ``(top - k, top - k - 1)``.
    """

    top: float
    indices: tuple

    @property
    def pairs(self):
        return [(self.top - k, self.top - k - 1) for k in range(len(self.indices))]

    def as_dict(self):
        return {p: d for p, d in zip(self.pairs, self.indices)}


@dataclass(frozen=True)
class SumRuleReport:
    rule: str
    label: str
    lhs: float
    rhs: float
    residual: float
    passed: bool


@dataclass(frozen=True)
class SurfaceFlux:
    """Raw fluxes through a closed surface, one entry per level or subspace."""

    raw: np.ndarray
    max_phase: np.ndarray
    min_gap: np.ndarray
    grid: tuple
    spectral_width: float

    def integers(self) -> np.ndarray:
        return np.rint(self.raw).astype(int)


# --------------------------------------------------------------------------
# Berry curvature


def berry_curvature(model: HamiltonianModel, field, mu, guard: float = GUARD_REL) -> CurvatureSample:
    """Kubo-formula Berry curvature of level ``mu`` at ``field``.

    ``B = -Im sum_{m != mu} <mu|J|m> x <m|J|mu> / (E_mu - E_m)^2``; refuses to
    evaluate when a gap adjacent to ``mu`` is below ``guard * spectral width``.
    """
    h = as_field_array(field)
    E, U = np.linalg.eigh(assemble_hamiltonian(model, h))
    dim = len(E)
    r = rank_of_label(dim, mu)
    width = E[-1] - E[0]
    threshold = guard * width
    adjacent = []
    if r > 0:
        adjacent.append(E[r] - E[r - 1])
    if r < dim - 1:
        adjacent.append(E[r + 1] - E[r])
    small = min(adjacent) if adjacent else np.inf
    if width == 0 or small <= threshold:
        raise NearDegeneracyError(
            f"level mu={format_half(mu)} is within {small:.3e} of a neighbour at H={tuple(h)}; "
            "curvature is undefined at a degeneracy",
            gap=small,
            field=tuple(h),
        )
    ops = make_spin_operators(model.spin)
    jm = np.einsum("im,aij,jn->amn", U.conj(), ops.vector, U)
    col = jm[:, r, :]  # <mu|J_a|m>
    row = jm[:, :, r]  # <m|J_a|mu>
    denom = (E[r] - E) ** 2
    denom[r] = np.inf
    cross = np.cross(col.T, row.T)  # (dim, 3)
    b = -np.imag((cross / denom[:, None]).sum(axis=0))
    return CurvatureSample(FieldVector.of(h), float(mu), b)


# --------------------------------------------------------------------------
# surfaces


def sphere_fields(center, radius, ntheta, nphi):
    """Latitude-longitude grid ``(ntheta+1, nphi, 3)``; pole rows repeat one point."""
    c = as_field_array(center)
    theta = np.linspace(0.0, np.pi, ntheta + 1)
    phi = 2 * np.pi * np.arange(nphi) / nphi
    st, ct = np.sin(theta), np.cos(theta)
    st[0] = st[-1] = 0.0
    n = np.stack(
        [st[:, None] * np.cos(phi)[None], st[:, None] * np.sin(phi)[None], np.broadcast_to(ct[:, None], (ntheta + 1, nphi))],
        axis=-1,
    )
    return c + radius * n


def _sphere_states(model, center, radius, ntheta, nphi):
    pts = sphere_fields(center, radius, ntheta, nphi)
    # one eigensolve per pole so both pole rows share an identical vector
    inner = pts[1:-1].reshape(-1, 3)
    uniq = np.concatenate([pts[0, :1], inner, pts[-1, :1]])
    E, U = batched_eigh(assemble_batch(model, uniq))
    d = E.shape[1]
    Eg = np.empty((ntheta + 1, nphi, d))
    Ug = np.empty((ntheta + 1, nphi, d, d), dtype=complex)
    Eg[0], Ug[0] = E[0], U[0]
    Eg[-1], Ug[-1] = E[-1], U[-1]
    Eg[1:-1] = E[1:-1].reshape(ntheta - 1, nphi, d)
    Ug[1:-1] = U[1:-1].reshape(ntheta - 1, nphi, d, d)
    return Eg, Ug


def _level_min_gaps(E):
    """Per level, the smallest gap to either neighbour over all samples."""
    gaps = np.diff(E, axis=-1).reshape(-1, E.shape[-1] - 1).min(axis=0)
    below = np.concatenate([[np.inf], gaps])
    above = np.concatenate([gaps, [np.inf]])
    return np.minimum(below, above)


def _width(E):
    return float(np.min(E[..., -1] - E[..., 0]))


def sphere_flux(
    model: HamiltonianModel,
    center,
    radius: float,
    grid=(64, 64),
    *,
    subspaces: Optional[Sequence[int]] = None,
    auto_refine: bool = True,
    max_grid: int = 512,
) -> SurfaceFlux:
    """Discretized Berry flux through a sphere, for all levels or subspaces.

    With ``subspaces=None`` the result has one entry per level (by rank). With
    a list of ``k`` values, entry ``i`` is the flux of the subspace spanned by
    the ``k_i`` lowest levels, whose charge is the diabolicity index of the
    pair of ranks ``(k-1, k)``.

    ``min_gap`` holds, per entry, the smallest gap that the entry depends on.
    When ``auto_refine`` is set the grid is doubled until every plaquette
    phase of a well-separated entry is below ``PHASE_LIMIT``.
    """
    if radius <= 0:
        raise ValueError("sphere radius must be positive")
    ntheta, nphi = int(grid[0]), int(grid[1])
    if ntheta < 2 or nphi < 3:
        raise ValueError("sphere grid needs at least 2 x 3 cells")
    while True:
        E, U = _sphere_states(model, center, radius, ntheta, nphi)
        width = _width(E)
        if subspaces is None:
            raw, mx, _ = kernels.level_flux(U, True)
            gaps = _level_min_gaps(E)
        else:
            ks = [int(k) for k in subspaces]
            raw, mx, _ = kernels.subspace_flux(U, True, ks)
            g = np.diff(E, axis=-1).reshape(-1, E.shape[-1] - 1).min(axis=0)
            gaps = np.array([g[k - 1] for k in ks])
        ok = gaps > GUARD_REL * width
        too_coarse = np.any(mx[ok] > PHASE_LIMIT)
        if not (auto_refine and too_coarse) or 2 * max(ntheta, nphi) > max_grid:
            return SurfaceFlux(raw, mx, gaps, (ntheta, nphi), width)
        ntheta, nphi = 2 * ntheta, 2 * nphi


def _checked_integer(value, max_phase, what):
    rounded = int(np.rint(value))
    off = abs(value - rounded)
    if off > INTEGER_HARD_TOL or max_phase > np.pi * 0.99:
        raise FluxQuantizationError(
            f"flux for {what} is {value:.6f}, not an integer (max plaquette phase {max_phase:.3f}); "
            "refine the surface grid"
        )
    return rounded


def _guard(flux: SurfaceFlux, index, what, center, radius):
    if not flux.min_gap[index] > GUARD_REL * flux.spectral_width:
        raise NearDegeneracyError(
            f"levels of {what} nearly cross on the sphere (gap {flux.min_gap[index]:.3e}) "
            f"centred at {tuple(as_field_array(center))} with radius {radius}; change the radius",
            gap=float(flux.min_gap[index]),
        )


def chern_on_sphere(model: HamiltonianModel, center, radius: float, mu, grid=(64, 64)) -> int:
    """Topological charge of level ``mu`` enclosed by a sphere."""
    dim = model.spin.dim
    r = rank_of_label(dim, mu)
    flux = sphere_flux(model, center, radius, grid)
    what = f"level mu={format_half(mu)}"
    _guard(flux, r, what, center, radius)
    return _checked_integer(FLUX_SIGN * flux.raw[r], flux.max_phase[r], what)


def pair_index_on_sphere(model: HamiltonianModel, center, radius: float, mu, grid=(64, 64)) -> int:
    """Diabolicity index of the pair ``(mu, mu-1)`` enclosed by a sphere.

    Computed independently of the per-level charges as the Chern number of
    the subspace of all levels at or below rank ``J - mu``.
    """
    k = rank_of_label(model.spin.dim, mu) + 1
    if k >= model.spin.dim:
        raise ValueError(f"mu={format_half(mu)} is the top level; it starts no pair")
    flux = sphere_flux(model, center, radius, grid, subspaces=[k])
    what = f"pair ({format_half(mu)}, {format_half(float(mu) - 1)})"
    _guard(flux, 0, what, center, radius)
    return _checked_integer(FLUX_SIGN * flux.raw[0], flux.max_phase[0], what)


def charges_for_cluster(model: HamiltonianModel, center, radius: float, grid=(64, 64)) -> ChargeVector:
    """Charges of every level through one sphere around a cluster."""
    flux = sphere_flux(model, center, radius, grid)
    q = np.zeros(model.spin.dim, dtype=int)
    for r in range(model.spin.dim):
        mu = model.spin.j - r
        what = f"level mu={format_half(mu)}"
        _guard(flux, r, what, center, radius)
        q[r] = _checked_integer(FLUX_SIGN * flux.raw[r], flux.max_phase[r], what)
    return ChargeVector(q, model.spin)


# --------------------------------------------------------------------------
# indices and sum rules


def diabolicity_from_charges(q: ChargeVector, span=None) -> DiabolicityMultiplet:
    """Partial sums of charges over the pairs of a degenerate run.

    ``span = (mu_top, mu_bottom)``; by default the narrowest range holding all
    nonzero charges.
    """
    if q.total != 0:
        raise SumRuleError(f"charges {q.q.tolist()} sum to {q.total}, not 0; not a single closed cluster")
    if span is None:
        nz = np.flatnonzero(q.q)
        if len(nz) == 0:
            return DiabolicityMultiplet(q.spin.j, ())
        lo, hi = int(nz[0]), int(nz[-1])
    else:
        lo = rank_of_label(q.spin.dim, span[0])
        hi = rank_of_label(q.spin.dim, span[1])
        if hi <= lo:
            raise ValueError(f"span {span} must run from a higher to a lower label")
    cumulative = np.cumsum(q.q)
    return DiabolicityMultiplet(q.spin.j - lo, tuple(int(v) for v in cumulative[lo:hi]))


def verify_point_sum_rule(q, label: str = "") -> SumRuleReport:
    values = q.q if isinstance(q, ChargeVector) else np.asarray(q, dtype=int)
    total = int(np.sum(values))
    return SumRuleReport("point", label, total, 0, abs(total), total == 0)


def verify_global_sum_rule(model: HamiltonianModel, radius: Optional[float] = None, grid=(64, 64)):
    """Check ``Q(mu) = 2 mu`` on a sphere around the origin enclosing every point."""
    from .search import bound_region

    if radius is None:
        radius = bound_region(model)
    try:
        q = charges_for_cluster(model, np.zeros(3), radius, grid)
    except NearDegeneracyError:
        radius = 2 * radius
        q = charges_for_cluster(model, np.zeros(3), radius, grid)
    reports = []
    for r, value in enumerate(q.q):
        mu = model.spin.j - r
        rhs = 2 * mu
        reports.append(
            SumRuleReport("global", f"mu={format_half(mu)}", int(value), rhs, abs(value - rhs), value == rhs)
        )
    return reports


def expected_pair_total(spin: SpinQuantum, mu) -> int:
    """``(J + mu)(J - mu + 1)``, exact for integer and half-integer labels."""
    tj, tm = spin.twice_j, int(round(2 * float(mu)))
    return (tj + tm) * (tj - tm + 2) // 4


def expected_grand_total(spin: SpinQuantum) -> int:
    """``2J(J+1)(2J+1)/3``."""
    tj = spin.twice_j
    return tj * (tj + 2) * (tj + 1) // 6


def verify_index_sum_rules(points, spin: SpinQuantum, pairs: Optional[Sequence[float]] = None):
    """Per-pair totals against ``(J+mu)(J-mu+1)`` and the grand total.

    ``points`` are records with ``indices`` (a :class:`DiabolicityMultiplet`).
    When ``pairs`` restricts the audit to some ``mu`` values the grand total
    is skipped.
    """
    totals = {}
    for p in points:
        if p.indices is None:
            continue
        for (top, _), d in zip(p.indices.pairs, p.indices.indices):
            key = int(round(2 * top))
            totals[key] = totals.get(key, 0) + d
    all_mu = [spin.j - r for r in range(spin.dim - 1)]
    wanted = all_mu if pairs is None else [float(m) for m in pairs]
    reports = []
    for mu in wanted:
        lhs = totals.get(int(round(2 * mu)), 0)
        rhs = expected_pair_total(spin, mu)
        reports.append(
            SumRuleReport(
                "pair", f"({format_half(mu)},{format_half(mu - 1)})", lhs, rhs, abs(lhs - rhs), lhs == rhs
            )
        )
    if pairs is None:
        lhs = sum(totals.values())
        rhs = expected_grand_total(spin)
        reports.append(SumRuleReport("grand", "total", lhs, rhs, abs(lhs - rhs), lhs == rhs))
    return reports


def codimension(orders: Sequence[int]) -> int:
    orders = [int(g) for g in orders]
    if any(g < 2 for g in orders):
        raise ValueError("degeneracy orders must be >= 2")
    return sum(g * g - 1 for g in orders)
