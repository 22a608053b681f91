"""Effective-spin picture of the tunnel-splitting zeros.

Tunnelling between the levels ``M`` and ``-M'`` of a biaxial spin behaves
like the ground doublet of a fictitious spin ``J~ = J - j`` with
``j = (M' - M)/2`` in an easy-axis field shifted by ``2 j K``. The grid of
degeneracies follows from that picture; its row spacing is ``K`` to leading
order and ``sqrt(K^2 - D^2)`` exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Literal, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .spin import HamiltonianModel, SpinQuantum

Mode = Literal["approximate", "exact-spacing"]


def _half(x) -> Fraction:
    """Exact half-integer from a number or a ``"5/2"`` style string."""
    v = Fraction(x)
    if (2 * v).denominator != 1:
        raise ValueError(f"{x!r} is not a multiple of 1/2")
    return v


@dataclass(frozen=True)
class OverlapQuery:
    J: Fraction
    M: Fraction
    j: Fraction

    def __post_init__(self):
        J, M, j = _half(self.J), _half(self.M), _half(self.j)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "j", j)
        if J < 0 or abs(M) > J or (J - M).denominator != 1:
            raise ValueError(f"invalid level M={M} for J={J}")
        if not 0 <= j <= J:
            raise ValueError(f"need 0 <= j <= J, got j={j}, J={J}")
        if M - 2 * j < -J:
            raise ValueError(f"M - 2j = {M - 2 * j} lies below -J")


def overlap_exact(q: OverlapQuery) -> float:
    """``<J M | j j> (x) |J-j, M-j>``, from integer factorials.

    Equal to ``sqrt((2J-2j)! (J+M)! / ((2J)! (J+M-2j)!))``.
    """
    f = math.factorial
    J2, j2, JM = int(2 * q.J), int(2 * q.j), int(q.J + q.M)
    ratio = Fraction(f(J2 - j2) * f(JM), f(J2) * f(JM - j2))
    return math.sqrt(ratio)


@dataclass(frozen=True)
class OverlapApproximation:
    value: float
    deviation: float  # |exact - value|


def overlap_approx(q: OverlapQuery) -> OverlapApproximation:
    """First-order value ``1 - j (J - M) / 2J`` and its distance from the exact one."""
    if q.J == 0:
        return OverlapApproximation(1.0, 0.0)
    value = float(1 - q.j * (q.J - q.M) / (2 * q.J))
    return OverlapApproximation(value, abs(overlap_exact(q) - value))


def parity_class(jt) -> str:
    return "integer" if _half(jt).denominator == 1 else "half-integer"


@dataclass(frozen=True)
class EffectivePrediction:
    J: Fraction
    M: Fraction
    M_prime: Fraction
    mode: str
    hx0: float
    hz0: float
    field_shift: float  # 2 j K
    grid: np.ndarray = field(repr=False)  # (M + M', 3)

    @property
    def j(self) -> Fraction:
        return (self.M_prime - self.M) / 2

    @property
    def J_tilde(self) -> Fraction:
        return self.J - self.j

    @property
    def M_tilde(self) -> Fraction:
        return (self.M + self.M_prime) / 2

    @property
    def parity(self) -> str:
        return parity_class(self.J_tilde)

    @property
    def pair(self) -> tuple:
        return pair_for_levels(self.J, self.M, self.M_prime)

    @property
    def hz(self) -> float:
        return float(self.grid[0, 2])


def pair_for_levels(J, M, M_prime) -> tuple:
    """Rank labels ``(mu, mu - 1)`` of the pair in which ``M`` meets ``-M'``.

    The row of ``(M, M')`` contributes ``M + M'`` points to the pair whose
    upper label is ``mu = M + M' - J``. Rows with ``M' > M`` have a mirror
    row at ``+H_z``; counting it, the rows reproduce the per-pair totals, and
    following the labels from the Zeeman limit along the row gives the same
    assignment (checked by diagonalization in the tests).
    """
    mu = _half(M) + _half(M_prime) - _half(J)
    return (mu, mu - 1)


def _validate_levels(J, M, Mp):
    for v, name in ((M, "M"), (Mp, "M'")):
        if not -J <= v <= J or (J - v).denominator != 1:
            raise ValueError(f"{name}={v} is not a level of J={J}")
    if Mp < M:
        raise ValueError(f"need M' >= M, got M={M}, M'={Mp}")
    if M + Mp < 1:
        raise ValueError("M + M' must be at least 1 for the pair to tunnel")


def predicted_diabolical_grid(J, K: float, D: float, M, M_prime, mode: Mode = "exact-spacing") -> EffectivePrediction:
    """Row of degeneracies where ``|M>`` meets ``|-M'>``.

    ``H_z = (M - M') H_z0`` and ``H_x = ((M + M' - 1)/2 - n) H_x0`` for
    ``n = 0 .. M + M' - 1``, with ``H_x0 = 2 sqrt(2 D (K + D))``. The
    approximate mode takes ``H_z0 = K``, the exact-spacing mode
    ``sqrt(K^2 - D^2)``.
    """
    J, M, Mp = _half(J), _half(M), _half(M_prime)
    if not 0 < D < K:
        raise ValueError(f"need 0 < D < K, got K={K}, D={D}")
    _validate_levels(J, M, Mp)
    hx0 = 2.0 * math.sqrt(2.0 * D * (K + D))
    if mode == "approximate":
        hz0 = float(K)
    elif mode == "exact-spacing":
        hz0 = math.sqrt(K * K - D * D)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    count = int(M + Mp)
    n = np.arange(count)
    grid = np.zeros((count, 3))
    grid[:, 0] = (float(M + Mp - 1) / 2 - n) * hx0
    grid[:, 2] = float(M - Mp) * hz0
    return EffectivePrediction(J, M, Mp, mode, hx0, hz0, float(2 * ((Mp - M) / 2) * K), grid)


def all_level_pairs(J) -> list:
    """Every ``(M, M')`` with ``-J <= M <= M' <= J`` and ``M + M' >= 1``."""
    J = _half(J)
    levels = [J - k for k in range(int(2 * J) + 1)]
    return [(M, Mp) for M in levels for Mp in levels if Mp >= M and M + Mp >= 1]


def row_parities(J) -> list:
    """``(|H_z| in units of H_z0, parity of J~)`` for each row, by increasing height.

    Rows are labelled by ``M' - M``; the parity of ``J~ = J - (M' - M)/2``
    flips from one row to the next.
    """
    J = _half(J)
    return [(k, parity_class(J - Fraction(k, 2))) for k in range(int(2 * J))]


@dataclass
class NodeMatch:
    node: np.ndarray
    found: np.ndarray | None
    error: float  # |node - found|
    relative_error: float
    matched: bool


@dataclass
class ComparisonReport:
    prediction: EffectivePrediction
    nodes: list
    tolerance: float

    @property
    def unmatched(self) -> list:
        return [n for n in self.nodes if not n.matched]

    @property
    def max_relative_error(self) -> float:
        return max((n.relative_error for n in self.nodes), default=0.0)

    @property
    def max_hz_relative_error(self) -> float:
        """Largest ``|node_z - found_z| / |found_z|``; zero for the ``H_z = 0`` row."""
        if self.prediction.M == self.prediction.M_prime:
            return 0.0
        errs = [abs(n.node[2] - n.found[2]) / abs(n.found[2]) for n in self.nodes if n.found is not None]
        return max(errs, default=0.0)


def compare_prediction_to_search(model: HamiltonianModel, prediction: EffectivePrediction, found, tolerance: float | None = None) -> ComparisonReport:
    """Match every predicted node one-to-one with a found point of the same pair.

    ``found`` holds records from the search (or bare positions). Nodes left
    without a partner, or whose partner is farther than ``tolerance``
    (default half the smaller grid spacing), are reported as unmatched.
    """
    if model.spin.dim != int(2 * prediction.J) + 1:
        raise ValueError("prediction and model have different spins")
    mu_top, _ = prediction.pair
    pts = []
    for rec in found:
        if hasattr(rec, "position_array"):
            if Fraction(rec.mu_top) < mu_top or Fraction(rec.mu_bottom) > mu_top - 1:
                continue
            pts.append(rec.position_array())
        else:
            pts.append(np.asarray(rec, dtype=float))
    if tolerance is None:
        tolerance = 0.5 * min(prediction.hx0, prediction.hz0)
    nodes = []
    grid = prediction.grid
    if pts:
        P = np.array(pts)
        cost = np.linalg.norm(grid[:, None, :] - P[None, :, :], axis=2)
        rows, cols = linear_sum_assignment(cost)
        partner = dict(zip(rows, cols))
    else:
        P, partner = np.zeros((0, 3)), {}
    for i, node in enumerate(grid):
        if i in partner:
            f = P[partner[i]]
            err = float(np.linalg.norm(node - f))
            scale = float(np.linalg.norm(f)) or prediction.hx0
            nodes.append(NodeMatch(node, f, err, err / scale, err <= tolerance))
        else:
            nodes.append(NodeMatch(node, None, math.inf, math.inf, False))
    return ComparisonReport(prediction, nodes, tolerance)


def compare_modes(model: HamiltonianModel, K: float, D: float, M, M_prime, found) -> dict:
    """Reports for both prediction modes on one row."""
    J = Fraction(model.spin.twice_j, 2)
    return {
        mode: compare_prediction_to_search(model, predicted_diabolical_grid(J, K, D, M, M_prime, mode), found)
        for mode in ("approximate", "exact-spacing")
    }


def measured_row_spacing(positions: Sequence, decimals: int = 9) -> float:
    """Mean spacing between the distinct ``H_z`` rows of a point set."""
    hz = np.unique(np.round(np.asarray([np.asarray(p, dtype=float)[2] for p in positions]), decimals))
    if len(hz) < 2:
        raise ValueError("need at least two rows to measure a spacing")
    return float((hz[-1] - hz[0]) / (len(hz) - 1))


def spin_of(J) -> SpinQuantum:
    return SpinQuantum(int(2 * _half(J)))
