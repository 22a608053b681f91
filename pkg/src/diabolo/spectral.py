"""Dense Hermitian eigensystems with the level labelling used throughout.

Levels are ranked by ascending energy; the level of rank ``r`` carries the
label ``mu = J - r``, so the ground state is ``mu = +J`` and the highest
state ``mu = -J`` (the ``J_z`` quantum number for a strong field along +z).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import HermiticityError
from .spin import SpinQuantum

HERMITIAN_INPUT_TOL = 1e-10


@dataclass(frozen=True)
class SpectrumResult:
    energies: np.ndarray
    states: np.ndarray
    labels: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.energies)

    def state(self, mu) -> np.ndarray:
        return self.states[:, rank_of_label(self.dim, mu)]


@dataclass(frozen=True)
class GapProfile:
    gaps: np.ndarray
    spectral_width: float
    smallest: int


def _labels(dim: int) -> np.ndarray:
    j = (dim - 1) / 2
    return j - np.arange(dim)


def eigensystem(H) -> SpectrumResult:
    """Ascending eigen-decomposition of a Hermitian matrix.

    Raises :class:`HermiticityError` when ``H`` deviates from its adjoint by
    more than ``1e-10`` (relative to ``max(1, max|H|)``).
    """
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    asym = float(np.max(np.abs(H - H.conj().T))) if H.size else 0.0
    scale = max(1.0, float(np.max(np.abs(H)))) if H.size else 1.0
    if asym > HERMITIAN_INPUT_TOL * scale:
        raise HermiticityError(f"matrix is not Hermitian: max |H - H^dagger| = {asym:.3e}")
    energies, states = np.linalg.eigh(H)
    return SpectrumResult(energies, states, _labels(len(energies)))


def label_of_rank(spin: SpinQuantum, rank: int) -> float:
    if not 0 <= rank <= spin.twice_j:
        raise ValueError(f"rank {rank} out of range 0..{spin.twice_j}")
    return spin.j - rank


def rank_of_label(dim: int, mu) -> int:
    j = (dim - 1) / 2
    rank = j - float(mu)
    r = int(round(rank))
    if abs(rank - r) > 1e-9 or not 0 <= r < dim:
        raise ValueError(f"label mu={mu} is not a level of a {dim}-dimensional spin")
    return r


def gap_profile(s: SpectrumResult) -> GapProfile:
    gaps = np.diff(s.energies)
    gaps = np.maximum(gaps, 0.0)
    width = float(s.energies[-1] - s.energies[0])
    smallest = int(np.argmin(gaps)) if len(gaps) else -1
    return GapProfile(gaps, width, smallest)


def relative_gaps(energies: np.ndarray) -> np.ndarray:
    """Adjacent gaps divided by the spectral width (last axis = levels)."""
    energies = np.asarray(energies)
    gaps = np.diff(energies, axis=-1)
    width = energies[..., -1:] - energies[..., :1]
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(width > 0, gaps / np.where(width > 0, width, 1.0), 0.0)
    return rel
