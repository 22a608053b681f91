"""Spin operators, zero-field anisotropy models and field-dependent Hamiltonians.

Conventions
-----------
* hbar = 1 and the magnetic moment is absorbed into the field, so the full
  Hamiltonian reads ``H = H0(J) - H . J`` with ``H`` in energy units.
* Matrices are written in the ``J_z`` eigenbasis ordered ``m = +J ... -J``.
* A tensorial g-factor needs no special code path: rescale each field
  component along the principal axes of the g-tensor before building
  :class:`FieldVector` (``H_a -> g_a mu_B B_a``).
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from itertools import product
from typing import Sequence, Union

import numpy as np
import scipy.linalg

from .errors import HermiticityError, ParityError

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class SpinQuantum:
    """Spin magnitude stored as ``twice_j`` so half-integers stay exact."""

    twice_j: int

    def __post_init__(self):
        if int(self.twice_j) != self.twice_j:
            raise ValueError(f"twice_j must be an integer, got {self.twice_j!r}")
        object.__setattr__(self, "twice_j", int(self.twice_j))
        if self.twice_j < 1:
            raise ValueError("twice_j must be >= 1: a spin-0 system has no level structure")

    @classmethod
    def from_j(cls, j):
        twice = Fraction(j) * 2
        if twice.denominator != 1:
            raise ValueError(f"J must be an integer or half-integer, got {j!r}")
        return cls(int(twice))

    @property
    def j(self) -> float:
        return self.twice_j / 2

    @property
    def dim(self) -> int:
        return self.twice_j + 1

    @property
    def m_values(self) -> np.ndarray:
        """Basis labels ``m = J, J-1, ..., -J``."""
        return self.j - np.arange(self.dim)

    def __str__(self):
        return format_half(self.j)


def format_half(x) -> str:
    """Render an integer or half-integer as ``3``, ``-1/2``, ``5/2``."""
    twice = int(round(2 * float(x)))
    if twice % 2 == 0:
        return str(twice // 2)
    return f"{twice}/2"


@dataclass(frozen=True)
class SpinOperatorSet:
    jx: np.ndarray
    jy: np.ndarray
    jz: np.ndarray
    jplus: np.ndarray
    jminus: np.ndarray
    dim: int

    @property
    def vector(self) -> np.ndarray:
        """``(3, dim, dim)`` stack ``(jx, jy, jz)``."""
        return np.stack([self.jx, self.jy, self.jz])

    def component(self, letter: str) -> np.ndarray:
        return {"x": self.jx, "y": self.jy, "z": self.jz}[letter]


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@lru_cache(maxsize=64)
def _operators_for(twice_j: int) -> SpinOperatorSet:
    spin = SpinQuantum(twice_j)
    j, dim = spin.j, spin.dim
    m = spin.m_values
    jplus = np.zeros((dim, dim), dtype=complex)
    # <m+1|J+|m> sits one row above the column of m
    for col in range(1, dim):
        jplus[col - 1, col] = math.sqrt(j * (j + 1) - m[col] * (m[col] + 1))
    jminus = jplus.conj().T
    jx = (jplus + jminus) / 2
    jy = (jplus - jminus) / 2j
    jz = np.diag(m).astype(complex)
    return SpinOperatorSet(
        jx=_frozen(jx),
        jy=_frozen(jy),
        jz=_frozen(jz),
        jplus=_frozen(jplus),
        jminus=_frozen(jminus),
        dim=dim,
    )


def make_spin_operators(spin: SpinQuantum) -> SpinOperatorSet:
    """Angular-momentum matrices for ``spin`` in the ``m = +J ... -J`` basis."""
    if isinstance(spin, int):
        spin = SpinQuantum(spin)
    return _operators_for(spin.twice_j)


@dataclass(frozen=True)
class FieldVector:
    hx: float
    hy: float
    hz: float

    def __post_init__(self):
        for name in ("hx", "hy", "hz"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"field component {name} must be finite, got {value}")
            object.__setattr__(self, name, value)

    @classmethod
    def of(cls, value) -> "FieldVector":
        if isinstance(value, FieldVector):
            return value
        hx, hy, hz = (float(v) for v in value)
        return cls(hx, hy, hz)

    def as_array(self) -> np.ndarray:
        return np.array([self.hx, self.hy, self.hz])

    def __neg__(self):
        return FieldVector(-self.hx, -self.hy, -self.hz)

    def __iter__(self):
        return iter((self.hx, self.hy, self.hz))


def as_field_array(value) -> np.ndarray:
    if isinstance(value, FieldVector):
        return value.as_array()
    arr = np.asarray(value, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"a field must have three components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field components must be finite")
    return arr


@dataclass(frozen=True)
class HamiltonianTerm:
    """``coefficient`` times the ordered operator product spelled by ``word``.

    ``word`` is a string over ``{x, y, z}``; ``"zz"`` is ``J_z^2``, ``"xy"`` is
    ``J_x J_y`` (no symmetrization), the empty word is the identity.
    """

    coefficient: float
    word: str

    def __post_init__(self):
        word = str(self.word).lower()
        bad = set(word) - set("xyz")
        if bad:
            raise ValueError(f"term word {self.word!r} contains letters outside x, y, z: {sorted(bad)}")
        object.__setattr__(self, "word", word)
        coef = self.coefficient
        if isinstance(coef, complex):
            raise ValueError(f"term coefficients must be real, got {coef!r}")
        coef = float(coef)
        if not math.isfinite(coef):
            raise ValueError(f"term coefficient for {word!r} must be finite")
        object.__setattr__(self, "coefficient", coef)

    @property
    def degree(self) -> int:
        return len(self.word)

    @classmethod
    def coerce(cls, item) -> "HamiltonianTerm":
        if isinstance(item, HamiltonianTerm):
            return item
        if isinstance(item, dict):
            return cls(item["coefficient"], item["word"])
        a, b = item
        if isinstance(a, str):
            return cls(b, a)
        return cls(a, b)


def _tetragonal_words(coefficient):
    # (Jx + iJy)^4 + (Jx - iJy)^4 keeps the words with an even number of y,
    # each weighted by 2 * i^(#y)
    terms = []
    for letters in product("xy", repeat=4):
        ny = letters.count("y")
        if ny % 2:
            continue
        terms.append(HamiltonianTerm(2 * coefficient * (-1) ** (ny // 2), "".join(letters)))
    return terms


@dataclass(frozen=True)
class Biaxial:
    """``-K Jz^2 + D (Jx^2 - Jy^2)`` with easy axis z and hard axis x."""

    K: float
    D: float

    def __post_init__(self):
        if not 0 < self.D < self.K:
            raise ValueError(f"biaxial anisotropy needs 0 < D < K, got K={self.K}, D={self.D}")

    def matrix(self, ops: SpinOperatorSet) -> np.ndarray:
        jx, jy, jz = ops.jx, ops.jy, ops.jz
        return -self.K * (jz @ jz) + self.D * (jx @ jx - jy @ jy)

    def terms(self):
        return [HamiltonianTerm(-self.K, "zz"), HamiltonianTerm(self.D, "xx"), HamiltonianTerm(-self.D, "yy")]


@dataclass(frozen=True)
class Cubic:
    """``E0 + K (Jx^4 + Jy^4 + Jz^4) / 6``."""

    E0: float
    K: float

    def matrix(self, ops: SpinOperatorSet) -> np.ndarray:
        total = np.zeros((ops.dim, ops.dim), dtype=complex)
        for a in (ops.jx, ops.jy, ops.jz):
            a2 = a @ a
            total += a2 @ a2
        return self.E0 * np.eye(ops.dim) + self.K * total / 6

    def terms(self):
        out = [HamiltonianTerm(self.K / 6, w) for w in ("xxxx", "yyyy", "zzzz")]
        if self.E0:
            out.insert(0, HamiltonianTerm(self.E0, ""))
        return out


@dataclass(frozen=True)
class BiaxialPlusTetragonal:
    """Biaxial anisotropy plus the fourth-order term ``C (J+^4 + J-^4)``."""

    K: float
    D: float
    C: float

    def __post_init__(self):
        if not 0 < self.D < self.K:
            raise ValueError(f"biaxial anisotropy needs 0 < D < K, got K={self.K}, D={self.D}")

    def matrix(self, ops: SpinOperatorSet) -> np.ndarray:
        base = Biaxial(self.K, self.D).matrix(ops)
        p2 = ops.jplus @ ops.jplus
        m2 = ops.jminus @ ops.jminus
        return base + self.C * (p2 @ p2 + m2 @ m2)

    def terms(self):
        return Biaxial(self.K, self.D).terms() + _tetragonal_words(self.C)


PRESETS = {"biaxial": Biaxial, "cubic": Cubic, "biaxial_tetragonal": BiaxialPlusTetragonal}

Preset = Union[Biaxial, Cubic, BiaxialPlusTetragonal]


@dataclass(frozen=True)
class HamiltonianModel:
    """Spin magnitude plus zero-field anisotropy (a preset or a term list)."""

    spin: SpinQuantum
    zero_field: Union[Preset, tuple] = field(default=())

    def __post_init__(self):
        spin = self.spin
        if isinstance(spin, int):
            spin = SpinQuantum(spin)
        object.__setattr__(self, "spin", spin)
        zf = self.zero_field
        if not isinstance(zf, (Biaxial, Cubic, BiaxialPlusTetragonal)):
            zf = tuple(HamiltonianTerm.coerce(t) for t in zf)
            object.__setattr__(self, "zero_field", zf)

    @property
    def is_preset(self) -> bool:
        return not isinstance(self.zero_field, tuple)

    def terms(self) -> tuple:
        if self.is_preset:
            return tuple(self.zero_field.terms())
        return self.zero_field

    def scaled(self, factor: float) -> "HamiltonianModel":
        """Model with ``H0 -> factor * H0`` (always returned as a term list)."""
        return HamiltonianModel(
            self.spin, tuple(HamiltonianTerm(factor * t.coefficient, t.word) for t in self.terms())
        )

    def with_parameter(self, name: str, value: float) -> "HamiltonianModel":
        if not self.is_preset:
            raise ValueError("only preset models expose named parameters")
        return HamiltonianModel(self.spin, replace(self.zero_field, **{name: value}))

    @property
    def is_zero(self) -> bool:
        return all(t.coefficient == 0 for t in self.terms())


def parity_check(model: HamiltonianModel) -> bool:
    """True iff every term of ``H0`` has even degree (time-reversal even)."""
    if model.is_preset:
        return True
    return all(t.degree % 2 == 0 for t in model.zero_field)


def _word_matrix(ops: SpinOperatorSet, word: str) -> np.ndarray:
    out = np.eye(ops.dim, dtype=complex)
    for letter in word:
        out = out @ ops.component(letter)
    return out


def _imbalance_report(terms: Sequence[HamiltonianTerm]) -> str:
    coef = defaultdict(float)
    for t in terms:
        coef[t.word] += t.coefficient
    seen, parts = set(), []
    for word, c in coef.items():
        partner = word[::-1]
        if partner == word or word in seen:
            continue
        seen.update((word, partner))
        diff = c - coef.get(partner, 0.0)
        if abs(diff) > 1e-14 * max(1.0, abs(c)):
            parts.append(f"{word!r}: {c:g} vs reversed {partner!r}: {coef.get(partner, 0.0):g}")
    return "; ".join(parts)


def terms_matrix(spin: SpinQuantum, terms: Sequence[HamiltonianTerm]) -> np.ndarray:
    """Evaluate a term list as ordered products, left to right."""
    ops = make_spin_operators(spin)
    total = np.zeros((ops.dim, ops.dim), dtype=complex)
    for t in terms:
        total += t.coefficient * _word_matrix(ops, t.word)
    return total


@lru_cache(maxsize=256)
def _zero_field_cached(model: HamiltonianModel) -> np.ndarray:
    ops = make_spin_operators(model.spin)
    if model.is_preset:
        mat = model.zero_field.matrix(ops)
    else:
        odd = [t.word for t in model.zero_field if t.degree % 2]
        if odd:
            raise ParityError(f"odd-degree words break time-reversal evenness: {odd}")
        mat = terms_matrix(model.spin, model.zero_field)
    asym = np.max(np.abs(mat - mat.conj().T)) if mat.size else 0.0
    scale = max(1.0, float(np.max(np.abs(mat))))
    if asym > HERMITIAN_TOL * scale:
        hint = _imbalance_report(model.terms())
        msg = f"zero-field Hamiltonian is not Hermitian (max |M - M^dagger| = {asym:.3e})"
        if hint:
            msg += f"; unbalanced reversed-word pairs: {hint}"
        raise HermiticityError(msg)
    # drop the rounding-level anti-Hermitian part
    return _frozen((mat + mat.conj().T) / 2)


def zero_field_matrix(model: HamiltonianModel) -> np.ndarray:
    return _zero_field_cached(model)


def assemble_hamiltonian(model: HamiltonianModel, field) -> np.ndarray:
    """``H0 - hx Jx - hy Jy - hz Jz``."""
    h = as_field_array(field)
    ops = make_spin_operators(model.spin)
    return zero_field_matrix(model) - h[0] * ops.jx - h[1] * ops.jy - h[2] * ops.jz


def assemble_batch(model: HamiltonianModel, fields) -> np.ndarray:
    """Stack of Hamiltonians for an ``(N, 3)`` array of fields."""
    fields = np.asarray(fields, dtype=float).reshape(-1, 3)
    ops = make_spin_operators(model.spin)
    return zero_field_matrix(model)[None] - np.einsum("na,aij->nij", fields, ops.vector)


def coherent_state(spin: SpinQuantum, M, theta: float, phi: float) -> np.ndarray:
    """``exp(-i phi Jz) exp(-i theta Jy) exp(i phi Jz) |J M>``."""
    twice_m = Fraction(M) * 2
    if twice_m.denominator != 1 or abs(twice_m) > spin.twice_j or (spin.twice_j - twice_m) % 2:
        raise ValueError(f"M={M} is not a valid projection for J={spin}")
    ops = make_spin_operators(spin)
    idx = (spin.twice_j - int(twice_m)) // 2
    ket = np.zeros(spin.dim, dtype=complex)
    ket[idx] = 1.0
    m = spin.m_values
    ket *= np.exp(1j * phi * m)
    ket = scipy.linalg.expm(-1j * theta * ops.jy) @ ket
    return np.exp(-1j * phi * m) * ket
