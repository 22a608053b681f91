import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diabolo.errors import HermiticityError
from diabolo.spectral import eigensystem, gap_profile, label_of_rank, rank_of_label, relative_gaps
from diabolo.spin import HamiltonianModel, SpinQuantum, assemble_hamiltonian


def _random_hermitian(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (a + a.conj().T) / 2


def test_sorting():
    s = eigensystem(np.diag([3.0, 1.0, 2.0]))
    np.testing.assert_allclose(s.energies, [1, 2, 3])
    assert list(s.labels) == [1, 0, -1]


def test_pauli_x():
    np.testing.assert_allclose(eigensystem(np.array([[0, 1], [1, 0]])).energies, [-1, 1])


def test_reconstruction_and_unitarity():
    H = _random_hermitian(7, 1)
    s = eigensystem(H)
    assert np.max(np.abs(H @ s.states - s.states * s.energies)) < 1e-10 * np.max(np.abs(H))
    assert np.max(np.abs(s.states.conj().T @ s.states - np.eye(7))) < 1e-10


def test_rejects_non_hermitian():
    with pytest.raises(HermiticityError, match="max"):
        eigensystem(np.array([[0, 1], [0, 0]]))
    with pytest.raises(ValueError):
        eigensystem(np.zeros((2, 3)))


def test_deterministic():
    H = _random_hermitian(9, 2)
    a, b = eigensystem(H), eigensystem(H.copy())
    assert np.array_equal(a.energies, b.energies) and np.array_equal(a.states, b.states)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 12), seed=st.integers(0, 10_000))
def test_trace_and_permutation(n, seed):
    H = _random_hermitian(n, seed)
    s = eigensystem(H)
    scale = np.max(np.abs(H))
    assert abs(s.energies.sum() - np.trace(H).real) < 1e-10 * scale
    P = np.eye(n)[np.random.default_rng(seed).permutation(n)]
    np.testing.assert_allclose(eigensystem(P @ H @ P.T).energies, s.energies, atol=1e-12 * max(1, scale) * n)


def test_labels():
    s3 = SpinQuantum(6)
    assert label_of_rank(s3, 0) == 3 and label_of_rank(s3, 6) == -3
    assert label_of_rank(SpinQuantum(5), 2) == 0.5
    with pytest.raises(ValueError):
        label_of_rank(s3, 7)
    assert rank_of_label(7, -3) == 6
    with pytest.raises(ValueError):
        rank_of_label(7, 0.5)


def test_state_lookup_by_label():
    s = eigensystem(np.diag([2.0, 0.0, 1.0]))
    np.testing.assert_allclose(np.abs(s.state(1)), [0, 1, 0])


def test_gap_profile():
    g = gap_profile(eigensystem(np.diag([0.0, 1.0, 3.0])))
    np.testing.assert_allclose(g.gaps, [1, 2])
    assert g.spectral_width == 3 and g.smallest == 0
    assert gap_profile(eigensystem(np.diag([0.0, 0.0, 1.0]))).gaps[0] == 0


def test_zeeman_ladder_gaps():
    m = HamiltonianModel(SpinQuantum(2), ())
    g = gap_profile(eigensystem(assemble_hamiltonian(m, (0, 0, 2.0))))
    np.testing.assert_allclose(g.gaps, [2, 2])
    assert g.gaps.sum() == pytest.approx(g.spectral_width)


def test_relative_gaps():
    np.testing.assert_allclose(relative_gaps(np.array([0.0, 1.0, 4.0])), [0.25, 0.75])
