import numpy as np
import pytest

from conftest import HX0
from diabolo import kernels
from diabolo.errors import NearDegeneracyError, SumRuleError
from diabolo.spin import HamiltonianModel, SpinQuantum, assemble_batch
from diabolo.topology import (
    ChargeVector,
    berry_curvature,
    charges_for_cluster,
    chern_on_sphere,
    codimension,
    diabolicity_from_charges,
    expected_grand_total,
    expected_pair_total,
    pair_index_on_sphere,
    sphere_fields,
    sphere_flux,
    verify_global_sum_rule,
    verify_index_sum_rules,
    verify_point_sum_rule,
)

ZEEMAN_HALF = HamiltonianModel(SpinQuantum(1), ())


def test_spin_half_monopole_curvature():
    h = 0.8
    s = berry_curvature(ZEEMAN_HALF, (0, 0, h), 0.5)
    assert np.linalg.norm(s.b) == pytest.approx(1 / (2 * h * h), rel=1e-12)
    assert abs(s.b[0]) < 1e-14 and abs(s.b[1]) < 1e-14
    # outward flux density of the ground level is negative, giving Q = +1
    assert s.b[2] < 0
    other = berry_curvature(ZEEMAN_HALF, (0, 0, h), -0.5)
    np.testing.assert_allclose(other.b, -s.b)


def test_curvature_refuses_at_degeneracy():
    with pytest.raises(NearDegeneracyError) as err:
        berry_curvature(ZEEMAN_HALF, (0, 0, 0), 0.5)
    assert err.value.gap is not None


def test_biaxial_curvature_on_z_axis(biaxial3):
    b = berry_curvature(biaxial3, (0, 0, 0.37), 3).b
    assert abs(b[0]) < 1e-10 * abs(b[2]) and abs(b[1]) < 1e-10 * abs(b[2])


def test_curvature_divergence_free(biaxial3):
    x = np.array([0.3, 0.2, 0.45])
    h = 1e-4
    div = 0.0
    for a in range(3):
        e = np.zeros(3)
        e[a] = h
        div += (berry_curvature(biaxial3, x + e, 2).b[a] - berry_curvature(biaxial3, x - e, 2).b[a]) / (2 * h)
    b = np.linalg.norm(berry_curvature(biaxial3, x, 2).b)
    assert abs(div) < 1e-6 * b / h


def test_curvature_odd_under_inversion(cubic2):
    x = np.array([0.3, -0.7, 0.2])
    for mu in (2, 1, 0, -1, -2):
        np.testing.assert_allclose(berry_curvature(cubic2, -x, mu).b, -berry_curvature(cubic2, x, mu).b, atol=1e-8)


def test_zeeman_calibration():
    assert chern_on_sphere(ZEEMAN_HALF, (0, 0, 0), 1.0, 0.5) == 1
    assert chern_on_sphere(ZEEMAN_HALF, (0, 0, 0), 1.0, -0.5) == -1


def test_zeeman_higher_spin_gives_two_mu():
    m = HamiltonianModel(SpinQuantum(4), ())
    q = charges_for_cluster(m, (0, 0, 0), 1.0)
    assert list(q.q) == [4, 2, 0, -2, -4]


def test_empty_sphere(biaxial3):
    q = charges_for_cluster(biaxial3, (0.0, 0.0, 40.0), 1.0)
    assert not np.any(q.q)


def test_ground_pair_point_nearest_origin(biaxial3):
    c = (0.5 * HX0, 0, 0)
    assert chern_on_sphere(biaxial3, c, 0.1, 3) == 1
    assert chern_on_sphere(biaxial3, c, 0.1, 2) == -1
    assert chern_on_sphere(biaxial3, c, 0.1, 3, grid=(128, 128)) == 1
    assert pair_index_on_sphere(biaxial3, c, 0.1, 3) == 1


def test_coincident_cluster_alternates(biaxial3):
    q = charges_for_cluster(biaxial3, (0.5 * HX0, 0, 0), 0.1)
    # pairs (3,2), (1,0), (-1,-2) meet here, each with index +1
    assert list(q.q) == [1, -1, 1, -1, 1, -1, 0]
    assert verify_point_sum_rule(q).passed


def test_additivity(biaxial3):
    a = charges_for_cluster(biaxial3, (0.5 * HX0, 0, 0), 0.1)
    b = charges_for_cluster(biaxial3, (1.5 * HX0, 0, 0), 0.1)
    both = charges_for_cluster(biaxial3, (HX0, 0, 0), 0.75 * HX0)
    np.testing.assert_array_equal((a + b).q, both.q)


def test_surface_degeneracy_is_refused(biaxial3):
    with pytest.raises(NearDegeneracyError, match="radius"):
        chern_on_sphere(biaxial3, (0, 0, 0), 0.5 * HX0, 3, grid=(2, 4))


def test_gauge_invariance(biaxial3):
    U = np.linalg.eigh(assemble_batch(biaxial3, sphere_fields((0.5 * HX0, 0, 0), 0.1, 32, 32).reshape(-1, 3)))[1]
    U = U.reshape(33, 32, 7, 7)
    rng = np.random.default_rng(0)
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, size=(33, 32, 1, 7)))
    for name in kernels.available_backends():
        mod = kernels.backend_module(name)
        a, b = mod.level_flux(U, True)[0], mod.level_flux(np.ascontiguousarray(U * phases), True)[0]
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_backends_agree(biaxial3):
    U = np.linalg.eigh(assemble_batch(biaxial3, sphere_fields((0.3, 0.1, 0.2), 0.5, 24, 24).reshape(-1, 3)))[1]
    U = np.ascontiguousarray(U.reshape(25, 24, 7, 7))
    ref = kernels.backend_module("python")
    for name in kernels.available_backends():
        mod = kernels.backend_module(name)
        for got, want in zip(mod.level_flux(U, True), ref.level_flux(U, True)):
            np.testing.assert_allclose(got, want, atol=1e-12)
        for got, want in zip(mod.subspace_flux(U, True, [1, 3, 6]), ref.subspace_flux(U, True, [1, 3, 6])):
            np.testing.assert_allclose(got, want, atol=1e-12)
        for got, want in zip(mod.level_flux(U, False), ref.level_flux(U, False)):
            np.testing.assert_allclose(got, want, atol=1e-12)


def test_subspace_flux_matches_partial_sums(cubic2):
    f = sphere_flux(cubic2, (0, 0, 0), 0.9)
    s = sphere_flux(cubic2, (0, 0, 0), 0.9, subspaces=[1, 2, 3, 4])
    np.testing.assert_allclose(np.cumsum(f.raw)[:4], s.raw, atol=1e-9)


def test_sphere_flux_argument_checks(biaxial3):
    with pytest.raises(ValueError):
        sphere_flux(biaxial3, (0, 0, 0), -1.0)
    with pytest.raises(ValueError):
        sphere_flux(biaxial3, (0, 0, 0), 1.0, grid=(1, 2))


def test_diabolicity_from_charges():
    s = SpinQuantum(2)
    assert diabolicity_from_charges(ChargeVector([1, -1, 0], s)).indices == (1,)
    assert diabolicity_from_charges(ChargeVector([2, -2, 0], s)).indices == (2,)
    m = diabolicity_from_charges(ChargeVector([2, -3, 1], s))
    assert m.indices == (2, -1) and m.pairs == [(1, 0), (0, -1)]
    assert diabolicity_from_charges(ChargeVector([0, 0, 0], s)).indices == ()
    with pytest.raises(SumRuleError):
        diabolicity_from_charges(ChargeVector([1, 0, 0], s))


def test_charge_vector_shape():
    with pytest.raises(ValueError):
        ChargeVector([1, -1], SpinQuantum(2))
    q = ChargeVector([1, -1, 0], SpinQuantum(2))
    assert q.at(0) == -1 and q.total == 0 and q.as_dict() == {1.0: 1, 0.0: -1, -1.0: 0}


def test_point_rule_reports():
    s = SpinQuantum(1)
    assert verify_point_sum_rule(ChargeVector([1, -1], s)).passed
    r = verify_point_sum_rule([1, 0])
    assert not r.passed and r.residual == 1


def test_global_rule(biaxial3, cubic2):
    assert [r.lhs for r in verify_global_sum_rule(ZEEMAN_HALF)] == [1, -1]
    rep = {r.label: r for r in verify_global_sum_rule(biaxial3)}
    assert rep["mu=3"].lhs == 6 and rep["mu=3"].passed
    rep = {r.label: r for r in verify_global_sum_rule(cubic2)}
    assert rep["mu=-2"].lhs == -4 and all(r.passed for r in rep.values())


def test_expected_totals():
    s3 = SpinQuantum(6)
    assert expected_pair_total(s3, 3) == 6
    assert expected_grand_total(s3) == 56
    assert expected_grand_total(SpinQuantum(20)) == 1540
    assert expected_grand_total(SpinQuantum(4)) == 20
    assert expected_grand_total(SpinQuantum(5)) == 35
    for tj in range(1, 21):
        s = SpinQuantum(tj)
        assert sum(expected_pair_total(s, s.j - r) for r in range(tj)) == expected_grand_total(s)


def test_index_rules_on_zeeman_point():
    from diabolo.search import SearchConfig, search

    out = search(HamiltonianModel(SpinQuantum(6), ()), SearchConfig())
    reports = verify_index_sum_rules(out.records, SpinQuantum(6))
    assert all(r.passed for r in reports)
    assert reports[-1].rule == "grand" and reports[-1].lhs == 56


def test_codimension():
    assert codimension([2]) == 3
    assert codimension([3]) == 8
    assert codimension([2, 2, 2]) == 9
    with pytest.raises(ValueError):
        codimension([1])


def test_cubic_fourfold_axis_cluster(cubic2):
    # every sphere around a found cluster obeys the per-point rule
    q = charges_for_cluster(cubic2, (0, 0, 0), 0.05)
    assert q.total == 0

