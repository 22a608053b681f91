import numpy as np
import pytest

from conftest import HX0, HZ0
from diabolo.precise import precise_model, precise_polish, window
from diabolo.spin import Biaxial, HamiltonianModel, SpinQuantum
from diabolo.topology import pair_index_on_sphere

BIG = HamiltonianModel(SpinQuantum(20), Biaxial(1.0, 0.05))
BIG_HX0 = 2 * np.sqrt(2 * 0.05 * 1.05)
BIG_HZ0 = np.sqrt(1 - 0.05**2)


@pytest.mark.parametrize(
    "x0,r,node",
    [
        ([0.3, 0, 0], 0, (0.5, 0)),
        ([0.9, 0, 0], 0, (1.5, 0)),
        ([0.5, 0.01, 1.0], 1, (1.0, 1)),
    ],
)
def test_large_spin_points_land_on_grid(x0, r, node):
    res = precise_polish(BIG, x0, r, trust=0.3, xtol=8e-12)
    assert res.converged
    assert res.charge == 1
    np.testing.assert_allclose(res.position[[0, 2]], [node[0] * BIG_HX0, node[1] * BIG_HZ0], atol=1e-9)
    assert abs(res.position[1]) < 1e-9
    assert res.gap <= 1e-9 * res.width


def test_jacobian_charge_matches_sphere_flux(biaxial3):
    for x0, r in (([0.45, 0, 0], 0), ([0.45, 0, 0], 2), ([0.9, 0.01, HZ0], 1), ([0.5, 0, 2 * HZ0], 3)):
        res = precise_polish(biaxial3, x0, r, trust=0.3, xtol=1e-12)
        assert res.converged
        assert res.charge == pair_index_on_sphere(biaxial3, res.position, 0.05, 3 - r)


def test_zeeman_ground_level_charge():
    m = HamiltonianModel(SpinQuantum(1), ())
    pm = precise_model(m)
    ref = pm.refine(np.zeros(3), 0, 1)
    assert pm.local_charge(ref) == 1
    assert pm.closes(ref, 0, 1e-9)


def test_open_gap_does_not_close(biaxial3):
    pm = precise_model(biaxial3)
    ref = pm.refine(np.array([0.5 * HX0, 0, 0.3]), 0, 1)
    assert not pm.closes(ref, 0, 1e-9)


def test_charge_refused_for_multiplets():
    pm = precise_model(HamiltonianModel(SpinQuantum(2), ()))
    ref = pm.refine(np.zeros(3), 0, 2)
    with pytest.raises(ValueError):
        pm.local_charge(ref)


def test_window_grows_over_close_levels():
    E = np.array([0.0, 1e-14, 2e-14, 1.0, 1.01, 3.0])
    assert window(E, 0) == (0, 2)
    assert window(E, 3) == (3, 4)
