import numpy as np
import pytest

from safelearn.bench import A_STAR_4, instance
from safelearn.geometry import HPolytope
from safelearn.plant import Plant, Trajectory, catalog_residual, observe, poly_residual


def test_zero_matrix_rollout():
    plant = Plant(np.zeros((3, 3)))
    traj = observe(plant, [1.0, -2.0, 0.5], 3)
    assert len(traj) == 4
    assert traj.points[0] == pytest.approx([1.0, -2.0, 0.5])
    assert np.allclose(traj.points[1:], 0.0)


def test_column_readoff():
    plant = Plant(A_STAR_4)
    traj = observe(plant, np.eye(4)[0], 1)
    assert traj.points[1] == pytest.approx([2.0, 2.0, -2.0, 2.0])


def test_catalog_residual_vanishes_at_origin():
    inst = instance("sec6.3")
    traj = observe(inst.plant, np.zeros(4), 3)
    assert np.allclose(traj.points, 0.0)


def test_linearity_of_linear_plant(rng):
    plant = Plant(rng.normal(size=(3, 3)) * 0.4)
    x = rng.normal(size=3)
    t1 = observe(plant, x, 4).points
    t2 = observe(plant, 2.5 * x, 4).points
    assert np.allclose(2.5 * t1, t2, atol=1e-12)


def test_envelope_audit_passes_for_catalog():
    inst = instance("sec6.3")
    assert inst.plant.audit_envelope(inst.S, inst.extras["gamma"], np.inf, 0,
                                     samples=10_000, seed=0)


def test_envelope_audit_warns_on_violation():
    plant = Plant(np.zeros((2, 2)), g_star=lambda x: np.array([1.0, 0.0]))
    with pytest.warns(UserWarning):
        ok = plant.audit_envelope(HPolytope.box(2), 0.5, np.inf, 0,
                                  samples=100, seed=0)
    assert not ok


def test_divergence_aborts():
    plant = Plant(np.array([[1e200, 0.0], [0.0, 1e200]]))
    with pytest.raises(FloatingPointError):
        observe(plant, [1.0, 1.0], 3)


def test_trajectory_pairs():
    traj = Trajectory(np.array([[0.0, 1.0], [1.0, 2.0], [2.0, 3.0]]))
    pairs = traj.pairs()
    assert len(pairs) == 2
    assert pairs[0][0] == pytest.approx([0.0, 1.0])
    assert pairs[1][1] == pytest.approx([2.0, 3.0])


def test_poly_residual_with_sin2_terms():
    g = poly_residual(
        tables=[[{"coef": 2.0, "exponents": [2, 0]}], []],
        sin2_tables=[[], [{"coef": 0.5, "sin2_index": 0, "exponents": [0, 1]}]],
    )
    x = np.array([0.3, -0.7])
    expected = np.array([2.0 * 0.09, 0.5 * np.sin(0.3) ** 2 * (-0.7)])
    assert g(x) == pytest.approx(expected)


def test_catalog_matches_definition(rng):
    gamma = 0.1
    g = catalog_residual("quad4", gamma)
    for _ in range(20):
        x = rng.uniform(-1, 1, size=4)
        expected = 0.5 * gamma * np.array([
            x[1] ** 2 - x[2] * x[3],
            np.sqrt(x[0] ** 4 + x[2] ** 4),
            x[2] * np.sin(x[0]) ** 2,
            np.sin(x[1]) ** 2,
        ])
        assert g(x) == pytest.approx(expected)
