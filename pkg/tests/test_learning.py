import numpy as np
import pytest

from safelearn import learning, oracle
from safelearn.bench import instance
from safelearn.geometry import HPolytope, MatrixEllipsoid, MatrixPolytope
from safelearn.learning import (
    IMPOSSIBLE,
    RECOVERED,
    LearnConfig,
    NotFullDimensional,
    full_dim_hull_points,
    inf_step_learn,
    learning_cost_lower_bound,
    offline_one_step_learn,
    one_step_learn,
    truncate_trajectory,
    two_step_learn,
)
from safelearn.plant import Plant, Trajectory
from safelearn.safesets import UncertaintyState


def _cfg(**kw):
    return LearnConfig(**{"epsilon": 0.01, "seed": 0, **kw})


class TestOneStepLearn:
    def test_interval_instance_recovers(self):
        inst = instance("sec3.5")
        rep = one_step_learn(inst.S, inst.base, inst.c, _cfg(), inst.plant)
        assert rep.recovered and len(rep.points) == 4
        assert np.linalg.norm(rep.A_hat - inst.plant.A_star) <= 1e-6
        lb = learning_cost_lower_bound(inst.S, inst.plant.A_star, inst.c)
        assert lb - 1e-9 <= rep.total_cost <= -1.0 + 1e-9

    def test_every_query_oracle_safe(self):
        inst = instance("sec3.5")
        rep = one_step_learn(inst.S, inst.base, inst.c, _cfg(), inst.plant)
        U = UncertaintyState(inst.base)
        for x, traj in zip(rep.points, rep.trajectories):
            for h, b in zip(inst.S.normals, inst.S.offsets):
                assert oracle.robust_linear_max(U, h, x) <= b + 1e-6
            U = U.with_equality(x, traj.points[1])

    def test_bounds_instance_needs_online_information(self):
        inst = instance("sec3.6")
        rep = one_step_learn(inst.S, inst.base, inst.c, _cfg(), inst.plant)
        assert rep.recovered and len(rep.points) == 2
        assert np.linalg.norm(rep.A_hat - inst.plant.A_star) <= 1e-6
        # after the first observation the uncertainty is the hull of the two
        # listed matrices (not yet a singleton)
        U1 = UncertaintyState(inst.base).with_equality(
            rep.points[0], rep.trajectories[0].points[1])
        for H in inst.extras["hull_after_one"]:
            assert U1.membership(H, 1e-6)
        assert learning._matrix_singleton(U1, 1e-6) is None

    def test_large_entry_bounds_still_learnable(self):
        # |A_ij| <= 100 shrinks the one-step safe set to a tiny cross-polytope
        # (1-norm ball of radius 0.01) which still spans the space, so safe
        # learning succeeds
        base = MatrixPolytope.entrywise_bound(2, 100.0)
        plant = Plant(np.array([[0.5, 0.0], [0.0, 0.5]]))
        rep = one_step_learn(HPolytope.box(2), base, np.array([-1.0, 0.0]),
                             _cfg(), plant)
        assert rep.recovered
        assert np.linalg.norm(rep.A_hat - plant.A_star) <= 1e-6

    def test_impossible_when_safe_set_is_origin(self):
        # bounding only A11 leaves the other entries free: every x != 0 can be
        # driven out of S by some admissible matrix, so the one-step safe set
        # is exactly {0}, its span is a proper subspace, and learning is
        # impossible for any algorithm
        E11 = np.zeros((2, 2))
        E11[0, 0] = 1.0
        base = MatrixPolytope([(E11, 1.0), (-E11, 1.0)])
        plant = Plant(np.array([[0.5, 0.0], [0.0, 0.5]]))
        from safelearn import conic as _conic
        from safelearn.safesets import one_step_program

        prog = one_step_program(HPolytope.box(2), UncertaintyState(base),
                                np.array([-1.0, -1.0]))
        sol = _conic.solve(prog)
        assert sol.status == _conic.OPTIMAL
        assert np.allclose(sol.values[prog.meta["x"]], 0.0, atol=1e-8)
        rep = one_step_learn(HPolytope.box(2), base, np.array([-1.0, 0.0]),
                             _cfg(), plant)
        assert rep.outcome == IMPOSSIBLE

    def test_singleton_base_returns_immediately(self):
        A = np.array([[0.4, 0.1], [0.0, 0.2]])
        base = MatrixPolytope.interval(A, A)
        rep = one_step_learn(HPolytope.box(2), base, np.array([-1.0, 0.0]),
                             _cfg(), Plant(A))
        assert rep.recovered and len(rep.points) == 0
        assert np.allclose(rep.A_hat, A, atol=1e-7)

    def test_uncertainty_summaries_shrink(self):
        inst = instance("sec3.5")
        rep = one_step_learn(inst.S, inst.base, inst.c, _cfg(), inst.plant)
        widths = [s["trace"][1] - s["trace"][0] for s in rep.summaries]
        assert all(w2 <= w1 + 1e-9 for w1, w2 in zip(widths, widths[1:]))
        final = rep.summaries[-1]
        A = inst.plant.A_star
        assert final["trace"][0] == pytest.approx(np.trace(A), abs=1e-5)
        assert final["entry_sum"][0] == pytest.approx(np.sum(A), abs=1e-5)


class TestOfflineLearn:
    def test_cost_approaches_offline_limit(self):
        inst = instance("sec3.5")
        costs = {}
        for eps in (0.1, 0.01, 0.001):
            rep = offline_one_step_learn(inst.S, inst.base, inst.c,
                                         _cfg(epsilon=eps), inst.plant)
            assert rep.recovered
            costs[eps] = rep.total_cost
        assert abs(costs[0.001] + 1.0) <= 0.01
        assert abs(costs[0.001] + 1.0) <= abs(costs[0.1] + 1.0)

    def test_fails_on_deficient_initial_set(self):
        inst = instance("sec3.6")
        rep = offline_one_step_learn(inst.S, inst.base, inst.c, _cfg(),
                                     inst.plant)
        assert rep.outcome == IMPOSSIBLE

    def test_singleton_base_trivially_recovers(self):
        A = np.array([[0.3, 0.0], [0.1, 0.2]])
        base = MatrixPolytope.interval(A, A)
        rep = offline_one_step_learn(HPolytope.box(2), base,
                                     np.array([1.0, 0.0]), _cfg(), Plant(A))
        assert rep.recovered and len(rep.points) == 0


class TestLowerBound:
    def test_interval_instance(self):
        inst = instance("sec3.5")
        lb = learning_cost_lower_bound(inst.S, inst.plant.A_star, inst.c)
        assert lb == pytest.approx(-2.2264, abs=1e-3)

    def test_zero_cost(self):
        inst = instance("sec3.5")
        assert learning_cost_lower_bound(inst.S, inst.plant.A_star,
                                         np.zeros(4)) == 0.0

    def test_two_step_variant(self):
        inst = instance("sec4.3")
        lb = learning_cost_lower_bound(inst.S, inst.plant.A_star, inst.c,
                                       steps=2)
        assert lb == pytest.approx(-0.2097, abs=1e-3)

    def test_empty_true_safe_set_is_plus_inf(self):
        S = HPolytope.from_bounds([1.0, 1.0], [2.0, 2.0])
        A = np.zeros((2, 2))  # maps everything to the origin, outside S
        assert learning_cost_lower_bound(S, A, np.array([1.0, 0.0])) == np.inf


class TestHullPoints:
    def test_reachable_box_instance(self):
        base = MatrixEllipsoid.frobenius_ball(0.1 * np.eye(2), 0.02)
        S = HPolytope.box(2)
        pts = full_dim_hull_points(S, UncertaintyState(base), _cfg())
        assert len(pts) == 4
        T = np.column_stack([pts[0] - pts[1], pts[2] - pts[3]])
        assert abs(np.linalg.det(T)) > 1e-3
        # lower-triangular gap structure: coordinate k is pinned after step k
        assert abs(T[0, 1]) <= 1e-6

    def test_ball_instance_full_dimensional(self):
        inst = instance("sec4.3")
        pts = full_dim_hull_points(inst.S, UncertaintyState(inst.base), _cfg())
        assert len(pts) == 8
        T = np.column_stack([pts[2 * i] - pts[2 * i + 1] for i in range(4)])
        assert abs(np.linalg.det(T)) > 1e-9

    def test_degenerate_instance_detected(self):
        # pin the second state coordinate to a single value through S
        S = HPolytope(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]),
                      np.array([1.0, 1.0, 0.0, 0.0]))
        base = MatrixEllipsoid.frobenius_ball(0.1 * np.eye(2), 0.02)
        with pytest.raises(NotFullDimensional):
            full_dim_hull_points(S, UncertaintyState(base), _cfg())


class TestTwoStepLearn:
    def test_ball_instance(self):
        inst = instance("sec4.3")
        rep = two_step_learn(inst.S, inst.base, inst.c, _cfg(), inst.plant)
        assert rep.recovered and len(rep.trajectories) == 2
        assert np.linalg.norm(rep.A_hat - inst.plant.A_star) <= 1e-5
        assert abs(rep.total_cost + 0.1493) <= 0.03
        lb = learning_cost_lower_bound(inst.S, inst.plant.A_star, inst.c, steps=2)
        assert lb - 1e-9 <= rep.total_cost <= -0.1099 + 1e-9

    def test_single_trajectory_instance(self):
        inst = instance("sec5.5.2")
        rep = two_step_learn(inst.S, inst.base, inst.c, _cfg(), inst.plant,
                             inst.c0)
        assert rep.recovered and len(rep.trajectories) == 1
        assert abs(rep.total_cost - 1.9252) <= 0.05
        assert np.linalg.norm(rep.A_hat - inst.plant.A_star) <= 1e-5

    def test_queries_oracle_safe(self):
        from safelearn.safesets import eliminate_equalities

        inst = instance("sec5.5.2")
        rep = two_step_learn(inst.S, inst.base, inst.c, _cfg(), inst.plant,
                             inst.c0)
        U = UncertaintyState(inst.base)
        for x, traj in zip(rep.points, rep.trajectories):
            param = eliminate_equalities(U)
            for h, b in zip(inst.S.normals, inst.S.offsets):
                for t in (1, 2):
                    assert oracle.robust_quadratic_max(param, h, x, steps=t) \
                        <= b + 1e-6
            U = U.with_trajectory_pairs(traj.points)

    def test_near_singleton_base_recovers_without_queries(self):
        A = np.array([[0.4, 0.1], [-0.1, 0.3]])
        base = MatrixEllipsoid.frobenius_ball(A, 1e-11)
        rep = two_step_learn(HPolytope.box(2), base, np.array([-1.0, 0.0]),
                             _cfg(), Plant(A))
        assert rep.recovered and len(rep.trajectories) == 0
        assert np.allclose(rep.A_hat, A, atol=1e-6)

    def test_determinism(self):
        inst = instance("sec4.3")
        r1 = two_step_learn(inst.S, inst.base, inst.c, _cfg(seed=5), inst.plant)
        r2 = two_step_learn(inst.S, inst.base, inst.c, _cfg(seed=5), inst.plant)
        assert r1.dumps() == r2.dumps()


class TestInfStepLearn:
    def test_ball_instance_single_trajectory(self):
        inst = instance("sec5.5.2")
        rep = inf_step_learn(inst.S, inst.base, inst.c, _cfg(), inst.plant,
                             d=2, c0=inst.c0)
        assert rep.recovered and len(rep.trajectories) == 1
        assert len(rep.trajectories[0]) == 3  # length n = 2 plus the start
        assert abs(rep.total_cost - 2.0080) <= 0.05
        assert np.linalg.norm(rep.A_hat - inst.plant.A_star) <= 1e-5

    def test_scalar_matrix_hits_singular_krylov(self):
        # A = 0.5 I: the Krylov matrix [x, Ax] is singular for every x
        base = MatrixEllipsoid.frobenius_ball(0.5 * np.eye(2), 0.05)
        plant = Plant(0.5 * np.eye(2))
        S = HPolytope.box(2)
        rep = inf_step_learn(S, base, np.array([-1.0, 0.0]), _cfg(), plant, d=2)
        assert rep.outcome == learning.BUDGET_EXHAUSTED
        assert "Krylov" in rep.notes

    def test_infeasible_level_raises(self):
        inst = instance("sec5.5.1")
        plant = Plant(np.array([[0.5, 0.45], [0.45, 0.5]]))
        with pytest.raises(ValueError):
            inf_step_learn(inst.S, inst.base, inst.c, _cfg(), plant, d=2)


class TestTrajectoryTools:
    def test_truncate_basic(self):
        traj = Trajectory(np.arange(22).reshape(11, 2).astype(float))
        out = truncate_trajectory(traj, 4)
        assert len(out) == 5
        assert np.allclose(out.points, traj.points[:5])

    def test_truncate_short_unchanged(self):
        traj = Trajectory(np.zeros((2, 4)))
        assert truncate_trajectory(traj, 4) is traj

    def test_krylov_truncation_rank_property(self, rng):
        # the length-6 and length-3 equality systems on a 3-state system have
        # the same solution-space dimension
        for _ in range(5):
            A = rng.normal(size=(3, 3)) * 0.5
            x = rng.normal(size=3)
            orbit = [x]
            for _ in range(6):
                orbit.append(A @ orbit[-1])
            def stacked(k):
                return np.vstack([np.kron(orbit[t].reshape(1, -1), np.eye(3))
                                  for t in range(k)])
            assert np.linalg.matrix_rank(stacked(3), tol=1e-8) == \
                np.linalg.matrix_rank(stacked(6), tol=1e-8)


def test_report_json_roundtrip():
    inst = instance("sec3.6")
    rep = one_step_learn(inst.S, inst.base, inst.c, _cfg(), inst.plant)
    doc = rep.to_json()
    assert doc["outcome"] == RECOVERED
    assert len(doc["points"]) == len(doc["costs"]) == 2
    assert doc["total_cost"] == pytest.approx(rep.total_cost)
