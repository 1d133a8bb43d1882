import numpy as np
import pytest
from scipy import stats

from safelearn import oracle, safesets
from safelearn.bench import A_STAR_4, instance
from safelearn.geometry import HPolytope, MatrixEllipsoid, MatrixPolytope
from safelearn.safesets import UncertaintyState


class TestRobustLinearMax:
    def test_interval_closed_form(self, rng):
        # |A_ij| <= 4: max h^T A x = 4 ||x||_1 for h a basis vector
        U = UncertaintyState(MatrixPolytope.entrywise_bound(4, 4.0))
        for _ in range(5):
            x = rng.normal(size=4)
            val = oracle.robust_linear_max(U, np.eye(4)[1], x)
            assert val == pytest.approx(4.0 * np.sum(np.abs(x)), abs=1e-7)

    def test_singleton_base(self, rng):
        A = rng.normal(size=(3, 3))
        U = UncertaintyState(MatrixPolytope.interval(A, A))
        h = rng.normal(size=3)
        x = rng.normal(size=3)
        assert oracle.robust_linear_max(U, h, x) == pytest.approx(
            float(h @ A @ x), abs=1e-7)

    def test_equality_data_pins_value(self, rng):
        U = UncertaintyState(MatrixPolytope.entrywise_bound(2, 5.0))
        x1 = np.array([0.3, -0.4])
        y1 = np.array([0.5, 0.2])
        U = U.with_equality(x1, y1)
        h = rng.normal(size=2)
        assert oracle.robust_linear_max(U, h, x1) == pytest.approx(
            float(h @ y1), abs=1e-7)

    def test_unbounded_reports_inf(self):
        E = np.zeros((2, 2))
        E[0, 0] = 1.0
        U = UncertaintyState(MatrixPolytope([(E, 1.0)]))  # only A11 <= 1
        assert oracle.robust_linear_max(U, np.eye(2)[1], np.eye(2)[1]) == np.inf


class TestTrustRegion:
    def test_linear_over_ball(self, rng):
        # zero Hessian: max = center value + gradient norm
        for _ in range(10):
            d = rng.normal(size=4)
            e = rng.normal()
            _, val = oracle.trs_maximize(np.zeros((4, 4)), d, e,
                                         np.eye(4), np.zeros(4), -1.0)
            assert val == pytest.approx(e + np.linalg.norm(d), abs=1e-9)

    def test_coordinate_square(self):
        a, val = oracle.trs_maximize(np.diag([1.0, 0.0]), np.zeros(2), 0.0,
                                     np.eye(2), np.zeros(2), -1.0)
        assert val == pytest.approx(1.0, abs=1e-9)
        assert abs(a[0]) == pytest.approx(1.0, abs=1e-6)

    def test_hard_case(self):
        # -||u||^2 maximized... minimize form with gradient orthogonal to the
        # bottom eigenspace: classic hard case, solution on the boundary ridge
        C = np.diag([2.0, 1.0])
        d = np.array([0.0, 0.1])
        _, val = oracle.trs_maximize(C, d, 0.0, np.eye(2), np.zeros(2), -1.0)
        # maximum of 2 u1^2 + u2^2 + 0.1 u2 over the unit disc
        grid = max(2 * np.cos(t) ** 2 + np.sin(t) ** 2 + 0.1 * np.sin(t)
                   for t in np.linspace(0, 2 * np.pi, 100_000))
        assert val == pytest.approx(grid, abs=1e-6)

    def test_against_sampling_and_kkt_certificate(self, rng):
        # oracle-of-the-oracle on random 5-dim instances: the value dominates
        # dense sampling, and the returned argmax carries the global-optimality
        # certificate of the trust-region subproblem (for the minimization
        # form -f: (B + mu I) u = -g with B + mu I >= 0, mu >= 0,
        # complementary with the ball constraint)
        for trial in range(5):
            C = rng.normal(size=(5, 5))
            C = (C + C.T) / 2
            d = rng.normal(size=5)
            e = rng.normal()
            a, val = oracle.trs_maximize(C, d, e, np.eye(5), np.zeros(5), -1.0)
            best = -np.inf
            for _ in range(100_000):
                u = rng.normal(size=5)
                u = u / np.linalg.norm(u) * rng.uniform() ** 0.25
                best = max(best, float(u @ C @ u + d @ u + e))
            assert val >= best - 1e-9
            assert val == pytest.approx(float(a @ C @ a + d @ a + e), abs=1e-8)
            assert np.linalg.norm(a) <= 1.0 + 1e-9
            B, g = -2.0 * C, -d
            resid = B @ a + g
            denom = float(a @ a)
            mu = max(0.0, float(-(a @ resid) / denom)) if denom > 1e-12 else 0.0
            assert np.linalg.norm(B @ a + mu * a + g) <= 1e-6
            assert np.linalg.eigvalsh(B + mu * np.eye(5)).min() >= -1e-7
            assert mu * (1.0 - np.linalg.norm(a)) <= 1e-6

    def test_general_ellipsoid(self, rng):
        # whitening: value invariant under the change of variables
        P = np.diag([4.0, 1.0])
        r = np.array([0.0, 0.0])
        s = -1.0  # ellipse 4 a1^2 + a2^2 <= 1
        C = np.diag([1.0, 0.0])
        _, val = oracle.trs_maximize(C, np.zeros(2), 0.0, P, r, s)
        assert val == pytest.approx(0.25, abs=1e-9)  # a1 in [-1/2, 1/2]


class TestSampling:
    def test_interval_acceptance(self):
        U = UncertaintyState(MatrixPolytope.entrywise_bound(4, 4.0))
        mats = oracle.sample_uncertainty(U, 100, seed=1)
        assert len(mats) == 100
        assert all(U.membership(M, 1e-9) for M in mats)

    def test_pinned_singleton_repeats(self, rng):
        A = rng.normal(size=(2, 2))
        U = UncertaintyState(MatrixPolytope.entrywise_bound(2, 5.0))
        for j in range(2):
            U = U.with_equality(np.eye(2)[j], A[:, j])
        mats = oracle.sample_uncertainty(U, 7, seed=0)
        assert len(mats) == 7
        for M in mats:
            assert np.allclose(M, A, atol=1e-7)

    def test_segment_uniformity(self):
        inst = instance("sec5.5.1")
        U = UncertaintyState(inst.base)
        mats = oracle.sample_uncertainty(U, 500, seed=2)
        offs = np.array([M[0, 1] for M in mats])
        assert offs.min() >= -1e-9 and offs.max() <= 0.9 + 1e-9
        assert offs.min() <= 0.05 and offs.max() >= 0.85
        ks = stats.kstest(offs, "uniform", args=(0.0, 0.9))
        assert ks.pvalue > 0.01
        # every sample satisfies all constraints
        for M in mats:
            assert U.membership(M, 1e-9)

    def test_ellipsoid_ball_sampling(self, rng):
        ball = MatrixEllipsoid.frobenius_ball(rng.normal(size=(2, 2)) * 0.2, 0.3)
        U = UncertaintyState(ball)
        mats = oracle.sample_uncertainty(U, 200, seed=3)
        assert all(U.membership(M, 1e-9) for M in mats)

    def test_residual_data_respected(self, rng):
        U = UncertaintyState(MatrixPolytope.entrywise_bound(2, 2.0))
        x = np.array([0.5, 0.5])
        y = np.array([0.1, -0.2])
        U = U.with_residual(x, y, 0.3, np.inf)
        mats = oracle.sample_uncertainty(U, 100, seed=4)
        for M in mats:
            assert np.max(np.abs(M @ x - y)) <= 0.3 + 1e-9


class TestRollouts:
    def test_origin_is_fixed(self):
        S = HPolytope.box(2)
        mats = [np.array([[0.5, 0.1], [0.0, 0.4]])]
        assert oracle.check_T_step_safe(np.zeros(2), mats, S, T=1000)

    def test_expanding_matrix_escapes(self):
        S = HPolytope.box(2)
        assert not oracle.check_T_step_safe(np.array([0.01, 0.0]),
                                            [2.0 * np.eye(2)], S, T=1000)

    def test_rollout_mask_matches_scalar_check(self, rng):
        S = HPolytope.box(2)
        A = np.array([[0.9, 0.3], [-0.2, 0.8]])
        pts = rng.uniform(-1, 1, size=(50, 2))
        mask = oracle.rollout_safe_mask(pts, A, S, 50)
        for p, ok in zip(pts, mask):
            assert ok == oracle.check_T_step_safe(p, [A], S, T=50)

    def test_perturbed_rollout_uses_envelope(self):
        S = HPolytope.box(2)
        A = 0.9 * np.eye(2)
        x = np.array([0.95, 0.0])
        assert oracle.check_T_step_safe(x, [A], S, T=50)
        # strong per-step perturbations eventually push the state out
        assert not oracle.check_T_step_safe(x, [A], S, T=50,
                                            envelope=(0.5, 7), streams=20)

    def test_overflow_cap_counts_as_unsafe(self):
        S = HPolytope(np.array([[1.0, 0.0]]), np.array([np.inf]))
        # unbounded safety region: only the cap can fail the rollout
        assert not oracle.rollout_safe_mask(np.array([[1.0, 1.0]]),
                                            3.0 * np.eye(2), S, 200)[0]


class TestOuterSet:
    def test_singleton_matches_direct_simulation(self):
        S = HPolytope.box(2)
        A = np.array([[0.8, 0.6], [0.0, 0.7]])
        U = UncertaintyState(MatrixPolytope.interval(A, A))
        xs, ys, undecided = oracle.outer_inf_set(S, U, sample_count=5, T=10,
                                                 resolution=21)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        direct = oracle.rollout_safe_mask(pts, A, S, 10)
        assert np.array_equal(undecided.ravel(), direct)

    def test_requires_plane_dimension(self):
        U = UncertaintyState(MatrixPolytope.entrywise_bound(3, 1.0))
        with pytest.raises(ValueError):
            oracle.outer_inf_set(HPolytope.box(3), U)
