import numpy as np
import pytest

from safelearn import geometry
from safelearn.geometry import (
    GeometryError,
    HPolytope,
    InfeasibleRegion,
    MatrixEllipsoid,
    MatrixPolytope,
    ProjectedPolyhedron,
    is_singleton,
    span_basis,
)

A_STAR_4 = np.array([
    [2.0, 1.0, 4.0, 2.0],
    [2.0, -3.0, -1.0, -2.0],
    [-2.0, -3.0, 1.0, 0.0],
    [2.0, 0.0, -2.0, 2.0],
])

TRIANGLE = HPolytope(np.array([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]),
                     np.ones(3))


class TestHPolytope:
    def test_contains_origin_in_box(self):
        assert HPolytope.box(2).contains([0.0, 0.0], 1e-9)

    def test_contains_just_outside(self):
        assert not HPolytope.box(2).contains([1.0000001, 0.0], 1e-9)

    def test_triangle_excludes_corner(self):
        # (1, 1) violates x1 + x2 <= 1
        assert not TRIANGLE.contains([1.0, 1.0])

    def test_zero_normal_rejected(self):
        with pytest.raises(GeometryError):
            HPolytope([[0.0, 0.0], [1.0, 0.0]], [1.0, 1.0])

    def test_dimension_mismatch(self):
        with pytest.raises(GeometryError):
            HPolytope.box(2).contains([1.0, 0.0, 0.0])

    def test_origin_interior_normalization_preserves_set(self, rng):
        normals = rng.normal(size=(6, 3))
        offsets = rng.uniform(0.5, 2.0, size=6)
        raw = HPolytope(normals, offsets)
        scaled = HPolytope(normals, offsets, origin_interior=True)
        assert np.allclose(scaled.offsets, 1.0)
        for _ in range(200):
            x = rng.uniform(-2, 2, size=3)
            assert raw.contains(x) == scaled.contains(x)

    def test_origin_interior_requires_positive_offsets(self):
        with pytest.raises(GeometryError):
            HPolytope([[1.0, 0.0]], [-1.0], origin_interior=True)


class TestIsSingleton:
    def test_pinned_point(self):
        P = ProjectedPolyhedron(np.vstack([np.eye(2), -np.eye(2)]),
                                np.zeros((4, 0)), np.array([1.0, 1.0, -1.0, -1.0]))
        assert is_singleton(P) == pytest.approx([1.0, 1.0])

    def test_unit_box_is_not(self):
        P = ProjectedPolyhedron(np.vstack([np.eye(2), -np.eye(2)]),
                                np.zeros((4, 0)), np.ones(4))
        assert is_singleton(P) is None

    def test_empty_raises(self):
        P = ProjectedPolyhedron(np.array([[1.0], [-1.0]]), np.zeros((2, 0)),
                                np.array([-1.0, -1.0]))
        with pytest.raises(InfeasibleRegion):
            is_singleton(P)

    def test_unbounded_reports_none(self):
        P = ProjectedPolyhedron(np.array([[-1.0, 0.0]]), np.zeros((1, 0)),
                                np.array([0.0]))
        assert is_singleton(P) is None

    def test_one_step_safe_set_of_interval_instance(self):
        # S = [1,3]^2 with the entrywise interval uncertainty: the one-step
        # safe set collapses to the point (1, 1)
        from safelearn.safesets import UncertaintyState, one_step_region

        U = UncertaintyState(MatrixPolytope.interval([[1, 0], [0, 1]],
                                                     [[2, 1], [1, 2]]))
        S = HPolytope.from_bounds([1.0, 1.0], [3.0, 3.0])
        region = one_step_region(S, U)
        assert is_singleton(region) == pytest.approx([1.0, 1.0], abs=1e-7)


class TestSpanBasis:
    def test_unit_box_r3(self):
        P = ProjectedPolyhedron(np.vstack([np.eye(3), -np.eye(3)]),
                                np.zeros((6, 0)), np.ones(6))
        basis = span_basis(P)
        assert len(basis) == 3
        assert np.linalg.matrix_rank(np.array(basis), tol=1e-9) == 3
        for v in basis:
            assert np.max(np.abs(v)) <= 1.0 + 1e-7

    def test_diagonal_segment(self):
        A = np.array([[1.0, -1.0], [-1.0, 1.0], [1.0, 0.0], [-1.0, 0.0]])
        P = ProjectedPolyhedron(A, np.zeros((4, 0)), np.array([0.0, 0.0, 1.0, 0.0]))
        basis = span_basis(P)
        assert len(basis) == 1
        v = basis[0]
        assert abs(v[0] - v[1]) <= 1e-7
        assert v[0] > 1e-9

    def test_single_point_away_from_origin(self):
        from safelearn.safesets import UncertaintyState, one_step_region

        U = UncertaintyState(MatrixPolytope.interval([[1, 0], [0, 1]],
                                                     [[2, 1], [1, 2]]))
        S = HPolytope.from_bounds([1.0, 1.0], [3.0, 3.0])
        basis = span_basis(one_step_region(S, U))
        assert len(basis) == 1
        assert basis[0] == pytest.approx([1.0, 1.0], abs=1e-6)

    def test_empty_region(self):
        P = ProjectedPolyhedron(np.array([[1.0, 0.0], [-1.0, 0.0]]),
                                np.zeros((2, 0)), np.array([-1.0, -1.0]))
        assert span_basis(P) == []

    def test_origin_only(self):
        P = ProjectedPolyhedron(np.vstack([np.eye(2), -np.eye(2)]),
                                np.zeros((4, 0)), np.zeros(4))
        assert span_basis(P) == []

    def test_members_and_independence_random(self, rng):
        # invariant: outputs are members of P and linearly independent
        for _ in range(5):
            A = rng.normal(size=(8, 3))
            x0 = rng.normal(size=3)
            c = A @ x0 + rng.uniform(0.1, 0.5, size=8)
            P = ProjectedPolyhedron(A, np.zeros((8, 0)), c)
            basis = span_basis(P)
            if basis:
                sv = np.linalg.svd(np.array(basis), compute_uv=False)
                assert sv[-1] > 1e-7
            for v in basis:
                assert P.membership_residual(v) <= 1e-7

    def test_projection_with_auxiliary_block(self, rng):
        # P = projection of {(x, y): ||(x, y)||_inf <= 1, x1 = y1} still spans R^2
        A = np.vstack([np.eye(2), -np.eye(2), np.zeros((2, 2)),
                       np.array([[1.0, 0.0], [-1.0, 0.0]])])
        B = np.vstack([np.zeros((4, 1)), np.array([[1.0], [-1.0]]),
                       np.array([[-1.0], [1.0]])])
        c = np.concatenate([np.ones(6), np.zeros(2)])
        P = ProjectedPolyhedron(A, B, c)
        basis = span_basis(P)
        assert len(basis) == 2


class TestMatrixSets:
    def test_interval_contains_true_matrix(self):
        U = MatrixPolytope.entrywise_bound(4, 4.0)
        assert U.membership(A_STAR_4)

    def test_frobenius_ball_contains_true_matrix(self):
        A0 = np.array([
            [2.25, 0.75, 4.25, 1.75],
            [2.25, -3.25, -1.25, -2.25],
            [-2.00, -2.75, 1.25, 0.00],
            [1.75, -0.25, -2.00, 2.00],
        ])
        ball = MatrixEllipsoid.frobenius_ball(A0, 1.0)
        assert np.linalg.norm(A_STAR_4 - A0) <= 1.0
        assert ball.membership(A_STAR_4)

    def test_zero_matrix_violates_pinned_diagonal(self):
        E11 = np.zeros((2, 2))
        E11[0, 0] = 1.0
        facets = [(E11, 0.5), (-E11, -0.5)]
        U = MatrixPolytope(facets)
        assert not U.membership(np.zeros((2, 2)))

    def test_equality_pair_detection(self):
        from safelearn.bench import instance

        U = instance("sec5.5.1").base
        assert len(U.equality_rows) == 3
        assert len(U.inequality_facets) == 2

    def test_empty_polytope_rejected(self):
        E = np.zeros((2, 2))
        E[0, 0] = 1.0
        with pytest.raises(InfeasibleRegion):
            MatrixPolytope([(E, -1.0), (-E, -1.0)])

    def test_ellipsoid_requires_positive_definite(self):
        with pytest.raises(GeometryError):
            MatrixEllipsoid(np.diag([1.0, 1.0, 1.0, -0.1]), np.zeros(4), -1.0)

    def test_frobenius_ball_quadratic_form(self, rng):
        A0 = rng.normal(size=(2, 2))
        ball = MatrixEllipsoid.frobenius_ball(A0, 0.7)
        for _ in range(50):
            A = A0 + rng.normal(size=(2, 2)) * 0.4
            expected = np.linalg.norm(A - A0) ** 2 - 0.49
            assert ball.q_value(A) == pytest.approx(expected, abs=1e-10)
            assert ball.membership(A) == (np.linalg.norm(A - A0) <= 0.7 + 1e-9)
