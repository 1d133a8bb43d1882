"""Polyhedra, matrix-set descriptions, and constructive polyhedral subroutines.

Conventions used throughout the package:

* state polytopes are in halfspace form  {x : h_i^T x <= b_i},
* matrix sets live in vec-space with **column-major** vectorization, so that
  ``Tr(V^T A) = vec(V) . vec(A)`` and ``A x = (x^T kron I) vec(A)``,
* all tolerances default to 1e-7 for polyhedral comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from safelearn import conic
from safelearn.conic import ConicProgram, LinExpr, SolverSettings

__all__ = [
    "GeometryError",
    "InfeasibleRegion",
    "HPolytope",
    "MatrixPolytope",
    "MatrixEllipsoid",
    "ProjectedPolyhedron",
    "contains",
    "is_singleton",
    "span_basis",
    "matrix_set_membership",
    "vec",
    "unvec",
]

DEFAULT_TOL = 1e-7


class GeometryError(ValueError):
    pass


class InfeasibleRegion(GeometryError):
    """The polyhedron in question is empty."""


def vec(A: np.ndarray) -> np.ndarray:
    """Column-major vectorization of a matrix."""
    return np.asarray(A, dtype=float).flatten(order="F")


def unvec(a: np.ndarray, n: int) -> np.ndarray:
    return np.asarray(a, dtype=float).reshape((n, n), order="F")


class HPolytope:
    """Safety region {x : h_i^T x <= b_i, i = 1..r}.

    With ``origin_interior=True`` the constructor requires every offset to be
    positive and rescales each row to the normalized form h_i^T x <= 1, which
    the infinite-step formulations assume.  Rescaling does not change the
    point set.
    """

    def __init__(self, normals, offsets, origin_interior: bool = False):
        normals = np.atleast_2d(np.asarray(normals, dtype=float))
        offsets = np.asarray(offsets, dtype=float).ravel()
        if normals.ndim != 2 or normals.shape[0] < 1 or normals.shape[1] < 1:
            raise GeometryError("normals must be a nonempty r x n matrix")
        if offsets.shape[0] != normals.shape[0]:
            raise GeometryError("offsets length must match number of normals")
        row_norms = np.linalg.norm(normals, axis=1)
        if np.any(row_norms < 1e-12):
            raise GeometryError("zero rows in normals are not allowed")
        if origin_interior:
            if np.any(offsets <= 0):
                raise GeometryError(
                    "origin_interior form requires strictly positive offsets")
            normals = normals / offsets[:, None]
            offsets = np.ones_like(offsets)
        self.normals = normals
        self.offsets = offsets

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @property
    def num_facets(self) -> int:
        return self.normals.shape[0]

    @property
    def origin_interior(self) -> bool:
        return bool(np.all(self.offsets > 0))

    @classmethod
    def box(cls, n: int, radius: float = 1.0) -> "HPolytope":
        """The infinity-norm ball {x : |x_i| <= radius}."""
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.full(2 * n, float(radius)))

    @classmethod
    def from_bounds(cls, lower, upper) -> "HPolytope":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        n = lower.size
        eye = np.eye(n)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]))

    def contains(self, x, tol: float = DEFAULT_TOL) -> bool:
        x = np.asarray(x, dtype=float).ravel()
        if x.shape[0] != self.dim:
            raise GeometryError(f"point has dimension {x.shape[0]}, expected {self.dim}")
        return bool(np.all(self.normals @ x <= self.offsets + tol))

    def to_json(self) -> dict:
        return {"normals": self.normals.tolist(), "offsets": self.offsets.tolist()}

    @classmethod
    def from_json(cls, doc: dict, origin_interior: bool = False) -> "HPolytope":
        return cls(doc["normals"], doc["offsets"], origin_interior=origin_interior)

    def bounding_box(self, settings: Optional[SolverSettings] = None):
        """Coordinate-wise min/max over the polytope via 2n LPs."""
        lo = np.empty(self.dim)
        hi = np.empty(self.dim)
        for i in range(self.dim):
            for sign, out in ((1.0, lo), (-1.0, hi)):
                prog = ConicProgram()
                x = prog.add_vars("x", self.dim)
                for h, b in zip(self.normals, self.offsets):
                    prog.add_ineq(LinExpr({x[j]: -h[j] for j in range(self.dim)}, b))
                prog.set_objective(LinExpr({x[i]: sign}))
                sol = conic.solve(prog, settings)
                if sol.status == conic.INFEASIBLE:
                    raise InfeasibleRegion("empty safety polytope")
                if sol.status != conic.OPTIMAL:
                    raise GeometryError(f"unbounded or failed bound LP ({sol.status})")
                out[i] = sign * sol.objective
        return lo, hi


def contains(P: HPolytope, x, tol: float = DEFAULT_TOL) -> bool:
    return P.contains(x, tol)


class MatrixPolytope:
    """Matrix uncertainty set {A : Tr(V_j^T A) <= v_j, j = 1..s}.

    Facet pairs (V, v), (-V, -v) encode equalities; they are detected at
    construction so downstream consumers (sampling, certificate compilers)
    can treat the affine hull exactly.
    """

    def __init__(self, facets: Sequence, check_nonempty: bool = True):
        if len(facets) < 1:
            raise GeometryError("at least one facet required")
        mats = []
        vals = []
        for V, v in facets:
            V = np.asarray(V, dtype=float)
            if V.ndim != 2 or V.shape[0] != V.shape[1]:
                raise GeometryError("facet matrices must be square")
            mats.append(V)
            vals.append(float(v))
        n = mats[0].shape[0]
        if any(V.shape[0] != n for V in mats):
            raise GeometryError("facet matrices must share one size")
        self.n = n
        self.facet_mats = mats
        self.facet_vals = np.asarray(vals)
        self._split_equalities()
        if check_nonempty:
            prog = ConicProgram()
            a = prog.add_vars("a", n * n)
            for V, v in zip(self.facet_mats, self.facet_vals):
                w = vec(V)
                prog.add_ineq(LinExpr({a[k]: -w[k] for k in range(n * n) if w[k] != 0.0}, v))
            sol = conic.solve(prog)
            if sol.status == conic.INFEASIBLE:
                raise InfeasibleRegion("matrix polytope is empty")

    def _split_equalities(self, tol: float = 1e-10) -> None:
        """Partition facets into genuine inequalities and equality rows."""
        s = len(self.facet_mats)
        used = [False] * s
        ineq, eqs = [], []
        for i in range(s):
            if used[i]:
                continue
            found = None
            for j in range(i + 1, s):
                if used[j]:
                    continue
                if (np.allclose(self.facet_mats[i], -self.facet_mats[j], atol=tol)
                        and abs(self.facet_vals[i] + self.facet_vals[j]) <= tol):
                    found = j
                    break
            if found is None:
                ineq.append((self.facet_mats[i], self.facet_vals[i]))
            else:
                used[found] = True
                eqs.append((self.facet_mats[i], self.facet_vals[i]))
            used[i] = True
        self.inequality_facets = ineq
        self.equality_rows = eqs

    @property
    def num_facets(self) -> int:
        return len(self.facet_mats)

    @classmethod
    def interval(cls, lower, upper) -> "MatrixPolytope":
        """Entrywise box  lower_ij <= A_ij <= upper_ij."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        n = lower.shape[0]
        facets = []
        for i in range(n):
            for j in range(n):
                E = np.zeros((n, n))
                E[i, j] = 1.0
                facets.append((E.copy(), upper[i, j]))
                facets.append((-E, -lower[i, j]))
        return cls(facets)

    @classmethod
    def entrywise_bound(cls, n: int, bound: float) -> "MatrixPolytope":
        b = float(bound)
        return cls.interval(np.full((n, n), -b), np.full((n, n), b))

    def membership(self, A, tol: float = DEFAULT_TOL) -> bool:
        A = np.asarray(A, dtype=float)
        if A.shape != (self.n, self.n):
            raise GeometryError("matrix dimension mismatch")
        return all(float(np.sum(V * A)) <= v + tol
                   for V, v in zip(self.facet_mats, self.facet_vals))

    def as_projected(self, equality_data: Sequence = ()) -> "ProjectedPolyhedron":
        """The set in vec(A)-space, with observed pairs A x_j = y_j folded in
        as facet pairs, as a projected polyhedron (with no auxiliary block)."""
        n = self.n
        rows = [vec(V) for V in self.facet_mats]
        rhs = list(self.facet_vals)
        for x, y in equality_data:
            K = np.kron(np.asarray(x, dtype=float).reshape(1, -1), np.eye(n))
            for p in range(n):
                rows.append(K[p])
                rhs.append(float(y[p]))
                rows.append(-K[p])
                rhs.append(-float(y[p]))
        A = np.vstack(rows)
        return ProjectedPolyhedron(A, np.zeros((A.shape[0], 0)), np.asarray(rhs))

    def to_json(self) -> dict:
        return {"kind": "facet",
                "facets": [{"V": V.tolist(), "v": float(v)}
                           for V, v in zip(self.facet_mats, self.facet_vals)]}


class MatrixEllipsoid:
    """Matrix uncertainty set {A : q(A) <= 0} for a strictly convex quadratic

        q(A) = vec(A)^T P vec(A) + r^T vec(A) + s,   P > 0.

    The Frobenius-ball constructor populates the same general form so that the
    S-lemma pipeline has a single code path.
    """

    def __init__(self, P, r, s, eig_tol: float = 1e-10, check_nonempty: bool = True):
        P = np.asarray(P, dtype=float)
        r = np.asarray(r, dtype=float).ravel()
        m = P.shape[0]
        if P.shape != (m, m) or r.shape[0] != m:
            raise GeometryError("inconsistent quadratic dimensions")
        n = int(round(np.sqrt(m)))
        if n * n != m:
            raise GeometryError("quadratic must act on n^2 matrix entries")
        P = (P + P.T) / 2
        if np.linalg.eigvalsh(P).min() <= eig_tol:
            raise GeometryError("quadratic form must be positive definite")
        self.P = P
        self.r = r
        self.s = float(s)
        self.n = n
        if check_nonempty and self.minimum_value() > DEFAULT_TOL:
            raise InfeasibleRegion("matrix ellipsoid is empty")

    @classmethod
    def frobenius_ball(cls, center, radius: float) -> "MatrixEllipsoid":
        center = np.asarray(center, dtype=float)
        if radius <= 0:
            raise GeometryError("radius must be positive")
        m = center.size
        a0 = vec(center)
        obj = cls(np.eye(m), -2.0 * a0, float(a0 @ a0 - radius ** 2))
        obj.center = center
        obj.radius = float(radius)
        return obj

    center = None
    radius = None

    def q_value(self, A) -> float:
        a = vec(np.asarray(A, dtype=float))
        return float(a @ self.P @ a + self.r @ a + self.s)

    def q_poly_coeffs(self):
        """(P, r, s) triple of the quadratic, for generator construction."""
        return self.P, self.r, self.s

    def minimizer(self) -> np.ndarray:
        return np.linalg.solve(self.P, -self.r / 2.0)

    def minimum_value(self) -> float:
        a = self.minimizer()
        return float(a @ self.P @ a + self.r @ a + self.s)

    def membership(self, A, tol: float = DEFAULT_TOL) -> bool:
        A = np.asarray(A, dtype=float)
        if A.shape != (self.n, self.n):
            raise GeometryError("matrix dimension mismatch")
        return self.q_value(A) <= tol

    def to_json(self) -> dict:
        if self.center is not None:
            return {"kind": "frobenius_ball", "center": self.center.tolist(),
                    "radius": self.radius}
        return {"kind": "quadratic", "P": self.P.tolist(), "r": self.r.tolist(),
                "s": self.s}


def matrix_set_membership(U, A, tol: float = DEFAULT_TOL) -> bool:
    return U.membership(A, tol)


@dataclass
class ProjectedPolyhedron:
    """P = {x in R^n : exists y in R^p with A x + B y <= c}."""

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float)
        if self.B.ndim == 1:
            self.B = self.B.reshape(self.A.shape[0], -1)
        self.c = np.asarray(self.c, dtype=float).ravel()
        if self.B.shape[0] != self.A.shape[0] or self.c.shape[0] != self.A.shape[0]:
            raise GeometryError("inconsistent projected polyhedron dimensions")

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def aux_dim(self) -> int:
        return self.B.shape[1]

    def feasible_point(self, settings: Optional[SolverSettings] = None):
        """Some (x, y) with A x + B y <= c, or None when empty."""
        prog, x, y = self._base_program()
        sol = conic.solve(prog, settings)
        if sol.status != conic.OPTIMAL:
            return None
        return sol.values[: self.dim].copy(), sol.values[self.dim:self.dim + self.aux_dim].copy()

    def _base_program(self):
        prog = ConicProgram()
        x = prog.add_vars("x", self.dim)
        y = prog.add_vars("y", self.aux_dim)
        for i in range(self.A.shape[0]):
            terms = {x[j]: -self.A[i, j] for j in range(self.dim) if self.A[i, j] != 0.0}
            for j in range(self.aux_dim):
                if self.B[i, j] != 0.0:
                    terms[y[j]] = -self.B[i, j]
            prog.add_ineq(LinExpr(terms, self.c[i]))
        return prog, x, y

    def membership_residual(self, x0, settings: Optional[SolverSettings] = None) -> float:
        """min over y of max_i (A x0 + B y - c)_i; <= 0 means x0 in P."""
        x0 = np.asarray(x0, dtype=float)
        prog = ConicProgram()
        y = prog.add_vars("y", self.aux_dim)
        t = prog.add_var("t")
        base = self.A @ x0 - self.c
        for i in range(self.A.shape[0]):
            terms = {t: 1.0}
            for j in range(self.aux_dim):
                if self.B[i, j] != 0.0:
                    terms[y[j]] = -self.B[i, j]
            prog.add_ineq(LinExpr(terms, -base[i]))
        prog.set_objective(LinExpr({t: 1.0}))
        sol = conic.solve(prog, settings)
        if sol.status != conic.OPTIMAL:
            return np.inf
        return float(sol.objective)


def is_singleton(P: ProjectedPolyhedron, tol: float = DEFAULT_TOL,
                 settings: Optional[SolverSettings] = None) -> Optional[np.ndarray]:
    """Return the unique point of P when it is a singleton, else None.

    Solves 2n LPs (coordinate-wise max and min).  Raises InfeasibleRegion
    when P is empty; an unbounded coordinate means P is not a singleton.
    """
    n = P.dim
    lo = np.empty(n)
    hi = np.empty(n)
    for i in range(n):
        for sign, out in ((1.0, lo), (-1.0, hi)):
            prog, x, _ = P._base_program()
            prog.set_objective(LinExpr({x[i]: sign}))
            sol = conic.solve(prog, settings)
            if sol.status == conic.INFEASIBLE:
                raise InfeasibleRegion("projected polyhedron is empty")
            if sol.status == conic.UNBOUNDED:
                return None
            if sol.status != conic.OPTIMAL:
                raise GeometryError(f"coordinate LP failed ({sol.status})")
            out[i] = sign * sol.objective
    if np.max(hi - lo) <= tol:
        return (lo + hi) / 2.0
    return None


def span_basis(P: ProjectedPolyhedron, tol: float = DEFAULT_TOL,
               settings: Optional[SolverSettings] = None) -> list:
    """A basis of span(P) consisting of members of P.

    Implements the iterative feasibility-system construction: with a current
    independent set {e_1..e_k} in P, search the cone

        F = {x : x = x+ - x-, A x+/- + B y+/- <= lambda+/- c,
              lambda+/- >= 0, e_i^T x = 0}

    for a nonzero x (2n bounded coordinate LPs; the |x_i| <= 1 box is valid
    because F is a cone).  A nonzero witness is shifted so lambda+/- >= 1 by
    adding a fixed feasible point of P, after which x+/lambda+ and x-/lambda-
    both lie in P and at least one is independent of the current set.
    """
    feas = P.feasible_point(settings)
    if feas is None:
        return []
    x_hat, y_hat = feas
    n, p = P.dim, P.aux_dim
    basis: list[np.ndarray] = []

    def witness():
        for i in range(n):
            for sign in (1.0, -1.0):
                prog = ConicProgram()
                x = prog.add_vars("x", n)
                xp = prog.add_vars("xp", n)
                xm = prog.add_vars("xm", n)
                yp = prog.add_vars("yp", p)
                ym = prog.add_vars("ym", p)
                lp = prog.add_var("lp")
                lm = prog.add_var("lm")
                for e in basis:
                    prog.add_eq(LinExpr({x[j]: e[j] for j in range(n) if e[j] != 0.0}))
                for j in range(n):
                    prog.add_eq(LinExpr({x[j]: 1.0, xp[j]: -1.0, xm[j]: 1.0}))
                for row in range(P.A.shape[0]):
                    for xv, yv, lv in ((xp, yp, lp), (xm, ym, lm)):
                        terms = {lv: P.c[row]}
                        for j in range(n):
                            if P.A[row, j] != 0.0:
                                terms[xv[j]] = -P.A[row, j]
                        for j in range(p):
                            if P.B[row, j] != 0.0:
                                terms[yv[j]] = -P.B[row, j]
                        prog.add_ineq(LinExpr(terms))
                prog.add_ineq(LinExpr({lp: 1.0}))
                prog.add_ineq(LinExpr({lm: 1.0}))
                for j in range(n):
                    prog.add_ineq(LinExpr({x[j]: 1.0}, 1.0))
                    prog.add_ineq(LinExpr({x[j]: -1.0}, 1.0))
                prog.set_objective(LinExpr({x[i]: -sign}))
                sol = conic.solve(prog, settings)
                if sol.status != conic.OPTIMAL:
                    raise GeometryError(f"span feasibility LP failed ({sol.status})")
                if sol.objective < -tol:
                    v = sol.values
                    return (v[x[0]:x[0] + n].copy(), v[xp[0]:xp[0] + n].copy(),
                            v[xm[0]:xm[0] + n].copy(), v[yp[0]:yp[0] + p].copy()
                            if p else np.zeros(0),
                            v[ym[0]:ym[0] + p].copy() if p else np.zeros(0),
                            float(v[lp]), float(v[lm]))
        return None

    for _ in range(n):
        w = witness()
        if w is None:
            break
        xw, xpw, xmw, ypw, ymw, lpw, lmw = w
        # shift so both scalings are at least one
        xpw, ypw, lpw = xpw + x_hat, ypw + y_hat, lpw + 1.0
        xmw, ymw, lmw = xmw + x_hat, ymw + y_hat, lmw + 1.0
        for cand in (xpw / lpw, xmw / lmw):
            stack = np.array(basis + [cand])
            sv = np.linalg.svd(stack, compute_uv=False)
            if sv[-1] > tol * max(1.0, sv[0]):
                basis.append(cand)
                break
        else:
            raise GeometryError("witness produced no independent member")
    return basis
