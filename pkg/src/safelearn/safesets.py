"""Robust safe-set formulations compiled into conic programs.

Each builder returns a :class:`~safelearn.conic.ConicProgram` whose projection
to the state variables (indices in ``prog.meta['x']``) is the corresponding
safe set:

* ``one_step_program``            dual LP, polytope uncertainty + equality data
* ``two_step_program``            S-lemma SDP, ellipsoid uncertainty (also the
                                  one-step variant via ``steps=1``)
* ``rdo_program``                 invariant-ellipsoid SDP for a single matrix
* ``inf_linear_program``          SOS/Putinar hierarchy over the matrix set
* ``nonlinear_one_step_program``  SOCP for linear + bounded-growth dynamics
* ``nonlinear_inf_program``       SOS hierarchy with the norm-bounded residual

Scans (`grid_scan`, `boundary_scan`) classify the plane projection of any of
these programs; grid mode treats solver failures as "unknown", never as safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from safelearn import conic, sos
from safelearn.conic import BatchSolver, ConicProgram, LinExpr, SolverSettings
from safelearn.geometry import (
    HPolytope,
    InfeasibleRegion,
    MatrixEllipsoid,
    MatrixPolytope,
    vec,
    unvec,
)

__all__ = [
    "UncertaintyState",
    "NonlinearEnvelope",
    "AffineParametrization",
    "EmptyUncertainty",
    "SingletonUncertainty",
    "one_step_program",
    "one_step_region",
    "eliminate_equalities",
    "two_step_program",
    "rdo_program",
    "inf_linear_program",
    "nonlinear_one_step_program",
    "nonlinear_inf_program",
    "boundary_scan",
    "grid_scan",
    "polygon_mask",
    "polygon_area",
    "ScanResult",
    "validate_inf_step_inputs",
]

SAFE, UNSAFE, UNKNOWN = 1, 0, -1

# certificate strictness bounds: eps is required in [EPS_FLOOR, EPS_CAP] when
# optimizing, and relaxed to [-1, EPS_CAP] by the feasibility-margin probes
EPS_FLOOR = 1e-6
EPS_CAP = 1e3


class EmptyUncertainty(InfeasibleRegion):
    """No matrix satisfies the base set and the accumulated data."""


class SingletonUncertainty(Exception):
    """The data pin the matrix down completely; carries the unique matrix."""

    def __init__(self, matrix: np.ndarray):
        super().__init__("uncertainty set is a singleton")
        self.matrix = np.asarray(matrix, dtype=float)


@dataclass(frozen=True)
class NonlinearEnvelope:
    """Growth bound ||g(x)||_inf <= gamma * ||x||_p^d on the residual."""

    gamma: float
    p_norm: object = np.inf
    d_growth: int = 0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")


@dataclass(frozen=True)
class UncertaintyState:
    """Base matrix set plus accumulated trajectory constraints.

    ``equality_data`` holds pairs (x_j, y_j) imposing A x_j = y_j (linearized
    trajectories enter as consecutive pairs).  ``residual_data`` holds
    (x_j, y_j, rho_j, p) imposing ||A x_j - y_j||_p <= rho_j with p in
    {inf, 2}.  States are immutable; the ``with_*`` constructors verify
    nonemptiness with one feasibility solve.
    """

    base: object
    equality_data: tuple = ()
    residual_data: tuple = ()

    @property
    def n(self) -> int:
        return self.base.n

    def with_equality(self, x, y, check: bool = True) -> "UncertaintyState":
        pair = (np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        out = replace(self, equality_data=self.equality_data + (pair,))
        if check:
            out.assert_nonempty()
        return out

    def with_trajectory_pairs(self, points, check: bool = True) -> "UncertaintyState":
        """Fold a trajectory y_0..y_T into the pairs A y_{t-1} = y_t."""
        out = self
        pts = np.asarray(points, dtype=float)
        for t in range(1, pts.shape[0]):
            out = replace(out, equality_data=out.equality_data
                          + ((pts[t - 1].copy(), pts[t].copy()),))
        if check:
            out.assert_nonempty()
        return out

    def with_residual(self, x, y, rho, p_norm=np.inf,
                      check: bool = True) -> "UncertaintyState":
        entry = (np.asarray(x, dtype=float), np.asarray(y, dtype=float),
                 float(rho), p_norm)
        out = replace(self, residual_data=self.residual_data + (entry,))
        if check:
            out.assert_nonempty()
        return out

    def assert_nonempty(self) -> None:
        prog = ConicProgram()
        a = prog.add_vars("a", self.n * self.n)
        _matrix_membership_blocks(prog, a, self)
        sol = conic.solve(prog)
        if sol.status != conic.OPTIMAL:
            raise EmptyUncertainty(
                f"uncertainty set is empty or intractable ({sol.status})")

    def membership(self, A, tol: float = 1e-7) -> bool:
        A = np.asarray(A, dtype=float)
        if not self.base.membership(A, tol):
            return False
        for x, y in self.equality_data:
            if np.max(np.abs(A @ x - y)) > tol:
                return False
        for x, y, rho, p in self.residual_data:
            r = A @ x - y
            val = np.max(np.abs(r)) if p in (np.inf, "inf") else np.linalg.norm(r)
            if val > rho + tol:
                return False
        return True


def _matrix_membership_blocks(prog: ConicProgram, a: list, U: UncertaintyState) -> None:
    """Constraint blocks stating vec(A) in U, over existing variables ``a``."""
    n = U.n
    base = U.base
    if isinstance(base, MatrixPolytope):
        for V, v in zip(base.facet_mats, base.facet_vals):
            w = vec(V)
            prog.add_ineq(LinExpr({a[k]: -w[k] for k in range(n * n) if w[k] != 0.0}, v))
    elif isinstance(base, MatrixEllipsoid):
        # q(A) <= 0 as a rotated second-order cone via Cholesky of P
        L = np.linalg.cholesky(base.P)
        center = base.minimizer()
        rho2 = float(center @ base.P @ center + base.r @ center + base.s)
        if -rho2 < 0:
            raise EmptyUncertainty("matrix ellipsoid is empty")
        rows = L.T
        exprs = []
        for i in range(n * n):
            terms = {a[k]: rows[i, k] for k in range(n * n) if rows[i, k] != 0.0}
            exprs.append(LinExpr(terms, -float(rows[i] @ center)))
        prog.add_soc(LinExpr.constant(np.sqrt(max(-rho2, 0.0))), exprs)
    else:
        raise TypeError(f"unsupported base set {type(base).__name__}")
    for x, y in U.equality_data:
        K = np.kron(np.asarray(x).reshape(1, -1), np.eye(n))
        for p in range(n):
            prog.add_eq(LinExpr({a[k]: K[p, k] for k in range(n * n) if K[p, k] != 0.0},
                                -float(y[p])))
    for x, y, rho, p in U.residual_data:
        K = np.kron(np.asarray(x).reshape(1, -1), np.eye(n))
        rows = []
        for q in range(n):
            rows.append(LinExpr({a[k]: K[q, k] for k in range(n * n) if K[q, k] != 0.0},
                                -float(y[q])))
        if p in (np.inf, "inf"):
            for row in rows:
                prog.add_ineq(rho - row)
                prog.add_ineq(rho + row)
        else:
            prog.add_soc(LinExpr.constant(rho), rows)


# ---------------------------------------------------------------------------
# one-step dual LP (polytope uncertainty)
# ---------------------------------------------------------------------------


def one_step_program(S: HPolytope, U: UncertaintyState, c, c0: float = 0.0) -> ConicProgram:
    """Exact one-step safe set as the x-projection of a dual LP.

    For each facet i of S the robust constraint max_{A in U} h_i^T A x <= b_i
    is replaced by its LP dual: scalar inequality
    sum_k y_k^T eta_k + sum_j mu_j v_j <= b_i together with the matrix
    equality x h_i^T = sum_k x_k eta_k^T + sum_j mu_j V_j^T and mu >= 0.
    """
    if not isinstance(U.base, MatrixPolytope):
        raise TypeError("one_step_program requires a facet (polytope) base set")
    if U.residual_data:
        raise ValueError("residual data requires nonlinear_one_step_program")
    n = S.dim
    data = U.equality_data
    facets = list(zip(U.base.facet_mats, U.base.facet_vals))
    prog = ConicProgram()
    x = prog.add_vars("x", n)
    for h, b in zip(S.normals, S.offsets):
        prog.add_ineq(LinExpr({x[j]: -h[j] for j in range(n)}, b))
    for i, (h, b) in enumerate(zip(S.normals, S.offsets)):
        eta = [prog.add_vars(f"eta{i}_{k}", n) for k in range(len(data))]
        mu = prog.add_vars(f"mu{i}", len(facets))
        for m in mu:
            prog.add_ineq(LinExpr({m: 1.0}))
        scalar = LinExpr({}, -b)
        for k, (_, yk) in enumerate(data):
            for q in range(n):
                if yk[q] != 0.0:
                    scalar.terms[eta[k][q]] = scalar.terms.get(eta[k][q], 0.0) + yk[q]
        for j, (_, vj) in enumerate(facets):
            if vj != 0.0:
                scalar.terms[mu[j]] = scalar.terms.get(mu[j], 0.0) + vj
        prog.add_ineq(-scalar)
        for p in range(n):
            for q in range(n):
                terms = {x[p]: h[q]}
                for k, (xk, _) in enumerate(data):
                    if xk[p] != 0.0:
                        terms[eta[k][q]] = terms.get(eta[k][q], 0.0) - xk[p]
                for j, (Vj, _) in enumerate(facets):
                    if Vj[q, p] != 0.0:
                        terms[mu[j]] = terms.get(mu[j], 0.0) - Vj[q, p]
                prog.add_eq(LinExpr(terms))
    _set_linear_objective(prog, x, c, c0)
    prog.meta.update({"x": x, "kind": "one_step"})
    return prog


def _set_linear_objective(prog: ConicProgram, x: list, c, c0: float) -> None:
    cvec = np.asarray(c, dtype=float)
    prog.set_objective(LinExpr({x[i]: float(cvec[i]) for i in range(len(x))
                                if cvec[i] != 0.0}, c0))


def one_step_region(S: HPolytope, U: UncertaintyState):
    """The one-step safe set as a ProjectedPolyhedron in x-space (the dual-LP
    feasible region with (eta, mu) as the auxiliary block)."""
    from safelearn.geometry import ProjectedPolyhedron

    prog = one_step_program(S, U, np.zeros(S.dim))
    return _projected_from_program(prog, S.dim)


def _projected_from_program(prog: ConicProgram, n: int) -> "ProjectedPolyhedron":
    from safelearn.geometry import ProjectedPolyhedron

    if not prog.is_linear():
        raise ValueError("projection helper only applies to linear programs")
    rows = []
    rhs = []
    nv = prog.num_vars
    for e in prog.ineqs:
        row = np.zeros(nv)
        for k, v in e.terms.items():
            row[k] = -v
        rows.append(row)
        rhs.append(e.const)
    for e in prog.eqs:
        row = np.zeros(nv)
        for k, v in e.terms.items():
            row[k] = v
        rows.append(row)
        rhs.append(-e.const)
        rows.append(-row)
        rhs.append(e.const)
    M = np.array(rows)
    return ProjectedPolyhedron(M[:, :n], M[:, n:], np.array(rhs))


# ---------------------------------------------------------------------------
# ellipsoid uncertainty: variable elimination and the S-lemma SDP
# ---------------------------------------------------------------------------


@dataclass
class AffineParametrization:
    """Affine chart A = A_hat + sum_i a_i * basis_i of the solution set of the
    data equalities, with the base quadratic pulled back onto the chart:
    q_hat(a) = a^T P_hat a + r_hat . a + s_hat."""

    A_hat: np.ndarray
    basis: np.ndarray  # (n^2, n_hat), orthonormal columns
    P_hat: np.ndarray
    r_hat: np.ndarray
    s_hat: float
    interior: np.ndarray
    multiple: bool

    @property
    def n(self) -> int:
        return self.A_hat.shape[0]

    @property
    def n_hat(self) -> int:
        return self.basis.shape[1]

    def basis_matrices(self) -> list:
        return [unvec(self.basis[:, i], self.n) for i in range(self.n_hat)]

    def g(self, a_hat) -> np.ndarray:
        return self.A_hat + unvec(self.basis @ np.asarray(a_hat, dtype=float), self.n)

    def q_hat(self, a_hat) -> float:
        a = np.asarray(a_hat, dtype=float)
        return float(a @ self.P_hat @ a + self.r_hat @ a + self.s_hat)


def eliminate_equalities(U: UncertaintyState, tol: float = 1e-9) -> AffineParametrization:
    """Eliminate the data equalities from an ellipsoid uncertainty set.

    Raises :class:`EmptyUncertainty` when no matrix in the ellipsoid satisfies
    the equalities, and :class:`SingletonUncertainty` when exactly one does
    (no strictly interior chart point exists), in which case the caller
    switches to the plain LP path.
    """
    base = U.base
    if not isinstance(base, MatrixEllipsoid):
        raise TypeError("eliminate_equalities requires an ellipsoid base set")
    n = base.n
    m = n * n
    if U.equality_data:
        rows = []
        vals = []
        for x, y in U.equality_data:
            K = np.kron(np.asarray(x).reshape(1, -1), np.eye(n))
            rows.append(K)
            vals.append(np.asarray(y, dtype=float))
        M = np.vstack(rows)
        b = np.concatenate(vals)
        sol, residual, rank, _ = np.linalg.lstsq(M, b, rcond=None)
        if np.linalg.norm(M @ sol - b) > 1e-7 * max(1.0, np.linalg.norm(b)):
            raise EmptyUncertainty("data equalities are inconsistent")
        A_hat_vec = sol
        N = scipy.linalg.null_space(M)
    else:
        A_hat_vec = base.minimizer()
        N = np.eye(m)
    P, r, s = base.q_poly_coeffs()
    P_hat = N.T @ P @ N
    r_hat = N.T @ (2.0 * P @ A_hat_vec + r)
    s_hat = float(A_hat_vec @ P @ A_hat_vec + r @ A_hat_vec + s)
    A_hat = unvec(A_hat_vec, n)
    if N.shape[1] == 0:
        if s_hat > tol:
            raise EmptyUncertainty("equalities pin a matrix outside the ellipsoid")
        raise SingletonUncertainty(A_hat)
    center = np.linalg.solve(P_hat, -r_hat / 2.0)
    qmin = float(center @ P_hat @ center + r_hat @ center + s_hat)
    if qmin > tol:
        raise EmptyUncertainty("no matrix in the ellipsoid satisfies the data")
    if qmin > -tol:
        param = AffineParametrization(A_hat, N, P_hat, r_hat, s_hat, center, False)
        raise SingletonUncertainty(param.g(center))
    return AffineParametrization(A_hat, N, P_hat, r_hat, s_hat, center, True)


def _fixed_matrix_program(S: HPolytope, A: np.ndarray, c, c0: float,
                          steps: int) -> ConicProgram:
    """x in S, A x in S (and A^2 x in S for steps=2) for one known matrix."""
    n = S.dim
    prog = ConicProgram()
    x = prog.add_vars("x", n)
    mats = [np.eye(n), A]
    if steps >= 2:
        mats.append(A @ A)
    for M in mats:
        HM = S.normals @ M
        for row, b in zip(HM, S.offsets):
            prog.add_ineq(LinExpr({x[j]: -row[j] for j in range(n) if row[j] != 0.0}, b))
    _set_linear_objective(prog, x, c, c0)
    prog.meta.update({"x": x, "kind": f"{steps}_step_fixed", "matrix": A})
    return prog


def two_step_program(S: HPolytope, U: UncertaintyState, c, c0: float = 0.0,
                     steps: int = 2) -> ConicProgram:
    """Exact two-step (or one-step, steps=1) safe set for ellipsoid
    uncertainty as the x-projection of an S-lemma SDP.

    For every facet i and trajectory power t the implication

        q_hat(a) <= 0   =>   h_i^T g(a)^t x - b_i <= 0

    is replaced by one multiplier lambda >= 0 and the (n_hat+1) x (n_hat+1)
    linear matrix inequality expressing global nonnegativity of
    lambda * q_hat - q_{t,i}; all coefficients are affine in x.
    """
    if steps not in (1, 2):
        raise ValueError("steps must be 1 or 2")
    try:
        param = eliminate_equalities(U)
    except SingletonUncertainty as exc:
        return _fixed_matrix_program(S, exc.matrix, c, c0, steps)
    n = S.dim
    nh = param.n_hat
    basis = param.basis_matrices()
    prog = ConicProgram()
    x = prog.add_vars("x", n)

    def xdot(v: np.ndarray) -> LinExpr:
        return LinExpr({x[j]: float(v[j]) for j in range(n) if v[j] != 0.0})

    for h, b in zip(S.normals, S.offsets):
        prog.add_ineq(LinExpr({x[j]: -h[j] for j in range(n)}, b))
    A_hat = param.A_hat
    for i, (h, b) in enumerate(zip(S.normals, S.offsets)):
        powers = [1] if steps == 1 else [1, 2]
        for t in powers:
            lam = prog.add_var(f"lam{t}_{i}")
            prog.add_ineq(LinExpr({lam: 1.0}))
            if t == 1:
                const_term = xdot(h @ A_hat) - b
                lin_terms = [xdot(h @ Bi) for Bi in basis]
                quad_terms = [[LinExpr() for _ in range(nh)] for _ in range(nh)]
            else:
                const_term = xdot(h @ (A_hat @ A_hat)) - b
                lin_terms = [xdot(h @ (Bi @ A_hat + A_hat @ Bi)) for Bi in basis]
                quad_terms = [[LinExpr() for _ in range(nh)] for _ in range(nh)]
                for ti in range(nh):
                    for tj in range(ti, nh):
                        w = h @ (basis[ti] @ basis[tj] + basis[tj] @ basis[ti]) / 2.0
                        e = xdot(w)
                        quad_terms[ti][tj] = e
                        quad_terms[tj][ti] = e
            # (lambda * q_hat - q)(a) globally nonnegative as an LMI
            block = [[LinExpr() for _ in range(nh + 1)] for _ in range(nh + 1)]
            for ti in range(nh):
                for tj in range(nh):
                    block[ti][tj] = LinExpr({lam: param.P_hat[ti, tj]}) - quad_terms[ti][tj]
            for ti in range(nh):
                e = (LinExpr({lam: param.r_hat[ti]}) - lin_terms[ti]) * 0.5
                block[ti][nh] = e
                block[nh][ti] = e
            block[nh][nh] = LinExpr({lam: param.s_hat}) - const_term
            prog.add_psd(block)
    _set_linear_objective(prog, x, c, c0)
    prog.meta.update({"x": x, "kind": f"{steps}_step_slemma", "param": param})
    return prog


# ---------------------------------------------------------------------------
# invariant-ellipsoid program for a single matrix
# ---------------------------------------------------------------------------


def _require_normalized(S: HPolytope) -> None:
    if not np.allclose(S.offsets, 1.0, atol=1e-12):
        raise ValueError("safety polytope must be normalized to h_i^T x <= 1 "
                         "(construct with origin_interior=True)")


def rdo_program(S: HPolytope, A: np.ndarray, c, c0: float = 0.0,
                delta: float = 1e-6) -> ConicProgram:
    """Invariant-ellipsoid inner approximation of the infinite-step safe set
    of a single matrix: find Q > 0 with Q >= A Q A^T, polar-dual facet
    conditions h_i^T Q h_i <= 1, and membership [[Q, x], [x^T, 1]] >= 0."""
    _require_normalized(S)
    A = np.asarray(A, dtype=float)
    n = S.dim
    prog = ConicProgram()
    x = prog.add_vars("x", n)
    qidx = {}
    for i in range(n):
        for j in range(i, n):
            qidx[(i, j)] = prog.add_var(f"Q[{i},{j}]")

    def Q(i, j):
        return LinExpr.variable(qidx[(min(i, j), max(i, j))])

    prog.add_psd([[Q(i, j) - (delta if i == j else 0.0) for j in range(n)]
                  for i in range(n)])
    # Q - A Q A^T  with (A Q A^T)_{pq} = sum_{ij} A_pi A_qj Q_ij
    block = []
    for p in range(n):
        row = []
        for q in range(n):
            e = Q(p, q)
            for i in range(n):
                for j in range(n):
                    coef = A[p, i] * A[q, j]
                    if coef != 0.0:
                        e = e - Q(i, j) * coef
            row.append(e)
        block.append(row)
    prog.add_psd(block)
    for h in S.normals:
        e = LinExpr.constant(1.0)
        for i in range(n):
            for j in range(n):
                if h[i] * h[j] != 0.0:
                    e = e - Q(i, j) * float(h[i] * h[j])
        prog.add_ineq(e)
    member = [[Q(i, j) for j in range(n)] + [LinExpr.variable(x[i])] for i in range(n)]
    member.append([LinExpr.variable(x[j]) for j in range(n)] + [LinExpr.constant(1.0)])
    prog.add_psd(member)
    _set_linear_objective(prog, x, c, c0)
    prog.meta.update({"x": x, "kind": "rdo", "q_indices": qidx})
    return prog


# ---------------------------------------------------------------------------
# infinite-step SOS programs
# ---------------------------------------------------------------------------


def _base_generators(U: UncertaintyState):
    """(inequality_polys, equality_polys) describing the base matrix set in
    the n^2 indeterminates; facet pairs become single equality generators and
    an ellipsoid base becomes the single ball polynomial -q(A) >= 0."""
    n = U.n
    m = n * n
    base = U.base
    ineq, eqs = [], []
    if isinstance(base, MatrixPolytope):
        for V, v in base.inequality_facets:
            ineq.append(sos.affine_poly(m, float(v), -vec(V)))
        for V, v in base.equality_rows:
            eqs.append(sos.affine_poly(m, -float(v), vec(V)))
    elif isinstance(base, MatrixEllipsoid):
        P, r, s = base.q_poly_coeffs()
        ineq.append(sos.quadratic_poly(m, -P, -r, -s))
    else:
        raise TypeError(f"unsupported base set {type(base).__name__}")
    return ineq, eqs


def _data_equality_polys(U: UncertaintyState):
    """e_p^T (A x_j - y_j) for every observed pair and coordinate."""
    n = U.n
    m = n * n
    out = []
    for x, y in U.equality_data:
        K = np.kron(np.asarray(x).reshape(1, -1), np.eye(n))
        for p in range(n):
            out.append(sos.affine_poly(m, -float(y[p]), K[p]))
    return out


def _data_residual_polys(U: UncertaintyState):
    """rho_j^2 - ||A x_j - y_j||^2 for every 2-norm residual entry."""
    n = U.n
    m = n * n
    out = []
    for x, y, rho, p in U.residual_data:
        if p not in (2, 2.0):
            raise ValueError("infinite-step residual data must be 2-norm bounded")
        K = np.kron(np.asarray(x).reshape(1, -1), np.eye(n))
        gen = {(0,) * m: float(rho) ** 2}
        for q in range(n):
            row = sos.affine_poly(m, -float(y[q]), K[q])
            gen = sos.poly_add(gen, sos.poly_scale(sos.poly_mul(row, row), -1.0))
        out.append(gen)
    return out


def _membership_block(nvars: int, Q: sos.PolyMatrix, x_vars: list) -> sos.PolyMatrix:
    """[[Q(A), x], [x^T, 1]] as a PolyMatrix with x entering affinely."""
    n = Q.size
    one = sos.PolyMatrix.constant(nvars, np.array([[1.0]]))
    out = sos.block_poly_matrix(nvars, [[Q, None], [None, one]], [n, 1])
    cm = out.coeffs.setdefault((0,) * nvars, {})
    for i, xv in enumerate(x_vars):
        E = np.zeros((n + 1, n + 1))
        E[i, n] = 1.0
        E[n, i] = 1.0
        cm[xv] = cm.get(xv, np.zeros((n + 1, n + 1))) + E
    return out


def _strictness_scalar(prog: ConicProgram, margin_probe: bool) -> LinExpr:
    idx = prog.add_var("eps")
    lo = -1.0 if margin_probe else EPS_FLOOR
    prog.add_ineq(LinExpr({idx: 1.0}, -lo))
    prog.add_ineq(LinExpr({idx: -1.0}, EPS_CAP))
    return LinExpr.variable(idx)


def inf_linear_program(S: HPolytope, U: UncertaintyState, c, d: int,
                       c0: float = 0.0, margin_probe: bool = False) -> ConicProgram:
    """Degree-d SOS inner approximation of the infinite-step safe set for
    linear dynamics.

    Compiles, by exact coefficient matching over the matrix indeterminates:

    * a matrix certificate that Q(A) - A Q(A) A^T is positive definite on the
      uncertainty set (with the strictly positive shared eps),
    * scalar certificates for the polar-dual facet conditions
      1 - h_i^T Q(A) h_i >= 0,
    * an (n+1) x (n+1) certificate for membership [[Q(A), x], [x^T, 1]].

    Infeasibility at a given level d is a legitimate outcome, surfaced through
    the solver status; the level is recorded in ``prog.meta['degree']``.
    """
    if d % 2 != 0:
        raise ValueError("hierarchy degree must be even")
    _require_normalized(S)
    n = S.dim
    m = n * n
    ineq_gens, eq_gens = _base_generators(U)
    eq_gens = eq_gens + _data_equality_polys(U)
    if U.residual_data:
        raise ValueError("residual data requires nonlinear_inf_program")
    prog = ConicProgram()
    x = prog.add_vars("x", n)
    Q = sos.new_sos_matrix_var(prog, n, m, d, name="Q")
    A = sos.PolyMatrix.matrix_variable(n)
    eps = _strictness_scalar(prog, margin_probe)
    lhs_stab = Q - A.matmul(Q).matmul(A.transpose())
    rhs_stab = sos.putinar_rhs(prog, n, m, d, ineq_gens, eq_gens, epsilon=eps, name="Ms")
    sos.coeff_match(prog, lhs_stab, rhs_stab)
    for i, h in enumerate(S.normals):
        lhs = sos.PolyMatrix.constant(m, np.array([[1.0]])) - Q.congruence(h.reshape(1, -1))
        rhs = sos.putinar_rhs(prog, 1, m, d, ineq_gens, eq_gens, name=f"sg{i}")
        sos.coeff_match(prog, lhs, rhs)
    lhs_mem = _membership_block(m, Q, x)
    rhs_mem = sos.putinar_rhs(prog, n + 1, m, d, ineq_gens, eq_gens, name="Mh")
    sos.coeff_match(prog, lhs_mem, rhs_mem)
    if margin_probe:
        prog.set_objective(eps * -1.0)
    else:
        _set_linear_objective(prog, x, c, c0)
    prog.meta.update({"x": x, "kind": "inf_linear", "degree": d, "Q": Q,
                      "eps": next(iter(eps.terms))})
    return prog


def nonlinear_inf_program(S: HPolytope, U: UncertaintyState, gamma: float, c,
                          d: int, c0: float = 0.0,
                          margin_probe: bool = False) -> ConicProgram:
    """Degree-d SOS inner approximation of the infinite-step safe set for
    dynamics A x + g(x) with ||g(x)|| <= gamma ||x||.

    The invariance certificate lives on the 2n x 2n block

        [[Q - A Q A^T, -A Q], [-Q A^T, -Q]] - lambda [[gamma^2 I, 0], [0, -I]]

    with one multiplier lambda >= 0; trajectory information enters through the
    residual-ball generators gamma^2 ||y_{t-1}||^2 - ||A y_{t-1} - y_t||^2.
    """
    if d % 2 != 0:
        raise ValueError("hierarchy degree must be even")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    _require_normalized(S)
    n = S.dim
    m = n * n
    ineq_gens, eq_gens = _base_generators(U)
    eq_gens = eq_gens + _data_equality_polys(U)
    ineq_gens = ineq_gens + _data_residual_polys(U)
    prog = ConicProgram()
    x = prog.add_vars("x", n)
    lam = prog.add_var("lam")
    prog.add_ineq(LinExpr({lam: 1.0}))
    Q = sos.new_sos_matrix_var(prog, n, m, d, name="Q")
    A = sos.PolyMatrix.matrix_variable(n)
    eps = _strictness_scalar(prog, margin_probe)
    AQ = A.matmul(Q)
    top_left = Q - AQ.matmul(A.transpose())
    big = sos.block_poly_matrix(
        m,
        [[top_left, AQ.scale(-1.0)], [AQ.transpose().scale(-1.0), Q.scale(-1.0)]],
        [n, n])
    lam_block = np.block([[-(gamma ** 2) * np.eye(n), np.zeros((n, n))],
                          [np.zeros((n, n)), np.eye(n)]])
    cm = big.coeffs.setdefault((0,) * m, {})
    cm[lam] = cm.get(lam, np.zeros((2 * n, 2 * n))) + lam_block
    rhs_stab = sos.putinar_rhs(prog, 2 * n, m, d, ineq_gens, eq_gens, epsilon=eps,
                               name="Ms")
    sos.coeff_match(prog, big, rhs_stab)
    for i, h in enumerate(S.normals):
        lhs = sos.PolyMatrix.constant(m, np.array([[1.0]])) - Q.congruence(h.reshape(1, -1))
        rhs = sos.putinar_rhs(prog, 1, m, d, ineq_gens, eq_gens, name=f"sg{i}")
        sos.coeff_match(prog, lhs, rhs)
    lhs_mem = _membership_block(m, Q, x)
    rhs_mem = sos.putinar_rhs(prog, n + 1, m, d, ineq_gens, eq_gens, name="Mh")
    sos.coeff_match(prog, lhs_mem, rhs_mem)
    if margin_probe:
        prog.set_objective(eps * -1.0)
    else:
        _set_linear_objective(prog, x, c, c0)
    prog.meta.update({"x": x, "kind": "inf_nonlinear", "degree": d, "gamma": gamma,
                      "Q": Q, "eps": next(iter(eps.terms))})
    return prog


def inf_level_margin(S: HPolytope, U: UncertaintyState, d: int,
                     gamma: Optional[float] = None,
                     settings: Optional[SolverSettings] = None) -> float:
    """Optimal strictness margin eps* of the level-d certificate system.

    The probe maximizes eps with its lower bound relaxed to -1, which is
    always feasible (the zero certificate attains eps = 0), so solvers
    terminate cleanly; the level is usable iff the margin reaches EPS_FLOOR.
    """
    if gamma is None:
        prog = inf_linear_program(S, U, np.zeros(S.dim), d, margin_probe=True)
    else:
        prog = nonlinear_inf_program(S, U, gamma, np.zeros(S.dim), d,
                                     margin_probe=True)
    sol = conic.solve(prog, settings)
    if sol.status != conic.OPTIMAL:
        return float("nan")
    return -float(sol.objective)


def inf_level_feasible(S: HPolytope, U: UncertaintyState, d: int,
                       gamma: Optional[float] = None,
                       settings: Optional[SolverSettings] = None) -> bool:
    margin = inf_level_margin(S, U, d, gamma, settings)
    return bool(margin >= EPS_FLOOR)


# ---------------------------------------------------------------------------
# nonlinear one-step SOCP
# ---------------------------------------------------------------------------


def nonlinear_one_step_program(S: HPolytope, U: UncertaintyState,
                               env: NonlinearEnvelope, c,
                               c0: float = 0.0) -> ConicProgram:
    """One-step safe set for dynamics A x + g(x), ||g(x)||_inf <= gamma
    ||x||_p^d, with polytope uncertainty on A and residual-bounded data.

    Per facet i the robust constraint dualizes to

        sum_j mu_j v_j + sum_{kl} eta+_{kl} (gamma ||x_k||_p^d + (y_k)_l)
        + sum_{kl} eta-_{kl} (gamma ||x_k||_p^d - (y_k)_l)
        + gamma ||h_i||_1 t  <=  b_i

    with the matrix equality x h_i^T = sum_j mu_j V_j^T
    + sum_{kl} (eta+ - eta-)_{kl} x_k e_l^T and t >= ||x||_p^d.  The exact
    safe set is the x-projection together with the already-observed points.
    """
    if not isinstance(U.base, MatrixPolytope):
        raise TypeError("nonlinear_one_step_program requires a facet base set")
    n = S.dim
    gamma = env.gamma
    data = U.residual_data
    for (_, _, _, p) in data:
        if p not in (np.inf, "inf"):
            raise ValueError("one-step residual data must be inf-norm bounded")
    facets = list(zip(U.base.facet_mats, U.base.facet_vals))
    prog = ConicProgram()
    x = prog.add_vars("x", n)
    for h, b in zip(S.normals, S.offsets):
        prog.add_ineq(LinExpr({x[j]: -h[j] for j in range(n)}, b))
    t = None
    if gamma > 0:
        t = prog.add_var("t")
        conic.norm_power_epigraph(prog, env.p_norm, env.d_growth,
                                  [LinExpr.variable(xi) for xi in x],
                                  LinExpr.variable(t))
    for i, (h, b) in enumerate(zip(S.normals, S.offsets)):
        mu = prog.add_vars(f"mu{i}", len(facets))
        etap = [prog.add_vars(f"etap{i}_{k}", n) for k in range(len(data))]
        etam = [prog.add_vars(f"etam{i}_{k}", n) for k in range(len(data))]
        for v in mu + [w for grp in etap + etam for w in grp]:
            prog.add_ineq(LinExpr({v: 1.0}))
        scalar = LinExpr({}, -b)
        for j, (_, vj) in enumerate(facets):
            if vj != 0.0:
                scalar.terms[mu[j]] = scalar.terms.get(mu[j], 0.0) + vj
        for k, (xk, yk, rho, _) in enumerate(data):
            for ell in range(n):
                scalar.terms[etap[k][ell]] = scalar.terms.get(etap[k][ell], 0.0) \
                    + rho + yk[ell]
                scalar.terms[etam[k][ell]] = scalar.terms.get(etam[k][ell], 0.0) \
                    + rho - yk[ell]
        if gamma > 0:
            scalar.terms[t] = scalar.terms.get(t, 0.0) + gamma * float(np.sum(np.abs(h)))
        prog.add_ineq(-scalar)
        for p in range(n):
            for q in range(n):
                terms = {x[p]: h[q]}
                for j, (Vj, _) in enumerate(facets):
                    if Vj[q, p] != 0.0:
                        terms[mu[j]] = terms.get(mu[j], 0.0) - Vj[q, p]
                for k, (xk, _, _, _) in enumerate(data):
                    if xk[p] != 0.0:
                        terms[etap[k][q]] = terms.get(etap[k][q], 0.0) - xk[p]
                        terms[etam[k][q]] = terms.get(etam[k][q], 0.0) + xk[p]
                prog.add_eq(LinExpr(terms))
    _set_linear_objective(prog, x, c, c0)
    prog.meta.update({"x": x, "kind": "nonlinear_one_step", "gamma": gamma,
                      "observed": tuple(np.asarray(xk) for xk, *_ in data)})
    return prog


# ---------------------------------------------------------------------------
# scans
# ---------------------------------------------------------------------------


@dataclass
class ScanResult:
    mode: str
    plane: tuple
    polygon: Optional[np.ndarray] = None
    xs: Optional[np.ndarray] = None
    ys: Optional[np.ndarray] = None
    status: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = ["x,y,status"]
        if self.mode == "grid":
            for i, xv in enumerate(self.xs):
                for j, yv in enumerate(self.ys):
                    lines.append(f"{xv},{yv},{int(self.status[i, j])}")
        else:
            for px, py in self.polygon:
                lines.append(f"{px},{py},1")
        return "\n".join(lines) + "\n"

    def polygon_json(self) -> dict:
        return {"plane": list(self.plane),
                "vertices": self.polygon.tolist() if self.polygon is not None else []}


def boundary_scan(prog: ConicProgram, plane=(0, 1), directions: int = 360,
                  settings: Optional[SolverSettings] = None) -> ScanResult:
    """Support polygon of the plane projection of the program's safe set.

    Maximizes cos(theta) x_a + sin(theta) x_b for equally spaced angles; every
    returned vertex is the projection of a feasible (hence safe) point, so the
    polygon is an inner approximation of the convex projected set.
    """
    a, b = plane
    xa, xb = prog.meta["x"][a], prog.meta["x"][b]
    solver = BatchSolver(prog, settings)
    pts = []
    for theta in np.linspace(0.0, 2 * np.pi, directions, endpoint=False):
        obj = np.zeros(prog.num_vars)
        obj[xa] = -np.cos(theta)
        obj[xb] = -np.sin(theta)
        sol = solver.solve(objective=obj)
        if sol.status == conic.INFEASIBLE:
            return ScanResult("boundary", tuple(plane), polygon=np.zeros((0, 2)),
                              meta={"status": "infeasible"})
        if sol.status != conic.OPTIMAL:
            continue
        pts.append((sol.values[xa], sol.values[xb]))
    return ScanResult("boundary", tuple(plane),
                      polygon=np.asarray(pts).reshape(-1, 2))


def grid_scan(prog: ConicProgram, plane=(0, 1), xs=None, ys=None,
              resolution: int = 101, box=None,
              settings: Optional[SolverSettings] = None) -> ScanResult:
    """Classify plane grid points by feasibility with the remaining
    coordinates free; solver failures are recorded as UNKNOWN, never SAFE."""
    a, b = plane
    xa, xb = prog.meta["x"][a], prog.meta["x"][b]
    if xs is None or ys is None:
        if box is None:
            raise ValueError("grid_scan needs explicit axes or a bounding box")
        (lo_a, hi_a), (lo_b, hi_b) = box
        xs = np.linspace(lo_a, hi_a, resolution)
        ys = np.linspace(lo_b, hi_b, resolution)
    solver = BatchSolver(prog, settings, pin_indices=[xa, xb])
    status = np.full((len(xs), len(ys)), UNKNOWN, dtype=int)
    zero_obj = np.zeros(prog.num_vars)
    for i, xv in enumerate(xs):
        for j, yv in enumerate(ys):
            sol = solver.solve(objective=zero_obj, pins=np.array([xv, yv]))
            if sol.status == conic.OPTIMAL:
                status[i, j] = SAFE
            elif sol.status in (conic.INFEASIBLE,):
                status[i, j] = UNSAFE
    return ScanResult("grid", tuple(plane), xs=np.asarray(xs), ys=np.asarray(ys),
                      status=status)


def polygon_mask(polygon: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                 tol: float = 0.0) -> np.ndarray:
    """Boolean grid of points inside a convex polygon whose vertices are
    ordered by angle (as produced by boundary_scan)."""
    if polygon is None or len(polygon) < 3:
        return np.zeros((len(xs), len(ys)), dtype=bool)
    P = _dedupe_polygon(polygon)
    if len(P) < 3:
        return np.zeros((len(xs), len(ys)), dtype=bool)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    inside = np.ones_like(X, dtype=bool)
    for k in range(len(P)):
        p0 = P[k]
        p1 = P[(k + 1) % len(P)]
        cross = (p1[0] - p0[0]) * (Y - p0[1]) - (p1[1] - p0[1]) * (X - p0[0])
        inside &= cross >= -tol
    return inside


def _dedupe_polygon(polygon: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    out = []
    for p in polygon:
        if not out or np.linalg.norm(p - out[-1]) > tol:
            out.append(p)
    if len(out) > 1 and np.linalg.norm(out[0] - out[-1]) <= tol:
        out.pop()
    return np.asarray(out)


def polygon_area(polygon: np.ndarray) -> float:
    P = _dedupe_polygon(polygon) if polygon is not None and len(polygon) else polygon
    if P is None or len(P) < 3:
        return 0.0
    x, y = P[:, 0], P[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


# ---------------------------------------------------------------------------
# input diagnostics for the infinite-step modules
# ---------------------------------------------------------------------------


@dataclass
class InfStepDiagnostics:
    bounded: bool
    origin_interior: bool
    max_sampled_spectral_radius: float

    @property
    def ok(self) -> bool:
        return self.bounded and self.origin_interior \
            and self.max_sampled_spectral_radius < 1.0


def validate_inf_step_inputs(S: HPolytope, U: UncertaintyState, samples: int = 50,
                             seed: int = 0) -> InfStepDiagnostics:
    """Necessary-condition diagnostics for a full-dimensional infinite-step
    set: U bounded, origin interior to S, sampled spectral radii < 1."""
    from safelearn import oracle

    n = U.n
    bounded = True
    if isinstance(U.base, MatrixPolytope):
        proj = U.base.as_projected(U.equality_data)
        for i in range(n * n):
            for sign in (1.0, -1.0):
                prog, a, _ = proj._base_program()
                prog.set_objective(LinExpr({a[i]: sign}))
                sol = conic.solve(prog)
                if sol.status == conic.UNBOUNDED:
                    bounded = False
                    break
            if not bounded:
                break
    rho = 0.0
    try:
        mats = oracle.sample_uncertainty(U, samples, seed)
        rho = max(float(np.max(np.abs(np.linalg.eigvals(M)))) for M in mats)
    except Exception:
        rho = float("nan")
    return InfStepDiagnostics(bounded=bounded,
                              origin_interior=S.origin_interior,
                              max_sampled_spectral_radius=rho)
