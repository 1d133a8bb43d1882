"""Safe-learning algorithms: greedy safe queries, uncertainty shrinking, and
exact recovery of the true dynamics.

Three algorithms are provided, one per safety horizon:

* :func:`one_step_learn`      n one-step-safe queries (or an impossibility
                              certificate), greedy LP/SDP + basis mixing
* :func:`two_step_learn`      ceil(n/2) two-step-safe trajectories, greedy
                              S-lemma SDP + full-dimensional hull mixing
* :func:`inf_step_learn`      one infinite-step-safe trajectory of length n,
                              greedy SOS program + randomized interior mixing

plus the offline comparator :func:`offline_one_step_learn` and the known-
dynamics cost lower bound.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from safelearn import conic, geometry, oracle, safesets
from safelearn.conic import ConicProgram, LinExpr, SolverSettings
from safelearn.geometry import HPolytope, MatrixEllipsoid, MatrixPolytope, unvec
from safelearn.plant import Plant, Trajectory, observe
from safelearn.safesets import (
    SingletonUncertainty,
    UncertaintyState,
    one_step_program,
    one_step_region,
    two_step_program,
)

__all__ = [
    "LearnConfig",
    "LearnReport",
    "NotFullDimensional",
    "one_step_learn",
    "offline_one_step_learn",
    "learning_cost_lower_bound",
    "full_dim_hull_points",
    "two_step_learn",
    "inf_step_learn",
    "truncate_trajectory",
]

RECOVERED = "recovered"
IMPOSSIBLE = "impossible"
BUDGET_EXHAUSTED = "budget_exhausted"


class NotFullDimensional(RuntimeError):
    """The two-step safe set has empty interior; hull mixing is unavailable."""


@dataclass
class LearnConfig:
    epsilon: float = 0.01
    singleton_tol: float = 1e-6
    rank_tol: float = 1e-8
    seed: int = 0
    max_steps: int = 100
    settings: Optional[SolverSettings] = None

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0):
            raise ValueError("mixing parameter must lie in (0, 1]")


@dataclass
class LearnReport:
    outcome: str
    A_hat: Optional[np.ndarray] = None
    points: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    trajectories: list = field(default_factory=list)
    summaries: list = field(default_factory=list)
    notes: str = ""

    @property
    def total_cost(self) -> float:
        return float(sum(self.costs))

    @property
    def recovered(self) -> bool:
        return self.outcome == RECOVERED

    def to_json(self) -> dict:
        return {
            "outcome": self.outcome,
            "A_hat": None if self.A_hat is None else np.asarray(self.A_hat).tolist(),
            "points": [np.asarray(p).tolist() for p in self.points],
            "costs": list(map(float, self.costs)),
            "total_cost": self.total_cost,
            "trajectories": [t.points.tolist() for t in self.trajectories],
            "summaries": self.summaries,
            "notes": self.notes,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)


def _cost_of(c, c0, x) -> float:
    return float(np.asarray(c, dtype=float) @ np.asarray(x, dtype=float)) + c0


def _independent(candidate, chosen, rank_tol) -> bool:
    stack = np.array(list(chosen) + [np.asarray(candidate, dtype=float)])
    sv = np.linalg.svd(stack, compute_uv=False)
    return sv[-1] > rank_tol * max(sv[0], 1.0)


def _uncertainty_summary(U: UncertaintyState) -> dict:
    """Support intervals of trace and entry-sum over the current set, the
    projection convention used for uncertainty-shrinking figures."""
    n = U.n
    out = {}
    directions = {"trace": geometry.vec(np.eye(n)),
                  "entry_sum": geometry.vec(np.ones((n, n)))}
    if isinstance(U.base, MatrixPolytope):
        proj = U.base.as_projected(U.equality_data)
        for name, w in directions.items():
            vals = []
            for sign in (1.0, -1.0):
                prog, a, _ = proj._base_program()
                prog.set_objective(LinExpr({a[k]: sign * w[k] for k in range(n * n)
                                            if w[k] != 0.0}))
                sol = conic.solve(prog)
                vals.append(sign * sol.objective if sol.optimal else float("nan"))
            out[name] = [min(vals), max(vals)]
    else:
        try:
            param = safesets.eliminate_equalities(U)
        except SingletonUncertainty as exc:
            A = exc.matrix
            out["trace"] = [float(np.trace(A))] * 2
            out["entry_sum"] = [float(np.sum(A))] * 2
            return out
        for name, w in directions.items():
            base = float(w @ geometry.vec(param.A_hat))
            lin = param.basis.T @ w
            _, hi = oracle.trs_maximize(np.zeros((param.n_hat, param.n_hat)), lin,
                                        base, param.P_hat, param.r_hat, param.s_hat)
            _, neg = oracle.trs_maximize(np.zeros((param.n_hat, param.n_hat)), -lin,
                                         -base, param.P_hat, param.r_hat, param.s_hat)
            out[name] = [-neg, hi]
    return out


def _matrix_singleton(U: UncertaintyState, tol: float):
    """The unique matrix of U when it is a singleton, else None."""
    if isinstance(U.base, MatrixPolytope):
        proj = U.base.as_projected(U.equality_data)
        v = geometry.is_singleton(proj, tol)
        return None if v is None else unvec(v, U.n)
    try:
        safesets.eliminate_equalities(U)
    except SingletonUncertainty as exc:
        return exc.matrix
    return None


def _solve_for_point(prog: ConicProgram, settings) -> Optional[np.ndarray]:
    sol = conic.solve(prog, settings)
    if not sol.optimal:
        return None
    return sol.values[np.asarray(prog.meta["x"])]


def _recover_from_columns(X: np.ndarray, Y: np.ndarray, rank_tol: float):
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] <= rank_tol * max(sv[0], 1.0):
        return None
    return Y @ np.linalg.inv(X)


# ---------------------------------------------------------------------------
# one-step learning
# ---------------------------------------------------------------------------


def one_step_learn(S: HPolytope, base, c, cfg: LearnConfig, plant: Plant,
                   c0: float = 0.0) -> LearnReport:
    """Greedy one-step safe learning.

    Per step: singleton check on the current uncertainty set (early success),
    greedy safe query, and, when the optimizer is linearly dependent on the
    points so far, mixing with a member of a spanning basis of the current
    one-step safe set.  Declares impossibility when no independent direction
    exists, which certifies that no algorithm can safely learn the dynamics.
    """
    n = S.dim
    U = UncertaintyState(base)
    report = LearnReport(outcome=BUDGET_EXHAUSTED)
    ellipsoidal = isinstance(base, MatrixEllipsoid)
    for k in range(n):
        A_pin = _matrix_singleton(U, cfg.singleton_tol)
        if A_pin is not None:
            report.outcome = RECOVERED
            report.A_hat = A_pin
            report.notes = f"uncertainty became a singleton after {k} queries"
            return report
        if ellipsoidal:
            prog = two_step_program(S, U, c, c0, steps=1)
        else:
            prog = one_step_program(S, U, c, c0)
        xstar = _solve_for_point(prog, cfg.settings)
        if xstar is None:
            report.outcome = IMPOSSIBLE
            report.notes = "one-step safe set is empty"
            return report
        if _independent(xstar, report.points, cfg.rank_tol):
            x_next = xstar
        else:
            x_next = None
            for z in _basis_of_current_set(S, U, cfg, ellipsoidal):
                if _independent(z, report.points, cfg.rank_tol):
                    x_next = (1.0 - cfg.epsilon) * xstar + cfg.epsilon * z
                    break
            if x_next is None:
                report.outcome = IMPOSSIBLE
                report.notes = ("no direction of the one-step safe set is "
                                "independent of the queries made so far")
                return report
        traj = observe(plant, x_next, 1, origin=f"one_step[{k}]")
        report.points.append(np.asarray(x_next, dtype=float))
        report.costs.append(_cost_of(c, c0, x_next))
        report.trajectories.append(traj)
        U = U.with_equality(x_next, traj.points[1])
        report.summaries.append(_uncertainty_summary(U))
    X = np.column_stack(report.points)
    Y = np.column_stack([t.points[1] for t in report.trajectories])
    A_hat = _recover_from_columns(X, Y, cfg.rank_tol)
    if A_hat is None:
        report.outcome = BUDGET_EXHAUSTED
        report.notes = "query matrix is singular"
        return report
    report.outcome = RECOVERED
    report.A_hat = A_hat
    return report


def _basis_of_current_set(S, U, cfg, ellipsoidal):
    if not ellipsoidal:
        region = one_step_region(S, U)
        return geometry.span_basis(region, tol=cfg.rank_tol * 10)
    try:
        return full_dim_hull_points(S, U, cfg, steps=1)
    except NotFullDimensional:
        return []


def offline_one_step_learn(S: HPolytope, base: MatrixPolytope, c,
                           cfg: LearnConfig, plant: Plant,
                           c0: float = 0.0) -> LearnReport:
    """Offline comparator: all n queries are fixed before any observation as
    epsilon-mixtures of the initial greedy optimum with a basis of the
    initial one-step safe set; fails when that set spans no basis of R^n."""
    if not isinstance(base, MatrixPolytope):
        raise TypeError("offline one-step learning expects a facet base set")
    n = S.dim
    U = UncertaintyState(base)
    report = LearnReport(outcome=IMPOSSIBLE)
    A_pin = _matrix_singleton(U, cfg.singleton_tol)
    if A_pin is not None:
        report.outcome = RECOVERED
        report.A_hat = A_pin
        report.notes = "initial uncertainty is already a singleton"
        return report
    region = one_step_region(S, U)
    basis = geometry.span_basis(region, tol=cfg.rank_tol * 10)
    if len(basis) < n:
        report.notes = (f"initial one-step safe set spans only {len(basis)} "
                        f"of {n} dimensions")
        return report
    prog = one_step_program(S, U, c, c0)
    xstar = _solve_for_point(prog, cfg.settings)
    if xstar is None:
        report.notes = "one-step safe set is empty"
        return report
    for k in range(n):
        x_k = (1.0 - cfg.epsilon) * xstar + cfg.epsilon * basis[k]
        traj = observe(plant, x_k, 1, origin=f"offline[{k}]")
        report.points.append(x_k)
        report.costs.append(_cost_of(c, c0, x_k))
        report.trajectories.append(traj)
    X = np.column_stack(report.points)
    Y = np.column_stack([t.points[1] for t in report.trajectories])
    A_hat = _recover_from_columns(X, Y, cfg.rank_tol)
    if A_hat is None:
        report.outcome = BUDGET_EXHAUSTED
        report.notes = "query matrix is singular"
        return report
    report.outcome = RECOVERED
    report.A_hat = A_hat
    return report


def learning_cost_lower_bound(S: HPolytope, A_star, c, steps: int = 1,
                              c0: float = 0.0,
                              settings: Optional[SolverSettings] = None) -> float:
    """Cost lower bound available to any safe-learning algorithm: with the
    true dynamics known, the per-query cost cannot beat the optimum over the
    true safe set, and at least n (one-step) or ceil(n/2) (two-step) queries
    are required.  Returns +inf when even the true safe set is empty."""
    n = S.dim
    A_star = np.asarray(A_star, dtype=float)
    prog = ConicProgram()
    x = prog.add_vars("x", n)
    mats = [np.eye(n), A_star]
    if steps >= 2:
        mats.append(A_star @ A_star)
    for M in mats:
        for row, b in zip(S.normals @ M, S.offsets):
            prog.add_ineq(LinExpr({x[j]: -row[j] for j in range(n) if row[j] != 0.0},
                                  b))
    cvec = np.asarray(c, dtype=float)
    prog.set_objective(LinExpr({x[i]: cvec[i] for i in range(n) if cvec[i] != 0.0}, c0))
    sol = conic.solve(prog, settings)
    if sol.status == conic.INFEASIBLE:
        return float("inf")
    if not sol.optimal:
        raise RuntimeError(f"lower-bound LP failed ({sol.status})")
    queries = n if steps == 1 else (n + 1) // 2
    return queries * float(sol.objective)


# ---------------------------------------------------------------------------
# two-step learning
# ---------------------------------------------------------------------------


def full_dim_hull_points(S: HPolytope, U: UncertaintyState, cfg: LearnConfig,
                         steps: int = 2) -> list:
    """2n points of the (one- or two-)step safe set whose convex hull is
    full-dimensional, by coordinate-wise support solves with midpoint pinning.

    For k = 1..n the k-th coordinate is minimized and maximized subject to
    the coordinates already processed being pinned to their midpoints; a
    zero gap in any coordinate certifies that the set is not full-dimensional
    (raises :class:`NotFullDimensional`).
    """
    n = S.dim
    mids = []
    points = []
    for k in range(n):
        pair = []
        for sign in (1.0, -1.0):
            e_k = np.zeros(n)
            e_k[k] = sign
            prog = two_step_program(S, U, e_k, steps=steps)
            xidx = prog.meta["x"]
            for i, mid in enumerate(mids):
                prog.add_eq(LinExpr({xidx[i]: 1.0}, -mid))
            pt = _solve_for_point(prog, cfg.settings)
            if pt is None:
                raise NotFullDimensional(
                    f"support solve failed while pinning coordinate {k}")
            pair.append(pt)
        gap = pair[1][k] - pair[0][k]
        if gap <= cfg.singleton_tol:
            raise NotFullDimensional(
                f"coordinate {k} collapses to a point (gap {gap:.2e})")
        mids.append(0.5 * (pair[0][k] + pair[1][k]))
        points.extend(pair)
    return points


def two_step_learn(S: HPolytope, base: MatrixEllipsoid, c, cfg: LearnConfig,
                   plant: Plant, c0: float = 0.0) -> LearnReport:
    """Greedy two-step safe learning with ceil(n/2) length-two trajectories.

    Each query mixes the greedy optimum with a random convex combination of
    the 2n full-dimensional hull points (Dirichlet weights, seeded), which
    keeps the query safe by convexity and generically guarantees that the
    stacked linear system identifies the dynamics.
    """
    n = S.dim
    rng = np.random.default_rng(cfg.seed)
    U = UncertaintyState(base)
    report = LearnReport(outcome=BUDGET_EXHAUSTED)
    hull = full_dim_hull_points(S, U, cfg, steps=2)
    m = (n + 1) // 2
    for k in range(m):
        A_pin = _matrix_singleton(U, cfg.singleton_tol)
        if A_pin is not None:
            report.outcome = RECOVERED
            report.A_hat = A_pin
            report.notes = f"uncertainty became a singleton after {k} trajectories"
            return report
        prog = two_step_program(S, U, c, c0, steps=2)
        xstar = _solve_for_point(prog, cfg.settings)
        if xstar is None:
            report.outcome = IMPOSSIBLE
            report.notes = "two-step safe set is empty"
            return report
        lam = rng.dirichlet(np.ones(2 * n))
        mix = np.sum([li * zi for li, zi in zip(lam, hull)], axis=0)
        x_next = (1.0 - cfg.epsilon) * xstar + cfg.epsilon * mix
        traj = observe(plant, x_next, 2, origin=f"two_step[{k}]")
        report.points.append(np.asarray(x_next))
        report.costs.append(_cost_of(c, c0, x_next))
        report.trajectories.append(traj)
        U = U.with_trajectory_pairs(traj.points)
        report.summaries.append(_uncertainty_summary(U))
    X = np.column_stack(report.points)
    Y1 = np.column_stack([t.points[1] for t in report.trajectories])
    Y2 = np.column_stack([t.points[2] for t in report.trajectories])
    K = np.hstack([X, Y1])
    R = np.hstack([Y1, Y2])
    G = K @ K.T
    sv = np.linalg.svd(K, compute_uv=False)
    if sv[-1] <= cfg.rank_tol * max(sv[0], 1.0):
        report.outcome = BUDGET_EXHAUSTED
        report.notes = ("stacked trajectory matrix is rank deficient "
                        f"(singular values {sv})")
        return report
    report.outcome = RECOVERED
    report.A_hat = R @ K.T @ np.linalg.inv(G)
    return report


# ---------------------------------------------------------------------------
# infinite-step learning
# ---------------------------------------------------------------------------


def inf_step_learn(S: HPolytope, base, c, cfg: LearnConfig, plant: Plant,
                   d: int, c0: float = 0.0,
                   gamma: Optional[float] = None) -> LearnReport:
    """Single-trajectory infinite-step safe learning.

    Initializes at an epsilon-mixture of the greedy optimum of the level-d
    certificate program with a second, randomly-oriented support point of the
    same program (both projections of feasible points, so the mixture is
    infinite-step safe by convexity), observes n steps, and solves the
    resulting Krylov system.  A singular Krylov matrix is a measure-zero
    event and is surfaced, never silently retried.
    """
    n = S.dim
    rng = np.random.default_rng(cfg.seed)
    U = UncertaintyState(base)
    report = LearnReport(outcome=BUDGET_EXHAUSTED)
    if not safesets.inf_level_feasible(S, U, d, gamma, cfg.settings):
        raise ValueError(f"infinite-step program is infeasible at level {d}")
    if gamma is None:
        prog = safesets.inf_linear_program(S, U, c, d, c0)
    else:
        prog = safesets.nonlinear_inf_program(S, U, gamma, c, d, c0)
    sol = conic.solve(prog, cfg.settings)
    if not sol.optimal:
        raise RuntimeError(f"infinite-step program failed ({sol.status})")
    xidx = np.asarray(prog.meta["x"])
    xstar = sol.values[xidx]
    direction = rng.normal(size=n)
    direction /= np.linalg.norm(direction)
    solver = conic.BatchSolver(prog, cfg.settings)
    obj = np.zeros(prog.num_vars)
    obj[xidx] = direction
    alt = solver.solve(objective=obj)
    x_rand = alt.values[xidx] if alt.optimal else xstar
    x0 = (1.0 - cfg.epsilon) * xstar + cfg.epsilon * x_rand
    traj = observe(plant, x0, n, origin="inf_step")
    report.points.append(x0)
    report.costs.append(_cost_of(c, c0, x0))
    report.trajectories.append(traj)
    K = np.column_stack([traj.points[t] for t in range(n)])
    R = np.column_stack([traj.points[t + 1] for t in range(n)])
    sv = np.linalg.svd(K, compute_uv=False)
    if sv[-1] <= cfg.rank_tol * max(sv[0], 1.0):
        report.outcome = BUDGET_EXHAUSTED
        report.notes = (f"Krylov matrix is singular (singular values {sv}); "
                        "the initialization lies in the exceptional null set")
        return report
    report.outcome = RECOVERED
    report.A_hat = R @ np.linalg.inv(K)
    return report


def truncate_trajectory(traj: Trajectory, n: int) -> Trajectory:
    """First n+1 points of a trajectory; longer tails add no information to
    the equality-constraint construction (Cayley-Hamilton truncation)."""
    if len(traj) <= n + 1:
        return traj
    return Trajectory(traj.points[: n + 1].copy(), origin=traj.origin)
