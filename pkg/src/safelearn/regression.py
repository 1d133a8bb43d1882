"""Model fitting on safely collected data, with and without certified
envelope constraints.

The model class is f(x) = A x + g(x) with each residual coordinate a
homogeneous quadratic form.  The constrained fit keeps A inside its
uncertainty polytope, keeps the data residuals inside the declared envelope,
and certifies |g_j(x)| <= gamma on the whole safety region through
sum-of-squares multipliers, all inside one conic solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from safelearn import conic, sos
from safelearn.conic import ConicProgram, LinExpr, SolverSettings
from safelearn.geometry import HPolytope, MatrixPolytope
from safelearn.plant import Plant

__all__ = [
    "QuadraticResidualModel",
    "fit_least_squares",
    "fit_sos_constrained",
    "rmse",
    "sample_region",
]


@dataclass
class QuadraticResidualModel:
    """f(x) = A x + (x^T G_j x)_j with symmetric quadratic coefficient
    matrices G_j, one per output coordinate."""

    A: np.ndarray
    G: list
    certified_gamma: Optional[float] = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.G = [np.asarray(Gj, dtype=float) for Gj in self.G]

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def residual(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([float(x @ Gj @ x) for Gj in self.G])

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.A @ x + self.residual(x)

    def loss(self, data) -> float:
        return float(sum(np.sum((self.predict(x) - y) ** 2) for x, y in data))

    def to_json(self) -> dict:
        return {"A": self.A.tolist(), "G": [G.tolist() for G in self.G],
                "certified_gamma": self.certified_gamma}

    @classmethod
    def from_json(cls, doc: dict) -> "QuadraticResidualModel":
        return cls(np.array(doc["A"]), [np.array(G) for G in doc["G"]],
                   doc.get("certified_gamma"))


def _quad_features(x: np.ndarray) -> np.ndarray:
    """Upper-triangle feature map phi(x) with x^T G x = phi(x) . coeffs for
    the packing G_ij (i <= j) with off-diagonals counted once."""
    n = x.shape[0]
    out = []
    for i in range(n):
        for j in range(i, n):
            out.append(x[i] * x[j] * (1.0 if i == j else 2.0))
    return np.array(out)


def _unpack_quad(coeffs: np.ndarray, n: int) -> np.ndarray:
    G = np.zeros((n, n))
    k = 0
    for i in range(n):
        for j in range(i, n):
            G[i, j] = G[j, i] = coeffs[k]
            k += 1
    return G


def fit_least_squares(data: Sequence, ridge: float = 1e-10) -> QuadraticResidualModel:
    """Unconstrained least-squares fit of (A, g) via the normal equations,
    with a Tikhonov fallback when the feature Gram is rank deficient (the
    minimum-norm solution is returned in that case)."""
    data = [(np.asarray(x, dtype=float), np.asarray(y, dtype=float)) for x, y in data]
    if not data:
        raise ValueError("at least one data point is required")
    n = data[0][0].shape[0]
    Phi = np.array([np.concatenate([x, _quad_features(x)]) for x, _ in data])
    Y = np.array([y for _, y in data])
    gram = Phi.T @ Phi
    rhs = Phi.T @ Y
    try:
        cond = np.linalg.cond(gram)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e12:
        theta = np.linalg.solve(gram + ridge * np.eye(gram.shape[0]), rhs)
    else:
        theta = np.linalg.solve(gram, rhs)
    A = theta[:n].T
    G = [_unpack_quad(theta[n:, j], n) for j in range(n)]
    return QuadraticResidualModel(A, G)


def fit_sos_constrained(data: Sequence, U_A: MatrixPolytope, gamma: float,
                        S: HPolytope,
                        settings: Optional[SolverSettings] = None) -> QuadraticResidualModel:
    """Least-squares fit subject to A in U_A, ||A x_k - y_k||_inf <= gamma,
    and certified envelope bounds gamma +- g_j(x) >= 0 on S.

    The envelope certificates use degree-2 SOS multipliers:
    gamma +- g_j(x) = sigma_0(x) + sum_i sigma_i(x) (b_i - h_i^T x).
    The squared loss is minimized through a second-order cone epigraph, so
    the whole fit is a single conic solve; infeasibility signals data that
    contradict the declared envelope.
    """
    data = [(np.asarray(x, dtype=float), np.asarray(y, dtype=float)) for x, y in data]
    if not data:
        raise ValueError("at least one data point is required")
    n = data[0][0].shape[0]
    prog = ConicProgram()
    a_idx = np.array(prog.add_vars("A", n * n)).reshape(n, n, order="F")
    g_idx = []
    for j in range(n):
        g_idx.append({(i, k): prog.add_var(f"G{j}[{i},{k}]")
                      for i in range(n) for k in range(i, n)})

    def row_expr(p: int, x: np.ndarray) -> LinExpr:
        terms = {}
        for q in range(n):
            if x[q] != 0.0:
                terms[int(a_idx[p, q])] = terms.get(int(a_idx[p, q]), 0.0) + x[q]
        return LinExpr(terms)

    def resid_expr(j: int, x: np.ndarray, y: np.ndarray) -> LinExpr:
        e = row_expr(j, x) - float(y[j])
        for (i, k), var in g_idx[j].items():
            coef = x[i] * x[k] * (1.0 if i == k else 2.0)
            if coef != 0.0:
                e.terms[var] = e.terms.get(var, 0.0) + coef
        return e

    # squared-loss epigraph: || all residual coordinates ||^2 <= t
    t = prog.add_var("loss")
    residuals = [resid_expr(j, x, y) for x, y in data for j in range(n)]
    prog.add_soc(LinExpr({t: 1.0}, 1.0),
                 [e * 2.0 for e in residuals] + [LinExpr({t: -1.0}, 1.0)])
    # A stays in its uncertainty polytope
    for V, v in zip(U_A.facet_mats, U_A.facet_vals):
        terms = {}
        for p in range(n):
            for q in range(n):
                if V[p, q] != 0.0:
                    terms[int(a_idx[p, q])] = terms.get(int(a_idx[p, q]), 0.0) + V[p, q]
        prog.add_ineq(LinExpr({k: -w for k, w in terms.items()}, float(v)))
    # data residuals against the linear part stay inside the envelope
    for x, y in data:
        for p in range(n):
            e = row_expr(p, x) - float(y[p])
            prog.add_ineq(gamma - e)
            prog.add_ineq(gamma + e)
    # certified |g_j| <= gamma on S via degree-2 SOS multipliers
    gens = [sos.affine_poly(n, float(b), -h) for h, b in zip(S.normals, S.offsets)]
    for j in range(n):
        for sign in (1.0, -1.0):
            lhs = sos.PolyMatrix(n, 1)
            lhs.coeffs[(0,) * n] = {None: np.array([[gamma]])}
            for (i, k), var in g_idx[j].items():
                mono = [0] * n
                mono[i] += 1
                mono[k] += 1
                coef = sign * (1.0 if i == k else 2.0)
                lhs.coeffs.setdefault(tuple(mono), {})[var] = np.array([[coef]])
            rhs = sos.putinar_rhs(prog, 1, n, 2, ineq_generators=gens,
                                  name=f"env{j}{'p' if sign > 0 else 'm'}")
            sos.coeff_match(prog, lhs, rhs)
    prog.set_objective(LinExpr({t: 1.0}))
    sol = conic.solve(prog, settings)
    if sol.status == conic.INFEASIBLE:
        raise ValueError("data contradict the declared growth envelope")
    if not sol.optimal:
        raise RuntimeError(f"constrained fit failed ({sol.status})")
    A = sol.values[a_idx]
    G = []
    for j in range(n):
        coeffs = np.array([sol.values[g_idx[j][(i, k)]]
                           for i in range(n) for k in range(i, n)])
        G.append(_unpack_quad(coeffs, n))
    return QuadraticResidualModel(A, G, certified_gamma=gamma)


def explore_nonlinear_one_step(S: HPolytope, base: MatrixPolytope,
                               env, plant: Plant, steps: int, seed: int,
                               mix: float = 0.3,
                               settings: Optional[SolverSettings] = None):
    """Safe exploration against an unknown nonlinear system: repeatedly
    optimize a random unit direction over the current one-step safe set,
    observe, and fold the observation into the residual-bounded uncertainty.

    Greedy support points for random directions are vertices, and a pure
    vertex stream can leave state directions unexcited indefinitely (an
    unobserved direction stays expensive, so no direction ever selects it).
    Each query is therefore mixed, with weight ``mix``, toward a random
    convex combination of the 2n coordinate support points of the *initial*
    safe set; those lie in every later safe set, so the mixture stays safe
    by convexity while keeping the collected data well conditioned.

    Returns (data, states) where data are the observed (x, y) pairs and
    states[k] is the uncertainty state *under which* the k-th query was
    chosen (so oracles can re-verify each query post hoc).
    """
    from safelearn.safesets import UncertaintyState, nonlinear_one_step_program

    rng = np.random.default_rng(seed)
    U = UncertaintyState(base)
    n = S.dim
    anchors = []
    for i in range(n):
        for sign in (1.0, -1.0):
            e = np.zeros(n)
            e[i] = sign
            prog = nonlinear_one_step_program(S, UncertaintyState(base), env, e)
            sol = conic.solve(prog, settings)
            if not sol.optimal:
                raise RuntimeError(f"anchor solve failed ({sol.status})")
            anchors.append(sol.values[np.asarray(prog.meta["x"])])
    data = []
    states = []
    for k in range(steps):
        direction = rng.normal(size=n)
        direction /= np.linalg.norm(direction)
        prog = nonlinear_one_step_program(S, U, env, direction)
        sol = conic.solve(prog, settings)
        if not sol.optimal:
            raise RuntimeError(f"exploration solve failed at step {k} ({sol.status})")
        x_greedy = sol.values[np.asarray(prog.meta["x"])]
        lam = rng.dirichlet(np.ones(2 * n))
        spread = np.sum([li * zi for li, zi in zip(lam, anchors)], axis=0)
        x = (1.0 - mix) * x_greedy + mix * spread
        y = plant.step(x)
        states.append(U)
        data.append((x, y))
        if env.p_norm in (np.inf, "inf"):
            base_norm = float(np.max(np.abs(x)))
        else:
            base_norm = float(np.linalg.norm(x, ord=env.p_norm))
        rho = env.gamma * base_norm ** env.d_growth
        U = U.with_residual(x, y, rho, np.inf)
    return data, states


def sample_region(S: HPolytope, count: int, seed: int) -> np.ndarray:
    """Uniform samples on S by rejection inside its bounding box."""
    rng = np.random.default_rng(seed)
    lo, hi = S.bounding_box()
    out = []
    while len(out) < count:
        x = rng.uniform(lo, hi)
        if S.contains(x):
            out.append(x)
    return np.array(out)


def rmse(model, plant: Plant, test_points: np.ndarray) -> float:
    """Root-mean-square prediction error against the true dynamics."""
    errs = [np.sum((model.predict(z) - plant.step(z)) ** 2) for z in test_points]
    return float(np.sqrt(np.mean(errs)))
