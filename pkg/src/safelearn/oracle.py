"""Independent brute-force verifiers for every safe-set claim.

Nothing here trusts the dual/SOS reformulations: robust values are computed
by solving the inner optimization over the matrix set directly (LP/SOCP for
linear objectives, an exact trust-region solve for the two-step quadratics),
and infinite-step claims are checked by rolling sampled dynamics forward.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from safelearn import conic
from safelearn.conic import ConicProgram, LinExpr, SolverSettings
from safelearn.geometry import HPolytope, MatrixEllipsoid, MatrixPolytope, unvec, vec
from safelearn.safesets import AffineParametrization, UncertaintyState

__all__ = [
    "robust_linear_max",
    "robust_quadratic_max",
    "trs_maximize",
    "sample_uncertainty",
    "check_T_step_safe",
    "rollout_safe_mask",
    "outer_inf_set",
]


def robust_linear_max(U: UncertaintyState, h, x,
                      settings: Optional[SolverSettings] = None) -> float:
    """max_{A in U} h^T A x, solved directly over the n^2 matrix entries.

    This is the exact robust value that the one-step dual reformulation must
    dominate; unbounded inner problems report +inf.
    """
    from safelearn.safesets import _matrix_membership_blocks

    n = U.n
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    prog = ConicProgram()
    a = prog.add_vars("a", n * n)
    _matrix_membership_blocks(prog, a, U)
    w = np.kron(x, h)  # h^T A x = kron(x, h) . vec(A)
    prog.set_objective(LinExpr({a[k]: -w[k] for k in range(n * n) if w[k] != 0.0}))
    sol = conic.solve(prog, settings)
    if sol.status == conic.UNBOUNDED:
        return float("inf")
    if sol.status != conic.OPTIMAL:
        raise RuntimeError(f"inner robust LP failed ({sol.status})")
    return -float(sol.objective)


# ---------------------------------------------------------------------------
# exact trust-region subproblem
# ---------------------------------------------------------------------------


def _trs_minimize(B: np.ndarray, g: np.ndarray, radius: float = 1.0,
                  hard_tol: float = 1e-10):
    """Global minimum of 0.5 u^T B u + g^T u over the ball ||u|| <= radius.

    Closed-form via eigendecomposition and the secular equation, including
    the hard case (multiplier at the smallest eigenvalue with the gradient
    orthogonal to its eigenspace, resolved along the eigenvector ridge).
    Returns (minimizer, value).
    """
    B = (B + B.T) / 2
    lam, V = np.linalg.eigh(B)
    gh = V.T @ g
    lo = max(0.0, -lam[0])

    def u_of(mu):
        denom = lam + mu
        w = np.zeros_like(gh)
        nz = np.abs(denom) > hard_tol
        w[nz] = -gh[nz] / denom[nz]
        return w

    def norm_of(mu):
        return float(np.linalg.norm(u_of(mu)))

    # interior solution when B is PSD and the Newton step fits
    if lam[0] >= -hard_tol:
        active = np.abs(lam) <= hard_tol
        if np.all(np.abs(gh[active]) <= hard_tol):
            u = u_of(0.0)
            if np.linalg.norm(u) <= radius + hard_tol:
                w = V @ u
                return w, float(0.5 * w @ B @ w + g @ w)
    # boundary: find mu >= lo with ||u(mu)|| = radius
    eigto_lo = np.abs(lam + lo) <= max(hard_tol, hard_tol * abs(lam[0]))
    grad_blocked = np.any(np.abs(gh[eigto_lo]) > hard_tol)
    if not grad_blocked and norm_of(lo) <= radius:
        # hard case: pad along the bottom eigenspace to reach the boundary
        u = u_of(lo)
        gap = radius ** 2 - float(u @ u)
        tau = np.sqrt(max(gap, 0.0))
        idx = int(np.argmax(eigto_lo))
        u = u + tau * np.eye(len(lam))[idx]
        w = V @ u
        return w, float(0.5 * w @ B @ w + g @ w)
    hi = lo + 1.0
    while norm_of(hi) > radius:
        hi = lo + (hi - lo) * 4.0
        if hi > 1e18:
            break
    mu_lo, mu_hi = lo, hi
    for _ in range(300):
        mid = 0.5 * (mu_lo + mu_hi)
        if norm_of(mid) > radius:
            mu_lo = mid
        else:
            mu_hi = mid
        if mu_hi - mu_lo <= 1e-15 * max(1.0, mu_hi):
            break
    u = u_of(mu_hi)
    nrm = np.linalg.norm(u)
    if nrm > 0:
        u = u * (radius / nrm)
    w = V @ u
    return w, float(0.5 * w @ B @ w + g @ w)


def trs_maximize(C: np.ndarray, d: np.ndarray, e: float,
                 P: np.ndarray, r: np.ndarray, s: float):
    """Exact global maximum of a^T C a + d^T a + e over {a : a^T P a + r^T a
    + s <= 0} with P > 0; returns (argmax, value)."""
    P = (P + P.T) / 2
    center = np.linalg.solve(P, -np.asarray(r, dtype=float) / 2.0)
    rho2 = float(center @ P @ center + r @ center + s)
    if rho2 > 1e-12:
        raise ValueError("empty ellipsoid")
    radius2 = max(-rho2, 0.0)
    if radius2 <= 1e-300:
        val = float(center @ C @ center + d @ center + e)
        return center, val
    L = np.linalg.cholesky(P)
    rho = np.sqrt(radius2)
    Li = np.linalg.inv(L)
    H = rho ** 2 * (Li @ C @ Li.T)
    g = rho * (Li @ (2.0 * C @ center + d))
    f0 = float(center @ C @ center + d @ center + e)
    u, vmin = _trs_minimize(-2.0 * H, -g, 1.0)
    a = center + rho * (Li.T @ u)
    return a, f0 - vmin


def robust_quadratic_max(param: AffineParametrization, h, x,
                         steps: int = 2) -> float:
    """max over the eliminated-chart ellipsoid of h^T g(a)^steps x, solved
    exactly as a trust-region subproblem after whitening."""
    h = np.asarray(h, dtype=float)
    x = np.asarray(x, dtype=float)
    nh = param.n_hat
    basis = param.basis_matrices()
    A_hat = param.A_hat
    if steps == 1:
        C = np.zeros((nh, nh))
        d = np.array([h @ Bi @ x for Bi in basis])
        e = float(h @ A_hat @ x)
    elif steps == 2:
        C = np.empty((nh, nh))
        for i in range(nh):
            for j in range(i, nh):
                val = 0.5 * float(h @ (basis[i] @ basis[j] + basis[j] @ basis[i]) @ x)
                C[i, j] = C[j, i] = val
        d = np.array([float(h @ (Bi @ A_hat + A_hat @ Bi) @ x) for Bi in basis])
        e = float(h @ A_hat @ A_hat @ x)
    else:
        raise ValueError("steps must be 1 or 2")
    _, val = trs_maximize(C, d, e, param.P_hat, param.r_hat, param.s_hat)
    return val


# ---------------------------------------------------------------------------
# sampling from an uncertainty state
# ---------------------------------------------------------------------------


def _affine_chart(U: UncertaintyState):
    """Particular solution and nullspace chart of all equality information
    (explicit data equalities plus equality facet pairs of a polytope base)."""
    import scipy.linalg

    n = U.n
    m = n * n
    rows, vals = [], []
    if isinstance(U.base, MatrixPolytope):
        for V, v in U.base.equality_rows:
            rows.append(vec(V))
            vals.append(float(v))
    for x, y in U.equality_data:
        K = np.kron(np.asarray(x).reshape(1, -1), np.eye(n))
        for p in range(n):
            rows.append(K[p])
            vals.append(float(y[p]))
    if rows:
        M = np.vstack(rows)
        b = np.asarray(vals)
        a0, *_ = np.linalg.lstsq(M, b, rcond=None)
        if np.linalg.norm(M @ a0 - b) > 1e-8 * max(1.0, np.linalg.norm(b)):
            raise ValueError("equality information is inconsistent")
        N = scipy.linalg.null_space(M)
    else:
        a0 = np.zeros(m)
        N = np.eye(m)
    return a0, N


def _chart_constraints(U: UncertaintyState, a0: np.ndarray, N: np.ndarray):
    """Linear rows (w, rhs) with w.u <= rhs and quadratic balls (P, r, s)
    with u^T P u + r.u + s <= 0, in chart coordinates u."""
    n = U.n
    lin = []
    quads = []
    if isinstance(U.base, MatrixPolytope):
        for V, v in U.base.inequality_facets:
            w = vec(V)
            lin.append((N.T @ w, float(v - w @ a0)))
    elif isinstance(U.base, MatrixEllipsoid):
        P, r, s = U.base.q_poly_coeffs()
        quads.append((N.T @ P @ N, N.T @ (2 * P @ a0 + r),
                      float(a0 @ P @ a0 + r @ a0 + s)))
    for x, y, rho, p in U.residual_data:
        K = np.kron(np.asarray(x).reshape(1, -1), np.eye(n))
        R = K @ N
        base = K @ a0 - np.asarray(y, dtype=float)
        if p in (np.inf, "inf"):
            for q in range(n):
                lin.append((R[q], float(rho - base[q])))
                lin.append((-R[q], float(rho + base[q])))
        else:
            quads.append((R.T @ R, 2 * R.T @ base, float(base @ base - rho ** 2)))
    return lin, quads


def _chart_interior_point(lin, quads, dim: int):
    """A strictly interior chart point: Chebyshev-style slack maximization
    over the linear rows intersected with the quadratic-ball centers."""
    prog = ConicProgram()
    u = prog.add_vars("u", dim)
    t = prog.add_var("t")
    for w, rhs in lin:
        norm = float(np.linalg.norm(w))
        if norm < 1e-14:
            continue
        terms = {u[j]: -w[j] for j in range(dim) if w[j] != 0.0}
        terms[t] = -norm
        prog.add_ineq(LinExpr(terms, rhs))
    for P, r, s in quads:
        # stay inside a slightly shrunk ball: q(u) <= -t * scale
        L = np.linalg.cholesky((P + P.T) / 2)
        center = np.linalg.solve(P, -r / 2.0)
        rad2 = float(center @ P @ center + r @ center + s)
        radius = np.sqrt(max(-rad2, 0.0))
        rows = []
        for i in range(dim):
            terms = {u[j]: L.T[i, j] for j in range(dim) if L.T[i, j] != 0.0}
            rows.append(LinExpr(terms, -float(L.T[i] @ center)))
        margin = LinExpr({t: -0.5 * radius}, radius)
        prog.add_soc(margin, rows)
    prog.add_ineq(LinExpr({t: -1.0}, 1.0))
    prog.set_objective(LinExpr({t: -1.0}))
    sol = conic.solve(prog)
    if sol.status != conic.OPTIMAL:
        raise RuntimeError(f"interior-point search failed ({sol.status})")
    slack = float(sol.values[t])
    return sol.values[:dim].copy(), slack


def sample_uncertainty(U: UncertaintyState, count: int, seed: int,
                       burn_factor: int = 50) -> list:
    """Hit-and-run samples from U, restricted exactly to the affine hull of
    its equality information; deterministic under the seed."""
    a0, N = _affine_chart(U)
    n = U.n
    dim = N.shape[1]
    if dim == 0:
        return [unvec(a0, n)] * count
    lin, quads = _chart_constraints(U, a0, N)
    u, slack = _chart_interior_point(lin, quads, dim)
    if slack <= 1e-12:
        # no interior in the chart: the set is a single point
        return [unvec(a0 + N @ u, n)] * count
    rng = np.random.default_rng(seed)
    samples = []
    total = burn_factor * dim + count * max(dim, 1)
    kept = 0
    for step in range(total):
        direction = rng.normal(size=dim)
        direction /= np.linalg.norm(direction)
        t_lo, t_hi = -np.inf, np.inf
        for w, rhs in lin:
            wd = float(w @ direction)
            gap = rhs - float(w @ u)
            if abs(wd) < 1e-14:
                continue
            bound = gap / wd
            if wd > 0:
                t_hi = min(t_hi, bound)
            else:
                t_lo = max(t_lo, bound)
        for P, r, s in quads:
            a_c = float(direction @ P @ direction)
            b_c = float((2 * P @ u + r) @ direction)
            c_c = float(u @ P @ u + r @ u + s)
            disc = b_c * b_c - 4 * a_c * c_c
            if disc <= 0 or a_c <= 0:
                t_lo, t_hi = 0.0, 0.0
                break
            root = np.sqrt(disc)
            t_lo = max(t_lo, (-b_c - root) / (2 * a_c))
            t_hi = min(t_hi, (-b_c + root) / (2 * a_c))
        if not np.isfinite(t_lo) or not np.isfinite(t_hi):
            raise RuntimeError("uncertainty set is unbounded along the chart")
        if t_hi < t_lo:
            t_lo = t_hi = 0.0
        u = u + rng.uniform(t_lo, t_hi) * direction
        if step >= burn_factor * dim:
            kept += 1
            if kept % max(dim, 1) == 0:
                samples.append(unvec(a0 + N @ u, n))
                if len(samples) == count:
                    break
    while len(samples) < count:
        samples.append(unvec(a0 + N @ u, n))
    return samples


# ---------------------------------------------------------------------------
# rollout checks
# ---------------------------------------------------------------------------


def rollout_safe_mask(points: np.ndarray, A: np.ndarray, S: HPolytope, T: int,
                      gamma: float = 0.0, rng=None, cap: float = 1e12) -> np.ndarray:
    """Vectorized T-step safety of many start points under one matrix, with
    an optional per-step boundary-aligned perturbation g_t = gamma ||x_t|| u_t
    (u_t a random unit vector shared across points)."""
    X = np.asarray(points, dtype=float).copy()
    ok = np.ones(X.shape[0], dtype=bool)
    H, b = S.normals, S.offsets
    ok &= np.all(X @ H.T <= b + 1e-9, axis=1)
    for _ in range(T):
        X = X @ A.T
        if gamma > 0.0:
            u = rng.normal(size=X.shape[1])
            u /= np.linalg.norm(u)
            X = X + gamma * np.linalg.norm(X, axis=1)[:, None] * u
        over = np.max(np.abs(X), axis=1) > cap
        ok &= ~over
        X[~ok] = 0.0
        ok &= np.all(X @ H.T <= b + 1e-9, axis=1)
        if not ok.any():
            break
    return ok


def check_T_step_safe(x, matrices: Sequence[np.ndarray], S: HPolytope,
                      T: int = 1000, envelope=None, streams: int = 10) -> bool:
    """True iff the trajectory from x stays in S for T steps under every
    supplied matrix; with envelope=(gamma, seed) each matrix is additionally
    rolled with per-step norm-bounded perturbations (several seeded streams,
    boundary-aligned g = gamma ||x|| u for random unit u)."""
    pt = np.asarray(x, dtype=float).reshape(1, -1)
    for k, A in enumerate(matrices):
        if not rollout_safe_mask(pt, np.asarray(A, dtype=float), S, T)[0]:
            return False
        if envelope is not None:
            gamma, seed = envelope
            if gamma > 0:
                for j in range(streams):
                    rng = np.random.default_rng((seed, k, j))
                    if not rollout_safe_mask(pt, np.asarray(A, dtype=float), S, T,
                                             gamma=gamma, rng=rng)[0]:
                        return False
    return True


def outer_inf_set(S: HPolytope, U: UncertaintyState, sample_count: int = 200,
                  T: int = 10, resolution: int = 101, seed: int = 0,
                  box=None):
    """Sampled outer approximation of the infinite-step safe set on a grid:
    a grid point is *outside-certain* when some sampled matrix drives it out
    of S within T steps, and *undecided* otherwise.

    Returns (xs, ys, undecided) with undecided a boolean grid.
    """
    if U.n != 2:
        raise ValueError("grid classification is figure-scale (n = 2) only")
    if box is None:
        lo, hi = S.bounding_box()
    else:
        lo, hi = (np.asarray(box[0], dtype=float), np.asarray(box[1], dtype=float))
    xs = np.linspace(lo[0], hi[0], resolution)
    ys = np.linspace(lo[1], hi[1], resolution)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    undecided = np.all(pts @ S.normals.T <= S.offsets + 1e-9, axis=1)
    mats = sample_uncertainty(U, sample_count, seed)
    for A in mats:
        if not undecided.any():
            break
        idx = np.flatnonzero(undecided)
        ok = rollout_safe_mask(pts[idx], A, S, T)
        undecided[idx[~ok]] = False
    return xs, ys, undecided.reshape(resolution, resolution)
