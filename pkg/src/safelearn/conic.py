"""Language-neutral LP/SOCP/SDP intermediate representation and solve contract.

Every formulation in the package compiles into a :class:`ConicProgram`:
named scalar variables, a linear objective, and four typed constraint block
families (linear equalities, nonnegative-orthant inequalities, second-order
cones, PSD matrices).  ``solve`` is the single place a concrete solver is
touched: pure LPs go to HiGHS via :func:`scipy.optimize.linprog`, anything
with cone blocks goes through cvxpy (Clarabel first, SCS as fallback).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "LinExpr",
    "ConicProgram",
    "SolverSettings",
    "ConicSolution",
    "BatchSolver",
    "UnsupportedNormPower",
    "solve",
    "norm_power_epigraph",
    "dump_program",
    "load_program",
]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"


class UnsupportedNormPower(ValueError):
    """Raised for (p, d) outside the supported norm-power grid."""


class LinExpr:
    """Sparse affine expression  sum_i terms[i] * z_i + const."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: Optional[dict] = None, const: float = 0.0):
        self.terms = terms if terms is not None else {}
        self.const = float(const)

    @staticmethod
    def variable(index: int, coeff: float = 1.0) -> "LinExpr":
        return LinExpr({index: float(coeff)})

    @staticmethod
    def constant(value: float) -> "LinExpr":
        return LinExpr({}, value)

    def copy(self) -> "LinExpr":
        return LinExpr(dict(self.terms), self.const)

    def __add__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return LinExpr(dict(self.terms), self.const + float(other))
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0.0) + v
        return LinExpr(out, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return LinExpr({k: -v for k, v in self.terms.items()}, -self.const)

    def __sub__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return LinExpr(dict(self.terms), self.const - float(other))
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar):
        s = float(scalar)
        return LinExpr({k: v * s for k, v in self.terms.items()}, self.const * s)

    __rmul__ = __mul__

    def value(self, z: np.ndarray) -> float:
        return self.const + sum(z[k] * v for k, v in self.terms.items())

    def is_constant(self, tol: float = 0.0) -> bool:
        return all(abs(v) <= tol for v in self.terms.values())

    def __eq__(self, other):
        if not isinstance(other, LinExpr):
            return NotImplemented
        a = {k: v for k, v in self.terms.items() if v != 0.0}
        b = {k: v for k, v in other.terms.items() if v != 0.0}
        return a == b and self.const == other.const

    def __repr__(self):
        return f"LinExpr({self.terms!r}, {self.const!r})"


def as_expr(x) -> LinExpr:
    if isinstance(x, LinExpr):
        return x
    return LinExpr.constant(float(x))


class ConicProgram:
    """A minimization problem over named scalar variables.

    Constraint block conventions:

    * ``eqs``    — each expression must equal zero,
    * ``ineqs``  — each expression must be >= 0,
    * ``socs``   — pairs (t, u) enforcing ||u||_2 <= t,
    * ``psds``   — symmetric k x k matrices of expressions required PSD.
    """

    def __init__(self):
        self.names: list[str] = []
        self.objective: LinExpr = LinExpr()
        self.eqs: list[LinExpr] = []
        self.ineqs: list[LinExpr] = []
        self.socs: list[tuple[LinExpr, list[LinExpr]]] = []
        self.psds: list[list[list[LinExpr]]] = []
        self.meta: dict = {}

    # -- variables ---------------------------------------------------------

    @property
    def num_vars(self) -> int:
        return len(self.names)

    def add_var(self, name: str) -> int:
        self.names.append(name)
        return len(self.names) - 1

    def add_vars(self, name: str, count: int) -> list[int]:
        return [self.add_var(f"{name}[{i}]") for i in range(count)]

    def exprs(self, indices: Iterable[int]) -> list[LinExpr]:
        return [LinExpr.variable(i) for i in indices]

    # -- constraints -------------------------------------------------------

    def add_eq(self, expr: LinExpr) -> None:
        self.eqs.append(expr)

    def add_ineq(self, expr: LinExpr) -> None:
        self.ineqs.append(expr)

    def add_soc(self, t: LinExpr, u: Sequence[LinExpr]) -> None:
        self.socs.append((as_expr(t), [as_expr(e) for e in u]))

    def add_psd(self, entries) -> None:
        """Add a PSD block.  ``entries`` is a k x k nested list of expressions
        that must already be symmetric."""
        k = len(entries)
        block = [[as_expr(entries[i][j]) for j in range(k)] for i in range(k)]
        self.psds.append(block)

    def add_psd_var(self, name: str, k: int) -> list[list[LinExpr]]:
        """Allocate a fresh symmetric k x k PSD matrix variable; returns the
        matrix of expressions referencing its upper-triangle scalars."""
        idx = {}
        for i in range(k):
            for j in range(i, k):
                idx[(i, j)] = self.add_var(f"{name}[{i},{j}]")
        block = [
            [LinExpr.variable(idx[(min(i, j), max(i, j))]) for j in range(k)]
            for i in range(k)
        ]
        self.add_psd(block)
        return block

    def set_objective(self, expr: LinExpr) -> None:
        self.objective = as_expr(expr)

    def is_linear(self) -> bool:
        return not self.socs and not self.psds


@dataclass
class SolverSettings:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iters: int = 200
    verbose: bool = False
    solver: Optional[str] = None  # None = auto (HiGHS for LPs, Clarabel/SCS else)


@dataclass
class ConicSolution:
    status: str
    values: Optional[np.ndarray] = None
    objective: Optional[float] = None
    duals: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def value_of(self, expr: LinExpr) -> float:
        return expr.value(self.values)


# ---------------------------------------------------------------------------
# compilation helpers
# ---------------------------------------------------------------------------


def _stack_rows(exprs: Sequence[LinExpr], nvars: int):
    """Rows as a csr matrix A and offset b so that block value = A z + b."""
    data, rows, cols = [], [], []
    b = np.zeros(len(exprs))
    for r, e in enumerate(exprs):
        b[r] = e.const
        for c, v in e.terms.items():
            rows.append(r)
            cols.append(c)
            data.append(v)
    A = sp.csr_matrix((data, (rows, cols)), shape=(len(exprs), nvars))
    return A, b


def _objective_vector(prog: ConicProgram):
    c = np.zeros(prog.num_vars)
    for k, v in prog.objective.terms.items():
        c[k] += v
    return c, prog.objective.const


# ---------------------------------------------------------------------------
# LP fast path (HiGHS)
# ---------------------------------------------------------------------------

_LINPROG_STATUS = {0: OPTIMAL, 2: INFEASIBLE, 3: UNBOUNDED}


def _solve_lp(prog: ConicProgram, settings: SolverSettings,
              c_override=None, extra_eqs: Sequence[LinExpr] = ()) -> ConicSolution:
    from scipy.optimize import linprog

    n = prog.num_vars
    c, c0 = _objective_vector(prog)
    if c_override is not None:
        c = np.asarray(c_override, dtype=float)
    eqs = list(prog.eqs) + list(extra_eqs)
    A_eq, b_eq = _stack_rows(eqs, n) if eqs else (None, None)
    # expr >= 0  ->  -A z <= b
    A_ub = b_ub = None
    if prog.ineqs:
        A, b = _stack_rows(prog.ineqs, n)
        A_ub, b_ub = -A, b
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=(A_eq if A_eq is not None and A_eq.shape[0] else None),
        b_eq=(-b_eq if b_eq is not None and len(b_eq) else None),
        bounds=(None, None),
        method="highs",
    )
    status = _LINPROG_STATUS.get(res.status, NUMERICAL_FAILURE)
    if status != OPTIMAL:
        return ConicSolution(status=status, stats={"backend": "highs"})
    duals = {}
    if prog.ineqs:
        duals["ineq"] = np.asarray(res.ineqlin.marginals)
    if eqs:
        duals["eq"] = np.asarray(res.eqlin.marginals)
    return ConicSolution(
        status=OPTIMAL,
        values=np.asarray(res.x, dtype=float),
        objective=float(res.fun) + c0,
        duals=duals,
        stats={"backend": "highs", "iterations": int(getattr(res, "nit", 0))},
    )


# ---------------------------------------------------------------------------
# cone path (cvxpy)
# ---------------------------------------------------------------------------


def _build_cvxpy(prog: ConicProgram, c_param=None, pin_indices=None):
    import cvxpy as cp

    n = prog.num_vars
    z = cp.Variable(n)
    constraints = []
    handles = {}
    if prog.eqs:
        A, b = _stack_rows(prog.eqs, n)
        handles["eq"] = A @ z + b == 0
        constraints.append(handles["eq"])
    if prog.ineqs:
        A, b = _stack_rows(prog.ineqs, n)
        handles["ineq"] = A @ z + b >= 0
        constraints.append(handles["ineq"])
    handles["soc"] = []
    for t, u in prog.socs:
        A, b = _stack_rows([t] + list(u), n)
        v = A @ z + b
        con = cp.SOC(v[0], v[1:])
        handles["soc"].append(con)
        constraints.append(con)
    handles["psd"] = []
    for block in prog.psds:
        k = len(block)
        flat = [block[i][j] for i in range(k) for j in range(k)]
        A, b = _stack_rows(flat, n)
        X = cp.reshape(A @ z + b, (k, k), order="C")
        con = (X + X.T) / 2 >> 0
        handles["psd"].append(con)
        constraints.append(con)
    c, c0 = _objective_vector(prog)
    if c_param is not None:
        objective = cp.Minimize(c_param @ z)
    else:
        objective = cp.Minimize(c @ z + c0)
    pin_param = None
    if pin_indices is not None:
        pin_param = cp.Parameter(len(pin_indices))
        constraints.append(z[list(pin_indices)] == pin_param)
    problem = cp.Problem(objective, constraints)
    return problem, z, handles, pin_param


_CVXPY_STATUS = {
    "optimal": OPTIMAL,
    "infeasible": INFEASIBLE,
    "unbounded": UNBOUNDED,
}

# near-threshold terminations: accepted only after every backend has had a
# chance to produce a clean status
_CVXPY_INACCURATE = {
    "optimal_inaccurate": OPTIMAL,
    "infeasible_inaccurate": INFEASIBLE,
    "unbounded_inaccurate": UNBOUNDED,
}


def _cvxpy_solver_chain(settings: SolverSettings):
    import cvxpy as cp

    if settings.solver:
        return [settings.solver.upper()]
    chain = []
    installed = cp.installed_solvers()
    if "CLARABEL" in installed:
        chain.append("CLARABEL")
    if "SCS" in installed:
        chain.append("SCS")
    return chain or installed[:1]


def _solver_options(name: str, settings: SolverSettings) -> dict:
    if name == "CLARABEL":
        return {
            "max_iter": max(settings.max_iters, 50),
            "tol_feas": settings.feas_tol,
            "tol_gap_rel": settings.gap_tol,
        }
    if name == "SCS":
        # first-order method: iteration budget scales differently
        return {"max_iters": max(250 * settings.max_iters, 20000), "eps": settings.feas_tol * 10}
    return {}


def _extract_solution(prog, problem, z, handles, backend,
                      allow_inaccurate: bool = False) -> ConicSolution:
    status = _CVXPY_STATUS.get(problem.status)
    inaccurate = False
    if status is None and allow_inaccurate:
        status = _CVXPY_INACCURATE.get(problem.status)
        inaccurate = status is not None
    if status is None:
        return ConicSolution(status=NUMERICAL_FAILURE,
                             stats={"backend": backend, "raw_status": problem.status})
    if status != OPTIMAL:
        return ConicSolution(status=status,
                             stats={"backend": backend, "inaccurate": inaccurate})
    duals = {}
    for key in ("eq", "ineq"):
        if key in handles and handles[key].dual_value is not None:
            duals[key] = np.asarray(handles[key].dual_value)
    duals["soc"] = [c.dual_value for c in handles.get("soc", [])]
    duals["psd"] = [c.dual_value for c in handles.get("psd", [])]
    c, c0 = _objective_vector(prog)
    values = np.asarray(z.value, dtype=float)
    return ConicSolution(
        status=OPTIMAL,
        values=values,
        objective=float(c @ values) + c0,
        duals=duals,
        stats={"backend": backend, "inaccurate": inaccurate,
               "iterations": problem.solver_stats.num_iters if problem.solver_stats else None},
    )


def _solve_cvxpy(prog: ConicProgram, settings: SolverSettings) -> ConicSolution:
    problem, z, handles, _ = _build_cvxpy(prog)
    last = ConicSolution(status=NUMERICAL_FAILURE)
    fallback = None
    for name in _cvxpy_solver_chain(settings):
        try:
            problem.solve(solver=name, verbose=settings.verbose,
                          **_solver_options(name, settings))
        except Exception as exc:  # solver-level failure: try next backend
            last = ConicSolution(status=NUMERICAL_FAILURE,
                                 stats={"backend": name, "error": str(exc)})
            continue
        sol = _extract_solution(prog, problem, z, handles, name)
        if sol.status != NUMERICAL_FAILURE:
            return sol
        last = sol
        if fallback is None:
            near = _extract_solution(prog, problem, z, handles, name,
                                     allow_inaccurate=True)
            if near.status == OPTIMAL:
                # a near-threshold optimum is usable as is; infeasibility
                # claims get a second opinion from the next backend
                return near
            if near.status != NUMERICAL_FAILURE:
                fallback = near
    return fallback if fallback is not None else last


def solve(prog: ConicProgram, settings: Optional[SolverSettings] = None) -> ConicSolution:
    """Solve a conic program.  Never raises on solver-reported failure: the
    outcome is always encoded in ``ConicSolution.status``."""
    settings = settings or SolverSettings()
    if prog.is_linear() and settings.solver in (None, "highs", "HIGHS"):
        return _solve_lp(prog, settings)
    return _solve_cvxpy(prog, settings)


class BatchSolver:
    """Repeated solves of one program with varying objective and/or a pair of
    pinned variable values (grid scans, boundary scans, hull-point sweeps).

    For cone programs the cvxpy problem is compiled once with Parameters so
    repeated solves skip canonicalization; for pure LPs each call rebuilds the
    small HiGHS instance directly.
    """

    def __init__(self, prog: ConicProgram, settings: Optional[SolverSettings] = None,
                 pin_indices: Optional[Sequence[int]] = None):
        self.prog = prog
        self.settings = settings or SolverSettings()
        self.pin_indices = list(pin_indices) if pin_indices is not None else None
        self._lp = prog.is_linear() and self.settings.solver in (None, "highs", "HIGHS")
        if not self._lp:
            import cvxpy as cp

            self._c_param = cp.Parameter(prog.num_vars)
            (self._problem, self._z, self._handles,
             self._pin_param) = _build_cvxpy(prog, self._c_param, self.pin_indices)

    def solve(self, objective: Optional[np.ndarray] = None,
              pins: Optional[np.ndarray] = None) -> ConicSolution:
        prog, settings = self.prog, self.settings
        if self._lp:
            extra = []
            if self.pin_indices is not None:
                for idx, val in zip(self.pin_indices, pins):
                    extra.append(LinExpr({idx: 1.0}, -float(val)))
            return _solve_lp(prog, settings, c_override=objective, extra_eqs=extra)
        c, c0 = _objective_vector(prog)
        self._c_param.value = np.asarray(objective, dtype=float) if objective is not None else c
        if self._pin_param is not None:
            self._pin_param.value = np.asarray(pins, dtype=float)
        last = ConicSolution(status=NUMERICAL_FAILURE)
        fallback = None
        for name in _cvxpy_solver_chain(settings):
            try:
                self._problem.solve(solver=name, verbose=settings.verbose,
                                    **_solver_options(name, settings))
            except Exception as exc:
                last = ConicSolution(status=NUMERICAL_FAILURE,
                                     stats={"backend": name, "error": str(exc)})
                continue
            sol = _extract_solution(prog, self._problem, self._z, self._handles, name)
            if sol.status != NUMERICAL_FAILURE:
                fallback = sol
                break
            last = sol
            near = _extract_solution(prog, self._problem, self._z, self._handles,
                                     name, allow_inaccurate=True)
            if near.status == OPTIMAL:
                fallback = near
                break
            if fallback is None and near.status != NUMERICAL_FAILURE:
                fallback = near
        sol = fallback if fallback is not None else last
        if sol.status == OPTIMAL and objective is not None and sol.values is not None:
            sol.objective = float(np.asarray(objective) @ sol.values)
        return sol


# ---------------------------------------------------------------------------
# norm-power epigraph blocks
# ---------------------------------------------------------------------------


def norm_power_epigraph(prog: ConicProgram, p_norm, d: int,
                        x: Sequence[LinExpr], t: LinExpr) -> None:
    """Append blocks enforcing ||x||_p^d <= t for p in {1, 2, inf}, d in {0, 1, 2}.

    d = 2 with p != 2 goes through an auxiliary scalar s with ||x||_p <= s
    (linear) and s^2 <= t (rotated second-order cone).
    """
    x = [as_expr(e) for e in x]
    t = as_expr(t)
    if d == 0:
        prog.add_ineq(t - 1.0)
        return
    if d == 1:
        _norm_leq(prog, p_norm, x, t)
        return
    if d == 2:
        if p_norm == 2:
            _square_leq(prog, x, t)
            return
        if p_norm in (1, float("inf"), "inf"):
            s = LinExpr.variable(prog.add_var("normaux"))
            _norm_leq(prog, p_norm, x, s)
            _square_leq(prog, [s], t)
            return
    raise UnsupportedNormPower(f"unsupported (p, d) = ({p_norm}, {d})")


def _norm_leq(prog: ConicProgram, p_norm, x: list[LinExpr], t: LinExpr) -> None:
    if p_norm in (float("inf"), "inf"):
        for e in x:
            prog.add_ineq(t - e)
            prog.add_ineq(t + e)
    elif p_norm == 1:
        s = [LinExpr.variable(i) for i in prog.add_vars("absaux", len(x))]
        for e, si in zip(x, s):
            prog.add_ineq(si - e)
            prog.add_ineq(si + e)
        prog.add_ineq(t - sum(s, LinExpr()))
    elif p_norm == 2:
        prog.add_soc(t, x)
    else:
        raise UnsupportedNormPower(f"unsupported norm p = {p_norm}")


def _square_leq(prog: ConicProgram, x: list[LinExpr], t: LinExpr) -> None:
    # sum x_i^2 <= t  <=>  ||(2x, t-1)|| <= t+1
    prog.add_soc(t + 1.0, [e * 2.0 for e in x] + [t - 1.0])


# ---------------------------------------------------------------------------
# on-disk JSON format
# ---------------------------------------------------------------------------


def _expr_to_json(e: LinExpr) -> dict:
    return {"terms": {str(k): v for k, v in e.terms.items() if v != 0.0},
            "const": e.const}


def _expr_from_json(d: dict) -> LinExpr:
    return LinExpr({int(k): float(v) for k, v in d["terms"].items()}, float(d["const"]))


def dump_program(prog: ConicProgram, path=None) -> str:
    doc = {
        "version": 1,
        "variables": list(prog.names),
        "objective": _expr_to_json(prog.objective),
        "eq": [_expr_to_json(e) for e in prog.eqs],
        "ineq": [_expr_to_json(e) for e in prog.ineqs],
        "soc": [{"t": _expr_to_json(t), "u": [_expr_to_json(e) for e in u]}
                for t, u in prog.socs],
        "psd": [{"size": len(b),
                 "entries": [_expr_to_json(b[i][j]) for i in range(len(b))
                             for j in range(len(b))]}
                for b in prog.psds],
    }
    text = json.dumps(doc, indent=1, sort_keys=True)
    if path is not None:
        with open(path, "w") as f:
            f.write(text)
    return text


def load_program(source: str) -> ConicProgram:
    doc = json.loads(source)
    prog = ConicProgram()
    for name in doc["variables"]:
        prog.add_var(name)
    prog.set_objective(_expr_from_json(doc["objective"]))
    for e in doc["eq"]:
        prog.add_eq(_expr_from_json(e))
    for e in doc["ineq"]:
        prog.add_ineq(_expr_from_json(e))
    for blk in doc["soc"]:
        prog.add_soc(_expr_from_json(blk["t"]), [_expr_from_json(e) for e in blk["u"]])
    for blk in doc["psd"]:
        k = blk["size"]
        entries = [_expr_from_json(e) for e in blk["entries"]]
        prog.add_psd([[entries[i * k + j] for j in range(k)] for i in range(k)])
    return prog


def programs_equal(a: ConicProgram, b: ConicProgram) -> bool:
    if a.names != b.names or a.objective != b.objective:
        return False
    if a.eqs != b.eqs or a.ineqs != b.ineqs:
        return False
    if a.socs != b.socs:
        return False
    if len(a.psds) != len(b.psds):
        return False
    for ba, bb in zip(a.psds, b.psds):
        if ba != bb:
            return False
    return True
