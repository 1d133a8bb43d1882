import numpy as np
import pytest

from safelearn import conic
from safelearn.conic import (
    BatchSolver,
    ConicProgram,
    LinExpr,
    UnsupportedNormPower,
    dump_program,
    load_program,
    norm_power_epigraph,
    programs_equal,
)


def test_simple_lp():
    p = ConicProgram()
    x = p.add_var("x")
    p.add_ineq(LinExpr({x: 1.0}, -1.0))
    p.set_objective(LinExpr({x: 1.0}))
    sol = conic.solve(p)
    assert sol.status == conic.OPTIMAL
    assert sol.objective == pytest.approx(1.0, abs=1e-8)


def test_psd_two_by_two():
    # min t s.t. [[t, 1], [1, t]] >= 0 has optimum 1 (determinant condition)
    p = ConicProgram()
    t = p.add_var("t")
    e = LinExpr({t: 1.0})
    one = LinExpr.constant(1.0)
    p.add_psd([[e, one], [one, e]])
    p.set_objective(e)
    sol = conic.solve(p)
    assert sol.status == conic.OPTIMAL
    assert sol.objective == pytest.approx(1.0, abs=1e-6)


def test_infeasible_lp():
    p = ConicProgram()
    x = p.add_var("x")
    p.add_ineq(LinExpr({x: 1.0}, -1.0))   # x >= 1
    p.add_ineq(LinExpr({x: -1.0}))        # x <= 0
    assert conic.solve(p).status == conic.INFEASIBLE


def test_unbounded_lp():
    p = ConicProgram()
    x = p.add_var("x")
    p.add_ineq(LinExpr({x: 1.0}))
    p.set_objective(LinExpr({x: -1.0}))
    assert conic.solve(p).status == conic.UNBOUNDED


def _norm_power_min(p_norm, d, x_fixed):
    prog = ConicProgram()
    t = prog.add_var("t")
    norm_power_epigraph(prog, p_norm, d,
                        [LinExpr.constant(v) for v in x_fixed],
                        LinExpr.variable(t))
    prog.set_objective(LinExpr({t: 1.0}))
    sol = conic.solve(prog)
    assert sol.status == conic.OPTIMAL
    return sol.objective


def test_norm_power_d0_any_norm():
    assert _norm_power_min(np.inf, 0, [7.0, -3.0]) == pytest.approx(1.0, abs=1e-7)


def test_norm_power_euclidean():
    assert _norm_power_min(2, 1, [3.0, 4.0]) == pytest.approx(5.0, abs=1e-7)


def test_norm_power_one_norm_squared():
    # independent oracle: (|1| + |-1|)^2 = 4
    x = [1.0, -1.0]
    expected = float(np.sum(np.abs(x))) ** 2
    assert _norm_power_min(1, 2, x) == pytest.approx(expected, abs=1e-6)


@pytest.mark.parametrize("p_norm,d", [(1, 0), (1, 1), (1, 2), (2, 0), (2, 1),
                                      (2, 2), (np.inf, 0), (np.inf, 1), (np.inf, 2)])
def test_norm_power_grid_supported(p_norm, d, rng):
    x = rng.normal(size=3)
    val = _norm_power_min(p_norm, d, x)
    if p_norm == np.inf:
        base = np.max(np.abs(x))
    else:
        base = np.linalg.norm(x, ord=p_norm)
    assert val == pytest.approx(base ** d if d else 1.0, abs=1e-6)


def test_norm_power_unsupported():
    prog = ConicProgram()
    t = prog.add_var("t")
    with pytest.raises(UnsupportedNormPower):
        norm_power_epigraph(prog, 3, 1, [LinExpr.constant(1.0)],
                            LinExpr.variable(t))
    with pytest.raises(UnsupportedNormPower):
        norm_power_epigraph(prog, 2, 3, [LinExpr.constant(1.0)],
                            LinExpr.variable(t))


def test_json_round_trip():
    p = ConicProgram()
    x = p.add_vars("x", 2)
    t = p.add_var("t")
    p.add_eq(LinExpr({x[0]: 1.0, x[1]: -2.0}, 0.5))
    p.add_ineq(LinExpr({x[1]: 3.0}, -1.0))
    p.add_soc(LinExpr({t: 1.0}), [LinExpr({x[0]: 1.0}), LinExpr({x[1]: 1.0}, 0.25)])
    p.add_psd([[LinExpr({t: 1.0}), LinExpr.constant(1.0)],
               [LinExpr.constant(1.0), LinExpr({x[0]: 1.0}, 2.0)]])
    p.set_objective(LinExpr({t: 1.0, x[0]: -1.0}, 0.125))
    text = dump_program(p)
    q = load_program(text)
    assert programs_equal(p, q)
    assert dump_program(q) == text


def test_lp_strong_duality(rng):
    # primal optimum equals the dual objective assembled from the marginals
    for _ in range(20):
        n, m = 4, 6
        A = rng.normal(size=(m, n))
        x0 = rng.uniform(-0.9, 0.9, size=n)
        b = A @ x0 + rng.uniform(0.1, 1.0, size=m)
        c = rng.normal(size=n)
        prog = ConicProgram()
        x = prog.add_vars("x", n)
        rows = []
        offs = []
        for i in range(m):
            prog.add_ineq(LinExpr({x[j]: -A[i, j] for j in range(n)}, b[i]))
            rows.append(-A[i])
            offs.append(b[i])
        for j in range(n):
            for sign in (1.0, -1.0):
                e = np.zeros(n)
                e[j] = sign
                prog.add_ineq(LinExpr({x[j]: sign}, 1.0))
                rows.append(e)
                offs.append(1.0)
        rows = np.array(rows)
        offs = np.array(offs)
        prog.set_objective(LinExpr({x[j]: c[j] for j in range(n)}))
        sol = conic.solve(prog)
        assert sol.status == conic.OPTIMAL
        # blocks are rows . x + offs >= 0 with HiGHS marginals mu <= 0:
        # stationarity c = rows^T (-mu), dual objective offs . mu = primal
        mu = sol.duals["ineq"]
        assert rows.T @ (-mu) == pytest.approx(c, abs=1e-7)
        assert float(offs @ mu) == pytest.approx(sol.objective, abs=1e-6)


def test_batch_solver_objective_and_pins():
    prog = ConicProgram()
    x = prog.add_vars("x", 2)
    for j in range(2):
        prog.add_ineq(LinExpr({x[j]: 1.0}, 1.0))
        prog.add_ineq(LinExpr({x[j]: -1.0}, 1.0))
    prog.set_objective(LinExpr({x[0]: 1.0}))
    solver = BatchSolver(prog)
    for c in ([1.0, 0.0], [0.0, -1.0], [1.0, 1.0]):
        sol = solver.solve(objective=np.array(c))
        assert sol.status == conic.OPTIMAL
        assert sol.objective == pytest.approx(-np.sum(np.abs(c)), abs=1e-7)
    pinned = BatchSolver(prog, pin_indices=[x[0]])
    sol = pinned.solve(objective=np.zeros(2), pins=np.array([0.5]))
    assert sol.status == conic.OPTIMAL
    assert sol.values[x[0]] == pytest.approx(0.5, abs=1e-8)
    sol = pinned.solve(objective=np.zeros(2), pins=np.array([1.5]))
    assert sol.status == conic.INFEASIBLE
