"""Config-driven experiment harness.

Subcommands:

* ``safeset``  build one of the five safe-set formulations from a config and
               scan its plane projection (grid or boundary mode)
* ``learn``    run a learning algorithm against the configured plant
* ``verify``   re-check a learn report or scan with the brute-force oracles
* ``fit``      the safe-exploration + regression experiment
* ``repro``    canned end-to-end experiments with pass/fail reports

Exit codes: 0 success, 1 criteria failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from safelearn import bench, conic, geometry, learning, oracle, regression, safesets
from safelearn.conic import SolverSettings
from safelearn.geometry import HPolytope, MatrixEllipsoid, MatrixPolytope
from safelearn.learning import LearnConfig
from safelearn.plant import Plant, catalog_residual, poly_residual
from safelearn.reportio import SvgLayer, render_svg, write_polygon_json, write_scan_csv
from safelearn.safesets import NonlinearEnvelope, UncertaintyState

__all__ = ["main"]


class ConfigError(ValueError):
    def __init__(self, pointer: str, message: str):
        super().__init__(f"config error at {pointer}: {message}")
        self.pointer = pointer


def _solver_settings() -> SolverSettings:
    settings = SolverSettings()
    tol = os.environ.get("SAFELEARN_SOLVER_TOL")
    if tol:
        try:
            val = float(tol)
        except ValueError:
            raise ConfigError("$SAFELEARN_SOLVER_TOL", f"not a float: {tol!r}")
        settings.feas_tol = settings.gap_tol = val
    return settings


# ---------------------------------------------------------------------------
# config loading
# ---------------------------------------------------------------------------


def _require(doc: dict, key: str, pointer: str):
    if key not in doc:
        raise ConfigError(f"{pointer}/{key}", "missing required field")
    return doc[key]


def load_safety(doc: dict, pointer: str = "/safety",
                origin_interior: bool = False) -> HPolytope:
    try:
        return HPolytope(_require(doc, "normals", pointer),
                         _require(doc, "offsets", pointer),
                         origin_interior=origin_interior
                         or bool(doc.get("origin_interior", False)))
    except geometry.GeometryError as exc:
        raise ConfigError(pointer, str(exc))


def load_uncertainty(doc: dict, pointer: str = "/uncertainty"):
    kind = _require(doc, "kind", pointer)
    try:
        if kind == "facet":
            facets = [(np.array(f["V"]), float(f["v"]))
                      for f in _require(doc, "facets", pointer)]
            return MatrixPolytope(facets)
        if kind == "interval":
            return MatrixPolytope.interval(_require(doc, "lower", pointer),
                                           _require(doc, "upper", pointer))
        if kind == "frobenius_ball":
            return MatrixEllipsoid.frobenius_ball(
                np.array(_require(doc, "center", pointer)),
                float(_require(doc, "radius", pointer)))
        if kind == "quadratic":
            return MatrixEllipsoid(np.array(_require(doc, "P", pointer)),
                                   np.array(_require(doc, "r", pointer)),
                                   float(_require(doc, "s", pointer)))
    except geometry.GeometryError as exc:
        raise ConfigError(pointer, str(exc))
    raise ConfigError(f"{pointer}/kind", f"unknown uncertainty kind {kind!r}")


def load_plant(doc: dict, pointer: str = "/plant") -> Plant:
    A = np.array(_require(doc, "A_star", pointer), dtype=float)
    g_doc = doc.get("g_star")
    g = None
    if g_doc:
        kind = _require(g_doc, "kind", f"{pointer}/g_star")
        if kind.startswith("catalog:"):
            g = catalog_residual(kind.split(":", 1)[1],
                                 float(g_doc.get("gamma", 0.0)))
        elif kind == "poly":
            g = poly_residual(_require(g_doc, "tables", f"{pointer}/g_star"),
                              g_doc.get("sin2_tables"))
        else:
            raise ConfigError(f"{pointer}/g_star/kind", f"unknown kind {kind!r}")
    return Plant(A, g_star=g)


def load_cost(doc: dict, pointer: str = "/cost"):
    c = np.array(_require(doc, "c", pointer), dtype=float)
    return c, float(doc.get("offset", 0.0))


def load_config(path: str) -> dict:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as exc:
        raise ConfigError("/", f"cannot read {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError("/", f"invalid JSON: {exc}")
    if not isinstance(doc, dict):
        raise ConfigError("/", "top-level document must be an object")
    return doc


# ---------------------------------------------------------------------------
# safeset subcommand
# ---------------------------------------------------------------------------


def _build_program(mode: str, doc: dict, args) -> "conic.ConicProgram":
    normalized = mode in ("inf-linear", "nl-inf")
    S = load_safety(_require(doc, "safety", ""), origin_interior=normalized)
    base = load_uncertainty(_require(doc, "uncertainty", ""))
    c, c0 = load_cost(doc.get("cost", {"c": [0.0] * S.dim}))
    U = UncertaintyState(base)
    for pair in doc.get("equality_data", []):
        U = U.with_equality(np.array(pair["x"]), np.array(pair["y"]))
    for entry in doc.get("residual_data", []):
        U = U.with_residual(np.array(entry["x"]), np.array(entry["y"]),
                            float(entry["rho"]),
                            np.inf if entry.get("norm", "inf") == "inf" else 2)
    if mode == "one":
        return safesets.one_step_program(S, U, c, c0)
    if mode == "two":
        return safesets.two_step_program(S, U, c, c0)
    if mode == "inf-linear":
        return safesets.inf_linear_program(S, U, c, args.degree, c0)
    if mode == "nl-one":
        env_doc = doc.get("envelope", {})
        gamma = args.gamma if args.gamma is not None else float(env_doc.get("gamma", 0.0))
        env = NonlinearEnvelope(gamma,
                                _parse_p(env_doc.get("p", "inf")),
                                int(env_doc.get("d", 0)))
        return safesets.nonlinear_one_step_program(S, U, env, c, c0)
    if mode == "nl-inf":
        env_doc = doc.get("envelope", {})
        gamma = args.gamma if args.gamma is not None else float(env_doc.get("gamma", 0.0))
        return safesets.nonlinear_inf_program(S, U, gamma, c, args.degree, c0)
    raise ConfigError("/mode", f"unknown mode {mode!r}")


def _parse_p(p):
    return np.inf if p in ("inf", None) else float(p)


def cmd_safeset(args) -> int:
    doc = load_config(args.config)
    prog = _build_program(args.mode, doc, args)
    if args.dump_program:
        conic.dump_program(prog, args.dump_program)
    settings = _solver_settings()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plane = tuple(int(v) for v in args.plane.split(","))
    S = load_safety(_require(doc, "safety", ""),
                    origin_interior=args.mode in ("inf-linear", "nl-inf"))
    if args.scan == "boundary":
        scan = safesets.boundary_scan(prog, plane, directions=args.directions,
                                      settings=settings)
        write_polygon_json(out / "scan_polygon.json", scan)
        layers = [SvgLayer("safety region", "#888888",
                           polygon=_safety_polygon(S, plane)),
                  SvgLayer(f"{args.mode} safe set", "#1f77b4", polygon=scan.polygon)]
        render_svg(out / "scan.svg", layers)
    else:
        lo, hi = S.bounding_box()
        scan = safesets.grid_scan(prog, plane, resolution=args.resolution,
                                  box=((lo[plane[0]], hi[plane[0]]),
                                       (lo[plane[1]], hi[plane[1]])),
                                  settings=settings)
    write_scan_csv(out / "scan.csv", scan)
    print(f"scan written to {out}")
    return 0


def _safety_polygon(S: HPolytope, plane, directions: int = 90) -> np.ndarray:
    """Support polygon of the plane projection of the safety region."""
    from safelearn.conic import ConicProgram, LinExpr

    prog = ConicProgram()
    x = prog.add_vars("x", S.dim)
    for h, b in zip(S.normals, S.offsets):
        prog.add_ineq(LinExpr({x[j]: -h[j] for j in range(S.dim)}, b))
    prog.meta["x"] = x
    scan = safesets.boundary_scan(prog, plane, directions=directions)
    return scan.polygon


# ---------------------------------------------------------------------------
# learn subcommand
# ---------------------------------------------------------------------------


def cmd_learn(args) -> int:
    doc = load_config(args.config)
    normalized = args.algo == "inf"
    S = load_safety(_require(doc, "safety", ""), origin_interior=normalized)
    base = load_uncertainty(_require(doc, "uncertainty", ""))
    plant = load_plant(_require(doc, "plant", ""))
    c, c0 = load_cost(_require(doc, "cost", ""))
    cfg = LearnConfig(epsilon=args.epsilon, seed=args.seed,
                      max_steps=args.budget, settings=_solver_settings())
    if args.algo == "one":
        report = learning.one_step_learn(S, base, c, cfg, plant, c0)
    elif args.algo == "one-offline":
        report = learning.offline_one_step_learn(S, base, c, cfg, plant, c0)
    elif args.algo == "two":
        report = learning.two_step_learn(S, base, c, cfg, plant, c0)
    elif args.algo == "inf":
        report = learning.inf_step_learn(S, base, c, cfg, plant, args.degree, c0)
    else:
        raise ConfigError("/algo", f"unknown algorithm {args.algo!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as f:
        f.write(report.dumps())
    print(f"outcome: {report.outcome}  total cost: {report.total_cost:.6f}")
    print(f"report written to {out / 'report.json'}")
    return 0


# ---------------------------------------------------------------------------
# verify subcommand
# ---------------------------------------------------------------------------


def cmd_verify(args) -> int:
    doc = load_config(args.config)
    S = load_safety(_require(doc, "safety", ""),
                    origin_interior=bool(doc.get("safety", {}).get("origin_interior")))
    base = load_uncertainty(_require(doc, "uncertainty", ""))
    U = UncertaintyState(base)
    failures = 0
    checked = 0
    if args.report:
        with open(args.report) as f:
            report = json.load(f)
        mats = oracle.sample_uncertainty(U, args.samples, args.seed)
        for p in report.get("points", []):
            checked += 1
            if not oracle.check_T_step_safe(np.array(p), mats, S, T=args.horizon):
                failures += 1
    if args.scan:
        with open(args.scan) as f:
            poly = json.load(f)
        verts = np.array(poly.get("vertices", []))
        mats = oracle.sample_uncertainty(U, args.samples, args.seed)
        for p in verts:
            checked += 1
            if not oracle.check_T_step_safe(p, mats, S, T=args.horizon):
                failures += 1
    print(f"verified {checked} points against {args.samples} sampled dynamics, "
          f"horizon {args.horizon}: {failures} failures")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# fit subcommand
# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    doc = load_config(args.config)
    S = load_safety(_require(doc, "safety", ""))
    base = load_uncertainty(_require(doc, "uncertainty", ""))
    plant = load_plant(_require(doc, "plant", ""))
    env_doc = doc.get("envelope", {})
    env = NonlinearEnvelope(float(env_doc.get("gamma", 0.0)),
                            _parse_p(env_doc.get("p", "inf")),
                            int(env_doc.get("d", 0)))
    settings = _solver_settings()
    data, _ = regression.explore_nonlinear_one_step(S, base, env, plant,
                                                    args.points, args.seed,
                                                    settings=settings)
    fit_data = data[: args.fit_points] if args.fit_points else data
    test = regression.sample_region(S, args.test_points, args.seed + 1)
    out = {"points": args.points, "fit_points": len(fit_data)}
    if args.constrained in ("no", "both"):
        model = regression.fit_least_squares(fit_data)
        out["rmse_ls"] = regression.rmse(model, plant, test)
    if args.constrained in ("yes", "both"):
        model = regression.fit_sos_constrained(fit_data, base, env.gamma, S,
                                               settings=settings)
        out["rmse_sos"] = regression.rmse(model, plant, test)
    print(json.dumps(out, indent=1))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        with open(Path(args.out) / "fit.json", "w") as f:
            json.dump(out, f, indent=1)
    return 0


# ---------------------------------------------------------------------------
# repro subcommand
# ---------------------------------------------------------------------------


class Checks:
    def __init__(self):
        self.entries = []

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.entries.append({"name": name, "pass": bool(ok), "detail": detail})
        print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))

    @property
    def ok(self) -> bool:
        return all(e["pass"] for e in self.entries)


def _repro_sec35(out: Path, checks: Checks, settings) -> None:
    inst = bench.instance("sec3.5")
    cfg = LearnConfig(epsilon=0.01, seed=0, settings=settings)
    rep = learning.one_step_learn(inst.S, inst.base, inst.c, cfg, inst.plant)
    err = np.inf if rep.A_hat is None else np.linalg.norm(rep.A_hat - inst.plant.A_star)
    checks.add("recovered in 4 steps", rep.recovered and len(rep.points) == 4,
               f"outcome={rep.outcome}, steps={len(rep.points)}")
    checks.add("recovery error <= 1e-6", err <= 1e-6, f"error={err:.2e}")
    lb = learning.learning_cost_lower_bound(inst.S, inst.plant.A_star, inst.c)
    checks.add("cost bracketed", lb - 1e-6 <= rep.total_cost <= -1.0 + 1e-6,
               f"cost={rep.total_cost:.4f}, bracket=[{lb:.4f}, -1]")
    checks.add("cost near reported value", abs(rep.total_cost + 1.6385) <= 0.05,
               f"cost={rep.total_cost:.4f} vs -1.6385 (solver-dependent)")
    off = learning.offline_one_step_learn(inst.S, inst.base, inst.c,
                                          LearnConfig(epsilon=0.001, seed=0,
                                                      settings=settings),
                                          inst.plant)
    checks.add("offline cost -> -1", off.recovered and abs(off.total_cost + 1.0) <= 0.01,
               f"offline cost={off.total_cost:.5f}")
    (out / "report_online.json").write_text(rep.dumps())
    (out / "report_offline.json").write_text(off.dumps())


def _repro_sec36(out: Path, checks: Checks, settings) -> None:
    inst = bench.instance("sec3.6")
    cfg = LearnConfig(epsilon=0.01, seed=0, settings=settings)
    off = learning.offline_one_step_learn(inst.S, inst.base, inst.c, cfg, inst.plant)
    checks.add("offline learning fails", off.outcome == learning.IMPOSSIBLE,
               off.notes)
    rep = learning.one_step_learn(inst.S, inst.base, inst.c, cfg, inst.plant)
    err = np.inf if rep.A_hat is None else np.linalg.norm(rep.A_hat - inst.plant.A_star)
    checks.add("online recovers in 2 steps",
               rep.recovered and len(rep.points) == 2 and err <= 1e-6,
               f"outcome={rep.outcome}, steps={len(rep.points)}, err={err:.2e}")
    U1 = UncertaintyState(inst.base).with_equality(
        rep.points[0], rep.trajectories[0].points[1])
    hull = inst.extras["hull_after_one"]
    both = all(U1.membership(H, 1e-6) for H in hull)
    single = learning._matrix_singleton(U1, 1e-6)
    checks.add("updated set contains both hull vertices and is not a singleton",
               both and single is None, f"members={both}, singleton={single is not None}")
    (out / "report_online.json").write_text(rep.dumps())


def _repro_sec43(out: Path, checks: Checks, settings) -> None:
    inst = bench.instance("sec4.3")
    cfg = LearnConfig(epsilon=0.01, seed=0, settings=settings)
    rep = learning.two_step_learn(inst.S, inst.base, inst.c, cfg, inst.plant)
    err = np.inf if rep.A_hat is None else np.linalg.norm(rep.A_hat - inst.plant.A_star)
    checks.add("recovered with 2 trajectories",
               rep.recovered and len(rep.trajectories) == 2 and err <= 1e-6,
               f"outcome={rep.outcome}, err={err:.2e}")
    lb = learning.learning_cost_lower_bound(inst.S, inst.plant.A_star, inst.c, steps=2)
    checks.add("lower bound -0.2097", abs(lb + 0.2097) <= 1e-3, f"lb={lb:.5f}")
    checks.add("cost near reported value and bracketed",
               abs(rep.total_cost + 0.1493) <= 0.03
               and lb - 1e-6 <= rep.total_cost <= -0.1099 + 1e-6,
               f"cost={rep.total_cost:.4f}")
    (out / "report.json").write_text(rep.dumps())


def _repro_sec551(out: Path, checks: Checks, settings, directions: int,
                  resolution: int) -> None:
    inst = bench.instance("sec5.5.1")
    U = UncertaintyState(inst.base)
    m2 = safesets.inf_level_margin(inst.S, U, 2, settings=settings)
    m4 = safesets.inf_level_margin(inst.S, U, 4, settings=settings)
    checks.add("level d=2 infeasible", m2 < safesets.EPS_FLOOR, f"margin={m2:.2e}")
    checks.add("level d=4 feasible", m4 >= safesets.EPS_FLOOR, f"margin={m4:.2e}")
    prog = safesets.inf_linear_program(inst.S, U, inst.c, 4)
    scan = safesets.boundary_scan(prog, (0, 1), directions=directions,
                                  settings=settings)
    area = safesets.polygon_area(scan.polygon)
    checks.add("scanned set full-dimensional", area > 0.01, f"area={area:.4f}")
    lo, hi = inst.S.bounding_box()
    xs, ys, undecided = oracle.outer_inf_set(inst.S, U, sample_count=200,
                                             T=inst.extras["outer_T"],
                                             resolution=resolution)
    mask = safesets.polygon_mask(scan.polygon, xs, ys)
    bad = int(np.sum(mask & ~undecided))
    checks.add("inner set inside sampled outer set", bad == 0,
               f"{bad} inner-but-outer grid points")
    write_scan_csv(out / "inner_polygon.csv", scan)
    write_polygon_json(out / "inner_polygon.json", scan)
    render_svg(out / "sets.svg", [
        SvgLayer("safety region", "#888888", polygon=_safety_polygon(inst.S, (0, 1))),
        SvgLayer("outer (sampled)", "#d62728",
                 points=np.column_stack(np.meshgrid(xs, ys, indexing="ij"))[undecided]
                 if undecided.any() else None),
        SvgLayer("inner approximation (d=4)", "#1f77b4", polygon=scan.polygon),
    ])


def _repro_sec552(out: Path, checks: Checks, settings, directions: int,
                  resolution: int) -> None:
    inst = bench.instance("sec5.5.2")
    cfg = LearnConfig(epsilon=0.01, seed=0, settings=settings)
    r1 = learning.one_step_learn(inst.S, inst.base, inst.c, cfg, inst.plant, inst.c0)
    r2 = learning.two_step_learn(inst.S, inst.base, inst.c, cfg, inst.plant, inst.c0)
    r3 = learning.inf_step_learn(inst.S, inst.base, inst.c, cfg, inst.plant,
                                 d=2, c0=inst.c0)
    exp = inst.extras["expected"]
    for name, rep, target in [("one-step", r1, exp["one_step_cost"]),
                              ("two-step", r2, exp["two_step_cost"]),
                              ("infinite-step", r3, exp["inf_step_cost"])]:
        err = np.inf if rep.A_hat is None else np.linalg.norm(rep.A_hat
                                                              - inst.plant.A_star)
        checks.add(f"{name} cost {target} +/- 0.05",
                   rep.recovered and abs(rep.total_cost - target) <= 0.05
                   and err <= 1e-5,
                   f"cost={rep.total_cost:.4f}, err={err:.1e}")
    U = UncertaintyState(inst.base)
    scans = {}
    progs = {
        "inf": safesets.inf_linear_program(inst.S, U, inst.c, 2, inst.c0),
        "two": safesets.two_step_program(inst.S, U, inst.c, inst.c0, steps=2),
        "one": safesets.two_step_program(inst.S, U, inst.c, inst.c0, steps=1),
    }
    for name, prog in progs.items():
        scans[name] = safesets.boundary_scan(prog, (0, 1), directions=directions,
                                             settings=settings)
    lo, hi = inst.S.bounding_box()
    xs = np.linspace(lo[0], hi[0], resolution)
    ys = np.linspace(lo[1], hi[1], resolution)
    m_inf = safesets.polygon_mask(scans["inf"].polygon, xs, ys)
    m_two = safesets.polygon_mask(scans["two"].polygon, xs, ys, tol=1e-7)
    m_one = safesets.polygon_mask(scans["one"].polygon, xs, ys, tol=1e-7)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X, Y], axis=-1)
    m_S = np.all(pts @ inst.S.normals.T <= inst.S.offsets + 1e-9, axis=-1)
    chain_ok = (not np.any(m_inf & ~m_two) and not np.any(m_two & ~m_one)
                and not np.any(m_one & ~m_S))
    checks.add("inclusion chain inf c= two c= one c= safety", chain_ok,
               f"violations: {int(np.sum(m_inf & ~m_two))}/"
               f"{int(np.sum(m_two & ~m_one))}/{int(np.sum(m_one & ~m_S))}")
    render_svg(out / "chain.svg", [
        SvgLayer("safety region", "#888888", polygon=_safety_polygon(inst.S, (0, 1))),
        SvgLayer("one-step", "#2ca02c", polygon=scans["one"].polygon),
        SvgLayer("two-step", "#ff7f0e", polygon=scans["two"].polygon),
        SvgLayer("infinite-step (d=2)", "#1f77b4", polygon=scans["inf"].polygon),
    ])


def _repro_sec63(out: Path, checks: Checks, settings, seeds: int) -> None:
    inst = bench.instance("sec6.3")
    env = NonlinearEnvelope(inst.extras["gamma"], np.inf, 0)
    exp = inst.extras["expected"]
    ordered = []
    rmse_ls, rmse_sos = [], []
    for seed in range(seeds):
        data, states = regression.explore_nonlinear_one_step(
            inst.S, inst.base, env, inst.plant, exp["exploration_points"],
            seed=seed, settings=settings)
        violations = 0
        for (x, y), U in zip(data, states):
            vals = [oracle.robust_linear_max(U, h, x)
                    + env.gamma * float(np.sum(np.abs(h)))
                    for h in inst.S.normals]
            if not inst.S.contains(x, 1e-7) or any(
                    v > b + 1e-6 for v, b in zip(vals, inst.S.offsets)):
                violations += 1
        checks.add(f"seed {seed}: exploration oracle-safe", violations == 0,
                   f"{violations} violations in {len(data)} steps")
        fit_data = data[: exp["fit_points"]]
        m_ls = regression.fit_least_squares(fit_data)
        m_sos = regression.fit_sos_constrained(fit_data, inst.base, env.gamma,
                                               inst.S, settings=settings)
        test = regression.sample_region(inst.S, 1000, seed=10_000 + seed)
        r_ls = regression.rmse(m_ls, inst.plant, test)
        r_sos = regression.rmse(m_sos, inst.plant, test)
        rmse_ls.append(r_ls)
        rmse_sos.append(r_sos)
        ordered.append(r_sos < r_ls)
    checks.add("constrained fit beats unconstrained for every seed",
               all(ordered), f"{sum(ordered)}/{len(ordered)} seeds ordered")
    pooled_ls = float(np.mean(rmse_ls))
    pooled_sos = float(np.mean(rmse_sos))
    checks.add("pooled unconstrained RMSE near reported value",
               abs(pooled_ls - exp["rmse_ls"]) <= 0.4 * exp["rmse_ls"],
               f"pooled={pooled_ls:.4f} vs {exp['rmse_ls']}")
    checks.add("pooled constrained RMSE near reported value",
               abs(pooled_sos - exp["rmse_sos"]) <= 0.4 * exp["rmse_sos"],
               f"pooled={pooled_sos:.4f} vs {exp['rmse_sos']}")
    (out / "rmse.json").write_text(json.dumps(
        {"rmse_ls": rmse_ls, "rmse_sos": rmse_sos}, indent=1))


def _repro_sec71(out: Path, checks: Checks, settings, directions: int,
                 resolution: int) -> None:
    inst = bench.instance("sec7.1")
    U = UncertaintyState(inst.base)
    d = inst.extras["degree"]
    witness = inst.extras["unstable_witness"]
    rho = float(np.max(np.abs(np.linalg.eigvals(witness))))
    checks.add("instability witness spectral radius 1.005",
               abs(rho - 1.005) <= 1e-9, f"rho={rho:.12f}")
    polys = {}
    for gamma in inst.extras["gammas"]:
        margin = safesets.inf_level_margin(inst.S, U, d, gamma=gamma,
                                           settings=settings)
        checks.add(f"gamma={gamma} feasible at d={d}",
                   margin >= safesets.EPS_FLOOR, f"margin={margin:.2e}")
        prog = safesets.nonlinear_inf_program(inst.S, U, gamma, inst.c, d)
        scan = safesets.boundary_scan(prog, (0, 1), directions=directions,
                                      settings=settings)
        polys[gamma] = scan.polygon
        area = safesets.polygon_area(scan.polygon)
        checks.add(f"gamma={gamma} scan full-dimensional", area > 0.01,
                   f"area={area:.4f}")
    bad_margin = safesets.inf_level_margin(inst.S, U, d,
                                           gamma=inst.extras["gamma_infeasible"],
                                           settings=settings)
    checks.add(f"gamma={inst.extras['gamma_infeasible']} infeasible",
               bad_margin < safesets.EPS_FLOOR, f"margin={bad_margin:.2e}")
    lo, hi = inst.S.bounding_box()
    xs = np.linspace(lo[0], hi[0], resolution)
    ys = np.linspace(lo[1], hi[1], resolution)
    gammas = inst.extras["gammas"]
    nested = True
    strict = True
    for g_small, g_big in zip(gammas, gammas[1:]):
        m_small = safesets.polygon_mask(polys[g_small], xs, ys, tol=1e-7)
        m_big = safesets.polygon_mask(polys[g_big], xs, ys)
        nested &= not np.any(m_big & ~m_small)
        strict &= bool(np.any(m_small & ~m_big))
    checks.add("sets strictly nested decreasing in gamma", nested and strict,
               f"nested={nested}, strict={strict}")
    render_svg(out / "ladder.svg",
               [SvgLayer("safety region", "#888888",
                         polygon=_safety_polygon(inst.S, (0, 1)))]
               + [SvgLayer(f"gamma={g}", color, polygon=polys[g])
                  for g, color in zip(gammas, ["#1f77b4", "#ff7f0e", "#2ca02c"])])


def cmd_repro(args) -> int:
    settings = _solver_settings()
    out = Path(args.out) / args.example.replace(".", "_")
    out.mkdir(parents=True, exist_ok=True)
    checks = Checks()
    directions = args.directions
    resolution = args.resolution
    if args.example == "sec3.5":
        _repro_sec35(out, checks, settings)
    elif args.example == "sec3.6":
        _repro_sec36(out, checks, settings)
    elif args.example == "sec4.3":
        _repro_sec43(out, checks, settings)
    elif args.example == "sec5.5.1":
        _repro_sec551(out, checks, settings, directions, resolution)
    elif args.example == "sec5.5.2":
        _repro_sec552(out, checks, settings, directions, resolution)
    elif args.example == "sec6.3":
        _repro_sec63(out, checks, settings, args.seeds)
    elif args.example == "sec7.1":
        _repro_sec71(out, checks, settings, directions, resolution)
    else:
        print(f"unknown example {args.example!r}; available: "
              f"{', '.join(bench.INSTANCE_IDS)}", file=sys.stderr)
        return 2
    (out / "report.json").write_text(json.dumps(
        {"example": args.example, "checks": checks.entries,
         "pass": checks.ok}, indent=1))
    print(f"{'PASS' if checks.ok else 'FAIL'}: {args.example} "
          f"({sum(e['pass'] for e in checks.entries)}/{len(checks.entries)} checks)")
    return 0 if checks.ok else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safelearn",
        description="Safe-set computation and safe learning experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("safeset", help="build and scan a safe-set formulation")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", required=True,
                   choices=["one", "two", "inf-linear", "nl-one", "nl-inf"])
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--plane", default="0,1")
    p.add_argument("--scan", default="boundary", choices=["grid", "boundary"])
    p.add_argument("--resolution", type=int, default=101)
    p.add_argument("--directions", type=int, default=360)
    p.add_argument("--out", default="out")
    p.add_argument("--dump-program", default=None)
    p.set_defaults(func=cmd_safeset)

    p = sub.add_parser("learn", help="run a safe-learning algorithm")
    p.add_argument("--config", required=True)
    p.add_argument("--algo", required=True,
                   choices=["one", "one-offline", "two", "inf"])
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("verify", help="oracle-check a scan or learn report")
    p.add_argument("--config", required=True)
    p.add_argument("--report", default=None)
    p.add_argument("--scan", default=None)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--horizon", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("fit", help="safe exploration + regression experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--points", type=int, default=30)
    p.add_argument("--fit-points", type=int, default=8)
    p.add_argument("--constrained", default="both", choices=["yes", "no", "both"])
    p.add_argument("--test-points", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("repro", help="run a bundled benchmark end to end")
    p.add_argument("example", choices=list(bench.INSTANCE_IDS))
    p.add_argument("--out", default="out")
    p.add_argument("--directions", type=int, default=24)
    p.add_argument("--resolution", type=int, default=101)
    p.add_argument("--seeds", type=int, default=3)
    p.set_defaults(func=cmd_repro)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
