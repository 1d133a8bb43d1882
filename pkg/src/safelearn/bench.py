"""Bundled benchmark instances used by the CLI ``repro`` targets and the
acceptance suite.

Instance ids follow the experiment labels used throughout the project
(``sec3.5`` .. ``sec7.1``).  All data is inlined; nothing is downloaded.

Note on ``sec5.5.1`` / ``sec7.1``: the off-diagonal budget of the segment
uncertainty set is 9/10.  Only that value makes every member Schur stable
(spectral radius 1/2 + sqrt(t(9/10 - t)) <= 0.95) and puts the gamma-ladder
witness [[0.5, 0.45], [0.45, 0.5]] on the segment, both of which the
experiments rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from safelearn.geometry import HPolytope, MatrixEllipsoid, MatrixPolytope
from safelearn.plant import Plant, catalog_residual

__all__ = ["BenchInstance", "instance", "INSTANCE_IDS"]


A_STAR_4 = np.array([
    [2.0, 1.0, 4.0, 2.0],
    [2.0, -3.0, -1.0, -2.0],
    [-2.0, -3.0, 1.0, 0.0],
    [2.0, 0.0, -2.0, 2.0],
])

A_NOMINAL_4 = np.array([
    [2.25, 0.75, 4.25, 1.75],
    [2.25, -3.25, -1.25, -2.25],
    [-2.00, -2.75, 1.25, 0.00],
    [1.75, -0.25, -2.00, 2.00],
])

TRIANGLE_S = (np.array([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]),
              np.array([1.0, 1.0, 1.0]))


@dataclass
class BenchInstance:
    name: str
    S: HPolytope
    base: object = None
    c: np.ndarray = None
    c0: float = 0.0
    plant: Optional[Plant] = None
    extras: dict = field(default_factory=dict)


def _segment_uncertainty() -> MatrixPolytope:
    E11 = np.zeros((2, 2)); E11[0, 0] = 1.0
    E22 = np.zeros((2, 2)); E22[1, 1] = 1.0
    E12 = np.zeros((2, 2)); E12[0, 1] = 1.0
    E21 = np.zeros((2, 2)); E21[1, 0] = 1.0
    budget = 0.9
    facets = [
        (E11, 0.5), (-E11, -0.5),
        (E22, 0.5), (-E22, -0.5),
        (E12 + E21, budget), (-(E12 + E21), -budget),
        (-E12, 0.0), (-E21, 0.0),
    ]
    return MatrixPolytope(facets)


def _sec3_5() -> BenchInstance:
    return BenchInstance(
        name="sec3.5",
        S=HPolytope.box(4),
        base=MatrixPolytope.entrywise_bound(4, 4.0),
        c=np.array([-1.0, -1.0, 0.0, 0.0]),
        plant=Plant(A_STAR_4, name="sec3.5"),
        extras={"expected": {"online_cost": -1.6385, "offline_limit": -1.0,
                             "lower_bound": -2.2264, "steps": 4}},
    )


def _sec3_6() -> BenchInstance:
    lower = np.array([[1.0, 0.0], [0.0, 1.0]])
    upper = np.array([[2.0, 1.0], [1.0, 2.0]])
    hull_after_one = [np.array([[1.0, 0.0], [0.0, 2.0]]),
                      np.array([[1.0, 0.0], [1.0, 1.0]])]
    return BenchInstance(
        name="sec3.6",
        S=HPolytope.from_bounds([1.0, 1.0], [3.0, 3.0]),
        base=MatrixPolytope.interval(lower, upper),
        c=np.array([-1.0, -1.0]),
        plant=Plant(np.array([[1.0, 0.0], [1.0, 1.0]]), name="sec3.6"),
        extras={"hull_after_one": hull_after_one, "expected": {"steps": 2}},
    )


def _sec4_3() -> BenchInstance:
    return BenchInstance(
        name="sec4.3",
        S=HPolytope.box(4),
        base=MatrixEllipsoid.frobenius_ball(A_NOMINAL_4, 1.0),
        c=np.array([-1.0, 0.0, 0.0, 0.0]),
        plant=Plant(A_STAR_4, name="sec4.3"),
        extras={"expected": {"online_cost": -0.1493, "offline_cost": -0.1099,
                             "lower_bound": -0.2097, "trajectories": 2}},
    )


def _sec5_5_1() -> BenchInstance:
    return BenchInstance(
        name="sec5.5.1",
        S=HPolytope(*TRIANGLE_S),
        base=_segment_uncertainty(),
        c=np.array([-1.0, 0.0]),
        extras={"degrees": {"infeasible": 2, "feasible": 4}, "outer_T": 10},
    )


def _sec5_5_2() -> BenchInstance:
    center = np.array([[1.0, 0.5], [-0.5, 0.5]])
    return BenchInstance(
        name="sec5.5.2",
        S=HPolytope(*TRIANGLE_S),
        base=MatrixEllipsoid.frobenius_ball(center, 0.1),
        c=np.array([-1.0, 0.0]),
        c0=3.0,
        plant=Plant(np.array([[1.05, 0.5], [-0.5, 0.5]]), name="sec5.5.2"),
        extras={"expected": {"one_step_cost": 3.1489, "two_step_cost": 1.9252,
                             "inf_step_cost": 2.0080, "inf_degree": 2}},
    )


def _sec6_3() -> BenchInstance:
    gamma = 0.1
    return BenchInstance(
        name="sec6.3",
        S=HPolytope.box(4),
        base=MatrixPolytope.interval(np.full((4, 4), -4.0), np.full((4, 4), 8.0)),
        c=np.array([-1.0, 0.0, 0.0, 0.0]),
        plant=Plant(A_STAR_4, g_star=catalog_residual("quad4", gamma), name="sec6.3"),
        extras={"gamma": gamma, "figure_gammas": [0.0, 0.4, 0.8],
                "expected": {"rmse_sos": 0.0851, "rmse_ls": 0.2567,
                             "exploration_points": 30, "fit_points": 8}},
    )


def _sec7_1() -> BenchInstance:
    inst = _sec5_5_1()
    witness = np.array([[0.555, 0.45], [0.45, 0.555]])
    return BenchInstance(
        name="sec7.1",
        S=inst.S,
        base=inst.base,
        c=inst.c,
        extras={"gammas": [0.0, 0.02, 0.04], "gamma_infeasible": 0.06,
                "degree": 4, "unstable_witness": witness},
    )


_REGISTRY = {
    "sec3.5": _sec3_5,
    "sec3.6": _sec3_6,
    "sec4.3": _sec4_3,
    "sec5.5.1": _sec5_5_1,
    "sec5.5.2": _sec5_5_2,
    "sec6.3": _sec6_3,
    "sec7.1": _sec7_1,
}

INSTANCE_IDS = tuple(sorted(_REGISTRY))


def instance(name: str) -> BenchInstance:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown instance {name!r}; available: {INSTANCE_IDS}")
