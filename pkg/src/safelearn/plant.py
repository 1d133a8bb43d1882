"""Simulated ground-truth systems answering initialization queries.

Plants are strictly oracle-side: formulation and learning code never reads
the true matrix; it only observes trajectories through :func:`observe`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = ["Plant", "Trajectory", "observe", "catalog_residual"]


def _sec63_residual(gamma: float) -> Callable[[np.ndarray], np.ndarray]:
    def g(x: np.ndarray) -> np.ndarray:
        return 0.5 * gamma * np.array([
            x[1] ** 2 - x[2] * x[3],
            np.sqrt(x[0] ** 4 + x[2] ** 4),
            x[2] * np.sin(x[0]) ** 2,
            np.sin(x[1]) ** 2,
        ])
    return g


def catalog_residual(name: str, gamma: float) -> Callable[[np.ndarray], np.ndarray]:
    """Built-in nonlinear residuals; ``quad4`` is the bounded four-state
    benchmark residual (quadratic/irrational/trigonometric mix)."""
    if name in ("quad4", "sec63"):
        return _sec63_residual(gamma)
    raise KeyError(f"unknown catalog residual {name!r}")


def poly_residual(tables, sin2_tables=None) -> Callable[[np.ndarray], np.ndarray]:
    """Residual from per-coordinate term tables.

    Each table is a list of {"coef": c, "exponents": [e_1..e_n]} entries; the
    optional sin2 tables add terms c * prod x_i^e_i * sin(x_j)^2 via an extra
    "sin2_index" key.
    """
    tables = [list(t) for t in tables]
    sin2_tables = [list(t) for t in sin2_tables] if sin2_tables else None

    def g(x: np.ndarray) -> np.ndarray:
        out = np.zeros(len(tables))
        for i, terms in enumerate(tables):
            for term in terms:
                val = term["coef"]
                for j, e in enumerate(term["exponents"]):
                    if e:
                        val *= x[j] ** e
                out[i] += val
        if sin2_tables:
            for i, terms in enumerate(sin2_tables):
                for term in terms:
                    val = term["coef"] * np.sin(x[term["sin2_index"]]) ** 2
                    for j, e in enumerate(term.get("exponents", [])):
                        if e:
                            val *= x[j] ** e
                    out[i] += val
        return out

    return g


@dataclass
class Trajectory:
    """Observed orbit segment y_0 .. y_T with y_{t+1} = f(y_t)."""

    points: np.ndarray
    origin: str = ""

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))

    def __len__(self) -> int:
        return self.points.shape[0]

    def pairs(self):
        return [(self.points[t - 1].copy(), self.points[t].copy())
                for t in range(1, len(self))]


@dataclass
class Plant:
    """Hidden true dynamics x+ = A x + g(x) (g optional)."""

    A_star: np.ndarray
    g_star: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "plant"

    def __post_init__(self):
        self.A_star = np.asarray(self.A_star, dtype=float)

    @property
    def n(self) -> int:
        return self.A_star.shape[0]

    def step(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = self.A_star @ x
        if self.g_star is not None:
            out = out + self.g_star(x)
        return out

    def audit_envelope(self, S, gamma: float, p_norm=np.inf, d_growth: int = 0,
                       samples: int = 10_000, seed: int = 0,
                       tol: float = 1e-9) -> bool:
        """Sampling audit that the residual satisfies
        ||g(x)||_inf <= gamma ||x||_p^d on S; warns on violation."""
        if self.g_star is None:
            return True
        rng = np.random.default_rng(seed)
        lo, hi = S.bounding_box()
        ok = True
        found = 0
        while found < samples:
            x = rng.uniform(lo, hi)
            if not S.contains(x):
                continue
            found += 1
            if p_norm in (np.inf, "inf"):
                base = np.max(np.abs(x))
            else:
                base = np.linalg.norm(x, ord=p_norm)
            bound = gamma * base ** d_growth
            if np.max(np.abs(self.g_star(x))) > bound + tol:
                ok = False
                break
        if not ok:
            warnings.warn("plant residual violates its declared growth envelope")
        return ok


def observe(plant: Plant, x0, T: int, origin: str = "") -> Trajectory:
    """Deterministic rollout of length T (T+1 points including x0).

    A non-finite state aborts: it means an unsafe query slipped through,
    which callers treat as a test failure rather than data.
    """
    if T < 1:
        raise ValueError("trajectory length must be at least 1")
    x = np.asarray(x0, dtype=float)
    pts = [x.copy()]
    for _ in range(T):
        x = plant.step(x)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(
                f"trajectory from {np.asarray(x0)} diverged; query was unsafe")
        pts.append(x.copy())
    return Trajectory(np.array(pts), origin=origin)
