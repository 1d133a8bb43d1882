"""Polynomial-matrix algebra and SOS/Putinar certificate compilation.

Polynomials here live in ``nvars`` scalar indeterminates; for the matrix-set
formulations the indeterminates are the n^2 entries of a matrix variable in
column-major order (entry (i, j) is indeterminate j*n + i), matching
``geometry.vec``.  Scalar polynomials with numeric coefficients are plain
``{exponent_tuple: float}`` dicts; a :class:`PolyMatrix` is a symmetric matrix
of polynomials whose coefficients may be affine in conic-program variables.

Compilation of an SOS-matrix constraint allocates a Gram PSD block in the
conic program and returns the symbolic expansion ``(z kron I)^T G (z kron I)``
so that certificate identities reduce to exact linear coefficient matching.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from safelearn.conic import ConicProgram, LinExpr

__all__ = [
    "MonomialBasis",
    "PolyMatrix",
    "SosWitnessSpec",
    "DegreeOverflow",
    "monomials_up_to",
    "poly_add",
    "poly_mul",
    "poly_scale",
    "poly_eval",
    "affine_poly",
    "new_sos_matrix_var",
    "new_free_poly_matrix",
    "coeff_match",
    "putinar_rhs",
]

Monomial = tuple


class DegreeOverflow(ValueError):
    pass


def monomials_up_to(nvars: int, degree: int) -> list:
    """All exponent tuples with total degree <= degree, graded lex order."""
    out = []
    for total in range(degree + 1):
        out.extend(_fixed_degree(nvars, total))
    return out


def _fixed_degree(nvars: int, total: int) -> list:
    if nvars == 1:
        return [(total,)]
    out = []
    for first in range(total, -1, -1):
        for rest in _fixed_degree(nvars - 1, total - first):
            out.append((first,) + rest)
    return out


@dataclass(frozen=True)
class MonomialBasis:
    """Ordered monomial list for a fixed variable count and degree bound."""

    nvars: int
    degree: int

    def __post_init__(self):
        object.__setattr__(self, "monomials", tuple(monomials_up_to(self.nvars, self.degree)))
        object.__setattr__(self, "index", {m: i for i, m in enumerate(self.monomials)})

    def __len__(self):
        return len(self.monomials)


# ---------------------------------------------------------------------------
# numeric scalar polynomials as {monomial: float} dicts
# ---------------------------------------------------------------------------


def poly_add(a: dict, b: dict) -> dict:
    out = dict(a)
    for m, c in b.items():
        out[m] = out.get(m, 0.0) + c
    return {m: c for m, c in out.items() if c != 0.0}


def poly_scale(a: dict, s: float) -> dict:
    return {m: c * s for m, c in a.items()}


def poly_mul(a: dict, b: dict) -> dict:
    out: dict = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            m = tuple(x + y for x, y in zip(ma, mb))
            out[m] = out.get(m, 0.0) + ca * cb
    return {m: c for m, c in out.items() if c != 0.0}


def poly_eval(a: dict, point: np.ndarray) -> float:
    total = 0.0
    for m, c in a.items():
        term = c
        for i, e in enumerate(m):
            if e:
                term *= point[i] ** e
        total += term
    return total


def poly_degree(a: dict) -> int:
    return max((sum(m) for m in a), default=0)


def affine_poly(nvars: int, const: float, lin: Optional[np.ndarray] = None) -> dict:
    """const + lin . vars as a coefficient dict."""
    out = {}
    if const != 0.0:
        out[(0,) * nvars] = float(const)
    if lin is not None:
        for i, c in enumerate(np.asarray(lin, dtype=float)):
            if c != 0.0:
                m = tuple(1 if j == i else 0 for j in range(nvars))
                out[m] = out.get(m, 0.0) + c
    return out


def quadratic_poly(nvars: int, P: np.ndarray, r: np.ndarray, s: float) -> dict:
    """vec^T P vec + r . vec + s as a coefficient dict."""
    out = affine_poly(nvars, s, r)
    P = np.asarray(P, dtype=float)
    for i in range(nvars):
        for j in range(i, nvars):
            c = P[i, j] + (P[j, i] if j != i else 0.0)
            if c != 0.0:
                m = [0] * nvars
                m[i] += 1
                m[j] += 1
                out[tuple(m)] = out.get(tuple(m), 0.0) + c
    return out


# ---------------------------------------------------------------------------
# polynomial matrices with affine coefficients
# ---------------------------------------------------------------------------


class PolyMatrix:
    """Symmetric-capable k x k matrix of polynomials.

    ``coeffs[mono]`` is a map ``{None: C0, var_index: Cv, ...}`` of k x k
    arrays meaning the coefficient of ``mono`` is ``C0 + sum_v z_v Cv``.
    Products require at most one symbolic operand.
    """

    __slots__ = ("nvars", "size", "coeffs", "witness")

    def __init__(self, nvars: int, size: int, coeffs: Optional[dict] = None):
        self.nvars = nvars
        self.size = size
        self.coeffs = coeffs if coeffs is not None else {}
        self.witness = None

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls, nvars: int, size: int) -> "PolyMatrix":
        return cls(nvars, size)

    @classmethod
    def constant(cls, nvars: int, M: np.ndarray) -> "PolyMatrix":
        M = np.asarray(M, dtype=float)
        out = cls(nvars, M.shape[0])
        if np.any(M != 0.0):
            out.coeffs[(0,) * nvars] = {None: M.copy()}
        return out

    @classmethod
    def matrix_variable(cls, n: int) -> "PolyMatrix":
        """The n x n matrix of indeterminates itself, entry (i, j) being the
        degree-one monomial of vec-index j*n + i."""
        nvars = n * n
        out = cls(nvars, n)
        for i in range(n):
            for j in range(n):
                m = [0] * nvars
                m[j * n + i] = 1
                E = np.zeros((n, n))
                E[i, j] = 1.0
                out.coeffs.setdefault(tuple(m), {None: np.zeros((n, n))})
                out.coeffs[tuple(m)][None] += E
        return out

    @classmethod
    def from_scalar_poly(cls, nvars: int, poly: dict) -> "PolyMatrix":
        out = cls(nvars, 1)
        for m, c in poly.items():
            out.coeffs[m] = {None: np.array([[float(c)]])}
        return out

    def copy(self) -> "PolyMatrix":
        return PolyMatrix(self.nvars, self.size,
                          {m: {k: v.copy() for k, v in cm.items()}
                           for m, cm in self.coeffs.items()})

    # -- structure ---------------------------------------------------------

    def is_numeric(self) -> bool:
        return all(set(cm) <= {None} for cm in self.coeffs.values())

    def degree(self) -> int:
        return max((sum(m) for m in self.coeffs), default=0)

    def _accum(self, mono, key, mat) -> None:
        cm = self.coeffs.setdefault(mono, {})
        if key in cm:
            cm[key] = cm[key] + mat
        else:
            cm[key] = np.array(mat, dtype=float)

    # -- ring operations ---------------------------------------------------

    def __add__(self, other: "PolyMatrix") -> "PolyMatrix":
        out = self.copy()
        for m, cm in other.coeffs.items():
            for k, v in cm.items():
                out._accum(m, k, v)
        return out

    def __sub__(self, other: "PolyMatrix") -> "PolyMatrix":
        return self + other.scale(-1.0)

    def scale(self, s: float) -> "PolyMatrix":
        return PolyMatrix(self.nvars, self.size,
                          {m: {k: v * s for k, v in cm.items()}
                           for m, cm in self.coeffs.items()})

    def transpose(self) -> "PolyMatrix":
        return PolyMatrix(self.nvars, self.size,
                          {m: {k: v.T.copy() for k, v in cm.items()}
                           for m, cm in self.coeffs.items()})

    def scale_by_poly(self, g: dict, max_degree: Optional[int] = None) -> "PolyMatrix":
        """Multiply by a numeric scalar polynomial."""
        out = PolyMatrix(self.nvars, self.size)
        for mg, cg in g.items():
            for m, cm in self.coeffs.items():
                mono = tuple(a + b for a, b in zip(mg, m))
                if max_degree is not None and sum(mono) > max_degree:
                    raise DegreeOverflow(f"degree {sum(mono)} exceeds bound {max_degree}")
                for k, v in cm.items():
                    out._accum(mono, k, v * cg)
        return out

    def matmul(self, other: "PolyMatrix") -> "PolyMatrix":
        """Matrix-polynomial product; at most one operand may be symbolic."""
        if not (self.is_numeric() or other.is_numeric()):
            raise ValueError("product of two symbolic polynomial matrices")
        out = PolyMatrix(self.nvars, max(self.size, other.size))
        out.size = self.size  # rows from self; shapes validated by numpy below
        for ma, ca in self.coeffs.items():
            for mb, cb in other.coeffs.items():
                mono = tuple(x + y for x, y in zip(ma, mb))
                for ka, va in ca.items():
                    for kb, vb in cb.items():
                        key = ka if kb is None else kb
                        out._accum(mono, key, va @ vb)
        return out

    def congruence(self, L: np.ndarray) -> "PolyMatrix":
        """L M L^T for a numeric matrix L (rows may differ from size)."""
        L = np.atleast_2d(np.asarray(L, dtype=float))
        out = PolyMatrix(self.nvars, L.shape[0])
        for m, cm in self.coeffs.items():
            for k, v in cm.items():
                out._accum(m, k, L @ v @ L.T)
        return out

    # -- evaluation and conversion ------------------------------------------

    def entry(self, i: int, j: int) -> dict:
        """Entry (i, j) as {monomial: LinExpr}."""
        out = {}
        for m, cm in self.coeffs.items():
            terms = {}
            const = 0.0
            for k, v in cm.items():
                if k is None:
                    const = float(v[i, j])
                elif v[i, j] != 0.0:
                    terms[k] = float(v[i, j])
            if terms or const != 0.0:
                out[m] = LinExpr(terms, const)
        return out

    def coefficient_expr(self, mono, i: int, j: int) -> LinExpr:
        cm = self.coeffs.get(mono)
        if not cm:
            return LinExpr()
        terms = {}
        const = 0.0
        for k, v in cm.items():
            if k is None:
                const = float(v[i, j])
            elif v[i, j] != 0.0:
                terms[k] = float(v[i, j])
        return LinExpr(terms, const)

    def evaluate(self, point: np.ndarray, values: Optional[np.ndarray] = None) -> np.ndarray:
        """Numeric value at indeterminates = point, program variables = values."""
        out = np.zeros((self.size, self.size))
        for m, cm in self.coeffs.items():
            scale = 1.0
            for i, e in enumerate(m):
                if e:
                    scale *= point[i] ** e
            for k, v in cm.items():
                if k is None:
                    out += scale * v
                else:
                    out += scale * values[k] * v
        return out


def block_poly_matrix(nvars: int, layout: Sequence[Sequence], sizes: Sequence[int]) -> PolyMatrix:
    """Assemble a block PolyMatrix; ``layout[i][j]`` is a PolyMatrix or None."""
    total = int(sum(sizes))
    offs = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    out = PolyMatrix(nvars, total)
    for bi, row in enumerate(layout):
        for bj, blk in enumerate(row):
            if blk is None:
                continue
            for m, cm in blk.coeffs.items():
                for k, v in cm.items():
                    full = np.zeros((total, total))
                    full[offs[bi]:offs[bi] + v.shape[0], offs[bj]:offs[bj] + v.shape[1]] = v
                    out._accum(m, k, full)
    return out


# ---------------------------------------------------------------------------
# SOS variables and certificate compilation
# ---------------------------------------------------------------------------


@dataclass
class SosWitnessSpec:
    """Where to find the Gram matrix of an SOS (matrix) variable in a solved
    program: ``gram_indices[p, q]`` is the program-variable index of G[p, q],
    and the expansion is (z kron I_size)^T G (z kron I_size)."""

    size: int
    z_monomials: tuple
    gram_indices: np.ndarray

    def gram_value(self, values: np.ndarray) -> np.ndarray:
        K = self.gram_indices.shape[0]
        return values[self.gram_indices].reshape(K, K)


def new_sos_matrix_var(prog: ConicProgram, size: int, nvars: int, degree: int,
                       name: str = "S") -> PolyMatrix:
    """Fresh SOS matrix of the given size with degree <= degree (even).

    Allocates one Gram PSD block of side size * |z| where z runs over the
    monomials of degree <= degree/2, and returns the symbolic expansion.  The
    witness spec is attached to the conic program under ``meta['sos']``.
    """
    if degree % 2 != 0:
        raise ValueError("SOS degree must be even")
    z = tuple(monomials_up_to(nvars, degree // 2))
    N = len(z)
    K = size * N
    block = prog.add_psd_var(name, K)
    gram_idx = np.empty((K, K), dtype=int)
    for p in range(K):
        for q in range(K):
            gram_idx[p, q] = next(iter(block[p][q].terms))
    out = PolyMatrix(nvars, size)
    for a in range(N):
        for b in range(N):
            mono = tuple(x + y for x, y in zip(z[a], z[b]))
            cm = out.coeffs.setdefault(mono, {})
            for i in range(size):
                for j in range(size):
                    var = int(gram_idx[a * size + i, b * size + j])
                    mat = cm.get(var)
                    if mat is None:
                        mat = np.zeros((size, size))
                        cm[var] = mat
                    mat[i, j] += 1.0
    spec = SosWitnessSpec(size=size, z_monomials=z, gram_indices=gram_idx)
    prog.meta.setdefault("sos", []).append(spec)
    out.witness = spec
    return out


def new_free_poly_matrix(prog: ConicProgram, size: int, nvars: int, degree: int,
                         name: str = "F") -> PolyMatrix:
    """Fresh symmetric polynomial matrix with unconstrained coefficients."""
    out = PolyMatrix(nvars, size)
    for m in monomials_up_to(nvars, degree):
        cm = {}
        for i in range(size):
            for j in range(i, size):
                v = prog.add_var(f"{name}{list(m)}[{i},{j}]")
                E = np.zeros((size, size))
                E[i, j] = 1.0
                E[j, i] = 1.0
                cm[v] = E
        out.coeffs[m] = cm
    return out


def coeff_match(prog: ConicProgram, lhs: PolyMatrix, rhs: PolyMatrix) -> int:
    """Append the linear equalities making lhs and rhs identical as
    polynomial matrices; returns the number of equalities added."""
    if lhs.size != rhs.size or lhs.nvars != rhs.nvars:
        raise ValueError("polynomial matrices must have matching shape")
    monos = set(lhs.coeffs) | set(rhs.coeffs)
    count = 0
    for m in sorted(monos, key=lambda t: (sum(t), tuple(-e for e in t))):
        for i in range(lhs.size):
            for j in range(i, lhs.size):
                e = lhs.coefficient_expr(m, i, j) - rhs.coefficient_expr(m, i, j)
                e.terms = {k: v for k, v in e.terms.items() if v != 0.0}
                if e.terms or e.const != 0.0:
                    prog.add_eq(e)
                    count += 1
    return count


def putinar_rhs(prog: ConicProgram, size: int, nvars: int, degree: int,
                ineq_generators: Sequence[dict] = (),
                eq_generators: Sequence[dict] = (),
                epsilon: Optional[LinExpr] = None,
                eq_degree: Optional[int] = None,
                name: str = "M") -> PolyMatrix:
    """The certificate right-hand side

        eps*I + S_0 + sum_j S_j * g_j + sum_e F_e * h_e

    with fresh SOS matrices S_j (degree <= degree) for the inequality
    generators, fresh free symmetric polynomial matrices F_e for the equality
    generators, and an optional strictly-positive eps expression supplied by
    the caller.  ``eq_degree`` bounds the free equality multipliers (default:
    same as the SOS bound); callers matching a higher-degree left-hand side
    raise it so the ideal part can absorb the top-degree terms.
    """
    if eq_degree is None:
        eq_degree = degree
    rhs = PolyMatrix(nvars, size)
    if epsilon is not None:
        cm = rhs.coeffs.setdefault((0,) * nvars, {})
        if epsilon.const != 0.0:
            cm[None] = cm.get(None, np.zeros((size, size))) + np.eye(size) * epsilon.const
        for key, coeff in epsilon.terms.items():
            cm[key] = cm.get(key, np.zeros((size, size))) + np.eye(size) * coeff
    s0 = new_sos_matrix_var(prog, size, nvars, degree, name=f"{name}0")
    rhs = rhs + s0
    for j, g in enumerate(ineq_generators):
        Sj = new_sos_matrix_var(prog, size, nvars, degree, name=f"{name}{j + 1}")
        rhs = rhs + Sj.scale_by_poly(g)
    for e, h in enumerate(eq_generators):
        Fe = new_free_poly_matrix(prog, size, nvars, eq_degree, name=f"{name}eq{e}")
        rhs = rhs + Fe.scale_by_poly(h)
    return rhs


def strict_positive_scalar(prog: ConicProgram, name: str = "eps",
                           floor: float = 1e-6, cap: float = 1e3) -> LinExpr:
    """A scalar variable constrained strictly positive via explicit bounds
    floor <= eps <= cap.

    The textbook strictness encoding [[eps, 1], [1, delta]] >= 0 puts 1/eps
    into the iterates and makes certificate-free instances only weakly
    infeasible; a positive floor keeps infeasibility strong (solvers certify
    it cleanly) at the cost of a floor-sized margin in the certificate, which
    only shrinks the resulting inner approximations.
    """
    idx = prog.add_var(name)
    prog.add_ineq(LinExpr({idx: 1.0}, -floor))
    prog.add_ineq(LinExpr({idx: -1.0}, cap))
    return LinExpr.variable(idx)
