"""Conic-program builder bridging the stage subproblems to an SDP solver.

Hermitian PSD variables are realized through the standard real-symmetric
embedding of twice the dimension (real part on the block diagonal, +/-
imaginary part off-diagonal), so any PSD-cone-capable backend applies;
log2 dominance constraints are exact exponential-cone constraints by
default, with a second-order-cone inner linearization behind a switch for
backends without the exponential cone. The assembly targets Clarabel's
"b - Ax in K" form directly: PSD cones take the upper-triangle
column-stacked vectorization with off-diagonals scaled by sqrt(2), and the
exponential cone is {(a, b, c): b * exp(a/b) <= c}.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import scipy.sparse as sp

import clarabel

LN2 = float(np.log(2.0))

OPTIMAL = "optimal"
NEAR_OPTIMAL = "near_optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical_failure"

_STATUS_MAP = {
    "Solved": OPTIMAL,
    "AlmostSolved": NEAR_OPTIMAL,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
    "DualInfeasible": UNBOUNDED,
    "AlmostDualInfeasible": UNBOUNDED,
}

USABLE = (OPTIMAL, NEAR_OPTIMAL)


# ---------------------------------------------------------------------------
# Hermitian <-> real-symmetric embedding and triangular vectorization
# ---------------------------------------------------------------------------

def hermitian_embedding(h: np.ndarray) -> np.ndarray:
    """Real-symmetric image [[Re, -Im], [Im, Re]] of a Hermitian matrix.

    Eigenvalues of the image are those of the input, doubled in
    multiplicity, and tr(C H) = 0.5 * tr(embed(C) embed(H)).
    """
    a, b = h.real, h.imag
    return np.block([[a, -b], [b, a]])


def embedding_extract(x: np.ndarray) -> np.ndarray:
    """Hermitian matrix recovered from its real-symmetric embedding."""
    d = x.shape[0] // 2
    a = 0.5 * (x[:d, :d] + x[d:, d:])
    b = 0.5 * (x[d:, :d] - x[:d, d:])
    h = a + 1j * b
    return 0.5 * (h + h.conj().T)


def _svec_index_cache(n: int, _cache={}):
    """Row/col/scale arrays enumerating the upper triangle column by column."""
    if n not in _cache:
        cols = np.concatenate([np.full(j + 1, j) for j in range(n)])
        rows = np.concatenate([np.arange(j + 1) for j in range(n)])
        scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
        _cache[n] = (rows, cols, scale)
    return _cache[n]


def svec(a: np.ndarray) -> np.ndarray:
    """Scaled upper-triangle vectorization; <A, B>_F = svec(A) . svec(B)."""
    rows, cols, scale = _svec_index_cache(a.shape[0])
    return a[rows, cols] * scale


def smat(v: np.ndarray) -> np.ndarray:
    """Inverse of ``svec``."""
    n = int((np.sqrt(8 * v.size + 1) - 1) / 2)
    rows, cols, scale = _svec_index_cache(n)
    a = np.zeros((n, n))
    a[rows, cols] = v / scale
    a[cols, rows] = a[rows, cols]
    return a


def svec_len(n: int) -> int:
    return n * (n + 1) // 2


def svec_pos(i: int, j: int) -> int:
    """Position of entry (i, j), i <= j, in the column-stacked upper triangle."""
    return j * (j + 1) // 2 + i


# ---------------------------------------------------------------------------
# Variables and affine expressions
# ---------------------------------------------------------------------------

class _Algebra:
    def __add__(self, other):
        return _to_expr(self)._plus(_to_expr(other), 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return _to_expr(self)._plus(_to_expr(other), -1.0)

    def __rsub__(self, other):
        return _to_expr(other)._plus(_to_expr(self), -1.0)

    def __mul__(self, c):
        if not np.isscalar(c):
            raise TypeError("only scalar multiplication is supported")
        return _to_expr(self)._scaled(float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return _to_expr(self)._scaled(-1.0)


class ScalarVar(_Algebra):
    """Handle to one real decision variable."""

    __slots__ = ("name", "index", "lower", "upper")

    def __init__(self, name, index, lower, upper):
        self.name = name
        self.index = index
        self.lower = lower
        self.upper = upper

    def __repr__(self):
        return f"ScalarVar({self.name})"


class MatrixVar:
    """Handle to one Hermitian PSD matrix variable of complex dimension ``dim``."""

    __slots__ = ("name", "dim", "svec_offset")

    def __init__(self, name, dim, svec_offset):
        self.name = name
        self.dim = dim
        self.svec_offset = svec_offset

    @property
    def embed_dim(self):
        return 2 * self.dim

    def __repr__(self):
        return f"MatrixVar({self.name}, dim={self.dim})"


class AffineExpr(_Algebra):
    """Real affine form: const + sum(coef * scalar) + sum(Re tr(C @ H))."""

    __slots__ = ("const", "scalars", "traces")

    def __init__(self, const=0.0, scalars=None, traces=None):
        self.const = float(const)
        self.scalars: Dict[ScalarVar, float] = scalars or {}
        self.traces: Dict[MatrixVar, np.ndarray] = traces or {}

    def _plus(self, other: "AffineExpr", sign: float) -> "AffineExpr":
        sc = dict(self.scalars)
        for v, c in other.scalars.items():
            sc[v] = sc.get(v, 0.0) + sign * c
        tr = {v: c.copy() for v, c in self.traces.items()}
        for v, c in other.traces.items():
            tr[v] = tr.get(v, 0.0) + sign * c
        return AffineExpr(self.const + sign * other.const, sc, tr)

    def _scaled(self, c: float) -> "AffineExpr":
        return AffineExpr(c * self.const,
                          {v: c * x for v, x in self.scalars.items()},
                          {v: c * x for v, x in self.traces.items()})

    def value(self, values: Dict[str, np.ndarray]) -> float:
        out = self.const
        for v, c in self.scalars.items():
            out += c * float(values[v.name])
        for v, c in self.traces.items():
            out += float(np.trace(c @ values[v.name]).real)
        return out


def _to_expr(x) -> AffineExpr:
    if isinstance(x, AffineExpr):
        return x
    if isinstance(x, ScalarVar):
        return AffineExpr(0.0, {x: 1.0}, {})
    if np.isscalar(x):
        return AffineExpr(float(x), {}, {})
    raise TypeError(f"cannot build an affine expression from {type(x)}")


def trace_term(c: np.ndarray, var: MatrixVar) -> AffineExpr:
    """Re tr(C @ H) as an affine expression (Hermitian part of C acts)."""
    c = np.asarray(c, dtype=complex)
    if c.shape != (var.dim, var.dim):
        raise ValueError(f"coefficient shape {c.shape} does not match {var}")
    return AffineExpr(0.0, {}, {var: 0.5 * (c + c.conj().T)})


# ---------------------------------------------------------------------------
# Program
# ---------------------------------------------------------------------------

@dataclass
class SolveReport:
    """Outcome of one conic solve; never raises for solver-side failures."""

    status: str
    objective: Optional[float]
    values: Dict[str, np.ndarray]
    max_violation: float
    solve_time_s: float
    iterations: int
    backend: str = "clarabel"
    # certified cap on the true optimum (dual value, weak duality)
    objective_bound: Optional[float] = None

    @property
    def usable(self) -> bool:
        return self.status in USABLE and bool(self.values)


@dataclass
class _LogCon:
    arg: AffineExpr
    rhs: AffineExpr
    arg_lower: float
    anchor: Optional[float]


class ConicProgram:
    """One maximize-linear-objective conic program, rebuilt per SCA iteration."""

    def __init__(self, name: str = "", feas_tol: float = 1e-7, gap_tol: float = 1e-7,
                 max_iter: int = 200, log_mode: str = "exp_cone"):
        if log_mode not in ("exp_cone", "inner_linear"):
            raise ValueError("log_mode must be 'exp_cone' or 'inner_linear'")
        self.name = name
        self.feas_tol = feas_tol
        self.gap_tol = gap_tol
        self.max_iter = max_iter
        self.log_mode = log_mode
        self._names = set()
        self._scalars: List[ScalarVar] = []
        self._matrices: List[MatrixVar] = []
        self._eqs: List[AffineExpr] = []          # expr == 0
        self._ineqs: List[AffineExpr] = []        # expr <= 0
        self._logs: List[_LogCon] = []
        self._objective = AffineExpr()
        self._svec_total = 0

    # -- construction -------------------------------------------------------

    def _register(self, name):
        if name in self._names:
            raise ValueError(f"duplicate variable name {name!r}")
        self._names.add(name)

    def scalar(self, name: str, lower: Optional[float] = None,
               upper: Optional[float] = None) -> ScalarVar:
        self._register(name)
        v = ScalarVar(name, len(self._scalars), lower, upper)
        self._scalars.append(v)
        return v

    def hermitian_psd(self, name: str, dim: int) -> MatrixVar:
        """Hermitian PSD variable, realized as a PSD real embedding of size 2*dim."""
        self._register(name)
        v = MatrixVar(name, dim, self._svec_total)
        self._matrices.append(v)
        self._svec_total += svec_len(2 * dim)
        return v

    def add_eq(self, lhs, rhs=0.0):
        self._eqs.append(_to_expr(lhs) - _to_expr(rhs))

    def add_le(self, lhs, rhs=0.0):
        self._ineqs.append(_to_expr(lhs) - _to_expr(rhs))

    def add_log_dominance(self, arg, rhs, arg_lower: float,
                          anchor: Optional[float] = None):
        """log2(arg) >= rhs with a declared positive lower bound on arg.

        ``anchor`` seeds the inner-linearization mode; the exponential-cone
        mode ignores it.
        """
        if arg_lower <= 0:
            raise ValueError("log arguments need a positive declared lower bound")
        self._logs.append(_LogCon(_to_expr(arg), _to_expr(rhs), arg_lower, anchor))

    def maximize(self, expr):
        self._objective = _to_expr(expr)

    def census(self) -> dict:
        return {
            "psd_vars": len(self._matrices),
            "scalar_vars": len(self._scalars),
            "eq_constraints": len(self._eqs),
            "ineq_constraints": len(self._ineqs),
            "log_constraints": len(self._logs),
        }

    # -- assembly -----------------------------------------------------------

    @property
    def _n_x(self):
        return len(self._scalars) + self._svec_total

    def _coef_vector(self, expr: AffineExpr):
        """(indices, values) of the expression's coefficients over x."""
        idx, val = [], []
        for v, c in expr.scalars.items():
            if c != 0.0:
                idx.append(v.index)
                val.append(c)
        ns = len(self._scalars)
        for v, c in expr.traces.items():
            vec = 0.5 * svec(hermitian_embedding(c))
            nz = np.nonzero(vec)[0]
            idx.extend(ns + v.svec_offset + nz)
            val.extend(vec[nz])
        return np.asarray(idx, dtype=np.int64), np.asarray(val, dtype=float)

    def _assemble(self):
        rows_i, cols_i, vals_i, b = [], [], [], []
        cones = []
        row = 0

        def emit(expr_idx, expr_val, rhs):
            nonlocal row
            rows_i.append(np.full(expr_idx.size, row, dtype=np.int64))
            cols_i.append(expr_idx)
            vals_i.append(expr_val)
            b.append(rhs)
            row += 1

        ns = len(self._scalars)

        # zero cone: explicit equalities + embedding structure ties
        for e in self._eqs:
            idx, val = self._coef_vector(e)
            emit(idx, val, -e.const)
        n_struct = 0
        for mv in self._matrices:
            d = mv.dim
            base = ns + mv.svec_offset
            for j in range(d):
                for i in range(j + 1):
                    # X[i, j] == X[d+i, d+j]
                    emit(np.array([base + svec_pos(i, j), base + svec_pos(d + i, d + j)]),
                         np.array([1.0, -1.0]), 0.0)
                    n_struct += 1
            for j in range(d):
                for i in range(j):
                    # X[i, d+j] == -X[j, d+i]
                    emit(np.array([base + svec_pos(i, d + j), base + svec_pos(j, d + i)]),
                         np.array([1.0, 1.0]), 0.0)
                    n_struct += 1
            for i in range(d):
                emit(np.array([base + svec_pos(i, d + i)]), np.array([1.0]), 0.0)
                n_struct += 1
        cones.append(clarabel.ZeroConeT(len(self._eqs) + n_struct))

        # nonnegative cone: inequalities, scalar bounds, log-argument guards
        n_nn = 0
        for e in self._ineqs:
            idx, val = self._coef_vector(e)
            emit(idx, val, -e.const)
            n_nn += 1
        for v in self._scalars:
            if v.lower is not None:
                emit(np.array([v.index]), np.array([-1.0]), -v.lower)
                n_nn += 1
            if v.upper is not None:
                emit(np.array([v.index]), np.array([1.0]), v.upper)
                n_nn += 1
        for lc in self._logs:
            idx, val = self._coef_vector(lc.arg)
            emit(idx, -val, lc.arg.const - lc.arg_lower)   # arg >= arg_lower
            n_nn += 1
        if n_nn:
            cones.append(clarabel.NonnegativeConeT(n_nn))

        aux_cols = []   # inner-linearization slack columns, appended after x

        if self.log_mode == "exp_cone":
            for lc in self._logs:
                # (ln2 * rhs, 1, arg) in K_exp  <=>  2^rhs <= arg
                ridx, rval = self._coef_vector(lc.rhs)
                emit(ridx, -LN2 * rval, LN2 * lc.rhs.const)
                emit(np.array([], dtype=np.int64), np.array([]), 1.0)
                aidx, aval = self._coef_vector(lc.arg)
                emit(aidx, -aval, lc.arg.const)
                cones.append(clarabel.ExponentialConeT())
        else:
            # t >= a0/arg via the rotated-cone identity, then
            # log2(a0) + (1 - t)/ln2 >= rhs
            for k, lc in enumerate(self._logs):
                a0 = lc.anchor if lc.anchor is not None else lc.arg_lower
                if a0 <= 0:
                    raise ValueError("inner-linearization anchors must be positive")
                t_col = self._n_x + len(aux_cols)
                aux_cols.append(f"_log_t[{k}]")
                aidx, aval = self._coef_vector(lc.arg)
                ridx, rval = self._coef_vector(lc.rhs)
                # linear: rhs - log2(a0) - (1 - t)/ln2 <= 0
                emit(np.concatenate([ridx, [t_col]]).astype(np.int64),
                     np.concatenate([rval, [1.0 / LN2]]),
                     -lc.rhs.const + np.log2(a0) + 1.0 / LN2)
                cones.append(clarabel.NonnegativeConeT(1))
                # SOC: || (2 sqrt(a0), t - arg) || <= t + arg
                emit(np.concatenate([[t_col], aidx]).astype(np.int64),
                     np.concatenate([[-1.0], -aval]), lc.arg.const)
                emit(np.array([], dtype=np.int64), np.array([]), 2.0 * np.sqrt(a0))
                emit(np.concatenate([[t_col], aidx]).astype(np.int64),
                     np.concatenate([[-1.0], aval]), -lc.arg.const)
                cones.append(clarabel.SecondOrderConeT(3))

        # PSD cones: s = x_block
        for mv in self._matrices:
            ln = svec_len(2 * mv.dim)
            base = ns + mv.svec_offset
            idx = np.arange(base, base + ln, dtype=np.int64)
            rows_i.append(np.arange(row, row + ln, dtype=np.int64))
            cols_i.append(idx)
            vals_i.append(-np.ones(ln))
            b.extend([0.0] * ln)
            row += ln
            cones.append(clarabel.PSDTriangleConeT(2 * mv.dim))

        n_x = self._n_x + len(aux_cols)
        a_mat = sp.csc_matrix(
            (np.concatenate(vals_i) if vals_i else np.array([]),
             (np.concatenate(rows_i) if rows_i else np.array([], dtype=np.int64),
              np.concatenate(cols_i) if cols_i else np.array([], dtype=np.int64))),
            shape=(row, n_x))
        q = np.zeros(n_x)
        oidx, oval = self._coef_vector(self._objective)
        q[oidx] = -oval     # clarabel minimizes
        return a_mat, np.asarray(b), q, cones, n_x

    # -- solving ------------------------------------------------------------

    def _extract_values(self, x: np.ndarray) -> Dict[str, np.ndarray]:
        values: Dict[str, np.ndarray] = {}
        ns = len(self._scalars)
        for v in self._scalars:
            values[v.name] = float(x[v.index])
        for mv in self._matrices:
            ln = svec_len(2 * mv.dim)
            xs = x[ns + mv.svec_offset: ns + mv.svec_offset + ln]
            values[mv.name] = embedding_extract(smat(xs))
        return values

    def max_violation(self, values: Dict[str, np.ndarray]) -> float:
        """Independent replay of every constraint; returns the worst violation."""
        worst = 0.0
        for e in self._eqs:
            worst = max(worst, abs(e.value(values)))
        for e in self._ineqs:
            worst = max(worst, e.value(values))
        for v in self._scalars:
            x = float(values[v.name])
            if v.lower is not None:
                worst = max(worst, v.lower - x)
            if v.upper is not None:
                worst = max(worst, x - v.upper)
        for mv in self._matrices:
            lam_min = float(np.linalg.eigvalsh(values[mv.name])[0])
            worst = max(worst, -lam_min)
        for lc in self._logs:
            arg = lc.arg.value(values)
            worst = max(worst, lc.arg_lower - arg)
            if arg > 0:
                worst = max(worst, lc.rhs.value(values) - np.log2(arg))
        return worst

    def _solve_once(self) -> SolveReport:
        if self._n_x == 0:
            return SolveReport(OPTIMAL, self._objective.const, {}, 0.0, 0.0, 0,
                               objective_bound=self._objective.const)
        t0 = time.perf_counter()
        try:
            a_mat, b, q, cones, n_x = self._assemble()
            settings = clarabel.DefaultSettings()
            settings.verbose = False
            settings.max_iter = self.max_iter
            settings.tol_feas = self.feas_tol
            settings.tol_gap_abs = self.gap_tol
            settings.tol_gap_rel = self.gap_tol
            solver = clarabel.DefaultSolver(sp.csc_matrix((n_x, n_x)), q,
                                            a_mat, b, cones, settings)
            sol = solver.solve()
        except Exception:
            return SolveReport(NUMERICAL_FAILURE, None, {}, np.inf,
                               time.perf_counter() - t0, 0)
        status = _STATUS_MAP.get(str(sol.status).split(".")[-1], NUMERICAL_FAILURE)
        wall = time.perf_counter() - t0
        iters = int(getattr(sol, "iterations", 0))
        if status in (INFEASIBLE, UNBOUNDED):
            return SolveReport(status, None, {}, 0.0, wall, iters)
        values = self._extract_values(np.asarray(sol.x))
        objective = self._objective.value(values)
        violation = self.max_violation(values)
        if status == NUMERICAL_FAILURE and violation > 100 * self.feas_tol:
            values = {}
        dual = float(getattr(sol, "obj_val_dual", np.nan))
        bound = self._objective.const - dual if np.isfinite(dual) else None
        return SolveReport(status, objective, values, violation, wall, iters,
                           objective_bound=bound)

    def solve(self) -> SolveReport:
        """Solve the program; statuses map to the enum, never exceptions.

        In inner-linearization mode the log surrogates are re-anchored at
        the achieved argument values and the solve repeats until the
        objective settles (each pass stays inside the true feasible set).
        """
        if self.log_mode == "exp_cone" or not self._logs:
            return self._solve_once()
        report = self._solve_once()
        for _ in range(10):
            if not report.usable:
                return report
            moved = False
            for lc in self._logs:
                a = lc.arg.value(report.values)
                if lc.anchor is None or abs(a - lc.anchor) > 1e-9 * max(1.0, abs(a)):
                    lc.anchor = max(a, lc.arg_lower)
                    moved = True
            if not moved:
                return report
            nxt = self._solve_once()
            if not nxt.usable or nxt.objective <= report.objective + 1e-9:
                return nxt if nxt.usable else report
            report = nxt
        return report

    # -- debugging ----------------------------------------------------------

    def dump(self, fh):
        """Plain-text interchange listing for debugging against other solvers."""
        def fmt(e: AffineExpr) -> str:
            parts = [f"{e.const:+.12g}"]
            parts += [f"{c:+.12g}*{v.name}" for v, c in sorted(
                e.scalars.items(), key=lambda kv: kv[0].index)]
            parts += [f"+tr(C{id(c) % 9973}*{v.name})" for v, c in e.traces.items()]
            return " ".join(parts)

        print(f"# conic program {self.name!r}", file=fh)
        for v in self._scalars:
            print(f"scalar {v.name} lower={v.lower} upper={v.upper}", file=fh)
        for mv in self._matrices:
            print(f"hermitian_psd {mv.name} dim={mv.dim}", file=fh)
        print(f"maximize {fmt(self._objective)}", file=fh)
        for e in self._eqs:
            print(f"eq 0 == {fmt(e)}", file=fh)
        for e in self._ineqs:
            print(f"le 0 >= {fmt(e)}", file=fh)
        for lc in self._logs:
            print(f"log2({fmt(lc.arg)}) >= {fmt(lc.rhs)}  [arg >= {lc.arg_lower}]",
                  file=fh)
