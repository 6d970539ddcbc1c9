"""Linear conic programs with Hermitian PSD blocks, solved through Clarabel.

Only the constraint shapes the solvers in this repo need are supported:
affine scalar equalities/inequalities, Hermitian LMI blocks with entries
affine in the variables, and second-order-cone norm bounds.  Complex
Hermitian blocks are lowered to real symmetric ones through the standard
embedding [[Re, -Im], [Im, Re]] before being handed to the backing
interior-point solver, which is treated as a black box validated by this
module's tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import clarabel

FEAS_TOL = 1e-7   # absolute residual accepted on constraints
GAP_TOL = 1e-8    # relative duality gap accepted for status "optimal"

_SQRT2 = np.sqrt(2.0)


def complex_to_real_embedding(M: np.ndarray) -> np.ndarray:
    """Real embedding [[Re M, -Im M], [Im M, Re M]] of a complex matrix.

    For Hermitian M the embedding is symmetric and shares M's eigenvalues
    (each twice), so M >= 0 iff the embedding is PSD.
    """
    M = np.asarray(M)
    return np.block([[M.real, -M.imag], [M.imag, M.real]])


class AffExpr:
    """Affine expression c0 + sum_j c_j x_j over real scalar variables.

    Coefficients may be complex; the variables themselves are always real.
    """

    __slots__ = ("const", "coeffs")

    def __init__(self, const=0.0, coeffs=None):
        self.const = complex(const)
        self.coeffs = dict(coeffs) if coeffs else {}

    @staticmethod
    def _wrap(other):
        if isinstance(other, AffExpr):
            return other
        if isinstance(other, (int, float, complex, np.integer, np.floating, np.complexfloating)):
            return AffExpr(complex(other))
        raise TypeError(f"cannot use {type(other).__name__} in an affine expression")

    def __add__(self, other):
        other = self._wrap(other)
        out = AffExpr(self.const + other.const, self.coeffs)
        for j, c in other.coeffs.items():
            out.coeffs[j] = out.coeffs.get(j, 0.0) + c
        return out

    __radd__ = __add__

    def __neg__(self):
        return AffExpr(-self.const, {j: -c for j, c in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return self._wrap(other) + (-self)

    def __mul__(self, scalar):
        if isinstance(scalar, AffExpr):
            raise TypeError("product of two variable expressions is not affine")
        scalar = complex(scalar)
        return AffExpr(self.const * scalar, {j: c * scalar for j, c in self.coeffs.items()})

    __rmul__ = __mul__

    def real(self) -> "AffExpr":
        """Real part; exact because the underlying variables are real."""
        return AffExpr(self.const.real, {j: c.real for j, c in self.coeffs.items()})

    def imag(self) -> "AffExpr":
        return AffExpr(self.const.imag, {j: c.imag for j, c in self.coeffs.items()})

    def conj(self) -> "AffExpr":
        return AffExpr(self.const.conjugate(), {j: c.conjugate() for j, c in self.coeffs.items()})

    def is_real(self, tol=0.0) -> bool:
        if abs(self.const.imag) > tol:
            return False
        return all(abs(c.imag) <= tol for c in self.coeffs.values())

    def value(self, x: np.ndarray) -> complex:
        return self.const + sum(c * x[j] for j, c in self.coeffs.items())


def as_expr(v) -> AffExpr:
    return AffExpr._wrap(v)


class HermitianVar:
    """n x n Hermitian matrix variable backed by n^2 real scalars.

    `scale` is a numerical hint: the solver works with entries divided by
    it, so choosing it near the magnitude of the expected solution keeps the
    internal variables O(1).  All expressions and returned values are in
    original units.
    """

    def __init__(self, name: str, n: int, base: int, scale: float = 1.0):
        self.name = name
        self.n = n
        self.scale = float(scale)
        # layout: n diagonal entries, then (re, im) per upper off-diagonal
        self.base = base
        self._off = {}
        idx = base + n
        for i in range(n):
            for j in range(i + 1, n):
                self._off[(i, j)] = idx
                idx += 2
        self.size = idx - base

    def entry(self, i: int, j: int) -> AffExpr:
        sc = self.scale
        if i == j:
            return AffExpr(0.0, {self.base + i: sc})
        if i < j:
            re, im = self._off[(i, j)], self._off[(i, j)] + 1
            return AffExpr(0.0, {re: sc, im: 1.0j * sc})
        re, im = self._off[(j, i)], self._off[(j, i)] + 1
        return AffExpr(0.0, {re: sc, im: -1.0j * sc})

    def trace(self) -> AffExpr:
        return AffExpr(0.0, {self.base + i: self.scale for i in range(self.n)})

    def trace_dot(self, C: np.ndarray) -> AffExpr:
        """Tr(C X) for Hermitian C; real affine in the matrix variables."""
        sc = self.scale
        coeffs = {}
        for i in range(self.n):
            coeffs[self.base + i] = C[i, i].real * sc
        for (i, j), re in self._off.items():
            coeffs[re] = 2.0 * C[i, j].real * sc
            coeffs[re + 1] = 2.0 * C[i, j].imag * sc
        return AffExpr(0.0, coeffs)

    def value(self, x: np.ndarray) -> np.ndarray:
        M = np.zeros((self.n, self.n), dtype=complex)
        for i in range(self.n):
            M[i, i] = x[self.base + i]
        for (i, j), re in self._off.items():
            M[i, j] = x[re] + 1j * x[re + 1]
            M[j, i] = x[re] - 1j * x[re + 1]
        return M * self.scale


class ComplexVectorVar:
    """Complex n-vector variable backed by 2n real scalars (re then im)."""

    def __init__(self, name: str, n: int, base: int, scale: float = 1.0):
        self.name = name
        self.n = n
        self.scale = float(scale)
        self.base = base
        self.size = 2 * n

    def entry(self, m: int) -> AffExpr:
        sc = self.scale
        return AffExpr(0.0, {self.base + m: sc, self.base + self.n + m: 1.0j * sc})

    def conj_dot(self, a: np.ndarray) -> AffExpr:
        """sum_m conj(x_m) a_m, i.e. x^H a."""
        coeffs = {}
        for m in range(self.n):
            coeffs[self.base + m] = complex(a[m]) * self.scale
            coeffs[self.base + self.n + m] = -1j * complex(a[m]) * self.scale
        return AffExpr(0.0, coeffs)

    def dot_conj(self, a: np.ndarray) -> AffExpr:
        """a^H x."""
        return self.conj_dot(a).conj()

    def value(self, x: np.ndarray) -> np.ndarray:
        v = x[self.base:self.base + self.n] + 1j * x[self.base + self.n:self.base + 2 * self.n]
        return v * self.scale


@dataclass
class ConicSolution:
    """Result of one conic solve."""

    status: str                    # optimal | infeasible | max-iterations | numerical-failure
    objective: float
    values: dict = field(default_factory=dict)   # variable name -> value
    primal_residual: float = np.inf
    gap: float = np.inf
    iterations: int = 0
    solve_time: float = 0.0

    def __getitem__(self, name):
        return self.values[name]


class ConicProblem:
    """Incrementally built conic program: minimize a linear objective subject
    to affine equalities/inequalities, Hermitian LMI blocks and norm bounds.
    """

    def __init__(self, lower_2x2_to_soc: bool = True):
        self._nvar = 0
        self._vars = {}          # name -> handle ((index, scale), Hermitian, CVec)
        self._nonneg = []        # scalar var indices with sign constraint
        self._eqs = []           # (expr, rhs)
        self._ineqs = []         # (expr, rhs)  meaning expr <= rhs
        self._socs = []          # list[AffExpr]  [t, u1, ...] with ||u|| <= t
        self._lmis = []          # list of entry matrices (list of list of AffExpr)
        self._obj = AffExpr(0.0)
        self.lower_2x2_to_soc = lower_2x2_to_soc

    # ---- variables ----

    def scalar(self, name: str, nonneg: bool = False, scale: float = 1.0) -> AffExpr:
        if name in self._vars:
            raise ValueError(f"variable {name!r} already defined")
        idx = self._nvar
        self._vars[name] = (idx, float(scale))
        self._nvar += 1
        if nonneg:
            self._nonneg.append(idx)
        return AffExpr(0.0, {idx: float(scale)})

    def hermitian(self, name: str, n: int, psd: bool = True, scale: float = 1.0) -> HermitianVar:
        if name in self._vars:
            raise ValueError(f"variable {name!r} already defined")
        hv = HermitianVar(name, n, self._nvar, scale=scale)
        self._vars[name] = hv
        self._nvar += hv.size
        if psd:
            # positive semidefiniteness is invariant under the positive
            # variable scale, so the cone block uses unit coefficients
            self.add_lmi([[hv.entry(i, j) * (1.0 / hv.scale) for j in range(n)]
                          for i in range(n)])
        return hv

    def complex_vector(self, name: str, n: int, scale: float = 1.0) -> ComplexVectorVar:
        if name in self._vars:
            raise ValueError(f"variable {name!r} already defined")
        cv = ComplexVectorVar(name, n, self._nvar, scale=scale)
        self._vars[name] = cv
        self._nvar += cv.size
        return cv

    # ---- constraints ----

    @staticmethod
    def _require_real(expr: AffExpr, what: str) -> AffExpr:
        mags = [abs(expr.const)] + [abs(c) for c in expr.coeffs.values()]
        tol = 1e-12 * max(1.0, max(mags, default=1.0))
        if not expr.is_real(tol):
            raise ValueError(f"{what} must be a real expression")
        return expr.real()

    def add_eq(self, expr, rhs=0.0):
        self._eqs.append((self._require_real(as_expr(expr), "equality"), float(rhs)))

    def add_le(self, expr, rhs=0.0):
        self._ineqs.append((self._require_real(as_expr(expr), "inequality"), float(rhs)))

    def add_lmi(self, entries, balance=None):
        """Require the Hermitian matrix with the given entries to be PSD.

        `entries` is a full square list of AffExpr/scalars; only the upper
        triangle (including the diagonal) is read, the lower triangle is
        reconstructed by conjugation so the block is Hermitian by
        construction.  Diagonal entries must be real expressions.

        `balance`, when given, is a vector of positive per-row factors d: the
        congruence diag(sqrt d) M diag(sqrt d) is emitted instead of M.  The
        feasible set is exactly unchanged; choosing d so the diagonal sits
        near 1 at the expected solution keeps razor-edge blocks (entries
        spanning many orders of magnitude) resolvable in double precision.
        """
        m = len(entries)
        if balance is None:
            d = np.ones(m)
        else:
            d = np.sqrt(np.asarray(balance, dtype=float))
            if d.shape != (m,) or np.any(d <= 0.0):
                raise ValueError("balance must be a positive length-m vector")
        block = [[None] * m for _ in range(m)]
        for i in range(m):
            if len(entries[i]) != m:
                raise ValueError("LMI block must be square")
            block[i][i] = self._require_real(as_expr(entries[i][i]), "LMI diagonal") * (d[i] * d[i])
            for j in range(i + 1, m):
                e = as_expr(entries[i][j]) * (d[i] * d[j])
                block[i][j] = e
                block[j][i] = e.conj()
        self._lmis.append(block)

    def schur_lmi(self, diag_top, offdiag: float, diag_bottom, balance=None):
        """2x2 PSD block [[top, c], [c, bottom]] encoding top*bottom >= c^2
        with top, bottom >= 0, for a real constant c."""
        c = float(offdiag)
        self.add_lmi([[as_expr(diag_top), AffExpr(c)], [AffExpr(c), as_expr(diag_bottom)]],
                     balance=balance)

    def add_soc(self, bound, elements):
        """||elements||_2 <= bound; complex elements are split into re/im."""
        row = [self._require_real(as_expr(bound), "SOC bound")]
        for e in elements:
            e = as_expr(e)
            row.append(e.real())
            im = e.imag()
            if im.coeffs or im.const != 0.0:
                row.append(im)
        self._socs.append(row)

    def add_norm_le(self, vec: ComplexVectorVar, bound):
        self.add_soc(bound, [vec.entry(m) for m in range(vec.n)])

    def minimize(self, expr):
        self._obj = self._require_real(as_expr(expr), "objective")

    # ---- compilation ----

    @staticmethod
    def _lmi_matrices(block):
        """Per-variable Hermitian coefficient matrices of an affine block."""
        m = len(block)
        const = np.zeros((m, m), dtype=complex)
        per_var = {}
        for i in range(m):
            for j in range(m):
                e = block[i][j]
                const[i, j] += e.const
                for idx, c in e.coeffs.items():
                    M = per_var.get(idx)
                    if M is None:
                        M = per_var.setdefault(idx, np.zeros((m, m), dtype=complex))
                    M[i, j] += c
        return const, per_var

    @staticmethod
    def _is_real_block(const, per_var):
        if np.abs(const.imag).max(initial=0.0) > 0.0:
            return False
        return all(np.abs(M.imag).max(initial=0.0) == 0.0 for M in per_var.values())

    @staticmethod
    def _svec_rows(M: np.ndarray):
        """Scaled upper-triangular column-major stacking of a symmetric M."""
        m = M.shape[0]
        out = np.empty(m * (m + 1) // 2)
        t = 0
        for j in range(m):
            for i in range(j + 1):
                out[t] = M[i, j] if i == j else _SQRT2 * M[i, j]
                t += 1
        return out

    def _compile(self):
        """Lower to Clarabel standard form: min q^T x, A x + s = b, s in K."""
        rows_A = []   # (row, col, value)
        rows_b = []
        cones = []
        nrow = 0

        def emit(expr: AffExpr, b_val: float, sign: float):
            # appends one row: sign convention per cone usage below
            nonlocal nrow
            for idx, c in expr.coeffs.items():
                if c != 0.0:
                    rows_A.append((nrow, idx, sign * float(np.real(c))))
            rows_b.append(b_val)
            nrow += 1

        neq = len(self._eqs)
        if neq:
            cones.append(clarabel.ZeroConeT(neq))
            for expr, rhs in self._eqs:
                emit(expr, rhs - expr.const.real, +1.0)    # s = rhs - expr = 0

        nin = len(self._ineqs) + len(self._nonneg)
        if nin:
            cones.append(clarabel.NonnegativeConeT(nin))
            for expr, rhs in self._ineqs:
                emit(expr, rhs - expr.const.real, +1.0)    # s = rhs - expr >= 0
            for idx in self._nonneg:
                emit(AffExpr(0.0, {idx: -1.0}), 0.0, +1.0)  # s = x_idx >= 0

        for row in self._socs:
            cones.append(clarabel.SecondOrderConeT(len(row)))
            for expr in row:
                emit(expr, expr.const.real, -1.0)          # s = expr

        for block in self._lmis:
            if len(block) == 2 and self.lower_2x2_to_soc:
                # [[a, c], [conj(c), b]] >= 0  <=>  a + b >= ||(2 Re c,
                # 2 Im c, a - b)||; the SOC form gets per-coordinate
                # equilibration, which tolerates mixed scales much better
                # than a uniformly scaled PSD block
                a, b_, c = block[0][0], block[1][1], block[0][1]
                rowset = [a + b_, 2.0 * c.real(), a - b_]
                im = 2.0 * c.imag()
                if im.const != 0.0 or any(v != 0.0 for v in im.coeffs.values()):
                    rowset.insert(2, im)
                cones.append(clarabel.SecondOrderConeT(len(rowset)))
                for expr in rowset:
                    emit(expr, expr.const.real, -1.0)
                continue
            const, per_var = self._lmi_matrices(block)
            if self._is_real_block(const, per_var):
                mats = {idx: M.real for idx, M in per_var.items()}
                C0 = const.real
            else:
                mats = {idx: complex_to_real_embedding(M) for idx, M in per_var.items()}
                C0 = complex_to_real_embedding(const)
            m = C0.shape[0]
            dim = m * (m + 1) // 2
            cones.append(clarabel.PSDTriangleConeT(m))
            base = nrow
            svecs = {idx: self._svec_rows(M) for idx, M in mats.items()}
            b0 = self._svec_rows(C0)
            for idx, sv in svecs.items():
                for t in range(dim):
                    if sv[t] != 0.0:
                        rows_A.append((base + t, idx, -sv[t]))   # s = C0 + sum x M
            rows_b.extend(b0.tolist())
            nrow += dim

        if rows_A:
            r, c, v = zip(*rows_A)
            A = sp.csc_matrix((v, (r, c)), shape=(nrow, self._nvar))
        else:
            A = sp.csc_matrix((nrow, self._nvar))
        b = np.asarray(rows_b, dtype=float)
        q = np.zeros(self._nvar)
        for idx, cf in self._obj.coeffs.items():
            q[idx] = np.real(cf)
        # normalize the cost vector; the optimal point is unchanged and the
        # objective is rescaled back after the solve
        qn = float(np.abs(q).max())
        if qn > 0.0:
            q = q / qn
        else:
            qn = 1.0
        return A, b, q, cones, qn

    # ---- solving ----

    def _run(self, A, b, q, cones, qn, feas_tol, gap_tol, max_iter, verbose,
             static_reg=None):
        settings = clarabel.DefaultSettings()
        settings.verbose = verbose
        settings.max_iter = max_iter
        settings.tol_feas = min(feas_tol, 1e-8)
        settings.tol_gap_rel = min(gap_tol, 1e-9)
        settings.tol_gap_abs = 1e-10
        if static_reg is not None:
            settings.static_regularization_constant = static_reg
        try:
            solver = clarabel.DefaultSolver(sp.csc_matrix((self._nvar, self._nvar)),
                                            q, A, b, cones, settings)
            sol = solver.solve()
        except BaseException:
            return None

        st = sol.status
        if st == clarabel.SolverStatus.Solved:
            status = "optimal"
        elif st in (clarabel.SolverStatus.PrimalInfeasible,
                    clarabel.SolverStatus.AlmostPrimalInfeasible):
            status = "infeasible"
        elif st == clarabel.SolverStatus.MaxIterations:
            status = "max-iterations"
        else:
            status = "numerical-failure"

        x = np.asarray(sol.x)
        values = {}
        if status != "infeasible" and np.all(np.isfinite(x)):
            for name, handle in self._vars.items():
                if isinstance(handle, tuple):
                    idx, sc = handle
                    values[name] = float(x[idx]) * sc
                else:
                    values[name] = handle.value(x)
        obj = float(sol.obj_val) * qn + self._obj.const.real
        gap = abs(sol.obj_val - sol.obj_val_dual) / max(1.0, abs(sol.obj_val))
        return ConicSolution(status=status, objective=obj, values=values,
                             primal_residual=float(sol.r_prim), gap=float(gap),
                             iterations=int(sol.iterations),
                             solve_time=float(sol.solve_time))

    def solve(self, feas_tol: float = FEAS_TOL, gap_tol: float = GAP_TOL,
              max_iter: int = 200, verbose: bool = False) -> ConicSolution:
        """Solve the assembled program; numerical trouble is reported as a
        status, never raised.

        Hard instances are retried with increasing static regularization;
        when no attempt reaches full accuracy the best near-solution is
        returned as numerical-failure with its iterate and residuals filled
        in, so callers that can tolerate reduced accuracy may still use it.
        """
        A, b, q, cones, qn = self._compile()
        best = None
        infeasible_votes = 0
        for static_reg in (None, 1e-7, 1e-6):
            sol = self._run(A, b, q, cones, qn, feas_tol, gap_tol, max_iter,
                            verbose, static_reg)
            if sol is None:
                continue
            if sol.status == "optimal":
                return sol
            if sol.status == "infeasible":
                infeasible_votes += 1
                if infeasible_votes >= 2:
                    return sol
            if best is None \
                    or (bool(sol.values), -sol.primal_residual) \
                    > (bool(best.values), -best.primal_residual):
                best = sol
        if best is None:
            return ConicSolution(status="numerical-failure", objective=np.nan)
        return best

    # ---- debugging ----

    def dump(self, path):
        """Write the program as sparse triplets for offline inspection.

        One line per nonzero: `kind constraint_id variable_id row col re im`,
        where kind is obj/eq/le/soc/lmi, variable_id -1 denotes the constant
        term, and (row, col) locate the entry inside an LMI block (0, 0 for
        scalar constraints; (element, 0) inside a SOC).
        """
        def expr_lines(kind, cid, expr: AffExpr, row=0, col=0):
            lines = []
            if expr.const != 0.0:
                lines.append(f"{kind} {cid} -1 {row} {col} {expr.const.real:.17g} {expr.const.imag:.17g}")
            for idx, c in sorted(expr.coeffs.items()):
                lines.append(f"{kind} {cid} {idx} {row} {col} {c.real:.17g} {c.imag:.17g}")
            return lines

        out = expr_lines("obj", 0, self._obj)
        cid = 0
        for expr, rhs in self._eqs:
            out += expr_lines("eq", cid, expr - rhs)
            cid += 1
        for expr, rhs in self._ineqs:
            out += expr_lines("le", cid, expr - rhs)
            cid += 1
        for row in self._socs:
            for r, expr in enumerate(row):
                out += expr_lines("soc", cid, expr, row=r)
            cid += 1
        for block in self._lmis:
            m = len(block)
            for i in range(m):
                for j in range(i, m):
                    out += expr_lines("lmi", cid, block[i][j], row=i, col=j)
            cid += 1
        with open(path, "w") as f:
            f.write("\n".join(out) + "\n")


def solve(problem: ConicProblem, feas_tol: float = FEAS_TOL,
          gap_tol: float = GAP_TOL) -> ConicSolution:
    """Module-level convenience wrapper around ConicProblem.solve."""
    return problem.solve(feas_tol=feas_tol, gap_tol=gap_tol)
