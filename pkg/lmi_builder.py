"""
Solver-neutral LMI construction and the conic solver adapter.

Matrix expressions are kept affine by construction: a constant block plus,
for every decision variable, a coefficient tensor mapping the variable's
free scalars to the expression entries. Symmetric variables are
parameterized by their svec coordinates. Problems are handed to cvxpy only
in `solve`, so every constraint can also be evaluated, checked and exported
without a solver.
"""
import itertools
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import cvxpy as cp
import numpy as np

from models import DimensionError, ModelError, SolveStatus, Tolerances

logger = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)
SOLVER_VERBOSE_ENV = "SAFESET_SOLVER_VERBOSE"


def svec(S: np.ndarray) -> np.ndarray:
    """Lower triangle of S column by column, off-diagonals scaled by sqrt(2)"""
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    out = []
    for c in range(n):
        out.append(S[c, c])
        out.extend(SQRT2 * S[c + 1:, c])
    return np.array(out)


def smat(v: np.ndarray) -> np.ndarray:
    """Inverse of svec"""
    v = np.asarray(v, dtype=float).reshape(-1)
    n = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if n * (n + 1) // 2 != v.size:
        raise DimensionError(f"{v.size} is not a triangular number")
    S = np.zeros((n, n))
    pos = 0
    for c in range(n):
        S[c, c] = v[pos]
        tail = v[pos + 1:pos + n - c] / SQRT2
        S[c + 1:, c] = tail
        S[c, c + 1:] = tail
        pos += n - c
    return S


@dataclass(frozen=True)
class MatrixVar:
    """Decision variable owned by one agent or region context"""
    handle: int
    shape: tuple
    symmetric: bool = False
    role: str = ""
    owner: str = ""

    def __post_init__(self):
        if self.symmetric and self.shape[0] != self.shape[1]:
            raise DimensionError(f"symmetric variable {self.role} must be square, got {self.shape}")

    @property
    def size(self) -> int:
        rows, cols = self.shape
        return rows * (rows + 1) // 2 if self.symmetric else rows * cols

    def basis(self) -> np.ndarray:
        """Coefficient tensor (rows, cols, size) from free scalars to entries"""
        rows, cols = self.shape
        if not self.symmetric:
            return np.eye(rows * cols).reshape(rows, cols, rows * cols)
        basis = np.zeros((rows, cols, self.size))
        for k in range(self.size):
            unit = np.zeros(self.size)
            unit[k] = 1.0
            basis[:, :, k] = smat(unit)
        return basis

    def to_matrix(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float).reshape(-1)
        return smat(values) if self.symmetric else values.reshape(self.shape)

    def expr(self) -> "AffineExpr":
        return AffineExpr(self.shape, terms={self: self.basis()})

    @property
    def label(self) -> str:
        return f"{self.role}[{self.owner}]" if self.owner else self.role


ExprLike = Union["AffineExpr", MatrixVar, np.ndarray, float, int]


class AffineExpr:
    """Constant matrix plus a linear map of decision variables"""

    __array_ufunc__ = None

    def __init__(self, shape, constant: Optional[np.ndarray] = None, terms: Optional[Dict[MatrixVar, np.ndarray]] = None):
        self.shape = tuple(int(s) for s in shape)
        self.constant = np.zeros(self.shape) if constant is None else np.asarray(constant, dtype=float).reshape(self.shape)
        self.terms = dict(terms or {})

    @staticmethod
    def lift(obj: ExprLike) -> "AffineExpr":
        if isinstance(obj, AffineExpr):
            return obj
        if isinstance(obj, MatrixVar):
            return obj.expr()
        array = np.atleast_2d(np.asarray(obj, dtype=float))
        return AffineExpr(array.shape, array)

    @property
    def variables(self) -> List[MatrixVar]:
        return list(self.terms)

    @property
    def T(self) -> "AffineExpr":
        return AffineExpr(
            self.shape[::-1], self.constant.T,
            {v: np.transpose(c, (1, 0, 2)) for v, c in self.terms.items()},
        )

    def __add__(self, other: ExprLike) -> "AffineExpr":
        other = AffineExpr.lift(other)
        if other.shape != self.shape:
            raise DimensionError(f"cannot add {self.shape} and {other.shape}")
        terms = dict(self.terms)
        for v, c in other.terms.items():
            terms[v] = terms[v] + c if v in terms else c
        return AffineExpr(self.shape, self.constant + other.constant, terms)

    __radd__ = __add__

    def __neg__(self) -> "AffineExpr":
        return AffineExpr(self.shape, -self.constant, {v: -c for v, c in self.terms.items()})

    def __sub__(self, other: ExprLike) -> "AffineExpr":
        return self + (-AffineExpr.lift(other))

    def __rsub__(self, other: ExprLike) -> "AffineExpr":
        return AffineExpr.lift(other) + (-self)

    def __mul__(self, scalar: float) -> "AffineExpr":
        scalar = float(scalar)
        return AffineExpr(self.shape, scalar * self.constant, {v: scalar * c for v, c in self.terms.items()})

    __rmul__ = __mul__

    def __matmul__(self, M: np.ndarray) -> "AffineExpr":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[0] != self.shape[1]:
            raise DimensionError(f"cannot multiply {self.shape} by {M.shape}")
        return AffineExpr(
            (self.shape[0], M.shape[1]), self.constant @ M,
            {v: np.einsum('abs,bj->ajs', c, M) for v, c in self.terms.items()},
        )

    def __rmatmul__(self, M: np.ndarray) -> "AffineExpr":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[1] != self.shape[0]:
            raise DimensionError(f"cannot multiply {M.shape} by {self.shape}")
        return AffineExpr(
            (M.shape[0], self.shape[1]), M @ self.constant,
            {v: np.einsum('ia,abs->ibs', M, c) for v, c in self.terms.items()},
        )

    def evaluate(self, values: Dict[MatrixVar, np.ndarray]) -> np.ndarray:
        """Value at the given free-scalar assignment of every variable"""
        out = self.constant.copy()
        for v, c in self.terms.items():
            if v not in values:
                raise KeyError(f"no value for variable {v.label}")
            out += np.tensordot(c, np.asarray(values[v], dtype=float).reshape(-1), axes=([2], [0]))
        return out

    def is_symmetric(self, atol: float = 1e-12) -> bool:
        if self.shape[0] != self.shape[1]:
            return False
        if not np.allclose(self.constant, self.constant.T, atol=atol):
            return False
        return all(np.allclose(c, np.transpose(c, (1, 0, 2)), atol=atol) for c in self.terms.values())


def bmat(blocks: Sequence[Sequence[Optional[ExprLike]]]) -> AffineExpr:
    """Block matrix of expressions; None entries are zero blocks sized by their row and column"""
    heights = []
    for row in blocks:
        sizes = {AffineExpr.lift(b).shape[0] for b in row if b is not None}
        if len(sizes) != 1:
            raise DimensionError(f"inconsistent block heights {sizes}")
        heights.append(sizes.pop())
    widths = []
    for col in range(len(blocks[0])):
        sizes = {AffineExpr.lift(row[col]).shape[1] for row in blocks if row[col] is not None}
        if len(sizes) != 1:
            raise DimensionError(f"inconsistent block widths {sizes}")
        widths.append(sizes.pop())
    rows_at = np.concatenate([[0], np.cumsum(heights)]).astype(int)
    cols_at = np.concatenate([[0], np.cumsum(widths)]).astype(int)
    shape = (int(rows_at[-1]), int(cols_at[-1]))
    out = AffineExpr(shape)
    for r, row in enumerate(blocks):
        for c, block in enumerate(row):
            if block is None:
                continue
            block = AffineExpr.lift(block)
            rs = slice(rows_at[r], rows_at[r + 1])
            cs = slice(cols_at[c], cols_at[c + 1])
            out.constant[rs, cs] += block.constant
            for v, coef in block.terms.items():
                if v not in out.terms:
                    out.terms[v] = np.zeros(shape + (v.size,))
                out.terms[v][rs, cs, :] += coef
    return out


def block_diag(parts: Sequence[ExprLike]) -> AffineExpr:
    parts = [AffineExpr.lift(p) for p in parts]
    return bmat([[p if i == j else AffineExpr((p.shape[0], q.shape[1])) for j, q in enumerate(parts)]
                 for i, p in enumerate(parts)])


@dataclass
class LmiConstraint:
    """Symmetric affine matrix inequality expr >> 0 (or << 0)"""
    expr: AffineExpr
    sense: str = ">>"
    label: str = ""

    def __post_init__(self):
        if self.sense not in ('>>', '<<'):
            raise DimensionError(f"unknown LMI sense {self.sense!r}")
        if self.expr.shape[0] != self.expr.shape[1] or not self.expr.is_symmetric():
            raise DimensionError(f"LMI {self.label!r} is not square and symmetric")

    @property
    def size(self) -> int:
        return self.expr.shape[0]

    def psd_form(self) -> AffineExpr:
        return self.expr if self.sense == '>>' else -self.expr

    def min_eigenvalue(self, values: Dict[MatrixVar, np.ndarray]) -> float:
        M = self.psd_form().evaluate(values)
        return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])

    def residual(self, values: Dict[MatrixVar, np.ndarray]) -> float:
        return max(0.0, -self.min_eigenvalue(values))


@dataclass
class LinearConstraint:
    """Elementwise expr <= 0 or expr == 0"""
    expr: AffineExpr
    sense: str = "<="
    label: str = ""

    def __post_init__(self):
        if self.sense not in ('<=', '=='):
            raise DimensionError(f"unknown linear sense {self.sense!r}")

    def residual(self, values: Dict[MatrixVar, np.ndarray]) -> float:
        v = self.expr.evaluate(values)
        return float(max(0.0, np.max(v))) if self.sense == '<=' else float(np.max(np.abs(v)))


@dataclass
class SocConstraint:
    """||z||_2 <= t"""
    z: AffineExpr
    t: AffineExpr
    label: str = ""

    def residual(self, values: Dict[MatrixVar, np.ndarray]) -> float:
        return max(0.0, float(np.linalg.norm(self.z.evaluate(values)) - self.t.evaluate(values)[0, 0]))

    def as_lmi(self) -> LmiConstraint:
        """Arrow-matrix form [[t I, z], [z^T, t]] >> 0"""
        k = self.z.shape[0]
        column = self.z if self.z.shape[1] == 1 else self.z.T
        t_block = block_diag([self.t] * k)
        return LmiConstraint(bmat([[t_block, column], [column.T, self.t]]), '>>', self.label)


@dataclass
class SdpProblem:
    """Minimize a linear objective subject to LMIs, linear and cone constraints"""
    variables: List[MatrixVar]
    objective: AffineExpr
    lmis: List[LmiConstraint] = field(default_factory=list)
    linear: List[LinearConstraint] = field(default_factory=list)
    cones: List[SocConstraint] = field(default_factory=list)
    name: str = "sdp"
    maximize: bool = False

    def __post_init__(self):
        declared = set(self.variables)
        for v in self.objective.variables:
            if v not in declared:
                raise DimensionError(f"objective references undeclared variable {v.label}")
        if not (self.lmis or self.linear or self.cones):
            raise DimensionError(f"problem {self.name!r} has no constraints")

    def labels(self) -> List[str]:
        return [c.label for c in itertools.chain(self.lmis, self.linear, self.cones)]


@dataclass
class SolveResult:
    """Outcome of one solve"""
    status: SolveStatus
    values: Dict[MatrixVar, np.ndarray] = field(default_factory=dict)
    objective: float = float('nan')
    max_psd_violation: float = float('nan')
    max_linear_violation: float = float('nan')
    worst_label: str = ""
    solver: str = ""
    solve_time: float = 0.0
    message: str = ""
    worst_residual: float = float('nan')

    def value(self, var: MatrixVar) -> np.ndarray:
        return var.to_matrix(self.values[var])

    @property
    def optimal(self) -> bool:
        return self.status == SolveStatus.OPTIMAL


class SdpBuilder:
    """Declares variables and collects constraints for one SdpProblem"""

    def __init__(self, name: str = "sdp"):
        self.name = name
        self.variables: List[MatrixVar] = []
        self.lmis: List[LmiConstraint] = []
        self.linear: List[LinearConstraint] = []
        self.cones: List[SocConstraint] = []
        self._objective: Optional[AffineExpr] = None
        self._maximize = False

    def variable(self, shape, symmetric: bool = False, role: str = "", owner: str = "") -> MatrixVar:
        var = MatrixVar(len(self.variables), tuple(int(s) for s in shape), symmetric, role, owner)
        self.variables.append(var)
        return var

    def add(self, constraint: Union[LmiConstraint, LinearConstraint, SocConstraint]):
        if isinstance(constraint, LmiConstraint):
            self.lmis.append(constraint)
        elif isinstance(constraint, LinearConstraint):
            self.linear.append(constraint)
        elif isinstance(constraint, SocConstraint):
            self.cones.append(constraint)
        else:
            raise TypeError(f"unsupported constraint {type(constraint).__name__}")

    def add_all(self, constraints: Iterable):
        for constraint in constraints:
            self.add(constraint)

    def minimize(self, expr: ExprLike):
        self._objective, self._maximize = AffineExpr.lift(expr), False

    def maximize(self, expr: ExprLike):
        self._objective, self._maximize = AffineExpr.lift(expr), True

    def build(self) -> SdpProblem:
        objective = self._objective if self._objective is not None else AffineExpr((1, 1))
        if objective.shape != (1, 1):
            raise DimensionError(f"objective must be scalar, got {objective.shape}")
        return SdpProblem(list(self.variables), objective, list(self.lmis), list(self.linear),
                          list(self.cones), self.name, self._maximize)


def trace(expr: ExprLike) -> AffineExpr:
    expr = AffineExpr.lift(expr)
    n = expr.shape[0]
    out = AffineExpr((1, 1))
    for k in range(n):
        e = np.zeros((1, n))
        e[0, k] = 1.0
        out = out + (e @ expr @ e.T)
    return out


def _row(vector: np.ndarray, width: int, what: str) -> np.ndarray:
    row = np.asarray(vector, dtype=float).reshape(1, -1)
    if row.shape[1] != width:
        raise DimensionError(f"{what} has {row.shape[1]} entries, expected {width}")
    return row


def ellipsoid_in_halfspace(E: ExprLike, row: np.ndarray, bound: float, label: str = "") -> LmiConstraint:
    """{x | x^T E^-1 x <= 1} inside {x | H_l x <= h_l}: [[h^2, H E], [E H^T, E]] >> 0"""
    E = AffineExpr.lift(E)
    H = _row(row, E.shape[0], "constraint row")
    if bound <= 0:
        raise ModelError(f"halfspace bound must be positive, got {bound}")
    HE = H @ E
    return LmiConstraint(bmat([[np.array([[bound ** 2]]), HE], [HE.T, E]]), '>>', label or "state-containment")


def input_row_containment(Y: ExprLike, E_N: ExprLike, row: np.ndarray, bound: float, label: str = "") -> LmiConstraint:
    """|O_e K x_N| <= o_e on the ellipsoid, K = Y E_N^-1: [[o^2, O Y], [Y^T O^T, E_N]] >> 0"""
    Y = AffineExpr.lift(Y)
    E_N = AffineExpr.lift(E_N)
    O = _row(row, Y.shape[0], "input row")
    if Y.shape[1] != E_N.shape[0]:
        raise DimensionError(f"Y has {Y.shape[1]} columns, E_N has dimension {E_N.shape[0]}")
    if bound <= 0:
        raise ModelError(f"input bound must be positive, got {bound}")
    OY = O @ Y
    return LmiConstraint(bmat([[np.array([[bound ** 2]]), OY], [OY.T, E_N]]), '>>', label or "input-containment")


def invariance_block(E_i: ExprLike, E_N: ExprLike, Ebar: ExprLike, S_N: ExprLike, Y_i: ExprLike,
                     A_N: np.ndarray, B_i: np.ndarray, label: str = "") -> LmiConstraint:
    """[[Ebar + S_N, *], [A_N E_N + B_i Y_i, E_i]] >> 0 at one parameter vertex"""
    E_i, E_N, Ebar, S_N, Y_i = (AffineExpr.lift(e) for e in (E_i, E_N, Ebar, S_N, Y_i))
    A_N = np.atleast_2d(A_N)
    B_i = np.atleast_2d(B_i)
    if A_N.shape != (E_i.shape[0], E_N.shape[0]) or B_i.shape != (E_i.shape[0], Y_i.shape[0]):
        raise DimensionError(f"A_N {A_N.shape} / B_i {B_i.shape} do not match E_i {E_i.shape}, E_N {E_N.shape}, Y_i {Y_i.shape}")
    if Ebar.shape != E_N.shape or S_N.shape != E_N.shape:
        raise DimensionError("Ebar and S_N must match E_N")
    closed_loop = A_N @ E_N + B_i @ Y_i
    return LmiConstraint(bmat([[Ebar + S_N, closed_loop.T], [closed_loop, E_i]]), '>>', label or "invariance")


def coupling_block(agent: int, neighborhoods: Sequence, S: Dict[int, ExprLike], label: str = "") -> LmiConstraint:
    """sum over r with agent in the closed neighborhood of r of the agent's diagonal block of S_{N_r}, << 0"""
    contributors = [hood for hood in neighborhoods if agent in hood.members]
    total = None
    for hood in contributors:
        if hood.agent not in S:
            raise ModelError(f"missing coupling variable S_N for agent {hood.agent}")
        S_r = AffineExpr.lift(S[hood.agent])
        if S_r.shape != (hood.dim, hood.dim):
            raise DimensionError(f"S_N of agent {hood.agent} has shape {S_r.shape}, expected {(hood.dim, hood.dim)}")
        pick = np.zeros((hood.dims[hood.members.index(agent)], hood.dim))
        pick[:, hood.block(agent)] = np.eye(pick.shape[0])
        piece = pick @ S_r @ pick.T
        total = piece if total is None else total + piece
    return LmiConstraint(total, '<<', label or f"coupling[{agent}]")


def point_in_scaled_ellipsoid(x_i: ExprLike, E_i: ExprLike, N: int = 1, budget: Optional[ExprLike] = None,
                              label: str = "") -> LmiConstraint:
    """[[c, x^T], [x, E_i]] >> 0 with c = 1/N, or c = budget when given"""
    E_i = AffineExpr.lift(E_i)
    x = AffineExpr.lift(x_i)
    if x.shape[0] == 1 and x.shape[1] != 1:
        x = x.T
    if x.shape != (E_i.shape[0], 1):
        raise DimensionError(f"point has shape {x.shape}, ellipsoid dimension {E_i.shape[0]}")
    if budget is None:
        if N < 1:
            raise ModelError(f"scaling needs N >= 1, got {N}")
        corner = AffineExpr.lift(np.array([[1.0 / N]]))
    else:
        corner = AffineExpr.lift(budget)
    return LmiConstraint(bmat([[corner, x.T], [x, E_i]]), '>>', label or "point-in-ellipsoid")


def strict_pd(E: ExprLike, eps: float = 1e-6, label: str = "") -> LmiConstraint:
    """E - eps I >> 0"""
    E = AffineExpr.lift(E)
    return LmiConstraint(E - eps * np.eye(E.shape[0]), '>>', label or "strict-pd")


def halfspaces(A: np.ndarray, x: ExprLike, b: np.ndarray, label: str = "") -> LinearConstraint:
    """A x <= b"""
    x = AffineExpr.lift(x)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1, 1)
    if A.shape[1] != x.shape[0]:
        raise DimensionError(f"A has {A.shape[1]} columns, point has {x.shape[0]} entries")
    return LinearConstraint(A @ x - b, '<=', label or "halfspaces")


def _to_cvxpy(expr: AffineExpr, cvx_vars: Dict[MatrixVar, cp.Variable]):
    """Row-major flattened cvxpy expression of an AffineExpr"""
    rows, cols = expr.shape
    out = expr.constant.reshape(-1)
    for v, coef in expr.terms.items():
        out = out + coef.reshape(rows * cols, v.size) @ cvx_vars[v]
    return out


def _pick_solver(requested: Optional[str]) -> str:
    installed = cp.installed_solvers()
    if requested:
        if requested.upper() not in installed:
            raise ModelError(f"solver {requested} is not installed; available: {installed}")
        return requested.upper()
    for name in ('CLARABEL', 'MOSEK', 'SCS'):
        if name in installed:
            return name
    raise ModelError(f"no semidefinite-capable solver installed; available: {installed}")


def check_residuals(problem: SdpProblem, values: Dict[MatrixVar, np.ndarray]):
    """(max PSD violation, max linear violation, worst label)"""
    worst_psd, worst_lin, worst_label, worst_ratio = 0.0, 0.0, "", -1.0
    for lmi in problem.lmis:
        scale = max(1.0, float(np.max(np.abs(lmi.psd_form().evaluate(values)))))
        r = lmi.residual(values) / scale
        worst_psd = max(worst_psd, r)
        if r > worst_ratio:
            worst_ratio, worst_label = r, lmi.label
    for con in itertools.chain(problem.linear, problem.cones):
        r = con.residual(values)
        worst_lin = max(worst_lin, r)
        if r > worst_ratio:
            worst_ratio, worst_label = r, con.label
    return worst_psd, worst_lin, worst_label


def _cvxpy_constraints(problem: SdpProblem, cvx_vars: Dict[MatrixVar, cp.Variable], elastic=None) -> list:
    """One cvxpy constraint per labeled constraint; elastic[c] >= 0 loosens constraint c when given"""
    constraints, c = [], 0
    for lmi in problem.lmis:
        k = lmi.size
        slack = cp.Variable((k, k), PSD=True)
        form = cp.reshape(_to_cvxpy(lmi.psd_form(), cvx_vars), (k, k), order='C')
        if elastic is not None:
            form = form + elastic[c] * np.eye(k)
        constraints.append(slack == form)
        c += 1
    for con in problem.linear:
        flat = _to_cvxpy(con.expr, cvx_vars)
        if elastic is None:
            constraints.append(flat <= 0 if con.sense == '<=' else flat == 0)
        else:
            constraints.append(flat <= elastic[c] if con.sense == '<=' else cp.abs(flat) <= elastic[c])
        c += 1
    for cone in problem.cones:
        t = _to_cvxpy(cone.t, cvx_vars)[0]
        constraints.append(cp.SOC(t if elastic is None else t + elastic[c], _to_cvxpy(cone.z, cvx_vars)))
        c += 1
    return constraints


def diagnose_infeasible(problem: SdpProblem, solver: str, verbose: bool = False) -> Tuple[str, float]:
    """(label, violation) of the constraint that absorbs most of a minimal total relaxation

    Every labeled constraint gets a slack s_c >= 0 (shift of its eigenvalues,
    its bound or its cone radius) and the sum of slacks is minimized; the
    largest slack names the constraint that cannot be met.
    """
    labels = problem.labels()
    cvx_vars = {v: cp.Variable(v.size, name=f"v{v.handle}") for v in problem.variables}
    elastic = cp.Variable(len(labels), nonneg=True)
    relaxed = cp.Problem(cp.Minimize(cp.sum(elastic)), _cvxpy_constraints(problem, cvx_vars, elastic))
    try:
        relaxed.solve(solver=solver, verbose=verbose)
    except cp.error.SolverError as exc:
        logger.info("Could not diagnose infeasibility of %s: %s", problem.name, exc)
        return "", float('nan')
    if relaxed.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or elastic.value is None:
        return "", float('nan')
    worst = int(np.argmax(elastic.value))
    return labels[worst], float(elastic.value[worst])


def solve(problem: SdpProblem, tolerances: Optional[Tolerances] = None, solver: Optional[str] = None,
          verbose: Optional[bool] = None) -> SolveResult:
    """Solve with an installed conic solver and verify the answer against our own residuals"""
    tol = tolerances or Tolerances()
    if verbose is None:
        verbose = os.environ.get(SOLVER_VERBOSE_ENV, "") not in ("", "0")
    name = _pick_solver(solver)
    cvx_vars = {v: cp.Variable(v.size, name=f"v{v.handle}") for v in problem.variables}
    constraints = _cvxpy_constraints(problem, cvx_vars)
    objective = _to_cvxpy(problem.objective, cvx_vars)[0]
    cvx_problem = cp.Problem(cp.Maximize(objective) if problem.maximize else cp.Minimize(objective), constraints)

    started = time.perf_counter()
    try:
        cvx_problem.solve(solver=name, verbose=verbose)
    except cp.error.SolverError as exc:
        logger.info("Solver %s failed on %s: %s", name, problem.name, exc)
        return SolveResult(SolveStatus.NUMERICAL_FAILURE, solver=name, message=str(exc),
                           solve_time=time.perf_counter() - started)
    elapsed = time.perf_counter() - started
    status = cvx_problem.status

    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        label, violation = diagnose_infeasible(problem, name, verbose)
        logger.info("%s is infeasible; most violated constraint %r (%.3g)", problem.name, label, violation)
        return SolveResult(SolveStatus.INFEASIBLE, solver=name, solve_time=elapsed,
                           message=f"{status}; most violated constraint {label!r}",
                           worst_label=label, worst_residual=violation)
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or any(v.value is None for v in cvx_vars.values()):
        label, violation = diagnose_infeasible(problem, name, verbose)
        return SolveResult(SolveStatus.NUMERICAL_FAILURE, solver=name, solve_time=elapsed,
                           message=f"{status}; most violated constraint {label!r}",
                           worst_label=label, worst_residual=violation)

    values = {v: np.asarray(cvx_vars[v].value, dtype=float).reshape(-1) for v in problem.variables}
    psd_violation, linear_violation, worst = check_residuals(problem, values)
    result = SolveResult(
        SolveStatus.OPTIMAL, values, float(problem.objective.evaluate(values)[0, 0]),
        psd_violation, linear_violation, worst, name, elapsed, status,
        max(psd_violation, linear_violation),
    )
    if psd_violation > tol.psd or linear_violation > tol.linear:
        result.status = SolveStatus.NUMERICAL_FAILURE
        result.message = f"{status}; residual above tolerance at {worst!r}"
        logger.info("Residual check failed on %s: psd %.2e, linear %.2e at %s",
                    problem.name, psd_violation, linear_violation, worst)
    return result


def write_sdpa(problem: SdpProblem, path: str):
    """Dump in sparse SDPA format: minimize c^T y s.t. sum_i F_i y_i - F_0 >> 0"""
    offsets, total = {}, 0
    for v in problem.variables:
        offsets[v] = total
        total += v.size
    sdp_blocks = list(problem.lmis) + [cone.as_lmi() for cone in problem.cones]
    lp_rows = []
    for con in problem.linear:
        flat = AffineExpr((con.expr.shape[0] * con.expr.shape[1], 1), con.expr.constant.reshape(-1, 1),
                          {v: c.reshape(-1, 1, v.size) for v, c in con.expr.terms.items()})
        for r in range(flat.shape[0]):
            row = AffineExpr((1, 1), flat.constant[r:r + 1], {v: c[r:r + 1] for v, c in flat.terms.items()})
            lp_rows.append(-row)
            if con.sense == '==':
                lp_rows.append(row)

    sign = -1.0 if problem.maximize else 1.0
    c = np.zeros(total)
    for v, coef in problem.objective.terms.items():
        c[offsets[v]:offsets[v] + v.size] = sign * coef.reshape(-1)

    block_sizes = [b.size for b in sdp_blocks] + ([-len(lp_rows)] if lp_rows else [])
    lines = [f'"{problem.name}"', str(total), str(len(block_sizes)),
             " ".join(str(s) for s in block_sizes), " ".join(f"{value:.17g}" for value in c)]

    def emit(matno: int, block: int, matrix: np.ndarray, diagonal_only: bool = False):
        for i in range(matrix.shape[0]):
            for j in ([i] if diagonal_only else range(i, matrix.shape[1])):
                if matrix[i, j] != 0.0:
                    lines.append(f"{matno} {block} {i + 1} {j + 1} {matrix[i, j]:.17g}")

    for b, lmi in enumerate(sdp_blocks, start=1):
        form = lmi.psd_form()
        emit(0, b, -form.constant)
        for v, coef in form.terms.items():
            for k in range(v.size):
                emit(offsets[v] + k + 1, b, coef[:, :, k])
    if lp_rows:
        b = len(sdp_blocks) + 1
        emit(0, b, -np.diag([row.constant[0, 0] for row in lp_rows]), diagonal_only=True)
        for v in problem.variables:
            for k in range(v.size):
                diag = np.array([row.terms[v][0, 0, k] if v in row.terms else 0.0 for row in lp_rows])
                emit(offsets[v] + k + 1, b, np.diag(diag), diagonal_only=True)
    with open(path, 'w') as handle:
        handle.write("\n".join(lines) + "\n")
    logger.debug("Wrote SDPA dump of %s to %s", problem.name, path)
