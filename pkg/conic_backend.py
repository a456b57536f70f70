"""
Convex cone programs behind one small interface.

Every subproblem of the alternating optimizer reduces to either a convex QCQP
over a real vector (complex data embedded as [Re; Im]) or a small SDP over a
symmetric PSD matrix with a fixed diagonal. Both are handed to cvxpy, which
dispatches to Clarabel (interior point) and falls back to SCS if Clarabel is
unavailable or errors out.

Constraints are rescaled to unit size before they reach the solver; the
feasible set is unchanged and reported values are in original units.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

import defaults

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERS = "max_iters"
NUMERICAL_FAILURE = "numerical_failure"

PSD_TOL = 1e-8
_TINY = 1e-300

_SOLVERS = (
    (cp.CLARABEL, {
        "max_iter": defaults.MAX_SOLVER_ITERS,
        "tol_feas": 1e-8,
        "tol_gap_abs": 1e-8,
        "tol_gap_rel": 1e-8,
    }),
    (cp.SCS, {"max_iters": 100_000, "eps": 1e-9}),
)


# --------------------- REAL EMBEDDING --------------------- #


def embed_matrix(A):
    """[[Re A, -Im A], [Im A, Re A]].

    For a Hermitian A this turns x^H A x into a real quadratic form in
    [Re x; Im x]; for a general matrix it maps [Re x; Im x] to [Re Ax; Im Ax].
    """
    A = np.asarray(A, dtype=complex)
    return np.block([[A.real, -A.imag], [A.imag, A.real]])


def embed_vector(v):
    v = np.asarray(v, dtype=complex)
    return np.concatenate([v.real, v.imag])


def unembed_vector(x):
    x = np.asarray(x, dtype=float)
    half = x.shape[0] // 2
    return x[:half] + 1j * x[half:]


# --------------------- PROBLEM DATA --------------------- #


@dataclass(frozen=True, eq=False)
class QuadraticConstraint:
    """||F x + g||^2 + q^T x <= bound. F may have zero rows (linear constraint)."""

    F: np.ndarray
    g: np.ndarray
    q: np.ndarray
    bound: float
    name: str = ""

    @classmethod
    def linear(cls, q, bound, name=""):
        q = np.asarray(q, dtype=float)
        return cls(F=np.zeros((0, q.shape[0])), g=np.zeros(0), q=q, bound=float(bound), name=name)

    @classmethod
    def norm(cls, F, bound, g=None, name=""):
        F = np.asarray(F, dtype=float)
        g = np.zeros(F.shape[0]) if g is None else np.asarray(g, dtype=float)
        return cls(F=F, g=g, q=np.zeros(F.shape[1]), bound=float(bound), name=name)

    @classmethod
    def from_matrix(cls, P, q, bound, name=""):
        """x^T P x + q^T x <= bound, with P checked PSD and factored."""
        P = np.asarray(P, dtype=float)
        P = 0.5 * (P + P.T)
        eigval, eigvec = np.linalg.eigh(P)
        if eigval.size and eigval[0] < -PSD_TOL * max(1.0, abs(eigval[-1])):
            raise ValueError(f"constraint '{name}' is not convex (min eigenvalue {eigval[0]:.3e})")
        F = np.sqrt(np.clip(eigval, 0.0, None))[:, None] * eigvec.T
        return cls(F=F, g=np.zeros(F.shape[0]), q=np.asarray(q, dtype=float), bound=float(bound), name=name)

    def lhs(self, x):
        r = self.F @ x + self.g
        return float(r @ r + self.q @ x)

    @property
    def scale(self):
        s = max(abs(self.bound), float(np.max(np.abs(self.q), initial=0.0)))
        if self.F.size:
            s = max(s, float(np.linalg.norm(self.F, 2)) ** 2, float(self.g @ self.g))
        return max(s, _TINY)

    @property
    def is_constant(self):
        return not np.any(self.F) and not np.any(self.q)


@dataclass(frozen=True, eq=False)
class ElementNormConstraint:
    """||x[groups[l]]||^2 <= bound for every row l of ``groups``."""

    groups: np.ndarray
    bound: float = 1.0
    name: str = ""

    def lhs(self, x):
        return np.sum(x[self.groups] ** 2, axis=1)


@dataclass(frozen=True, eq=False)
class LinearEquality:
    A: np.ndarray
    b: np.ndarray
    name: str = ""


@dataclass(frozen=True, eq=False)
class TraceConstraint:
    """Tr(A X) <= bound (sense '<=') or >= bound (sense '>=')."""

    A: np.ndarray
    bound: float
    sense: str = "<="
    name: str = ""


@dataclass(eq=False)
class ConicProblem:
    """Linear objective over a real vector, or over a symmetric PSD matrix.

    With ``psd`` unset the objective is a vector c and the problem reads
    opt c^T x over quadratic, element-norm and equality constraints. With
    ``psd`` set the objective is a symmetric C and the problem reads
    opt Tr(C X) s.t. X >= 0, diag(X) = diag_value, trace constraints.
    """

    objective: np.ndarray
    sense: str = "maximize"
    constraints: list = field(default_factory=list)
    equalities: list = field(default_factory=list)
    psd: bool = False
    diag_value: np.ndarray = None
    trace_constraints: list = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        if self.sense not in ("maximize", "minimize"):
            raise ValueError(f"sense must be 'maximize' or 'minimize', got {self.sense!r}")
        self.objective = np.asarray(self.objective, dtype=float)

    @property
    def size(self):
        return self.objective.shape[0]

    def to_dict(self):
        """Plain-JSON rendering for offline cross-checks with other solvers."""

        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        out = {"name": self.name, "sense": self.sense, "psd": self.psd,
               "objective": arr(self.objective), "constraints": [], "equalities": [],
               "diag_value": arr(self.diag_value), "trace_constraints": []}
        for c in self.constraints:
            if isinstance(c, QuadraticConstraint):
                out["constraints"].append({"type": "quadratic", "name": c.name, "F": arr(c.F),
                                           "g": arr(c.g), "q": arr(c.q), "bound": c.bound})
            else:
                out["constraints"].append({"type": "element_norm", "name": c.name,
                                           "groups": arr(c.groups), "bound": c.bound})
        for e in self.equalities:
            out["equalities"].append({"name": e.name, "A": arr(e.A), "b": arr(e.b)})
        for t in self.trace_constraints:
            out["trace_constraints"].append({"name": t.name, "A": arr(t.A),
                                             "bound": t.bound, "sense": t.sense})
        return out


def dump_problem(problem, path):
    """Write ``problem`` as JSON to ``path``."""
    with open(path, "w") as f:
        json.dump(problem.to_dict(), f)
    log.debug("Dumped conic problem '%s' to %s", problem.name, path)


@dataclass(frozen=True, eq=False)
class ConicSolution:
    status: str
    x: np.ndarray = None
    value: float = math.nan
    max_violation: float = math.inf
    solver: str = ""
    message: str = ""

    @property
    def ok(self):
        return self.status == OPTIMAL


# --------------------- SOLVING --------------------- #


def _run(prob, name):
    """Solve with the first solver that does not raise; returns its name."""
    for solver, options in _SOLVERS:
        try:
            prob.solve(solver=solver, **options)
            return solver
        except (cp.error.SolverError, ArithmeticError, ValueError) as exc:
            log.warning("%s: solver %s failed (%s), trying next", name, solver, exc)
    return None


def _status(cvx_status, violation):
    if cvx_status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return INFEASIBLE
    if cvx_status == cp.USER_LIMIT:
        return MAX_ITERS
    if cvx_status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return OPTIMAL if violation <= defaults.FEASIBILITY_TOL else NUMERICAL_FAILURE
    return NUMERICAL_FAILURE


def _objective_scale(c):
    return max(float(np.max(np.abs(c), initial=0.0)), _TINY)


def _qcqp_violation(problem, x):
    worst = 0.0
    for c in problem.constraints:
        if isinstance(c, QuadraticConstraint):
            worst = max(worst, (c.lhs(x) - c.bound) / c.scale)
        else:
            worst = max(worst, float(np.max(c.lhs(x) - c.bound, initial=0.0)) / max(c.bound, 1.0))
    for e in problem.equalities:
        residual = np.abs(e.A @ x - e.b)
        worst = max(worst, float(np.max(residual, initial=0.0)))
    return max(worst, 0.0)


def solve_qcqp(problem):
    """Solve a convex QCQP.

    Args:
        problem: ConicProblem without a PSD variable

    Returns:
        ConicSolution; infeasibility and solver trouble are reported in
        ``status``, never raised.
    """
    if problem.psd:
        raise ValueError("solve_qcqp got a PSD-variable problem; use solve_sdp")
    n = problem.size
    x = cp.Variable(n)
    cons = []
    for c in problem.constraints:
        if isinstance(c, ElementNormConstraint):
            k = c.groups.shape[1]
            stacked = cp.vstack([x[c.groups[:, j]] for j in range(k)])
            cons.append(cp.norm(stacked, 2, axis=0) <= math.sqrt(c.bound))
            continue
        if c.is_constant:
            if c.lhs(np.zeros(n)) > c.bound + defaults.FEASIBILITY_TOL * c.scale:
                log.debug("%s: constant constraint '%s' violated", problem.name, c.name)
                return ConicSolution(status=INFEASIBLE, message=f"constant constraint '{c.name}' violated")
            continue
        s = c.scale
        F, g, q, bound = c.F / math.sqrt(s), c.g / math.sqrt(s), c.q / s, c.bound / s
        if not F.shape[0]:
            cons.append(q @ x <= bound)
        elif not np.any(q):
            if bound < 0:
                return ConicSolution(status=INFEASIBLE, message=f"'{c.name}' bounds a norm below zero")
            cons.append(cp.norm(F @ x + g, 2) <= math.sqrt(bound))
        else:
            cons.append(cp.sum_squares(F @ x + g) + q @ x <= bound)
    for e in problem.equalities:
        cons.append(e.A @ x == e.b)

    c_scaled = problem.objective / _objective_scale(problem.objective)
    goal = cp.Maximize(c_scaled @ x) if problem.sense == "maximize" else cp.Minimize(c_scaled @ x)
    prob = cp.Problem(goal, cons)
    solver = _run(prob, problem.name)
    if solver is None or x.value is None:
        status = INFEASIBLE if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE) else NUMERICAL_FAILURE
        return ConicSolution(status=status, solver=solver or "", message=f"cvxpy status {prob.status}")

    xv = np.asarray(x.value, dtype=float)
    violation = _qcqp_violation(problem, xv)
    status = _status(prob.status, violation)
    log.debug("%s: %s via %s, max violation %.2e", problem.name, status, solver, violation)
    return ConicSolution(status=status, x=xv, value=float(problem.objective @ xv),
                         max_violation=violation, solver=solver, message=f"cvxpy status {prob.status}")


def psd_violation(min_eig):
    """How far an eigenvalue lies below -PSD_TOL; 0 inside the tolerance."""
    return -min_eig if min_eig < -PSD_TOL else 0.0


def solve_sdp(problem):
    """Solve opt Tr(C X) s.t. X >= 0, diag(X) fixed, trace inequalities.

    An eigenvalue of the solution below -PSD_TOL counts as a constraint
    violation of that size.

    Returns:
        ConicSolution whose ``x`` is the symmetrized matrix.
    """
    if not problem.psd:
        raise ValueError("solve_sdp needs a PSD-variable problem")
    C = np.asarray(problem.objective, dtype=float)
    n = C.shape[0]
    X = cp.Variable((n, n), symmetric=True)
    cons = [X >> 0]
    if problem.diag_value is not None:
        cons.append(cp.diag(X) == np.asarray(problem.diag_value, dtype=float))
    scales = []
    for t in problem.trace_constraints:
        s = max(float(np.max(np.abs(t.A), initial=0.0)), abs(t.bound), _TINY)
        scales.append(s)
        lhs = cp.sum(cp.multiply(t.A / s, X))
        cons.append(lhs <= t.bound / s if t.sense == "<=" else lhs >= t.bound / s)

    C_scaled = C / _objective_scale(C)
    expr = cp.sum(cp.multiply(C_scaled, X))
    goal = cp.Maximize(expr) if problem.sense == "maximize" else cp.Minimize(expr)
    prob = cp.Problem(goal, cons)
    solver = _run(prob, problem.name)
    if solver is None or X.value is None:
        status = INFEASIBLE if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE) else NUMERICAL_FAILURE
        return ConicSolution(status=status, solver=solver or "", message=f"cvxpy status {prob.status}")

    Xv = np.asarray(X.value, dtype=float)
    Xv = 0.5 * (Xv + Xv.T)
    violation = 0.0
    if problem.diag_value is not None:
        violation = float(np.max(np.abs(np.diag(Xv) - problem.diag_value)))
    for t, s in zip(problem.trace_constraints, scales):
        gap = float(np.sum(t.A * Xv)) - t.bound
        violation = max(violation, (gap if t.sense == "<=" else -gap) / s)
    min_eig = float(np.linalg.eigvalsh(Xv)[0])
    violation = max(violation, psd_violation(min_eig))
    status = _status(prob.status, violation)
    log.debug("%s: %s via %s, min eig %.2e, max violation %.2e",
              problem.name, status, solver, min_eig, violation)
    return ConicSolution(status=status, x=Xv, value=float(np.sum(C * Xv)),
                         max_violation=max(violation, 0.0), solver=solver,
                         message=f"cvxpy status {prob.status}")
