"""Dense convex quadratic programming via a primal-dual interior point method.

Solves   min_z  0.5 z'Pz + q'z
         s.t.   A z == b,   G z <= h

with P symmetric positive semidefinite. The implementation is a standard
Mehrotra predictor-corrector: at each iteration the inequality block is
condensed into the (1,1) block of a dense KKT system, one factorization is
reused for the affine and corrector solves, and a fraction-to-boundary rule
keeps the iterates strictly interior. Static diagonal regularization makes
the KKT factorization robust to rank-deficient data.

Problems without inequality constraints short-circuit to a direct KKT solve
with one round of iterative refinement.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg

# static diagonal regularization of the KKT system
KKT_REGULARIZATION = 1e-10
# symmetry slack and smallest-eigenvalue bound for accepting P
SYMMETRY_TOL = 1e-12
PSD_EIG_FLOOR = -1e-9
# divergence guard on iterates
DIVERGENCE_LIMIT = 1e13


class QPError(Exception):
    """Base class for solver failures."""


class QPInfeasibleError(QPError):
    """The iteration diverged; the problem is likely infeasible or unbounded."""


class QPNumericalError(QPError):
    """The KKT system stayed singular beyond regularization."""


class QPStatus(enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max-iterations"
    NUMERICAL_FAILURE = "numerical-failure"


@dataclass(frozen=True)
class QPProblem:
    """Problem data; A/b and G/h may be None when absent."""

    P: np.ndarray
    q: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    G: np.ndarray | None = None
    h: np.ndarray | None = None

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64)
        q = np.asarray(self.q, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError(f"P must be square, got shape {P.shape}")
        n = P.shape[0]
        if q.shape != (n,):
            raise ValueError(f"q must have shape ({n},), got {q.shape}")
        scale = max(1.0, float(np.max(np.abs(P)))) if P.size else 1.0
        if P.size and float(np.max(np.abs(P - P.T))) > SYMMETRY_TOL * scale:
            raise ValueError("P must be symmetric")
        A = None if self.A is None else np.asarray(self.A, dtype=np.float64)
        b = None if self.b is None else np.asarray(self.b, dtype=np.float64)
        G = None if self.G is None else np.asarray(self.G, dtype=np.float64)
        h = None if self.h is None else np.asarray(self.h, dtype=np.float64)
        if (A is None) != (b is None):
            raise ValueError("A and b must be given together")
        if (G is None) != (h is None):
            raise ValueError("G and h must be given together")
        if A is not None:
            if A.ndim != 2 or A.shape[1] != n:
                raise ValueError(f"A must have {n} columns, got shape {A.shape}")
            if b.shape != (A.shape[0],):
                raise ValueError("b length must match rows of A")
        if G is not None:
            if G.ndim != 2 or G.shape[1] != n:
                raise ValueError(f"G must have {n} columns, got shape {G.shape}")
            if h.shape != (G.shape[0],):
                raise ValueError("h length must match rows of G")
        object.__setattr__(self, "P", 0.5 * (P + P.T))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def objective(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=np.float64)
        return float(0.5 * z @ self.P @ z + self.q @ z)


@dataclass(frozen=True)
class QPSolution:
    z: np.ndarray
    lambda_eq: np.ndarray
    mu_in: np.ndarray
    status: QPStatus
    iterations: int
    kkt_residual: float


@dataclass(frozen=True)
class KKTResiduals:
    """Independently recomputed optimality residuals (all max-norms)."""

    stationarity: float
    primal_eq: float
    primal_ineq: float
    complementarity: float
    dual_feasibility: float

    def max(self) -> float:
        return max(
            self.stationarity,
            self.primal_eq,
            self.primal_ineq,
            self.complementarity,
            self.dual_feasibility,
        )


def _residual_parts(
    problem: QPProblem,
    z: np.ndarray,
    lambda_eq: np.ndarray | None = None,
    mu_in: np.ndarray | None = None,
) -> KKTResiduals:
    """Recompute KKT residuals from problem data alone.

    Stationarity uses the supplied multipliers (zeros when omitted);
    inequality feasibility counts violation only; complementarity pairs each
    multiplier with the actual slack h - Gz.
    """
    z = np.asarray(z, dtype=np.float64)
    grad = problem.P @ z + problem.q
    r_eq = 0.0
    if problem.A is not None:
        lam = np.zeros(problem.A.shape[0]) if lambda_eq is None else np.asarray(lambda_eq)
        grad = grad + problem.A.T @ lam
        r_eq = float(np.max(np.abs(problem.A @ z - problem.b))) if problem.A.shape[0] else 0.0
    r_ineq = 0.0
    r_comp = 0.0
    r_dualfeas = 0.0
    if problem.G is not None and problem.G.shape[0]:
        mu = np.zeros(problem.G.shape[0]) if mu_in is None else np.asarray(mu_in)
        grad = grad + problem.G.T @ mu
        slack = problem.h - problem.G @ z
        r_ineq = float(np.max(np.maximum(-slack, 0.0)))
        r_comp = float(np.max(np.abs(mu * slack)))
        r_dualfeas = float(np.max(np.maximum(-mu, 0.0)))
    return KKTResiduals(
        stationarity=float(np.max(np.abs(grad))),
        primal_eq=r_eq,
        primal_ineq=r_ineq,
        complementarity=r_comp,
        dual_feasibility=r_dualfeas,
    )


def kkt_residuals(problem: QPProblem, solution: QPSolution) -> float:
    """Max-norm KKT residual of a solution, recomputed from problem data
    alone (independent of whatever the solver reported)."""
    return _residual_parts(problem, solution.z, solution.lambda_eq, solution.mu_in).max()


def _check_psd(P: np.ndarray) -> None:
    """Reject P whose smallest eigenvalue is below the floor.

    Cheap sufficient checks first (Gershgorin bound, then Cholesky of the
    floored matrix); an exact smallest eigenvalue only when those fail.
    """
    n = P.shape[0]
    if n == 0:
        return
    diag = np.diag(P)
    radii = np.sum(np.abs(P), axis=1) - np.abs(diag)
    if float(np.min(diag - radii)) >= PSD_EIG_FLOOR:
        return
    try:
        scipy.linalg.cholesky(P - PSD_EIG_FLOOR * np.eye(n), lower=True)
        return
    except scipy.linalg.LinAlgError:
        pass
    smallest = float(scipy.linalg.eigvalsh(P, subset_by_index=[0, 0])[0])
    if smallest < PSD_EIG_FLOOR:
        raise ValueError(f"P is not positive semidefinite (min eigenvalue {smallest:.3e})")


def _solve_kkt_direct(problem: QPProblem, tol: float) -> QPSolution:
    """Direct solve for problems with no inequality constraints."""
    n = problem.n
    A = problem.A if problem.A is not None else np.zeros((0, n))
    b = problem.b if problem.b is not None else np.zeros(0)
    me = A.shape[0]
    reg = KKT_REGULARIZATION
    kkt = np.zeros((n + me, n + me))
    kkt[:n, :n] = problem.P + reg * np.eye(n)
    if me:
        kkt[:n, n:] = A.T
        kkt[n:, :n] = A
        kkt[n:, n:] = -reg * np.eye(me)
    rhs = np.concatenate([-problem.q, b])
    try:
        factor = scipy.linalg.lu_factor(kkt)
    except scipy.linalg.LinAlgError as exc:
        raise QPNumericalError(f"KKT factorization failed: {exc}") from None
    sol = scipy.linalg.lu_solve(factor, rhs)
    # one round of iterative refinement to absorb the regularization shift
    exact = np.zeros((n + me, n + me))
    exact[:n, :n] = problem.P
    if me:
        exact[:n, n:] = A.T
        exact[n:, :n] = A
    for _ in range(2):
        resid = rhs - exact @ sol
        if float(np.max(np.abs(resid))) <= 0.01 * tol:
            break
        sol = sol + scipy.linalg.lu_solve(factor, resid)
    z, lam = sol[:n], sol[n:]
    if not np.all(np.isfinite(z)):
        raise QPNumericalError("KKT solve produced non-finite values")
    res = _residual_parts(problem, z, lam, None)
    if res.max() > tol * 100 and float(np.max(np.abs(z))) > DIVERGENCE_LIMIT:
        raise QPInfeasibleError("direct KKT solve diverged; problem may be unbounded")
    status = QPStatus.OPTIMAL if res.max() <= tol else QPStatus.MAX_ITERATIONS
    return QPSolution(
        z=z,
        lambda_eq=lam,
        mu_in=np.zeros(0),
        status=status,
        iterations=1,
        kkt_residual=res.max(),
    )


def solve_qp(problem: QPProblem, tol: float = 1e-8, max_iter: int = 50) -> QPSolution:
    """Solve a convex QP to the requested KKT tolerance.

    Raises QPInfeasibleError when the iteration diverges and
    QPNumericalError when the KKT system is singular beyond regularization.
    Hitting max_iter returns the last iterate with status MAX_ITERATIONS.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    _check_psd(problem.P)

    if problem.G is None or problem.G.shape[0] == 0:
        return _solve_kkt_direct(problem, tol)

    n = problem.n
    A = problem.A if problem.A is not None else np.zeros((0, n))
    b = problem.b if problem.b is not None else np.zeros(0)
    G, h = problem.G, problem.h
    me, mi = A.shape[0], G.shape[0]

    # cold start: equality-regularized stationary point, slacks pushed interior
    init = _solve_kkt_direct(
        QPProblem(P=problem.P + 1e-8 * np.eye(n), q=problem.q, A=A if me else None, b=b if me else None),
        tol=1.0,
    )
    z = init.z
    lam = init.lambda_eq
    slack0 = h - G @ z
    s = np.where(slack0 >= 1e-2, slack0, 1.0)
    mu = np.ones(mi)

    eye_n = np.eye(n)
    status = QPStatus.MAX_ITERATIONS
    kkt_res = np.inf
    iterations = 0

    for it in range(1, max_iter + 1):
        r_dual = problem.P @ z + problem.q + A.T @ lam + G.T @ mu
        r_eq = A @ z - b
        r_in = G @ z + s - h
        comp = s * mu
        kkt_res = max(
            float(np.max(np.abs(r_dual))),
            float(np.max(np.abs(r_eq))) if me else 0.0,
            float(np.max(np.abs(r_in))),
            float(np.max(np.abs(comp))),
        )
        if kkt_res <= tol:
            status = QPStatus.OPTIMAL
            break
        if not np.isfinite(kkt_res) or float(np.max(np.abs(z))) > DIVERGENCE_LIMIT:
            raise QPInfeasibleError("interior-point iteration diverged")

        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            d = mu / s
        if not np.all(np.isfinite(d)):
            raise QPInfeasibleError("slack collapse; problem is likely infeasible")
        reg = KKT_REGULARIZATION
        factor = None
        for _ in range(4):
            kkt = np.zeros((n + me, n + me))
            kkt[:n, :n] = problem.P + G.T @ (d[:, None] * G) + reg * eye_n
            if me:
                kkt[:n, n:] = A.T
                kkt[n:, :n] = A
                kkt[n:, n:] = -reg * np.eye(me)
            try:
                cand = scipy.linalg.lu_factor(kkt)
            except scipy.linalg.LinAlgError:
                reg *= 1e4
                continue
            if float(np.min(np.abs(np.diag(cand[0])))) < 1e-300:
                reg *= 1e4
                continue
            factor = cand
            break
        if factor is None:
            raise QPNumericalError("KKT system singular beyond regularization")

        def newton_step(rc):
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                w = (-rc + mu * r_in) / s
            if not np.all(np.isfinite(w)):
                raise QPInfeasibleError("slack collapse; problem is likely infeasible")
            rhs = np.concatenate([-r_dual - G.T @ w, -r_eq])
            sol = scipy.linalg.lu_solve(factor, rhs)
            dz, dlam = sol[:n], sol[n:]
            dmu = w + d * (G @ dz)
            ds = -r_in - G @ dz
            return dz, dlam, dmu, ds

        def max_step(v, dv):
            neg = dv < 0
            if not np.any(neg):
                return 1.0
            return min(1.0, float(np.min(-v[neg] / dv[neg])))

        # predictor
        dz_a, dlam_a, dmu_a, ds_a = newton_step(comp)
        alpha_aff = min(max_step(s, ds_a), max_step(mu, dmu_a))
        mu_mean = float(np.mean(comp))
        mu_aff = float((s + alpha_aff * ds_a) @ (mu + alpha_aff * dmu_a)) / mi
        sigma = min(1.0, max(0.0, (mu_aff / mu_mean) ** 3)) if mu_mean > 0 else 0.0

        # corrector
        rc = comp + ds_a * dmu_a - sigma * mu_mean
        dz, dlam, dmu, ds = newton_step(rc)
        alpha = min(1.0, 0.99 * min(max_step(s, ds), max_step(mu, dmu)))

        z = z + alpha * dz
        lam = lam + alpha * dlam
        mu = mu + alpha * dmu
        s = s + alpha * ds
        iterations = it

    return QPSolution(
        z=z,
        lambda_eq=lam,
        mu_in=mu,
        status=status,
        iterations=iterations,
        kkt_residual=kkt_res,
    )
