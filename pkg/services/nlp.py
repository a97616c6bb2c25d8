"""
Smooth NLP representation and an augmented-Lagrangian solver.

Problems have a C1 objective, optional equality constraints c(x) = 0 and
box bounds. The outer loop updates multipliers and the penalty; the inner
loop minimizes the augmented Lagrangian over the box with a projected
quasi-Newton method whose model Hessian is B + rho J^T J (B from damped
BFGS on the Lagrangian part). Non-convergence is reported as a status and
the best iterate is always returned.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, TextIO, Tuple

import numpy as np
import scipy.linalg

from models.schemas import SolverSettings, SolverStatus
from utils.validation import ValidationError

logger = logging.getLogger(__name__)

ObjectiveFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]
ConstraintFn = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]
HessianFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class NlpProblem:
    """min f(x) s.t. c(x) = 0, lower <= x <= upper.

    Attributes:
        n: Decision dimension
        objective: x -> (f, grad f)
        lower, upper: Bounds (+-inf allowed)
        constraints: x -> (c, J) with J of shape (m, n), or None
        m: Number of equality constraints
        hessian_seed: Optional x -> objective Hessian used to seed the model
    """
    n: int
    objective: ObjectiveFn
    lower: np.ndarray
    upper: np.ndarray
    constraints: Optional[ConstraintFn] = None
    m: int = 0
    hessian_seed: Optional[HessianFn] = None

    def __post_init__(self):
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (self.n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (self.n,)).copy()
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise ValidationError("bounds must not be NaN")
        if np.any(self.lower > self.upper):
            bad = int(np.flatnonzero(self.lower > self.upper)[0])
            raise ValidationError(f"lower > upper at index {bad}")
        if self.constraints is None and self.m:
            raise ValidationError("m > 0 needs a constraint callback")

    @classmethod
    def unbounded(cls, n: int, objective: ObjectiveFn, **kwargs) -> "NlpProblem":
        return cls(n=n, objective=objective, lower=np.full(n, -np.inf),
                   upper=np.full(n, np.inf), **kwargs)

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(x, self.lower), self.upper)


@dataclass
class NlpSolution:
    """Solver result and KKT residuals at ``x_star``."""
    x_star: np.ndarray
    objective: float
    stationarity: float
    feasibility: float
    complementarity: float
    iterations: int
    outer_iterations: int
    status: SolverStatus
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    penalty: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == SolverStatus.CONVERGED


@dataclass
class _Point:
    x: np.ndarray
    merit: float
    grad: np.ndarray
    f: float
    c: np.ndarray
    J: np.ndarray


def projected_gradient_norm(x: np.ndarray, g: np.ndarray, lower: np.ndarray,
                            upper: np.ndarray) -> float:
    """||P(x - g) - x||_inf."""
    if x.size == 0:
        return 0.0
    return float(np.max(np.abs(np.clip(x - g, lower, upper) - x)))


def complementarity_residual(x: np.ndarray, g: np.ndarray, lower: np.ndarray,
                             upper: np.ndarray) -> float:
    """Largest min(bound multiplier, distance to that bound)."""
    residual = 0.0
    lo = np.isfinite(lower)
    if np.any(lo):
        residual = max(residual, float(np.max(np.minimum(np.maximum(g[lo], 0.0), x[lo] - lower[lo]))))
    hi = np.isfinite(upper)
    if np.any(hi):
        residual = max(residual, float(np.max(np.minimum(np.maximum(-g[hi], 0.0), upper[hi] - x[hi]))))
    return residual


def _floored_seed(H: np.ndarray) -> np.ndarray:
    H = 0.5 * (H + H.T)
    w, V = np.linalg.eigh(H)
    floor = 1e-8 * max(1.0, float(np.max(np.abs(w))))
    return (V * np.maximum(w, floor)) @ V.T


class AugmentedLagrangianSolver:
    """Augmented Lagrangian with a projected quasi-Newton inner solver.

    Args:
        settings: Tolerances, budgets and penalty schedule
        trace: Optional text stream receiving one JSON record per inner step
    """

    def __init__(self, settings: Optional[SolverSettings] = None, trace: Optional[TextIO] = None):
        self.settings = settings or SolverSettings()
        self.trace = trace

    # ---------- evaluation ----------

    def _evaluate(self, problem: NlpProblem, x: np.ndarray, lam: np.ndarray, rho: float) -> _Point:
        f, g = problem.objective(x)
        f = float(f)
        g = np.asarray(g, dtype=float).reshape(problem.n)
        if problem.m:
            c, J = problem.constraints(x)
            c = np.asarray(c, dtype=float).reshape(problem.m)
            J = np.asarray(J, dtype=float).reshape(problem.m, problem.n)
            merit = f + float(lam @ c) + 0.5 * rho * float(c @ c)
            grad = g + J.T @ (lam + rho * c)
        else:
            c, J = np.zeros(0), np.zeros((0, problem.n))
            merit, grad = f, g
        return _Point(x=x, merit=merit, grad=grad, f=f, c=c, J=J)

    # ---------- inner solver ----------

    def _direction(self, problem: NlpProblem, point: _Point, B: np.ndarray, rho: float,
                   pg: float) -> np.ndarray:
        x, g = point.x, point.grad
        eps = min(1e-3, pg)
        at_lower = (x - problem.lower <= eps) & (g > 0)
        at_upper = (problem.upper - x <= eps) & (g < 0)
        free = ~(at_lower | at_upper)

        d = np.zeros(problem.n)
        d[at_lower] = problem.lower[at_lower] - x[at_lower]
        d[at_upper] = problem.upper[at_upper] - x[at_upper]
        if not np.any(free):
            return d

        H = B if not problem.m else B + rho * (point.J.T @ point.J)
        H_ff = H[np.ix_(free, free)]
        shift = 0.0
        scale = max(1e-8, 1e-3 * float(np.max(np.abs(np.diag(H_ff)))))
        while True:
            try:
                factor = scipy.linalg.cho_factor(H_ff + shift * np.eye(H_ff.shape[0]))
                break
            except np.linalg.LinAlgError:
                shift = scale if shift == 0.0 else 10.0 * shift
        d[free] = -scipy.linalg.cho_solve(factor, g[free])
        return d

    def _line_search(self, problem: NlpProblem, point: _Point, d: np.ndarray, lam: np.ndarray,
                     rho: float, alpha: float = 1.0) -> Optional[_Point]:
        s = self.settings
        while alpha >= s.min_step:
            x_new = problem.project(point.x + alpha * d)
            step = x_new - point.x
            if not np.any(step):
                return None
            trial = self._evaluate(problem, x_new, lam, rho)
            if np.isfinite(trial.merit) and trial.merit <= point.merit + s.armijo * float(point.grad @ step):
                return trial
            alpha *= s.backtrack
        return None

    @staticmethod
    def _bfgs_update(B: np.ndarray, s: np.ndarray, y: np.ndarray, scaled: bool) -> Tuple[np.ndarray, bool]:
        if float(s @ s) <= 1e-300:
            return B, scaled
        if not scaled:
            sy = float(s @ y)
            if sy > 0:
                B = (float(y @ y) / sy) * np.eye(B.shape[0])
            scaled = True
        Bs = B @ s
        sBs = float(s @ Bs)
        if sBs <= 0:
            return B, scaled
        sy = float(s @ y)
        # Powell damping keeps B positive definite
        if sy < 0.2 * sBs:
            theta = 0.8 * sBs / (sBs - sy)
            y = theta * y + (1.0 - theta) * Bs
            sy = float(s @ y)
        B = B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy
        return 0.5 * (B + B.T), scaled

    def _minimize_merit(self, problem: NlpProblem, point: _Point, lam: np.ndarray, rho: float,
                        B: np.ndarray, scaled: bool, omega: float, outer: int
                        ) -> Tuple[_Point, np.ndarray, bool, int, bool]:
        settings = self.settings
        for inner in range(settings.max_inner_iter):
            pg = projected_gradient_norm(point.x, point.grad, problem.lower, problem.upper)
            if pg <= omega:
                return point, B, scaled, inner, False

            d = self._direction(problem, point, B, rho, pg)
            new = None
            if float(point.grad @ d) < 0:
                new = self._line_search(problem, point, d, lam, rho)
            if new is None:
                # projected steepest descent fallback
                alpha0 = 1.0 / max(1.0, float(np.max(np.abs(point.grad))))
                new = self._line_search(problem, point, -point.grad, lam, rho, alpha=alpha0)
                if new is None:
                    return point, B, scaled, inner, True

            if settings.debug_monotone and new.merit > point.merit:
                raise AssertionError(
                    f"merit increased from {point.merit!r} to {new.merit!r} at inner step {inner}"
                )

            step = new.x - point.x
            y = new.grad - point.grad
            if problem.m:
                y = y - rho * (new.J.T @ (new.J @ step))
            B, scaled = self._bfgs_update(B, step, y, scaled)

            if self.trace is not None:
                self.trace.write(json.dumps({
                    "outer": outer,
                    "inner": inner,
                    "merit": new.merit,
                    "stationarity": projected_gradient_norm(new.x, new.grad, problem.lower, problem.upper),
                    "feasibility": float(np.max(np.abs(new.c))) if problem.m else 0.0,
                    "step": float(np.max(np.abs(step))),
                }) + "\n")
            point = new
        return point, B, scaled, settings.max_inner_iter, False

    # ---------- outer loop ----------

    def solve(self, problem: NlpProblem, x0: np.ndarray,
              multipliers0: Optional[np.ndarray] = None) -> NlpSolution:
        """Run the augmented-Lagrangian iteration from ``x0`` (projected into the box)."""
        s = self.settings
        x = problem.project(np.asarray(x0, dtype=float).reshape(problem.n))
        lam = np.zeros(problem.m) if multipliers0 is None else np.asarray(multipliers0, dtype=float).copy()
        if lam.shape != (problem.m,):
            raise ValidationError(f"expected {problem.m} multipliers, got {lam.shape}")
        rho = s.initial_penalty

        if problem.hessian_seed is not None:
            B, scaled = _floored_seed(np.asarray(problem.hessian_seed(x), dtype=float)), True
        else:
            B, scaled = np.eye(problem.n), False

        point = self._evaluate(problem, x, lam, rho)
        omega = s.stationarity_tol if not problem.m else max(s.stationarity_tol, 1e-2)
        prev_feas = float(np.max(np.abs(point.c))) if problem.m else 0.0
        best: Optional[NlpSolution] = None
        total_inner = 0
        status = SolverStatus.MAX_ITER

        for outer in range(1, s.max_outer_iter + 1):
            point, B, scaled, used, failed = self._minimize_merit(
                problem, point, lam, rho, B, scaled, omega, outer
            )
            total_inner += used

            feas = float(np.max(np.abs(point.c))) if problem.m else 0.0
            lam = lam + rho * point.c
            # merit gradient equals grad f + J^T lam at the updated multipliers
            stat = projected_gradient_norm(point.x, point.grad, problem.lower, problem.upper)
            comp = complementarity_residual(point.x, point.grad, problem.lower, problem.upper)

            candidate = NlpSolution(
                x_star=point.x.copy(), objective=point.f, stationarity=stat, feasibility=feas,
                complementarity=comp, iterations=total_inner, outer_iterations=outer,
                status=SolverStatus.MAX_ITER, multipliers=lam.copy(), penalty=rho,
            )
            if best is None or self._score(candidate) <= self._score(best):
                best = candidate

            if stat <= s.stationarity_tol and feas <= s.feasibility_tol and comp <= s.complementarity_tol:
                status = SolverStatus.CONVERGED
                best = candidate
                break
            if failed:
                status = SolverStatus.LINE_SEARCH_FAILURE
                if used == 0:
                    break
            else:
                status = SolverStatus.MAX_ITER

            if problem.m and feas > prev_feas / s.feasibility_improvement:
                rho = min(rho * s.penalty_growth, s.penalty_cap)
            prev_feas = feas
            omega = max(s.stationarity_tol, 0.1 * omega)
            point = self._evaluate(problem, point.x, lam, rho)

        best.status = status
        best.iterations = total_inner
        return best

    def _score(self, sol: NlpSolution) -> float:
        s = self.settings
        return max(sol.stationarity / s.stationarity_tol, sol.feasibility / s.feasibility_tol)


def solve(problem: NlpProblem, x0: np.ndarray, tolerances: Optional[SolverSettings] = None,
          max_iter: Optional[int] = None, trace: Optional[TextIO] = None,
          multipliers0: Optional[np.ndarray] = None) -> NlpSolution:
    """Solve ``problem`` from ``x0``.

    Args:
        problem: Problem definition
        x0: Starting point, projected into the bounds
        tolerances: Solver settings (defaults when None)
        max_iter: Optional override of the inner iteration budget
        trace: Optional stream for JSON-lines iteration records
        multipliers0: Optional equality multiplier warm start

    Returns:
        NlpSolution carrying the best iterate and its status
    """
    settings = tolerances or SolverSettings()
    if max_iter is not None:
        settings = settings.model_copy(update={"max_inner_iter": int(max_iter)})
    return AugmentedLagrangianSolver(settings, trace).solve(problem, x0, multipliers0)


def check_gradients(problem: NlpProblem, x: np.ndarray, h: float = 1e-6) -> float:
    """Max relative error of the analytic gradient and Jacobian vs central differences.

    The error of each entry is |a - fd| / max(1, |a|, |fd|).
    """
    if h <= 0:
        raise ValidationError(f"h must be > 0, got {h}")
    x = np.asarray(x, dtype=float).reshape(problem.n)
    _, g = problem.objective(x)
    g = np.asarray(g, dtype=float).reshape(problem.n)
    J = None
    if problem.m:
        _, J = problem.constraints(x)
        J = np.asarray(J, dtype=float).reshape(problem.m, problem.n)

    worst = 0.0
    for i in range(problem.n):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fd = (problem.objective(xp)[0] - problem.objective(xm)[0]) / (2.0 * h)
        worst = max(worst, abs(g[i] - fd) / max(1.0, abs(g[i]), abs(fd)))
        if J is not None:
            col = (np.asarray(problem.constraints(xp)[0]) - np.asarray(problem.constraints(xm)[0])) / (2.0 * h)
            err = np.abs(J[:, i] - col) / np.maximum(1.0, np.maximum(np.abs(J[:, i]), np.abs(col)))
            worst = max(worst, float(np.max(err)))
    logger.debug(f"Gradient check over {problem.n} coordinates: max relative error {worst:.3e}")
    return float(worst)
