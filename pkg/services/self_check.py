"""
Derivative and consistency checks run by the ``check`` command.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List

import numpy as np

from models.schemas import InterpolationMode
from services.actuation import allocate, allocation_kkt_residual
from services.controller import decision_vector, hover_guess, sample_horizon_currents, transcribe
from services.costs import ACTUATED_STATES, actuated_linearization, dare_residual, solve_dare
from services.currents import CurrentGrid, face_derivative_jump
from services.nlp import check_gradients
from services.sim import Scenario
from utils.validation import ChmpcError

logger = logging.getLogger(__name__)

GRADIENT_TOL = 1e-5
DARE_TOL = 1e-8
KKT_TOL = 1e-8
SEAM_TOL = 1e-3


class CheckStatus(str, Enum):
    PASS = "PASS"
    WARN = "WARN"
    FAIL = "FAIL"


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: CheckStatus
    detail: str

    def line(self) -> str:
        return f"[{self.status.value}] {self.name}: {self.detail}"


def _straight_line(scenario: Scenario, points: int) -> List[np.ndarray]:
    start = np.asarray(scenario.spec.initial_position_m, dtype=float)
    end = np.asarray(scenario.spec.waypoints[0].position_m, dtype=float)
    return [start + t * (end - start) for t in np.linspace(0.0, 1.0, points)]


def check_objective_gradients(scenario: Scenario, samples: int = 3, seed: int = 7) -> CheckResult:
    """Analytic vs central-difference derivatives of the transcribed NLP."""
    mpc = scenario.mpc
    x0 = scenario.initial_state()
    goal = scenario.goal_vector(0)
    states, wrenches = hover_guess(x0, mpc.horizon)
    currents = sample_horizon_currents(scenario.field, states)
    problem = transcribe(mpc, x0, goal, currents, scenario.params)
    base = decision_vector(mpc, scenario.params, goal, states, wrenches)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        w = base + rng.normal(scale=0.1, size=base.size)
        worst = max(worst, check_gradients(problem, problem.project(w)))
    status = CheckStatus.PASS if worst <= GRADIENT_TOL else CheckStatus.FAIL
    return CheckResult("gradient", status, f"max relative error {worst:.2e} over {samples} iterates")


def check_dare(scenario: Scenario) -> CheckResult:
    """Riccati residual of the actuated-subsystem terminal weight."""
    mpc = scenario.mpc
    idx = np.array(ACTUATED_STATES)
    Q = mpc.weights.Q[np.ix_(idx, idx)]
    A, B = actuated_linearization(scenario.params, mpc.dt_s, scenario.spec.waypoints[0].yaw_rad, mpc.flow_mode)
    try:
        P = solve_dare(A, B, Q, mpc.weights.R, tol=DARE_TOL)
    except ChmpcError as e:
        return CheckResult("dare", CheckStatus.FAIL, str(e))
    residual = dare_residual(A, B, Q, mpc.weights.R, P)
    status = CheckStatus.PASS if residual <= DARE_TOL else CheckStatus.FAIL
    return CheckResult("dare", status, f"Frobenius residual {residual:.2e}")


def check_allocation(scenario: Scenario, samples: int = 200, seed: int = 11) -> CheckResult:
    """Projected-gradient KKT residual of the allocation QP on random wrenches."""
    bounds = scenario.mpc.wrench_bounds
    rng = np.random.default_rng(seed)
    wrenches = rng.uniform(bounds.lower(), bounds.upper(), size=(samples, 4))
    worst = max(allocation_kkt_residual(scenario.allocation, tau, allocate(scenario.allocation, tau))
                for tau in wrenches)
    status = CheckStatus.PASS if worst <= KKT_TOL else CheckStatus.FAIL
    return CheckResult("allocation_kkt", status, f"max residual {worst:.2e} over {samples} wrenches")


def check_field_seams(scenario: Scenario) -> CheckResult:
    """Derivative jumps across grid cell faces along the path to the first waypoint."""
    field = scenario.field
    if not isinstance(field, CurrentGrid):
        return CheckResult("field_seam", CheckStatus.PASS, "analytic field, smooth by construction")
    jump = face_derivative_jump(field, _straight_line(scenario, scenario.mpc.horizon + 1))
    detail = f"{field.interpolation.value} grid, max normalised derivative jump {jump:.2e}"
    if jump <= SEAM_TOL:
        return CheckResult("field_seam", CheckStatus.PASS, detail)
    if field.interpolation == InterpolationMode.TRILINEAR:
        return CheckResult("field_seam", CheckStatus.WARN, detail + " (trilinear is only C0 across faces)")
    return CheckResult("field_seam", CheckStatus.FAIL, detail)


def run_checks(scenario: Scenario) -> List[CheckResult]:
    """Run every check; a failing check never stops the others."""
    results = []
    for check in (check_objective_gradients, check_dare, check_allocation, check_field_seams):
        try:
            result = check(scenario)
        except ChmpcError as e:
            result = CheckResult(check.__name__.replace("check_", ""), CheckStatus.FAIL, str(e))
        log = logger.warning if result.status != CheckStatus.PASS else logger.info
        log(result.line())
        results.append(result)
    return results
