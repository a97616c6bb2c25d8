"""
Current-harnessing MPC loop.

Each control period the previous plan is shifted one stage, the current is
sampled along the warm-start positions and frozen, the multiple-shooting
NLP is solved and the first wrench is applied. The decision vector is
[x_1 .. x_N, u_0 .. u_{N-1}]; x_0 is the measured state.
"""

import logging
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence, TextIO, Tuple, Union

import casadi as cs
import numpy as np

from models.schemas import ControllerMode, MpcConfig, SolverStatus, VehicleParams
from services.costs import (
    baseline_stage_expr,
    dare_terminal,
    gate_expr,
    shaping_terms_expr,
    terminal_expr,
)
from services.currents import CurrentField
from services.nlp import AugmentedLagrangianSolver, NlpProblem, NlpSolution
from services.vehicle import (
    CONTROL_DIM,
    STATE_DIM,
    ControlWrench,
    CurrentSample,
    VehicleState,
    euler_step_expr,
)
from utils.helpers import as_vector
from utils.logging_setup import log_solver_event
from utils.symbolic import CASADI
from utils.validation import ValidationError

logger = logging.getLogger(__name__)


@dataclass
class HorizonPlan:
    """Optimized (or best-iterate) horizon.

    Attributes:
        states: N+1 states, states[0] is the measured state
        wrenches: N wrenches
        currents: N frozen current samples
        gates: N gate values s_k
        shaped_objective: Shaped objective of this trajectory
        baseline_objective: Baseline objective of the same trajectory
        status: Solver status
        solution: Raw solver result
    """
    states: List[VehicleState]
    wrenches: List[ControlWrench]
    currents: List[CurrentSample]
    gates: np.ndarray = field(default_factory=lambda: np.zeros(0))
    shaped_objective: float = 0.0
    baseline_objective: float = 0.0
    status: SolverStatus = SolverStatus.CONVERGED
    solution: Optional[NlpSolution] = None

    @property
    def horizon(self) -> int:
        return len(self.wrenches)

    @property
    def mean_gate(self) -> float:
        return float(np.mean(self.gates)) if len(self.gates) else 0.0

    def state_matrix(self) -> np.ndarray:
        return np.array([s.as_vector() for s in self.states])

    def wrench_matrix(self) -> np.ndarray:
        return np.array([w.as_vector() for w in self.wrenches])


# ============== Horizon Sampling ==============

def sample_horizon_currents(field: CurrentField,
                            warm_states: Sequence[Union[VehicleState, np.ndarray]]) -> List[CurrentSample]:
    """Current at each of the first N warm-start positions (N = len - 1)."""
    if len(warm_states) < 2:
        raise ValidationError("warm start needs at least two states")
    positions = [s.position if isinstance(s, VehicleState) else np.asarray(s, dtype=float)[:3]
                 for s in warm_states[:-1]]
    return [field.sample(p) for p in positions]


def shift_plan(plan: HorizonPlan) -> Tuple[List[VehicleState], List[ControlWrench]]:
    """Drop stage 0 and duplicate the last stage."""
    states = list(plan.states[1:]) + [plan.states[-1]]
    wrenches = list(plan.wrenches[1:]) + [plan.wrenches[-1]]
    return states, wrenches


def hover_guess(x_now: VehicleState, horizon: int) -> Tuple[List[VehicleState], List[ControlWrench]]:
    """Hold the current pose at rest over the horizon."""
    hold = VehicleState(eta=x_now.eta, nu=np.zeros(6))
    return [x_now] + [hold] * horizon, [ControlWrench()] * horizon


# ============== Transcription ==============

class _TranscriptionGraph:
    """CasADi functions of (w, p) for one config, parameter set and terminal weight.

    p = [x_init (12), goal (12), currents (3N, stage-major)].
    """

    def __init__(self, config: MpcConfig, params: VehicleParams, terminal_weight: np.ndarray):
        N, dt = config.horizon, config.dt_s
        weights, gate = config.weights, config.gate
        X = cs.SX.sym("X", STATE_DIM, N)
        U = cs.SX.sym("U", CONTROL_DIM, N)
        x_init = cs.SX.sym("x_init", STATE_DIM)
        goal = cs.SX.sym("goal", STATE_DIM)
        VC = cs.SX.sym("v_c", 3, N)
        w = cs.vertcat(cs.reshape(X, -1, 1), cs.reshape(U, -1, 1))
        p = cs.vertcat(x_init, goal, cs.reshape(VC, -1, 1))

        base, extra = 0, 0
        defects, gates = [], []
        for k in range(N):
            x_k = x_init if k == 0 else X[:, k - 1]
            u_k, vc_k = U[:, k], VC[:, k]
            u_prev = None if k == 0 else U[:, k - 1]
            defects.append(X[:, k] - euler_step_expr(x_k, u_k, vc_k, params, dt, config.flow_mode))
            s_k = gate_expr(CASADI, x_k[0:3], vc_k, goal[0:3], gate)
            terms = shaping_terms_expr(CASADI, x_k, u_k, vc_k, goal, s_k, weights, gate)
            base = base + baseline_stage_expr(CASADI, x_k, u_k, u_prev, goal, weights)
            extra = extra + terms["relax"] + terms["rebate"] + terms["thrust"] + terms["glide"]
            gates.append(s_k)

        baseline = base + terminal_expr(CASADI, X[:, N - 1], goal, terminal_weight)
        shaped = baseline + extra
        chosen = shaped if config.mode == ControllerMode.HARNESSING else baseline
        scaled = config.objective_scale * chosen
        c = cs.vertcat(*defects)

        self.n = (STATE_DIM + CONTROL_DIM) * N
        self.m = STATE_DIM * N
        self.horizon = N
        self.objective = cs.Function("objective", [w, p], [scaled, cs.gradient(scaled, w)])
        self.hessian = cs.Function("hessian", [w, p], [cs.hessian(scaled, w)[0]])
        self.constraints = cs.Function("defects", [w, p], [c, cs.jacobian(c, w)])
        self.values = cs.Function("values", [w, p], [shaped, baseline, cs.vertcat(*gates)])

        state_lo, state_hi = config.state_bounds.lower(), config.state_bounds.upper()
        wrench_lo, wrench_hi = config.wrench_bounds.lower(), config.wrench_bounds.upper()
        self.lower = np.concatenate([np.tile(state_lo, N), np.tile(wrench_lo, N)])
        self.upper = np.concatenate([np.tile(state_hi, N), np.tile(wrench_hi, N)])

    def pack(self, states: Sequence[VehicleState], wrenches: Sequence[ControlWrench]) -> np.ndarray:
        X = np.array([s.as_vector() for s in states[1:self.horizon + 1]])
        U = np.array([u.as_vector() for u in wrenches[:self.horizon]])
        return np.concatenate([X.ravel(), U.ravel()])

    def unpack(self, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        split = STATE_DIM * self.horizon
        return w[:split].reshape(self.horizon, STATE_DIM), w[split:].reshape(self.horizon, CONTROL_DIM)


def terminal_weight(config: MpcConfig, params: VehicleParams, goal_yaw: float = 0.0) -> np.ndarray:
    """Configured Q_f, or the Riccati weight at the goal yaw."""
    if config.weights.qf_diag is not None:
        return np.diag(config.weights.qf_diag)
    return _riccati_weight(params, config.dt_s, config.weights, config.flow_mode, round(goal_yaw, 9))


@lru_cache(maxsize=16)
def _riccati_weight(params, dt, weights, flow_mode, goal_yaw) -> np.ndarray:
    return dare_terminal(params, dt, weights.Q, weights.R, goal_yaw, flow_mode)


@lru_cache(maxsize=16)
def _graph(config: MpcConfig, params: VehicleParams, goal_yaw: float) -> _TranscriptionGraph:
    started = time.perf_counter()
    graph = _TranscriptionGraph(config, params, terminal_weight(config, params, goal_yaw))
    logger.info(
        f"Built {config.mode.value} transcription (N={config.horizon}, n={graph.n}, m={graph.m}) "
        f"in {time.perf_counter() - started:.2f}s"
    )
    return graph


def _parameter_vector(x_init: np.ndarray, goal: np.ndarray, currents: Sequence[CurrentSample]) -> np.ndarray:
    vc = np.array([c.v_c_ned for c in currents]).ravel()
    return np.concatenate([x_init, goal, vc])


def transcribe(config: MpcConfig, x_init: Union[VehicleState, np.ndarray], goal: np.ndarray,
               currents: Sequence[CurrentSample], params: VehicleParams) -> NlpProblem:
    """Multiple-shooting NLP for one control period.

    Raises:
        ValidationError: If the current list length differs from the horizon
    """
    if len(currents) != config.horizon:
        raise ValidationError(f"expected {config.horizon} current samples, got {len(currents)}")
    x0 = x_init.as_vector() if isinstance(x_init, VehicleState) else as_vector(x_init, STATE_DIM, "x_init")
    goal = as_vector(goal, STATE_DIM, "goal")
    graph = _graph(config, params, round(float(goal[5]), 9))
    p = _parameter_vector(x0, goal, currents)

    def objective(w: np.ndarray) -> Tuple[float, np.ndarray]:
        value, grad = graph.objective(w, p)
        return float(value), grad.full().ravel()

    def constraints(w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        c, J = graph.constraints(w, p)
        return c.full().ravel(), J.full()

    def hessian(w: np.ndarray) -> np.ndarray:
        return graph.hessian(w, p).full()

    return NlpProblem(n=graph.n, objective=objective, lower=graph.lower, upper=graph.upper,
                      constraints=constraints, m=graph.m, hessian_seed=hessian)


def plan_objectives(config: MpcConfig, params: VehicleParams, x_init: np.ndarray, goal: np.ndarray,
                    currents: Sequence[CurrentSample], w: np.ndarray) -> Tuple[float, float, np.ndarray]:
    """(shaped, baseline, gates) of decision vector ``w``."""
    goal = as_vector(goal, STATE_DIM, "goal")
    graph = _graph(config, params, round(float(goal[5]), 9))
    shaped, baseline, gates = graph.values(w, _parameter_vector(x_init, goal, currents))
    return float(shaped), float(baseline), gates.full().ravel()


def decision_vector(config: MpcConfig, params: VehicleParams, goal: np.ndarray,
                    states: Sequence[VehicleState], wrenches: Sequence[ControlWrench]) -> np.ndarray:
    """Pack a trajectory into the NLP decision layout."""
    goal = as_vector(goal, STATE_DIM, "goal")
    return _graph(config, params, round(float(goal[5]), 9)).pack(states, wrenches)


# ============== MPC Step ==============

def _shift_multipliers(solution: Optional[NlpSolution], horizon: int) -> Optional[np.ndarray]:
    if solution is None or solution.multipliers.size != STATE_DIM * horizon:
        return None
    lam = solution.multipliers.reshape(horizon, STATE_DIM)
    return np.vstack([lam[1:], lam[-1:]]).ravel()


def mpc_step(
    config: MpcConfig,
    field: CurrentField,
    x_now: VehicleState,
    goal: np.ndarray,
    warm: Optional[HorizonPlan],
    params: VehicleParams,
    trace: Optional[TextIO] = None,
) -> Tuple[ControlWrench, HorizonPlan]:
    """Solve one control period and return the first wrench with the plan.

    Solver non-convergence is reported on the plan; the best iterate is
    still used.
    """
    if not np.all(np.isfinite(x_now.as_vector())):
        raise ValidationError("x_now must be finite")
    goal = as_vector(goal, STATE_DIM, "goal")
    N = config.horizon

    if warm is not None and warm.horizon == N:
        states, wrenches = shift_plan(warm)
        multipliers = _shift_multipliers(warm.solution, N)
    else:
        states, wrenches = hover_guess(x_now, N)
        multipliers = None
    states = [x_now] + list(states[1:])

    currents = sample_horizon_currents(field, states)
    problem = transcribe(config, x_now, goal, currents, params)
    graph = _graph(config, params, round(float(goal[5]), 9))
    w0 = graph.pack(states, wrenches)

    started = time.perf_counter()
    solver = AugmentedLagrangianSolver(config.solver, trace)
    solution = solver.solve(problem, w0, multipliers)
    log_solver_event(logger, solution.status.value, solution.iterations, solution.stationarity,
                     solution.feasibility, (time.perf_counter() - started) * 1e3)

    X, U = graph.unpack(solution.x_star)
    shaped, baseline, gates = plan_objectives(config, params, x_now.as_vector(), goal, currents, solution.x_star)
    plan = HorizonPlan(
        states=[x_now] + [VehicleState.from_vector(row) for row in X],
        wrenches=[ControlWrench.from_vector(row) for row in U],
        currents=currents,
        gates=gates,
        shaped_objective=shaped,
        baseline_objective=baseline,
        status=solution.status,
        solution=solution,
    )
    u_apply = np.clip(U[0], config.wrench_bounds.lower(), config.wrench_bounds.upper())
    return ControlWrench.from_vector(u_apply), plan


class MpcController:
    """Stateful controller owning the warm start between periods.

    Args:
        config: Horizon, weights and bounds
        params: Prediction-model vehicle parameters
        trace: Optional solver trace stream
    """

    def __init__(self, config: MpcConfig, params: VehicleParams, trace: Optional[TextIO] = None):
        self.config = config
        self.params = params
        self.trace = trace
        self._plan: Optional[HorizonPlan] = None

    @property
    def plan(self) -> Optional[HorizonPlan]:
        return self._plan

    def reset(self) -> None:
        self._plan = None

    def step(self, field: CurrentField, x_now: VehicleState, goal: np.ndarray) -> Tuple[ControlWrench, HorizonPlan]:
        u_apply, self._plan = mpc_step(self.config, field, x_now, goal, self._plan, self.params, self.trace)
        return u_apply, self._plan
