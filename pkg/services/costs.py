"""
Current-aware stage and terminal costs.

The helpfulness gate s in [0, 1) scores how well the local current points
towards the goal and how strong it is. Shaped stage costs add the gated
terms to the baseline tracking/effort/slew cost: a relaxed along-track
penalty and a bounded effort rebate (never raising the cost), plus a thrust
surcharge and a drift-with-the-current reward.

Every expression is backend-generic so the NLP graph and the numeric
evaluation share one formula.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
import scipy.linalg

from models.schemas import CostMode, CostWeights, GateParams, RelativeFlowMode, VehicleParams
from services.vehicle import (
    CONTROL_DIM,
    STATE_DIM,
    ControlWrench,
    CurrentSample,
    VehicleState,
    linearize_euler_step,
    position_rate,
)
from utils.helpers import as_vector, wrap_angle_expr
from utils.symbolic import NUMPY
from utils.validation import DareConvergenceError, ValidationError, validate_definite

logger = logging.getLogger(__name__)

# Channels reachable from [X, Y, Z, N]: x, y, z, psi, u, v, w, r
ACTUATED_STATES = (0, 1, 2, 5, 6, 7, 8, 11)


@dataclass(frozen=True)
class StageContext:
    """Inputs of one stage cost evaluation."""
    state: VehicleState
    wrench: ControlWrench
    current: CurrentSample
    goal: np.ndarray
    k: int = 0
    prev_wrench: Optional[ControlWrench] = None

    def __post_init__(self):
        object.__setattr__(self, "goal", as_vector(self.goal, STATE_DIM, "goal"))
        if self.k < 0:
            raise ValidationError(f"stage index must be >= 0, got {self.k}")
        if (self.k > 0) != (self.prev_wrench is not None):
            raise ValidationError("prev_wrench is required exactly when k > 0")


# ============== Generic Expressions ==============

def smoothed_norm(b: Any, z: Any, eps: float) -> Any:
    return b.sqrt(b.dot(z, z) + eps)


def _wrapped_error(b: Any, x: Any, goal: Any) -> Any:
    dx = x - goal
    return b.vcat([
        dx[0:3],
        wrap_angle_expr(b, dx[3]),
        wrap_angle_expr(b, dx[4]),
        wrap_angle_expr(b, dx[5]),
        dx[6:12],
    ])


def alignment_expr(b: Any, e: Any, v_c: Any, gate: GateParams) -> Any:
    return 0.5 * (1.0 + b.dot(e, v_c) / (smoothed_norm(b, e, gate.eps_e) * smoothed_norm(b, v_c, gate.eps_c)))


def gate_expr(b: Any, pos: Any, v_c: Any, goal_pos: Any, gate: GateParams) -> Any:
    """s = alignment * tanh(|v_c|_eps / V_scale)."""
    e = goal_pos - pos
    strength = b.tanh(smoothed_norm(b, v_c, gate.eps_c) / gate.v_scale_mps)
    return alignment_expr(b, e, v_c, gate) * strength


def along_track_expr(b: Any, pos: Any, goal_pos: Any, eps_e: float) -> Tuple[Any, Any]:
    e = goal_pos - pos
    sq = b.dot(e, e)
    return e * (sq / (sq + eps_e)), e


def baseline_stage_expr(b: Any, x: Any, u: Any, u_prev: Any, goal: Any,
                        weights: CostWeights) -> Any:
    """Tracking + effort, plus slew when ``u_prev`` is given."""
    cost = b.quad(_wrapped_error(b, x, goal), weights.Q) + b.quad(u, weights.R)
    if u_prev is not None:
        cost = cost + b.quad(u - u_prev, weights.R_s)
    return cost


def shaping_terms_expr(b: Any, x: Any, u: Any, v_c: Any, goal: Any, s: Any,
                       weights: CostWeights, gate: GateParams) -> Dict[str, Any]:
    """Gated additions, keyed by term."""
    e_par, _ = along_track_expr(b, x[0:3], goal[0:3], gate.eps_e)
    u_lin = u[0:3]
    rebate = weights.e_ref / (weights.e_ref + b.quad(u_lin, weights.R_lin))
    drift = position_rate(b, x) - v_c
    return {
        "relax": -s * weights.lambda_relax * b.quad(e_par, weights.Q_pos),
        "rebate": -s * weights.w_reb * rebate,
        "thrust": s * weights.kappa_eff * b.quad(u, weights.R),
        "glide": s * weights.w_glide * b.dot(drift, drift),
    }


def stage_expr(b: Any, x: Any, u: Any, u_prev: Any, v_c: Any, goal: Any,
               weights: CostWeights, gate: GateParams, mode: CostMode) -> Any:
    base = baseline_stage_expr(b, x, u, u_prev, goal, weights)
    if mode == CostMode.BASELINE:
        return base
    s = gate_expr(b, x[0:3], v_c, goal[0:3], gate)
    terms = shaping_terms_expr(b, x, u, v_c, goal, s, weights, gate)
    return base + terms["relax"] + terms["rebate"] + terms["thrust"] + terms["glide"]


def terminal_expr(b: Any, x_n: Any, goal: Any, Q_f: np.ndarray) -> Any:
    return b.quad(_wrapped_error(b, x_n, goal), Q_f)


# ============== Numeric API ==============

def helpfulness(state: VehicleState, current: CurrentSample, goal_pos: Any,
                gate: GateParams) -> float:
    """Helpfulness gate value in [0, 1)."""
    goal_pos = as_vector(goal_pos, 3, "goal_pos")
    return float(gate_expr(NUMPY, state.position, current.v_c_ned, goal_pos, gate))


def alignment_factor(state: VehicleState, current: CurrentSample, goal_pos: Any,
                     gate: GateParams) -> float:
    """Directional half of the gate, 1/2 (1 + e_hat . c_hat)."""
    e = as_vector(goal_pos, 3, "goal_pos") - state.position
    return float(alignment_expr(NUMPY, e, current.v_c_ned, gate))


def along_track_error(state_pos: Any, goal_pos: Any, eps_e: float) -> Tuple[np.ndarray, np.ndarray]:
    """Return (e_par, e) with e = goal - pos and e_par its smoothed projection."""
    if eps_e <= 0:
        raise ValidationError(f"eps_e must be > 0, got {eps_e}")
    return along_track_expr(NUMPY, as_vector(state_pos, 3, "state_pos"),
                            as_vector(goal_pos, 3, "goal_pos"), eps_e)


def stage_cost(ctx: StageContext, weights: CostWeights, gate: GateParams,
               mode: CostMode = CostMode.SHAPED) -> float:
    """Baseline or shaped stage cost for one stage context."""
    u_prev = None if ctx.prev_wrench is None else ctx.prev_wrench.as_vector()
    value = stage_expr(NUMPY, ctx.state.as_vector(), ctx.wrench.as_vector(), u_prev,
                       ctx.current.v_c_ned, ctx.goal, weights, gate, CostMode(mode))
    return float(value)


def stage_cost_terms(ctx: StageContext, weights: CostWeights, gate: GateParams) -> Dict[str, float]:
    """Baseline value, gate and each shaping term, for auditing."""
    x, u = ctx.state.as_vector(), ctx.wrench.as_vector()
    u_prev = None if ctx.prev_wrench is None else ctx.prev_wrench.as_vector()
    s = gate_expr(NUMPY, x[0:3], ctx.current.v_c_ned, ctx.goal[0:3], gate)
    terms = shaping_terms_expr(NUMPY, x, u, ctx.current.v_c_ned, ctx.goal, s, weights, gate)
    report = {name: float(v) for name, v in terms.items()}
    report["baseline"] = float(baseline_stage_expr(NUMPY, x, u, u_prev, ctx.goal, weights))
    report["gate"] = float(s)
    return report


def terminal_cost(x_n: Any, x_g: Any, Q_f: np.ndarray) -> float:
    """(x_N - x_g)^T Q_f (x_N - x_g) with wrapped angle errors."""
    return float(terminal_expr(NUMPY, as_vector(x_n, STATE_DIM, "x_N"),
                               as_vector(x_g, STATE_DIM, "x_g"), np.asarray(Q_f, dtype=float)))


# ============== Riccati Terminal Weight ==============

def riccati_map(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
                P: np.ndarray) -> np.ndarray:
    """One application of P -> A'PA - A'PB (R + B'PB)^-1 B'PA + Q."""
    BtPA = B.T @ P @ A
    gain = scipy.linalg.solve(R + B.T @ P @ B, BtPA, assume_a="pos")
    nxt = A.T @ P @ A - BtPA.T @ gain + Q
    return 0.5 * (nxt + nxt.T)


def dare_residual(A: np.ndarray, B: np.ndarray, Q: np.ndarray, R: np.ndarray,
                  P: np.ndarray) -> float:
    """Frobenius norm of P - riccati_map(P)."""
    return float(np.linalg.norm(P - riccati_map(A, B, Q, R, P), "fro"))


def solve_dare(A: Any, B: Any, Q: Any, R: Any, tol: float = 1e-8,
               max_iter: int = 20000) -> np.ndarray:
    """Fixed-point iteration of the discrete Riccati map from P = Q.

    Args:
        A, B: System matrices (n x n, n x m)
        Q, R: State and input weights
        tol: Frobenius residual target
        max_iter: Iteration cap

    Returns:
        Symmetric positive semidefinite P

    Raises:
        DareConvergenceError: If the residual target is not met within the cap
    """
    A, B = np.atleast_2d(np.asarray(A, dtype=float)), np.atleast_2d(np.asarray(B, dtype=float))
    Q, R = np.atleast_2d(np.asarray(Q, dtype=float)), np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        nxt = riccati_map(A, B, Q, R, P)
        delta = float(np.linalg.norm(nxt - P, "fro"))
        P = nxt
        if not np.isfinite(delta):
            break
        if delta <= 0.1 * tol:
            residual = dare_residual(A, B, Q, R, P)
            if residual <= tol:
                logger.debug(f"DARE converged in {iteration} iterations (residual {residual:.2e})")
                return P
    raise DareConvergenceError(
        f"Riccati iteration did not reach residual {tol:g} in {max_iter} iterations",
        residual=float(residual),
        iterations=max_iter,
    )


def dare_terminal(
    params: VehicleParams,
    dt: float,
    Q: np.ndarray,
    R_full: np.ndarray,
    goal_yaw: float = 0.0,
    flow_mode: RelativeFlowMode = RelativeFlowMode.FULL,
    tol: float = 1e-8,
) -> np.ndarray:
    """Terminal weight from the Euler-step linearization at the goal pose at rest.

    The Riccati equation is solved on the actuated channels; the roll/pitch
    block keeps its entries from Q.
    """
    Q = np.asarray(Q, dtype=float)
    R_full = np.asarray(R_full, dtype=float)
    ok, error = validate_definite(R_full, strict=True)
    if not ok:
        raise ValidationError(f"R: {error}")
    A, B = actuated_linearization(params, dt, goal_yaw, flow_mode)
    idx = np.array(ACTUATED_STATES)
    P_act = solve_dare(A, B, Q[np.ix_(idx, idx)], R_full, tol=tol)
    Q_f = Q.copy()
    Q_f[np.ix_(idx, idx)] = P_act
    return 0.5 * (Q_f + Q_f.T)


def actuated_linearization(params: VehicleParams, dt: float, goal_yaw: float = 0.0,
                           flow_mode: RelativeFlowMode = RelativeFlowMode.FULL
                           ) -> Tuple[np.ndarray, np.ndarray]:
    """(A, B) of the actuated subsystem used by ``dare_terminal``."""
    x_eq = np.zeros(STATE_DIM)
    x_eq[5] = goal_yaw
    A, B = linearize_euler_step(params, dt, x_eq, np.zeros(CONTROL_DIM), np.zeros(3), flow_mode)
    idx = np.array(ACTUATED_STATES)
    return A[np.ix_(idx, idx)], B[idx, :]
