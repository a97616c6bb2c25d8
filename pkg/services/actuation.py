"""
Thruster allocation and electrical power accounting.

``allocate`` distributes the four-channel wrench over six bounded thrusters
by minimizing ||K4 T - tau||^2 + lambda ||T||^2 over the thrust box. The
power model is a two-branch power law T = a P^b fitted in log-log space from
a bench calibration table.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from pydantic import ValidationError as PydanticValidationError

from models.schemas import AllocationModelSpec, SolverSettings
from services.nlp import NlpProblem, projected_gradient_norm, solve
from services.vehicle import ControlWrench
from utils.validation import CalibrationError, ConfigError, RankError, ValidationError

logger = logging.getLogger(__name__)

CALIBRATION_HEADER = "THRUSTCAL v1"

# T200 at 16 V, per-thruster limits (N)
T200_MAX_N = 51.5
T200_MIN_N = -40.2

_QP_SETTINGS = SolverSettings(stationarity_tol=1e-10, complementarity_tol=1e-10, max_inner_iter=100)


class ThrustDirection(str, Enum):
    """Calibration branch token."""
    FORWARD = "P"
    REVERSE = "N"


# ============== Allocation ==============

def bluerov2_heavy_k4() -> np.ndarray:
    """Constructed K4 for the vectored six-thruster BlueROV2 frame.

    Horizontal thrusters 1-4 sit at (+-0.156, +-0.111) m pointing at +-45 deg,
    so each contributes a = 1/sqrt(2) of its thrust to surge and sway and
    x_i d_y - y_i d_x = +-0.267 a N m per N to yaw. Thrusters 5-6 are vertical.
    """
    a = 1.0 / np.sqrt(2.0)
    arm = 0.267 * a
    return np.array([
        [a, a, a, a, 0.0, 0.0],
        [-a, a, a, -a, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0, 1.0],
        [-arm, arm, -arm, arm, 0.0, 0.0],
    ])


@dataclass(frozen=True)
class AllocationModel:
    """Thruster geometry K4 (rows X, Y, Z, N), thrust box and regularization."""
    k4: np.ndarray
    t_min: np.ndarray
    t_max: np.ndarray
    lambda_reg: float = 1e-4

    def __post_init__(self):
        k4 = np.array(self.k4, dtype=float)
        t_min = np.array(self.t_min, dtype=float).reshape(-1)
        t_max = np.array(self.t_max, dtype=float).reshape(-1)
        if k4.ndim != 2 or k4.shape[0] != 4 or k4.shape[1] != t_min.size or t_min.size != t_max.size:
            raise ValidationError(f"inconsistent allocation shapes: k4 {k4.shape}, bounds {t_min.size}/{t_max.size}")
        if np.linalg.matrix_rank(k4) != 4:
            raise ValidationError("K4 must have full row rank 4")
        if np.any(t_min >= 0) or np.any(t_max <= 0):
            raise ValidationError("each thruster needs t_min < 0 < t_max")
        if not self.lambda_reg > 0:
            raise ValidationError(f"lambda_reg must be > 0, got {self.lambda_reg}")
        for name, arr in (("k4", k4), ("t_min", t_min), ("t_max", t_max)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def thruster_count(self) -> int:
        return self.k4.shape[1]

    @classmethod
    def from_spec(cls, spec: AllocationModelSpec) -> "AllocationModel":
        return cls(np.array(spec.k4), np.array(spec.t_min_n), np.array(spec.t_max_n), spec.lambda_reg)

    def to_spec(self) -> AllocationModelSpec:
        return AllocationModelSpec(
            k4=tuple(tuple(float(v) for v in row) for row in self.k4),
            t_min_n=tuple(float(v) for v in self.t_min),
            t_max_n=tuple(float(v) for v in self.t_max),
            lambda_reg=self.lambda_reg,
        )

    def delivered(self, thrusts: np.ndarray) -> ControlWrench:
        """Wrench actually produced by ``thrusts``."""
        return ControlWrench.from_vector(self.k4 @ np.asarray(thrusts, dtype=float))


def default_allocation_model() -> AllocationModel:
    return AllocationModel(
        k4=bluerov2_heavy_k4(),
        t_min=np.full(6, T200_MIN_N),
        t_max=np.full(6, T200_MAX_N),
        lambda_reg=1e-4,
    )


def load_allocation_model(path: Union[str, Path]) -> AllocationModel:
    """Load an allocation YAML file (k4, t_min_n, t_max_n, lambda_reg)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"allocation model file not found: {path}", key="allocation_model_path")
    try:
        spec = AllocationModelSpec(**(yaml.safe_load(path.read_text()) or {}))
        return AllocationModel.from_spec(spec)
    except (yaml.YAMLError, PydanticValidationError, ValidationError, TypeError) as e:
        raise ConfigError(f"{path}: {e}", key="allocation_model_path") from e


def box_qp_problem(K: np.ndarray, tau: np.ndarray, t_min: np.ndarray, t_max: np.ndarray,
                   lambda_reg: float) -> NlpProblem:
    """min ||K T - tau||^2 + lambda ||T||^2 over t_min <= T <= t_max."""
    K = np.asarray(K, dtype=float)
    tau = np.asarray(tau, dtype=float)
    hessian = 2.0 * (K.T @ K + lambda_reg * np.eye(K.shape[1]))

    def objective(T: np.ndarray) -> Tuple[float, np.ndarray]:
        r = K @ T - tau
        return float(r @ r + lambda_reg * (T @ T)), 2.0 * (K.T @ r) + 2.0 * lambda_reg * T

    return NlpProblem(n=K.shape[1], objective=objective, lower=t_min, upper=t_max,
                      hessian_seed=lambda _: hessian)


def _polish_active_set(problem: NlpProblem, K: np.ndarray, tau: np.ndarray, lambda_reg: float,
                       T: np.ndarray) -> np.ndarray:
    """Re-solve the free block exactly with the active bounds fixed at the solver's answer."""
    _, grad = problem.objective(T)
    at_lower = (T - problem.lower <= 1e-9) & (grad > 0)
    at_upper = (problem.upper - T <= 1e-9) & (grad < 0)
    fixed = at_lower | at_upper
    polished = T.copy()
    polished[at_lower] = problem.lower[at_lower]
    polished[at_upper] = problem.upper[at_upper]
    free = ~fixed
    if np.any(free):
        H = K.T @ K + lambda_reg * np.eye(K.shape[1])
        rhs = K.T @ tau - H[:, fixed] @ polished[fixed]
        polished[free] = np.linalg.solve(H[np.ix_(free, free)], rhs[free])
    polished = problem.project(polished)

    before = projected_gradient_norm(T, grad, problem.lower, problem.upper)
    after = projected_gradient_norm(polished, problem.objective(polished)[1], problem.lower, problem.upper)
    return polished if after <= before else T


def solve_box_qp(K: np.ndarray, tau: np.ndarray, t_min: np.ndarray, t_max: np.ndarray,
                 lambda_reg: float) -> np.ndarray:
    """Minimizer of the regularized allocation QP, started from T = 0."""
    K = np.asarray(K, dtype=float)
    tau = np.asarray(tau, dtype=float)
    problem = box_qp_problem(K, tau, t_min, t_max, lambda_reg)
    result = solve(problem, np.zeros(problem.n), _QP_SETTINGS)
    if not result.converged:
        logger.warning(f"Allocation QP ended with {result.status.value} (stat={result.stationarity:.2e})")
    return _polish_active_set(problem, K, tau, lambda_reg, result.x_star)


def allocate(model: AllocationModel, wrench: Union[ControlWrench, np.ndarray]) -> np.ndarray:
    """Thrust vector T* for a commanded [X, Y, Z, N] wrench."""
    tau = wrench.as_vector() if isinstance(wrench, ControlWrench) else np.asarray(wrench, dtype=float)
    return solve_box_qp(model.k4, tau, model.t_min, model.t_max, model.lambda_reg)


def allocation_kkt_residual(model: AllocationModel, wrench: Union[ControlWrench, np.ndarray],
                            thrusts: np.ndarray) -> float:
    """Projected-gradient KKT residual of ``thrusts`` for the allocation QP."""
    tau = wrench.as_vector() if isinstance(wrench, ControlWrench) else np.asarray(wrench, dtype=float)
    problem = box_qp_problem(model.k4, tau, model.t_min, model.t_max, model.lambda_reg)
    _, grad = problem.objective(np.asarray(thrusts, dtype=float))
    return projected_gradient_norm(np.asarray(thrusts, dtype=float), grad, model.t_min, model.t_max)


def regularized_least_squares(model: AllocationModel, wrench: Union[ControlWrench, np.ndarray]) -> np.ndarray:
    """Unconstrained closed form (K4'K4 + lambda I)^-1 K4' tau."""
    tau = wrench.as_vector() if isinstance(wrench, ControlWrench) else np.asarray(wrench, dtype=float)
    K = model.k4
    return np.linalg.solve(K.T @ K + model.lambda_reg * np.eye(K.shape[1]), K.T @ tau)


# ============== Power Model ==============

@dataclass(frozen=True)
class CalibrationPoint:
    """One bench measurement at fixed voltage."""
    direction: ThrustDirection
    power_w: float
    thrust_n: float


@dataclass(frozen=True)
class PowerModel:
    """Two-branch power law |T| = a P^b.

    Attributes:
        a_f, b_f: Forward branch coefficients
        a_r, b_r: Reverse branch coefficients
        rms_forward, rms_reverse: Log-space RMS fit residuals
        table: Calibration points the model was fitted on
    """
    a_f: float
    b_f: float
    a_r: float
    b_r: float
    rms_forward: float = 0.0
    rms_reverse: float = 0.0
    table: Tuple[CalibrationPoint, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("a_f", "b_f", "a_r", "b_r"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise CalibrationError(f"{name} must be positive, got {value}")

    def coefficients(self) -> Tuple[float, float, float, float]:
        return self.a_f, self.b_f, self.a_r, self.b_r


def parse_calibration(text: str) -> List[CalibrationPoint]:
    """Parse a ``THRUSTCAL v1`` document.

    Lines after the header are ``<P|N> power_W thrust_N``; blank lines and
    ``#`` comments are skipped.

    Raises:
        CalibrationError: Missing header, malformed line or empty table
    """
    lines = [line.split("#", 1)[0].strip() for line in text.splitlines()]
    lines = [line for line in lines if line]
    if not lines or lines[0] != CALIBRATION_HEADER:
        raise CalibrationError(f"calibration must start with '{CALIBRATION_HEADER}'")
    points = []
    for number, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != 3:
            raise CalibrationError(f"line {number}: expected 'direction power thrust', got '{line}'")
        try:
            direction = ThrustDirection(parts[0])
            power, thrust = float(parts[1]), float(parts[2])
        except ValueError as e:
            raise CalibrationError(f"line {number}: {e}") from e
        if not (np.isfinite(power) and np.isfinite(thrust)):
            raise CalibrationError(f"line {number}: values must be finite")
        points.append(CalibrationPoint(direction, power, thrust))
    if not points:
        raise CalibrationError("calibration table is empty")
    return points


def load_calibration(path: Union[str, Path]) -> List[CalibrationPoint]:
    path = Path(path)
    if not path.exists():
        raise CalibrationError(f"calibration file not found: {path}")
    return parse_calibration(path.read_text())


def _fit_branch(points: Sequence[CalibrationPoint], label: str) -> Tuple[float, float, float]:
    if len(points) < 3:
        raise CalibrationError(f"{label} branch needs at least 3 points, got {len(points)}")
    power = np.array([p.power_w for p in points])
    thrust = np.abs(np.array([p.thrust_n for p in points]))
    if np.any(power <= 0) or np.any(thrust <= 0):
        raise CalibrationError(f"{label} branch needs strictly positive power and nonzero thrust")
    design = np.column_stack([np.ones_like(power), np.log(power)])
    coef, _, rank, _ = np.linalg.lstsq(design, np.log(thrust), rcond=None)
    if rank < 2:
        raise RankError(f"{label} branch regression is rank deficient (all powers equal?)")
    residual = np.log(thrust) - design @ coef
    return float(np.exp(coef[0])), float(coef[1]), float(np.sqrt(np.mean(residual ** 2)))


def fit_power_model(table: Iterable[CalibrationPoint]) -> PowerModel:
    """Fit both branches by linear least squares on (ln P, ln |T|).

    Raises:
        CalibrationError: Too few points or non-positive values
        RankError: Degenerate branch (all powers equal)
    """
    table = tuple(table)
    forward = [p for p in table if p.direction == ThrustDirection.FORWARD]
    reverse = [p for p in table if p.direction == ThrustDirection.REVERSE]
    a_f, b_f, rms_f = _fit_branch(forward, "forward")
    a_r, b_r, rms_r = _fit_branch(reverse, "reverse")
    logger.info(f"Fitted power law: a_f={a_f:.4f} b_f={b_f:.4f} a_r={a_r:.4f} b_r={b_r:.4f}")
    return PowerModel(a_f, b_f, a_r, b_r, rms_f, rms_r, table)


def thrust_for_power(model: PowerModel, power_w: float,
                     direction: ThrustDirection = ThrustDirection.FORWARD) -> float:
    """Signed thrust produced by ``power_w`` on the given branch."""
    if power_w < 0:
        raise ValidationError(f"power must be >= 0, got {power_w}")
    if direction == ThrustDirection.FORWARD:
        return model.a_f * power_w ** model.b_f
    return -model.a_r * power_w ** model.b_r


def power_for_thrust(model: PowerModel, thrust_n: float) -> float:
    """Electrical power for a signed thrust; P(0) = 0."""
    if thrust_n == 0:
        return 0.0
    if thrust_n > 0:
        return (thrust_n / model.a_f) ** (1.0 / model.b_f)
    return (-thrust_n / model.a_r) ** (1.0 / model.b_r)


def total_power(model: PowerModel, thrusts: Iterable[float]) -> float:
    """Sum of per-thruster power (W)."""
    return float(sum(power_for_thrust(model, float(t)) for t in thrusts))


def save_power_model(model: PowerModel, path: Union[str, Path], voltage_v: float = 16.0) -> Path:
    """Write fitted coefficients and residuals as YAML."""
    path = Path(path)
    document = {
        "voltage_v": voltage_v,
        "forward": {"a": model.a_f, "b": model.b_f, "rms_log_residual": model.rms_forward,
                    "points": sum(p.direction == ThrustDirection.FORWARD for p in model.table)},
        "reverse": {"a": model.a_r, "b": model.b_r, "rms_log_residual": model.rms_reverse,
                    "points": sum(p.direction == ThrustDirection.REVERSE for p in model.table)},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(document, sort_keys=False))
    return path


# ============== Energy ==============

@dataclass
class EnergyStats:
    """Per-step power and energy statistics.

    Attributes:
        power_w: Total electrical power at each step
        thrusts: Allocated thrusts, one row per step
        total_j: Sum of P dt
        mean_j: Mean energy per step
        max_j: Largest energy per step
    """
    power_w: np.ndarray
    thrusts: np.ndarray
    total_j: float
    mean_j: float
    max_j: float

    @property
    def total_kj(self) -> float:
        return self.total_j / 1000.0

    @classmethod
    def from_power(cls, power_w: Sequence[float], thrusts: np.ndarray, dt: float) -> "EnergyStats":
        power = np.asarray(power_w, dtype=float)
        energy = power * dt
        return cls(
            power_w=power,
            thrusts=np.asarray(thrusts, dtype=float),
            total_j=float(energy.sum()),
            mean_j=float(energy.mean()) if energy.size else 0.0,
            max_j=float(energy.max()) if energy.size else 0.0,
        )


def energy_accumulate(model: PowerModel, alloc_model: AllocationModel,
                      wrenches: Sequence[Union[ControlWrench, np.ndarray]], dt: float) -> EnergyStats:
    """Allocate every wrench, sum thruster power and integrate over ``dt``."""
    if dt <= 0:
        raise ValidationError(f"dt must be > 0, got {dt}")
    thrusts = np.array([allocate(alloc_model, w) for w in wrenches]).reshape(-1, alloc_model.thruster_count)
    power = [total_power(model, row) for row in thrusts]
    return EnergyStats.from_power(power, thrusts, dt)


def saturation_fraction(alloc_model: AllocationModel, thrusts: np.ndarray,
                        tol: float = 1e-6) -> np.ndarray:
    """Fraction of steps each thruster spends at a limit."""
    thrusts = np.atleast_2d(np.asarray(thrusts, dtype=float))
    if thrusts.shape[0] == 0:
        return np.zeros(alloc_model.thruster_count)
    at_limit = (thrusts >= alloc_model.t_max - tol) | (thrusts <= alloc_model.t_min + tol)
    return at_limit.mean(axis=0)
