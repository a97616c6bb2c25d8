"""
BlueROV2 6-DOF kinematics and relative-flow dynamics.

State layout: x = [xN, yE, zD, phi, theta, psi, u, v, w, p, q, r].
Control layout: [X, Y, Z, N] lifted to tau = [X, Y, Z, 0, 0, N].

Rigid-body Coriolis uses the absolute body velocity; added-mass Coriolis and
damping use the velocity relative to the water. The same builders run on
numpy floats for the plant and on CasADi SX for the prediction model.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Tuple, Union

import casadi as cs
import numpy as np
import yaml
from pydantic import ValidationError as PydanticValidationError

from models.schemas import RelativeFlowMode, VehicleParams
from utils.helpers import as_vector
from utils.symbolic import CASADI, NUMPY, backend_for
from utils.validation import (
    ConfigError,
    GimbalLockError,
    PlantDivergenceError,
    SingularMassMatrixError,
    ValidationError,
)

logger = logging.getLogger(__name__)

STATE_DIM = 12
CONTROL_DIM = 4
GIMBAL_GUARD = np.pi / 2 - 1e-3


# ============== Domain Types ==============

@dataclass(frozen=True)
class VehicleState:
    """Pose eta (NED) and body velocity nu."""
    eta: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        eta = as_vector(self.eta, 6, "eta")
        nu = as_vector(self.nu, 6, "nu")
        eta.setflags(write=False)
        nu.setflags(write=False)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "nu", nu)

    @classmethod
    def from_vector(cls, x: Any) -> "VehicleState":
        vec = as_vector(x, STATE_DIM, "state")
        return cls(eta=vec[:6], nu=vec[6:])

    @classmethod
    def at_rest(cls, position: Any, yaw: float = 0.0) -> "VehicleState":
        eta = np.zeros(6)
        eta[:3] = as_vector(position, 3, "position")
        eta[5] = yaw
        return cls(eta=eta, nu=np.zeros(6))

    @property
    def position(self) -> np.ndarray:
        return self.eta[:3]

    @property
    def speed(self) -> float:
        """Norm of the body linear velocity."""
        return float(np.linalg.norm(self.nu[:3]))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.eta, self.nu])


@dataclass(frozen=True)
class ControlWrench:
    """Commanded surge, sway, heave forces (N) and yaw moment (N m)."""
    X: float = 0.0
    Y: float = 0.0
    Z: float = 0.0
    N_yaw: float = 0.0

    @classmethod
    def from_vector(cls, u: Any) -> "ControlWrench":
        vec = as_vector(u, CONTROL_DIM, "wrench")
        return cls(*(float(v) for v in vec))

    def as_vector(self) -> np.ndarray:
        return np.array([self.X, self.Y, self.Z, self.N_yaw])

    def tau6(self) -> np.ndarray:
        return np.array([self.X, self.Y, self.Z, 0.0, 0.0, self.N_yaw])


@dataclass(frozen=True)
class CurrentSample:
    """Horizontal current in NED (m/s); the vertical component is always 0."""
    v_c_ned: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        vec = as_vector(self.v_c_ned, 3, "v_c_ned")
        if vec[2] != 0.0:
            raise ValidationError("current samples carry no vertical component")
        vec.setflags(write=False)
        object.__setattr__(self, "v_c_ned", vec)

    @classmethod
    def horizontal(cls, north: float, east: float) -> "CurrentSample":
        return cls(np.array([north, east, 0.0]))

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.v_c_ned))


# ============== Parameter Loading ==============

def load_vehicle_params(path: Union[str, Path]) -> VehicleParams:
    """Load a flat key -> number YAML parameter file.

    Raises:
        ConfigError: Missing file, missing keys, or out-of-range values
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"vehicle parameter file not found: {path}", key="vehicle_params_path")
    try:
        document = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(document, dict):
        raise ConfigError(f"{path}: expected a key/value mapping")
    try:
        params = VehicleParams(**document)
    except PydanticValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(p) for p in first["loc"]) or "vehicle"
        raise ConfigError(f"{path}: {key}: {first['msg']}", key=key) from e
    logger.debug(f"Loaded vehicle parameters from {path}")
    return params


# ============== Matrix Builders ==============

def _skew(b: Any, a: Any) -> Any:
    S = b.zeros(3, 3)
    S[0, 1] = -a[2]
    S[0, 2] = a[1]
    S[1, 0] = a[2]
    S[1, 2] = -a[0]
    S[2, 0] = -a[1]
    S[2, 1] = a[0]
    return S


def _rotation(b: Any, phi: Any, theta: Any, psi: Any) -> Any:
    cphi, sphi = b.cos(phi), b.sin(phi)
    cth, sth = b.cos(theta), b.sin(theta)
    cpsi, spsi = b.cos(psi), b.sin(psi)
    R = b.zeros(3, 3)
    R[0, 0] = cpsi * cth
    R[0, 1] = -spsi * cphi + cpsi * sth * sphi
    R[0, 2] = spsi * sphi + cpsi * cphi * sth
    R[1, 0] = spsi * cth
    R[1, 1] = cpsi * cphi + sphi * sth * spsi
    R[1, 2] = -cpsi * sphi + sth * spsi * cphi
    R[2, 0] = -sth
    R[2, 1] = cth * sphi
    R[2, 2] = cth * cphi
    return R


def _euler_T(b: Any, phi: Any, theta: Any) -> Any:
    T = b.zeros(3, 3)
    T[0, 0] = 1.0
    T[0, 1] = b.sin(phi) * b.tan(theta)
    T[0, 2] = b.cos(phi) * b.tan(theta)
    T[1, 1] = b.cos(phi)
    T[1, 2] = -b.sin(phi)
    T[2, 1] = b.sin(phi) / b.cos(theta)
    T[2, 2] = b.cos(phi) / b.cos(theta)
    return T


def _coriolis_rb(b: Any, params: VehicleParams, nu: Any) -> Any:
    C = b.zeros(6, 6)
    mS = params.m * _skew(b, nu[0:3])
    inertia = params.inertia
    Iw = b.vcat([inertia[0] * nu[3], inertia[1] * nu[4], inertia[2] * nu[5]])
    C[0:3, 3:6] = -mS
    C[3:6, 0:3] = -mS
    C[3:6, 3:6] = -_skew(b, Iw)
    return C


def _coriolis_added(b: Any, params: VehicleParams, nu_r: Any) -> Any:
    ma = params.added_mass
    a1 = b.vcat([ma[0] * nu_r[0], ma[1] * nu_r[1], ma[2] * nu_r[2]])
    a2 = b.vcat([ma[3] * nu_r[3], ma[4] * nu_r[4], ma[5] * nu_r[5]])
    C = b.zeros(6, 6)
    C[0:3, 3:6] = -_skew(b, a1)
    C[3:6, 0:3] = -_skew(b, a1)
    C[3:6, 3:6] = -_skew(b, a2)
    return C


def _damping(b: Any, params: VehicleParams, nu_r: Any) -> Any:
    lin, quad = params.linear_damping, params.quadratic_damping
    D = b.zeros(6, 6)
    for i in range(6):
        D[i, i] = lin[i] + quad[i] * b.fabs(nu_r[i])
    return D


def _restoring(b: Any, params: VehicleParams, eta: Any) -> Any:
    phi, theta = eta[3], eta[4]
    excess = params.W - params.B
    mgz = params.m * params.g * params.Z_G
    return b.vcat([
        excess * b.sin(theta),
        -excess * b.cos(theta) * b.sin(phi),
        -excess * b.cos(theta) * b.cos(phi),
        -mgz * b.cos(theta) * b.sin(phi),
        -mgz * b.sin(theta),
        0.0,
    ])


def _relative(b: Any, eta: Any, nu: Any, v_c: Any, flow_mode: RelativeFlowMode) -> Any:
    R = _rotation(b, eta[3], eta[4], eta[5])
    v_cb = R.T @ v_c
    heave = nu[2] if flow_mode == RelativeFlowMode.PLANAR else nu[2] - v_cb[2]
    return b.vcat([nu[0] - v_cb[0], nu[1] - v_cb[1], heave, nu[3], nu[4], nu[5]])


@lru_cache(maxsize=32)
def _inverse_mass(params: VehicleParams) -> np.ndarray:
    M = total_mass_matrix(params)
    try:
        return np.linalg.inv(M)
    except np.linalg.LinAlgError as e:
        raise SingularMassMatrixError(f"mass matrix is singular: {e}") from e


def _rhs(b: Any, x: Any, u: Any, v_c: Any, params: VehicleParams,
         flow_mode: RelativeFlowMode = RelativeFlowMode.FULL) -> Any:
    eta, nu = x[0:6], x[6:12]
    tau = b.vcat([u[0], u[1], u[2], 0.0, 0.0, u[3]])
    nu_r = _relative(b, eta, nu, v_c, flow_mode)
    forces = (
        tau
        - _coriolis_rb(b, params, nu) @ nu
        - _coriolis_added(b, params, nu_r) @ nu_r
        - _damping(b, params, nu_r) @ nu_r
        - _restoring(b, params, eta)
    )
    nu_dot = b.const(_inverse_mass(params)) @ forces
    pos_dot = _rotation(b, eta[3], eta[4], eta[5]) @ nu[0:3]
    ang_dot = _euler_T(b, eta[3], eta[4]) @ nu[3:6]
    return b.vcat([pos_dot, ang_dot, nu_dot])


def position_rate(b: Any, x: Any) -> Any:
    """NED position derivative R(phi, theta, psi) [u, v, w]."""
    return _rotation(b, x[3], x[4], x[5]) @ x[6:9]


# ============== Public Numeric API ==============

def _guard_pitch(theta: float) -> None:
    if not np.isfinite(theta) or abs(theta) >= GIMBAL_GUARD:
        raise GimbalLockError(f"pitch {theta:.6f} rad is within the gimbal guard")


def rotation_body_to_ned(phi: float, theta: float, psi: float) -> np.ndarray:
    """ZYX body-to-NED rotation matrix."""
    return _rotation(NUMPY, phi, theta, psi)


def euler_rate_transform(phi: float, theta: float) -> np.ndarray:
    """Map [p, q, r] to Euler angle rates.

    Raises:
        GimbalLockError: If |theta| >= pi/2 - 1e-3
    """
    _guard_pitch(theta)
    return _euler_T(NUMPY, phi, theta)


def rigid_body_mass_matrix(params: VehicleParams) -> np.ndarray:
    return np.diag([params.m, params.m, params.m, params.I_xx, params.I_yy, params.I_zz])


def added_mass_matrix(params: VehicleParams) -> np.ndarray:
    return np.diag(params.added_mass)


def total_mass_matrix(params: VehicleParams) -> np.ndarray:
    return rigid_body_mass_matrix(params) + added_mass_matrix(params)


def coriolis_rigid_body(params: VehicleParams, nu: Any) -> np.ndarray:
    return _coriolis_rb(NUMPY, params, np.asarray(nu, dtype=float))


def coriolis_added_mass(params: VehicleParams, nu_r: Any) -> np.ndarray:
    return _coriolis_added(NUMPY, params, np.asarray(nu_r, dtype=float))


def damping_matrix(params: VehicleParams, nu_r: Any) -> np.ndarray:
    return _damping(NUMPY, params, np.asarray(nu_r, dtype=float))


def restoring_forces(params: VehicleParams, eta: Any) -> np.ndarray:
    return _restoring(NUMPY, params, np.asarray(eta, dtype=float))


def relative_velocity(
    state: VehicleState,
    current: CurrentSample,
    flow_mode: RelativeFlowMode = RelativeFlowMode.FULL,
) -> np.ndarray:
    """Body velocity relative to the water, nu - [R^T v_c; 0]."""
    return _relative(NUMPY, state.eta, state.nu, current.v_c_ned, flow_mode)


def dynamics_rhs(
    state: VehicleState,
    wrench: ControlWrench,
    current: CurrentSample,
    params: VehicleParams,
    flow_mode: RelativeFlowMode = RelativeFlowMode.FULL,
) -> np.ndarray:
    """Continuous-time state derivative [eta_dot; nu_dot].

    Raises:
        GimbalLockError: If the pitch is inside the gimbal guard
        SingularMassMatrixError: If M cannot be inverted
    """
    _guard_pitch(state.eta[4])
    return _rhs(NUMPY, state.as_vector(), wrench.as_vector(), current.v_c_ned, params, flow_mode)


def step_euler(
    state: VehicleState,
    wrench: ControlWrench,
    current: CurrentSample,
    params: VehicleParams,
    dt: float,
    flow_mode: RelativeFlowMode = RelativeFlowMode.FULL,
) -> VehicleState:
    """Explicit Euler step, the MPC prediction model."""
    if dt <= 0:
        raise ValidationError(f"dt must be > 0, got {dt}")
    x = state.as_vector()
    return VehicleState.from_vector(x + dt * dynamics_rhs(state, wrench, current, params, flow_mode))


CurrentSource = Union[CurrentSample, Callable[[np.ndarray], CurrentSample]]


def _current_at(source: CurrentSource, x: np.ndarray) -> np.ndarray:
    if isinstance(source, CurrentSample):
        return source.v_c_ned
    sampler = getattr(source, "sample", source)
    return sampler(x[:3]).v_c_ned


def step_rk4(
    state: VehicleState,
    wrench: ControlWrench,
    current: CurrentSource,
    params: VehicleParams,
    dt: float,
    substeps: int = 4,
    flow_mode: RelativeFlowMode = RelativeFlowMode.FULL,
) -> VehicleState:
    """Classical RK4 over ``substeps`` with zero-order-hold wrench.

    ``current`` is either a fixed sample or a field; fields are resampled at
    every stage position.
    """
    if substeps < 1:
        raise ValidationError(f"substeps must be >= 1, got {substeps}")
    if dt <= 0:
        raise ValidationError(f"dt must be > 0, got {dt}")
    u = wrench.as_vector()
    h = dt / substeps

    def f(x: np.ndarray) -> np.ndarray:
        _guard_pitch(x[4])
        return _rhs(NUMPY, x, u, _current_at(current, x), params, flow_mode)

    x = state.as_vector()
    for _ in range(substeps):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x)):
        raise PlantDivergenceError("plant state became non-finite", record_index=-1)
    return VehicleState.from_vector(x)


# ============== Symbolic Prediction Model ==============

@lru_cache(maxsize=16)
def dynamics_function(params: VehicleParams,
                      flow_mode: RelativeFlowMode = RelativeFlowMode.FULL) -> cs.Function:
    """CasADi Function f(x, u, v_c) -> x_dot."""
    x = cs.SX.sym("x", STATE_DIM)
    u = cs.SX.sym("u", CONTROL_DIM)
    v_c = cs.SX.sym("v_c", 3)
    return cs.Function("f", [x, u, v_c], [_rhs(CASADI, x, u, v_c, params, flow_mode)],
                       ["x", "u", "v_c"], ["x_dot"])


def euler_step_expr(x: Any, u: Any, v_c: Any, params: VehicleParams, dt: float,
                    flow_mode: RelativeFlowMode = RelativeFlowMode.FULL) -> Any:
    """x + dt f(x, u, v_c) on either backend."""
    b = backend_for(x, u, v_c)
    return x + dt * _rhs(b, x, u, v_c, params, flow_mode)


def linearize_euler_step(
    params: VehicleParams,
    dt: float,
    x_eq: np.ndarray,
    u_eq: np.ndarray,
    v_c: np.ndarray,
    flow_mode: RelativeFlowMode = RelativeFlowMode.FULL,
) -> Tuple[np.ndarray, np.ndarray]:
    """Exact Jacobians (A, B) of the Euler step at (x_eq, u_eq, v_c)."""
    x = cs.SX.sym("x", STATE_DIM)
    u = cs.SX.sym("u", CONTROL_DIM)
    step = euler_step_expr(x, u, cs.DM(np.asarray(v_c, dtype=float)), params, dt, flow_mode)
    jacobians = cs.Function("euler_step_jacobians", [x, u], [cs.jacobian(step, x), cs.jacobian(step, u)])
    A, B = jacobians(np.asarray(x_eq, dtype=float), np.asarray(u_eq, dtype=float))
    return np.array(A), np.array(B)
