"""
Pydantic models and schemas for type safety and validation.

Every configuration document (vehicle parameters, controller weights,
current field, scenario) is a frozen model so it can be hashed and cached.
"""

from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ControllerMode(str, Enum):
    """Closed-loop controller variant."""
    BASELINE = "baseline"
    HARNESSING = "harnessing"


class CostMode(str, Enum):
    """Stage cost assembly."""
    BASELINE = "baseline"
    SHAPED = "shaped"


class RelativeFlowMode(str, Enum):
    """Which body axes the rotated current is subtracted from."""
    FULL = "full"
    PLANAR = "planar"


class InterpolationMode(str, Enum):
    """Grid sampling kernel."""
    TRILINEAR = "trilinear"
    SMOOTHED = "smoothed"


class FieldKind(str, Enum):
    """Current field source."""
    UNIFORM = "uniform"
    SHEAR = "shear"
    GYRE = "gyre"
    GRID = "grid"


class SolverStatus(str, Enum):
    """Terminal state of an NLP solve."""
    CONVERGED = "converged"
    MAX_ITER = "max_iter"
    LINE_SEARCH_FAILURE = "line_search_failure"


class _Frozen(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class VehicleParams(_Frozen):
    """BlueROV2 rigid-body, added-mass, damping and restoring parameters.

    Hydrodynamic coefficients are stored as non-negative magnitudes; the
    dynamics apply the signs.
    """
    m: float = Field(gt=0)
    I_xx: float = Field(gt=0)
    I_yy: float = Field(gt=0)
    I_zz: float = Field(gt=0)
    X_du: float
    Y_dv: float
    Z_dw: float
    K_dp: float
    M_dq: float
    N_dr: float
    X_u: float = Field(ge=0)
    Y_v: float = Field(ge=0)
    Z_w: float = Field(ge=0)
    K_p: float = Field(ge=0)
    M_q: float = Field(ge=0)
    N_r: float = Field(ge=0)
    X_uu: float = Field(ge=0)
    Y_vv: float = Field(ge=0)
    Z_ww: float = Field(ge=0)
    K_pp: float = Field(ge=0)
    M_qq: float = Field(ge=0)
    N_rr: float = Field(ge=0)
    W: float = Field(gt=0)
    B: float = Field(gt=0)
    Z_G: float
    g: float = Field(gt=0)

    @model_validator(mode="after")
    def _mass_matrix_positive(self) -> "VehicleParams":
        diag = (
            self.m + self.X_du, self.m + self.Y_dv, self.m + self.Z_dw,
            self.I_xx + self.K_dp, self.I_yy + self.M_dq, self.I_zz + self.N_dr,
        )
        if min(diag) <= 0:
            raise ValueError("total mass matrix M_RB + M_A is not positive definite")
        return self

    @property
    def added_mass(self) -> np.ndarray:
        return np.array([self.X_du, self.Y_dv, self.Z_dw, self.K_dp, self.M_dq, self.N_dr])

    @property
    def linear_damping(self) -> np.ndarray:
        return np.array([self.X_u, self.Y_v, self.Z_w, self.K_p, self.M_q, self.N_r])

    @property
    def quadratic_damping(self) -> np.ndarray:
        return np.array([self.X_uu, self.Y_vv, self.Z_ww, self.K_pp, self.M_qq, self.N_rr])

    @property
    def inertia(self) -> np.ndarray:
        return np.array([self.I_xx, self.I_yy, self.I_zz])


class GateParams(_Frozen):
    """Helpfulness gate scale and smoothing constants."""
    v_scale_mps: float = Field(default=0.05, gt=0)
    eps_e: float = Field(default=1e-6, gt=0)
    eps_c: float = Field(default=1e-9, gt=0)


def _diag_check(values: Tuple[float, ...], size: int, strict: bool, name: str) -> Tuple[float, ...]:
    if len(values) != size:
        raise ValueError(f"{name} needs {size} entries, got {len(values)}")
    if not all(np.isfinite(values)):
        raise ValueError(f"{name} entries must be finite")
    if strict and min(values) <= 0:
        raise ValueError(f"{name} must be positive definite")
    if min(values) < 0:
        raise ValueError(f"{name} must be positive semidefinite")
    return tuple(float(v) for v in values)


class CostWeights(_Frozen):
    """Tracking, effort, slew and shaping weights.

    Matrices are diagonal; ``qf_diag = None`` selects the Riccati terminal weight.
    The first three entries of ``q_diag`` are the position block.
    """
    q_diag: Tuple[float, ...] = (100.0, 100.0, 100.0) + (10.0,) * 9
    r_diag: Tuple[float, ...] = (1.0, 1.0, 0.1, 0.1)
    rs_diag: Tuple[float, ...] = (0.01,) * 4
    qf_diag: Optional[Tuple[float, ...]] = None
    lambda_relax: float = Field(default=0.9, ge=0, le=1)
    w_reb: float = Field(default=0.8, ge=0)
    e_ref: float = Field(default=40.0, gt=0)
    kappa_eff: float = Field(default=3.0, ge=0)
    w_glide: float = Field(default=0.35, ge=0)

    @field_validator("q_diag")
    @classmethod
    def _q(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        return _diag_check(v, 12, strict=False, name="q_diag")

    @field_validator("r_diag")
    @classmethod
    def _r(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        return _diag_check(v, 4, strict=True, name="r_diag")

    @field_validator("rs_diag")
    @classmethod
    def _rs(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        return _diag_check(v, 4, strict=False, name="rs_diag")

    @field_validator("qf_diag")
    @classmethod
    def _qf(cls, v: Optional[Tuple[float, ...]]) -> Optional[Tuple[float, ...]]:
        return None if v is None else _diag_check(v, 12, strict=False, name="qf_diag")

    @property
    def Q(self) -> np.ndarray:
        return np.diag(self.q_diag)

    @property
    def R(self) -> np.ndarray:
        return np.diag(self.r_diag)

    @property
    def R_s(self) -> np.ndarray:
        return np.diag(self.rs_diag)

    @property
    def Q_pos(self) -> np.ndarray:
        return np.diag(self.q_diag[:3])

    @property
    def R_lin(self) -> np.ndarray:
        return np.diag(self.r_diag[:3])

    def mcs_only(self) -> "CostWeights":
        """Copy with the speed-to-fly terms switched off."""
        return self.model_copy(update={"kappa_eff": 0.0, "w_glide": 0.0})

    def gate_off(self) -> "CostWeights":
        """Copy with every shaping weight at zero."""
        return self.model_copy(
            update={"lambda_relax": 0.0, "w_reb": 0.0, "kappa_eff": 0.0, "w_glide": 0.0}
        )


class StateBounds(_Frozen):
    """Roll/pitch and body velocity limits."""
    roll_pitch_rad: float = Field(default=1.2, gt=0)
    linear_speed_mps: float = Field(default=1.5, gt=0)
    angular_rate_radps: float = Field(default=1.5, gt=0)

    def lower(self) -> np.ndarray:
        return -self.upper()

    def upper(self) -> np.ndarray:
        bound = np.full(12, np.inf)
        bound[3:5] = self.roll_pitch_rad
        bound[6:9] = self.linear_speed_mps
        bound[9:12] = self.angular_rate_radps
        return bound


class WrenchBounds(_Frozen):
    """Aggregate wrench limits on the four actuated channels."""
    x_n: float = Field(default=127.26, gt=0)
    y_n: float = Field(default=127.26, gt=0)
    z_min_n: float = Field(default=-80.0, lt=0)
    z_max_n: float = Field(default=100.0, gt=0)
    n_nm: float = Field(default=30.78, gt=0)

    def lower(self) -> np.ndarray:
        return np.array([-self.x_n, -self.y_n, self.z_min_n, -self.n_nm])

    def upper(self) -> np.ndarray:
        return np.array([self.x_n, self.y_n, self.z_max_n, self.n_nm])


class SolverSettings(_Frozen):
    """Augmented-Lagrangian solver tolerances and budgets."""
    stationarity_tol: float = Field(default=1e-5, gt=0)
    feasibility_tol: float = Field(default=1e-6, gt=0)
    complementarity_tol: float = Field(default=1e-5, gt=0)
    max_inner_iter: int = Field(default=200, ge=1)
    max_outer_iter: int = Field(default=30, ge=1)
    initial_penalty: float = Field(default=10.0, gt=0)
    penalty_growth: float = Field(default=10.0, gt=1)
    penalty_cap: float = Field(default=1e8, gt=0)
    feasibility_improvement: float = Field(default=4.0, gt=1)
    armijo: float = Field(default=1e-4, gt=0, lt=1)
    backtrack: float = Field(default=0.5, gt=0, lt=1)
    min_step: float = Field(default=1e-12, gt=0)
    debug_monotone: bool = False


class MpcConfig(_Frozen):
    """Horizon, bounds, weights and gate for one controller."""
    dt_s: float = Field(default=0.1, gt=0)
    horizon: int = Field(default=15, ge=2)
    mode: ControllerMode = ControllerMode.HARNESSING
    flow_mode: RelativeFlowMode = RelativeFlowMode.FULL
    # objective multiplier inside the NLP only; reported values stay unscaled
    objective_scale: float = Field(default=1e-3, gt=0)
    weights: CostWeights = CostWeights()
    gate: GateParams = GateParams()
    state_bounds: StateBounds = StateBounds()
    wrench_bounds: WrenchBounds = WrenchBounds()
    solver: SolverSettings = SolverSettings()

    def with_mode(self, mode: ControllerMode) -> "MpcConfig":
        return self.model_copy(update={"mode": mode})


class CurrentFieldSpec(_Frozen):
    """Analytic or gridded current field description."""
    kind: FieldKind = FieldKind.UNIFORM
    velocity_mps: Tuple[float, float] = (0.0, 0.0)
    base_mps: Tuple[float, float] = (0.0, 0.0)
    gradient_per_s: Tuple[float, float] = (0.0, 0.0)
    axis: int = Field(default=0, ge=0, le=2)
    center_m: Tuple[float, float] = (0.0, 0.0)
    strength_mps: float = 0.0
    radius_m: float = Field(default=10.0, gt=0)
    grid_path: Optional[str] = None
    interpolation: Optional[InterpolationMode] = None

    @model_validator(mode="after")
    def _kind_fields(self) -> "CurrentFieldSpec":
        if self.kind == FieldKind.GRID and not self.grid_path:
            raise ValueError("grid fields need grid_path")
        if self.kind != FieldKind.GRID and self.grid_path:
            raise ValueError(f"grid_path given for a {self.kind.value} field")
        values = self.velocity_mps + self.base_mps + self.gradient_per_s + self.center_m
        if not all(np.isfinite(values)) or not np.isfinite(self.strength_mps):
            raise ValueError("field parameters must be finite")
        return self


class WaypointSpec(_Frozen):
    """Goal position (NED, m) and yaw reference."""
    position_m: Tuple[float, float, float]
    yaw_rad: float = 0.0


class ScenarioSpec(_Frozen):
    """Mission geometry and termination rules."""
    name: str = "scenario"
    initial_position_m: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    initial_attitude_rad: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    initial_velocity: Tuple[float, float, float, float, float, float] = (0.0,) * 6
    waypoints: List[WaypointSpec] = Field(min_length=1)
    switch_radius_m: float = Field(default=1.5, gt=0)
    arrival_speed_mps: float = Field(default=0.05, gt=0)
    duration_cap_s: float = Field(default=60.0, gt=0)
    plant_substeps: int = Field(default=4, ge=1)
    modes: List[ControllerMode] = Field(
        default_factory=lambda: [ControllerMode.BASELINE, ControllerMode.HARNESSING]
    )


class AllocationModelSpec(_Frozen):
    """Thruster geometry, per-thruster limits and regularization."""
    k4: Tuple[Tuple[float, ...], ...]
    t_min_n: Tuple[float, ...]
    t_max_n: Tuple[float, ...]
    lambda_reg: float = Field(default=1e-4, gt=0)

    @model_validator(mode="after")
    def _shapes(self) -> "AllocationModelSpec":
        if len(self.k4) != 4 or any(len(row) != len(self.t_min_n) for row in self.k4):
            raise ValueError("k4 must have 4 rows matching the thruster count")
        if len(self.t_min_n) != len(self.t_max_n):
            raise ValueError("t_min_n and t_max_n lengths differ")
        if any(lo >= 0 or hi <= 0 for lo, hi in zip(self.t_min_n, self.t_max_n)):
            raise ValueError("each thruster needs t_min < 0 < t_max")
        return self


class ScenarioConfig(_Frozen):
    """Top-level scenario document binding every module config."""
    scenario: ScenarioSpec
    current_field: CurrentFieldSpec = CurrentFieldSpec()
    mpc: MpcConfig = MpcConfig()
    vehicle_params_path: Optional[str] = None
    allocation_model_path: Optional[str] = None
    thruster_calibration_path: Optional[str] = None
