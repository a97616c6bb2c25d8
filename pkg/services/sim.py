"""
Closed-loop simulation harness.

The plant is the RK4-integrated vehicle sampled against the live field; the
controller sees only the frozen horizon samples. Each period the commanded
wrench is allocated to thrusters, and the plant receives the delivered wrench
K4 T*, not the command.
"""

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from app_config import settings
from models.schemas import ControllerMode, MpcConfig, ScenarioConfig, ScenarioSpec, VehicleParams
from services.actuation import (
    AllocationModel,
    EnergyStats,
    PowerModel,
    allocate,
    default_allocation_model,
    fit_power_model,
    load_allocation_model,
    load_calibration,
    saturation_fraction,
    total_power,
)
from services.controller import MpcController
from services.currents import CurrentField, build_field
from services.vehicle import STATE_DIM, ControlWrench, VehicleState, load_vehicle_params, step_rk4
from utils.logging_setup import log_run_summary, run_context, set_step
from utils.validation import ConfigError, GimbalLockError, PlantDivergenceError, ValidationError

logger = logging.getLogger(__name__)

# Slack on bound checks of the applied wrench and the plant state
_BOUND_TOL = 1e-6


@dataclass(frozen=True)
class Scenario:
    """Everything one closed-loop run needs, fully loaded."""
    spec: ScenarioSpec
    mpc: MpcConfig
    params: VehicleParams
    allocation: AllocationModel
    power_model: PowerModel
    field: CurrentField

    @property
    def name(self) -> str:
        return self.spec.name

    def initial_state(self) -> VehicleState:
        eta = np.concatenate([self.spec.initial_position_m, self.spec.initial_attitude_rad])
        return VehicleState(eta=eta, nu=np.array(self.spec.initial_velocity, dtype=float))

    def goal_vector(self, index: int) -> np.ndarray:
        waypoint = self.spec.waypoints[index]
        goal = np.zeros(STATE_DIM)
        goal[0:3] = waypoint.position_m
        goal[5] = waypoint.yaw_rad
        return goal


def _resolve(path: Optional[str], base_dir: Optional[Path], default: Path, key: str) -> Path:
    if path is None:
        return default
    resolved = Path(path)
    if not resolved.is_absolute() and base_dir is not None:
        resolved = base_dir / resolved
    if not resolved.exists():
        raise ConfigError(f"referenced file not found: {resolved}", key=key)
    return resolved


def build_scenario(config: ScenarioConfig, base_dir: Optional[Path] = None) -> Scenario:
    """Load parameters, allocation, power model and field for a scenario document."""
    params = load_vehicle_params(
        _resolve(config.vehicle_params_path, base_dir, settings.DEFAULT_VEHICLE_PARAMS, "vehicle_params_path")
    )
    if config.allocation_model_path is None:
        allocation = default_allocation_model()
    else:
        allocation = load_allocation_model(
            _resolve(config.allocation_model_path, base_dir, settings.DEFAULT_ALLOCATION_MODEL,
                     "allocation_model_path")
        )
    calibration = _resolve(config.thruster_calibration_path, base_dir,
                           settings.DEFAULT_THRUSTER_CALIBRATION, "thruster_calibration_path")
    power_model = fit_power_model(load_calibration(calibration))

    mpc = config.mpc
    if settings.SOLVER_DEBUG and not mpc.solver.debug_monotone:
        mpc = mpc.model_copy(update={"solver": mpc.solver.model_copy(update={"debug_monotone": True})})

    return Scenario(
        spec=config.scenario,
        mpc=mpc,
        params=params,
        allocation=allocation,
        power_model=power_model,
        field=build_field(config.current_field, base_dir),
    )


# ============== Run Result ==============

@dataclass
class RunResult:
    """Time series and statistics of one closed-loop run.

    ``states`` and ``times`` carry one more row than the per-step series: the
    final row is the state at termination.
    """
    scenario: str
    mode: ControllerMode
    dt: float
    times: np.ndarray
    states: np.ndarray
    commanded: np.ndarray
    delivered: np.ndarray
    thrusts: np.ndarray
    power_w: np.ndarray
    gate_mean: np.ndarray
    statuses: List[str]
    phases: np.ndarray
    arrival_times: List[Optional[float]]
    energy: EnergyStats
    phase_energy: List[EnergyStats]
    violations: int
    thrust_peak: np.ndarray
    saturation: np.ndarray
    switch_radius_m: float = 1.5
    arrival_speed_mps: float = 0.05
    notes: List[str] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.statuses)

    @property
    def arrived(self) -> bool:
        return bool(self.arrival_times) and self.arrival_times[-1] is not None

    @property
    def arrival_time(self) -> Optional[float]:
        return self.arrival_times[-1] if self.arrival_times else None

    @property
    def status_counts(self) -> Dict[str, int]:
        return dict(sorted(Counter(self.statuses).items()))

    @property
    def gate_stats(self) -> Dict[str, float]:
        if self.gate_mean.size == 0:
            return {"mean": 0.0, "max": 0.0}
        return {"mean": float(self.gate_mean.mean()), "max": float(self.gate_mean.max())}

    def summary(self) -> Dict[str, object]:
        return {
            "scenario": self.scenario,
            "mode": self.mode.value,
            "arrived": self.arrived,
            "arrival_time_s": self.arrival_time,
            "steps": self.steps,
            "total_energy_kj": self.energy.total_kj,
            "mean_step_j": self.energy.mean_j,
            "max_step_j": self.energy.max_j,
            "violations": self.violations,
            "gate_mean": self.gate_stats["mean"],
            "gate_max": self.gate_stats["max"],
            "status_counts": self.status_counts,
        }


def _violates(u_cmd: np.ndarray, x: np.ndarray, mpc: MpcConfig) -> bool:
    wrench_ok = np.all(u_cmd >= mpc.wrench_bounds.lower() - _BOUND_TOL) and \
        np.all(u_cmd <= mpc.wrench_bounds.upper() + _BOUND_TOL)
    state_ok = np.all(np.abs(x) <= mpc.state_bounds.upper() + _BOUND_TOL)
    return not (wrench_ok and state_ok)


class _WaypointTracker:
    """Active waypoint index and arrival bookkeeping."""

    def __init__(self, scenario: Scenario):
        self.spec = scenario.spec
        self.index = 0
        self.arrivals: List[Optional[float]] = [None] * len(self.spec.waypoints)

    @property
    def final(self) -> bool:
        return self.index == len(self.spec.waypoints) - 1

    def update(self, state: VehicleState, t: float) -> bool:
        """Advance through reached waypoints; True once the mission is complete."""
        while True:
            target = np.asarray(self.spec.waypoints[self.index].position_m, dtype=float)
            close = np.linalg.norm(state.position - target) < self.spec.switch_radius_m
            if not close:
                return False
            if self.final:
                if state.speed < self.spec.arrival_speed_mps:
                    self.arrivals[self.index] = t
                    return True
                return False
            self.arrivals[self.index] = t
            logger.info(f"Waypoint {self.index} reached at t={t:.2f}s")
            self.index += 1


def run(scenario: Scenario, mode: Optional[ControllerMode] = None, progress: Optional[bool] = None) -> RunResult:
    """Simulate one controller mode until arrival or the duration cap.

    Raises:
        PlantDivergenceError: Non-finite plant state or gimbal lock, with the step index
    """
    mode = ControllerMode(mode or scenario.mpc.mode)
    progress = settings.SHOW_PROGRESS if progress is None else progress
    mpc = scenario.mpc.with_mode(mode)
    dt = mpc.dt_s
    max_steps = int(np.floor(scenario.spec.duration_cap_s / dt + 1e-9))

    with ExitStack() as stack:
        stack.enter_context(run_context(scenario=scenario.name, mode=mode.value, step=0))
        trace = None
        if settings.SOLVER_TRACE_PATH:
            trace = stack.enter_context(open(settings.SOLVER_TRACE_PATH, "a"))
        controller = MpcController(mpc, scenario.params, trace)
        tracker = _WaypointTracker(scenario)
        bar = stack.enter_context(tqdm(total=max_steps, disable=not progress,
                                       desc=f"{scenario.name}/{mode.value}", leave=False))

        x = scenario.initial_state()
        times, states = [], []
        commanded, delivered, thrusts, power, gates, statuses, phases = [], [], [], [], [], [], []
        violations = 0
        k = 0
        done = tracker.update(x, 0.0)
        while not done and k < max_steps:
            set_step(k)
            goal = scenario.goal_vector(tracker.index)
            u_cmd, plan = controller.step(scenario.field, x, goal)
            T = allocate(scenario.allocation, u_cmd)
            u_act = scenario.allocation.delivered(T)

            if _violates(u_cmd.as_vector(), x.as_vector(), mpc):
                violations += 1
                logger.warning(f"Bound violation at step {k}")

            times.append(k * dt)
            states.append(x.as_vector())
            commanded.append(u_cmd.as_vector())
            delivered.append(u_act.as_vector())
            thrusts.append(T)
            power.append(total_power(scenario.power_model, T))
            gates.append(plan.mean_gate)
            statuses.append(plan.status.value)
            phases.append(tracker.index)

            try:
                x = step_rk4(x, u_act, scenario.field, scenario.params, dt,
                             scenario.spec.plant_substeps, mpc.flow_mode)
            except (PlantDivergenceError, GimbalLockError) as e:
                raise PlantDivergenceError(f"plant diverged at step {k}: {e}", record_index=k) from e
            k += 1
            bar.update(1)
            done = tracker.update(x, k * dt)

        times.append(k * dt)
        states.append(x.as_vector())

    n_thr = scenario.allocation.thruster_count
    thrusts_arr = np.array(thrusts, dtype=float).reshape(-1, n_thr)
    phases_arr = np.array(phases, dtype=int)
    power_arr = np.array(power, dtype=float)
    phase_energy = [
        EnergyStats.from_power(power_arr[phases_arr == i], thrusts_arr[phases_arr == i], dt)
        for i in range(len(scenario.spec.waypoints))
    ]
    result = RunResult(
        scenario=scenario.name,
        mode=mode,
        dt=dt,
        times=np.array(times),
        states=np.array(states),
        commanded=np.array(commanded, dtype=float).reshape(-1, 4),
        delivered=np.array(delivered, dtype=float).reshape(-1, 4),
        thrusts=thrusts_arr,
        power_w=power_arr,
        gate_mean=np.array(gates, dtype=float),
        statuses=statuses,
        phases=phases_arr,
        arrival_times=tracker.arrivals,
        energy=EnergyStats.from_power(power_arr, thrusts_arr, dt),
        phase_energy=phase_energy,
        violations=violations,
        thrust_peak=np.abs(thrusts_arr).max(axis=0) if len(thrusts_arr) else np.zeros(n_thr),
        saturation=saturation_fraction(scenario.allocation, thrusts_arr),
        switch_radius_m=scenario.spec.switch_radius_m,
        arrival_speed_mps=scenario.spec.arrival_speed_mps,
    )
    if not result.arrived:
        result.notes.append(f"not arrived within {scenario.spec.duration_cap_s:g}s")
    with run_context(scenario=scenario.name, mode=mode.value, step=k):
        log_run_summary(logger, result.summary())
    return result


# ============== Comparison ==============

@dataclass
class ComparisonReport:
    """Per-mode results with deltas relative to the first mode."""
    results: List[RunResult]

    @property
    def reference(self) -> RunResult:
        return self.results[0]

    def energy_delta_pct(self, index: int) -> float:
        ref = self.reference.energy.total_j
        other = self.results[index].energy.total_j
        if ref == 0.0:
            return 0.0 if other == 0.0 else float("inf")
        return 100.0 * (other - ref) / ref

    def arrival_delta_s(self, index: int) -> Optional[float]:
        ref, other = self.reference.arrival_time, self.results[index].arrival_time
        if ref is None or other is None:
            return None
        return other - ref

    def arrival_ratio(self, index: int) -> Optional[float]:
        ref, other = self.reference.arrival_time, self.results[index].arrival_time
        if ref is None or other is None or ref == 0.0:
            return None
        return other / ref

    def rows(self) -> List[Dict[str, object]]:
        rows = []
        for i, result in enumerate(self.results):
            rows.append({
                "scenario": result.scenario,
                "mode": result.mode.value,
                "arrived": result.arrived,
                "arrival_time_s": result.arrival_time,
                "total_energy_kj": result.energy.total_kj,
                "mean_step_j": result.energy.mean_j,
                "max_step_j": result.energy.max_j,
                "energy_delta_pct": self.energy_delta_pct(i),
                "arrival_delta_s": self.arrival_delta_s(i),
                "violations": result.violations,
            })
        return rows


def compare(scenario: Scenario, modes: Optional[Sequence[ControllerMode]] = None,
            workers: Optional[int] = None) -> ComparisonReport:
    """Run each mode independently and report deltas against the first.

    Raises:
        ValidationError: Fewer than two modes
    """
    modes = [ControllerMode(m) for m in (modes or scenario.spec.modes)]
    if len(modes) < 2:
        raise ValidationError(f"compare needs at least two modes, got {len(modes)}")
    workers = settings.COMPARE_WORKERS if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(max_workers=min(workers, len(modes))) as pool:
            results = list(pool.map(lambda m: run(scenario, m), modes))
    else:
        results = [run(scenario, m) for m in modes]
    report = ComparisonReport(results)
    for i in range(1, len(results)):
        logger.info(
            f"{results[i].mode.value} vs {results[0].mode.value}: "
            f"energy {report.energy_delta_pct(i):+.2f}%, arrival delta {report.arrival_delta_s(i)}"
        )
    return report
