"""
Command implementations behind ``chmpc run|compare|fit-thruster|check``.

Each command returns a process exit code; reports go to stdout, logs to
stderr.
"""

import logging
from enum import IntEnum
from functools import wraps
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import pandas as pd

from app_config.scenario_loader import load_scenario_config
from services.actuation import fit_power_model, load_calibration, power_for_thrust, save_power_model
from services.export_service import FLOAT_FORMAT, export_comparison, export_run
from services.self_check import CheckStatus, run_checks
from services.sim import build_scenario, compare, run
from utils.validation import (
    CalibrationError,
    ChmpcError,
    ConfigError,
    DareConvergenceError,
    GimbalLockError,
    GridFormatError,
    PlantDivergenceError,
    SingularMassMatrixError,
    ValidationError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class ExitCode(IntEnum):
    OK = 0
    CONFIG_ERROR = 2
    SOLVER_BREAKDOWN = 3
    NAN_ABORT = 4
    CHECK_FAILED = 5
    CALIBRATION_ERROR = 6


# First match wins, so subclasses come before their bases
_ERROR_CODES = (
    (CalibrationError, ExitCode.CALIBRATION_ERROR),
    (PlantDivergenceError, ExitCode.NAN_ABORT),
    (GimbalLockError, ExitCode.NAN_ABORT),
    (DareConvergenceError, ExitCode.SOLVER_BREAKDOWN),
    (SingularMassMatrixError, ExitCode.SOLVER_BREAKDOWN),
    (np.linalg.LinAlgError, ExitCode.SOLVER_BREAKDOWN),
    (ConfigError, ExitCode.CONFIG_ERROR),
    (GridFormatError, ExitCode.CONFIG_ERROR),
    (ValidationError, ExitCode.CONFIG_ERROR),
    (ChmpcError, ExitCode.SOLVER_BREAKDOWN),
)


def exit_code_for(error: BaseException) -> ExitCode:
    for kind, code in _ERROR_CODES:
        if isinstance(error, kind):
            return code
    raise error


def _reports_errors(command: Callable[..., int]) -> Callable[..., int]:
    """Turn package errors into exit codes with a one-line report."""
    @wraps(command)
    def wrapper(*args, **kwargs) -> int:
        try:
            return int(command(*args, **kwargs))
        except (ChmpcError, np.linalg.LinAlgError) as e:
            code = exit_code_for(e)
            key = getattr(e, "key", None)
            suffix = f" (key: {key})" if key else ""
            if isinstance(e, PlantDivergenceError):
                suffix = f" (record {e.record_index})"
            print(f"[error] {code.name.lower()}: {e}{suffix}")
            logger.error(f"{command.__name__} failed with exit code {int(code)}: {e}")
            return int(code)
    return wrapper


@_reports_errors
def cmd_run(config_path: PathLike, out_dir: PathLike) -> int:
    """Simulate the configured controller mode and export its files."""
    config = load_scenario_config(config_path)
    scenario = build_scenario(config, Path(config_path).resolve().parent)
    result = run(scenario)
    export_run(result, out_dir)
    arrival = "not arrived" if result.arrival_time is None else f"{result.arrival_time:.2f} s"
    print(f"[run] {scenario.name}/{result.mode.value}: arrival {arrival}, "
          f"energy {result.energy.total_kj:.4f} kJ, violations {result.violations}")
    return ExitCode.OK


@_reports_errors
def cmd_compare(config_path: PathLike, out_dir: PathLike) -> int:
    """Run every configured mode and export the per-mode files plus deltas."""
    config = load_scenario_config(config_path)
    scenario = build_scenario(config, Path(config_path).resolve().parent)
    report = compare(scenario)
    export_comparison(report, out_dir)
    for row in report.rows():
        print(f"[compare] {row['mode']}: energy {row['total_energy_kj']:.4f} kJ "
              f"({row['energy_delta_pct']:+.2f}%), arrival {row['arrival_time_s']}")
    return ExitCode.OK


@_reports_errors
def cmd_fit_thruster(calibration_path: PathLike, out_dir: Optional[PathLike] = None) -> int:
    """Fit the two-branch power law and write ``thruster_model.yaml``."""
    model = fit_power_model(load_calibration(calibration_path))
    target = Path(out_dir) if out_dir is not None else Path(calibration_path).resolve().parent
    path = save_power_model(model, target / "thruster_model.yaml")
    print(f"[fit-thruster] a_f={model.a_f:.6f} b_f={model.b_f:.6f} "
          f"a_r={model.a_r:.6f} b_r={model.b_r:.6f}")
    print(f"[fit-thruster] rms log residual: forward={model.rms_forward:.4f} reverse={model.rms_reverse:.4f}")
    print(f"[fit-thruster] P(0)={power_for_thrust(model, 0.0):g} W, model written to {path}")
    return ExitCode.OK


@_reports_errors
def cmd_check(config_path: PathLike, out_dir: Optional[PathLike] = None) -> int:
    """Run the derivative/consistency suite; nonzero exit on any FAIL."""
    config = load_scenario_config(config_path)
    scenario = build_scenario(config, Path(config_path).resolve().parent)
    results = run_checks(scenario)
    for result in results:
        print(result.line())
    if out_dir is not None:
        frame = pd.DataFrame([{"check": r.name, "status": r.status.value, "detail": r.detail} for r in results])
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        frame.to_csv(Path(out_dir) / "check_report.csv", index=False, float_format=FLOAT_FORMAT,
                     lineterminator="\n")
    if any(r.status == CheckStatus.FAIL for r in results):
        return ExitCode.CHECK_FAILED
    return ExitCode.OK
