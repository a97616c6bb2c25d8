"""
Export Service - CSV and plot-data files for closed-loop runs.

Every table goes through pandas with a fixed float format so repeated runs
produce byte-identical files.
"""

import logging
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import pandas as pd

from services.sim import ComparisonReport, RunResult

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"

TIMESERIES_COLUMNS = [
    "t", "xN", "yE", "zD", "phi", "theta", "psi", "u", "v", "w", "p", "q", "r",
    "X", "Y", "Z", "Nyaw", "s_mean", "P_total_W", "solver_status",
]

# Status of the row holding the state at termination
FINAL_ROW_STATUS = "final"


def _write(frame: pd.DataFrame, path: Path, header_comment: str = "") -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        if header_comment:
            for line in header_comment.splitlines():
                handle.write(f"# {line}\n")
        frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.debug(f"Wrote {path} ({len(frame)} rows)")
    return path


def _padded(series: np.ndarray, rows: int, width: int) -> np.ndarray:
    out = np.zeros((rows, width))
    if len(series):
        out[:len(series)] = np.asarray(series, dtype=float).reshape(len(series), width)
    return out


def timeseries_frame(result: RunResult) -> pd.DataFrame:
    """One row per control step plus the terminal state row."""
    rows = len(result.times)
    wrench = _padded(result.commanded, rows, 4)
    gate = _padded(result.gate_mean, rows, 1)[:, 0]
    power = _padded(result.power_w, rows, 1)[:, 0]
    data = np.column_stack([result.times, result.states, wrench, gate, power])
    frame = pd.DataFrame(data, columns=TIMESERIES_COLUMNS[:-1])
    frame["solver_status"] = list(result.statuses) + [FINAL_ROW_STATUS]
    return frame


def arrival_criterion(result: RunResult) -> str:
    return (
        f"arrival: final waypoint position error < {result.switch_radius_m:g} m "
        f"and body speed < {result.arrival_speed_mps:g} m/s; "
        f"intermediate waypoints switch on position error only"
    )


def summary_frame(result: RunResult) -> pd.DataFrame:
    """Energy statistics per phase and for the whole run."""
    records = []
    for i, stats in enumerate(result.phase_energy):
        records.append({
            "mode": result.mode.value,
            "phase": f"waypoint_{i}",
            "arrival_time_s": result.arrival_times[i],
            "mean_J": stats.mean_j,
            "max_J": stats.max_j,
            "total_kJ": stats.total_kj,
        })
    records.append({
        "mode": result.mode.value,
        "phase": "total",
        "arrival_time_s": result.arrival_time,
        "mean_J": result.energy.mean_j,
        "max_J": result.energy.max_j,
        "total_kJ": result.energy.total_kj,
    })
    frame = pd.DataFrame.from_records(records)
    frame["violations"] = result.violations
    frame["gate_mean"] = result.gate_stats["mean"]
    frame["gate_max"] = result.gate_stats["max"]
    return frame


def thrust_frame(result: RunResult) -> pd.DataFrame:
    n_thr = result.thrusts.shape[1]
    frame = pd.DataFrame(result.thrusts, columns=[f"T{i + 1}_N" for i in range(n_thr)])
    frame.insert(0, "t", result.times[:len(result.thrusts)])
    return frame


def thrust_stats_frame(result: RunResult) -> pd.DataFrame:
    n_thr = len(result.thrust_peak)
    return pd.DataFrame({
        "thruster": [f"T{i + 1}" for i in range(n_thr)],
        "peak_abs_N": result.thrust_peak,
        "saturated_fraction": result.saturation,
    })


def export_run(result: RunResult, out_dir: Union[str, Path], prefix: str = "") -> Dict[str, Path]:
    """
    Write time series, summary and plot-data files for one run.

    Args:
        result: Closed-loop run
        out_dir: Target directory (created if missing)
        prefix: Optional filename prefix, e.g. the mode name

    Returns:
        Mapping of file role to written path
    """
    out_dir = Path(out_dir)
    tag = f"{prefix}_" if prefix else ""
    header = f"scenario: {result.scenario}\nmode: {result.mode.value}\n{arrival_criterion(result)}"
    if result.notes:
        header += "\n" + "\n".join(result.notes)
    states = pd.DataFrame(result.states[:, 0:3], columns=["xN", "yE", "zD"])
    states.insert(0, "t", result.times)
    power = pd.DataFrame({"t": result.times[:len(result.power_w)], "P_total_W": result.power_w})

    written = {
        "timeseries": _write(timeseries_frame(result), out_dir / f"{tag}timeseries.csv"),
        "summary": _write(summary_frame(result), out_dir / f"{tag}summary.csv", header),
        "path_xy": _write(states[["t", "xN", "yE"]], out_dir / f"{tag}path_xy.csv"),
        "path_xz": _write(states[["t", "xN", "zD"]], out_dir / f"{tag}path_xz.csv"),
        "power": _write(power, out_dir / f"{tag}power.csv"),
        "thrust": _write(thrust_frame(result), out_dir / f"{tag}thrust.csv"),
        "thrust_stats": _write(thrust_stats_frame(result), out_dir / f"{tag}thrust_stats.csv"),
    }
    logger.info(f"Exported {result.mode.value} run to {out_dir}")
    return written


def export_comparison(report: ComparisonReport, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write every run under a mode prefix plus ``comparison.csv``."""
    out_dir = Path(out_dir)
    written: Dict[str, Path] = {}
    seen: List[str] = []
    for result in report.results:
        prefix = result.mode.value
        if prefix in seen:
            prefix = f"{prefix}{seen.count(prefix) + 1}"
        seen.append(result.mode.value)
        for role, path in export_run(result, out_dir, prefix).items():
            written[f"{prefix}.{role}"] = path
    header = f"reference mode: {report.reference.mode.value}\n{arrival_criterion(report.reference)}"
    written["comparison"] = _write(pd.DataFrame.from_records(report.rows()),
                                   out_dir / "comparison.csv", header)
    return written
