"""
Configuration settings for the current-harnessing MPC toolkit.
Supports environment-based configuration for diagnostics and scheduling.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# ============== Environment Configuration ==============
ENVIRONMENT = os.getenv("ENVIRONMENT", "development")
DEBUG = ENVIRONMENT == "development"

# ============== Logging Configuration ==============
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("LOG_FILE") or None

# ============== Data Paths ==============
PROJECT_ROOT = Path(__file__).resolve().parent.parent
DATA_DIR = Path(os.getenv("CHMPC_DATA_DIR", str(PROJECT_ROOT / "data")))
DEFAULT_VEHICLE_PARAMS = DATA_DIR / "vehicle" / "bluerov2.yaml"
DEFAULT_ALLOCATION_MODEL = DATA_DIR / "thrusters" / "allocation.yaml"
DEFAULT_THRUSTER_CALIBRATION = DATA_DIR / "thrusters" / "t200_16v.cal"

# ============== Solver Diagnostics ==============
# Monotone-merit assertion on every accepted inner step
SOLVER_DEBUG = os.getenv("SOLVER_DEBUG", "false").lower() == "true"
# Line-delimited JSON trace of inner iterations (empty = off)
SOLVER_TRACE_PATH = os.getenv("SOLVER_TRACE_PATH") or None

# ============== Simulation Scheduling ==============
SHOW_PROGRESS = os.getenv("SHOW_PROGRESS", "false").lower() == "true"
COMPARE_WORKERS = max(1, int(os.getenv("COMPARE_WORKERS", "1")))

# ============== Controller Defaults ==============
# Shaping parameters outside these ranges produce a load-time warning
TUNING_RANGES = {
    "v_scale_mps": (0.05, 0.3),
    "lambda_relax": (0.7, 0.9),
    "w_reb": (0.3, 0.8),
    "e_ref": (20.0, 40.0),
    "kappa_eff": (1.5, 3.0),
    "w_glide": (0.15, 0.35),
}
