"""
Scenario document loading.

A scenario is a YAML document with the sections ``scenario``,
``current_field`` and ``mpc`` plus optional file references. Unknown keys
are rejected with their dotted path; relative file references resolve
against the document's directory.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Union

import yaml
from pydantic import ValidationError as PydanticValidationError

from app_config.settings import TUNING_RANGES
from models.schemas import ScenarioConfig
from utils.validation import ConfigError

logger = logging.getLogger(__name__)

_FILE_KEYS = ("vehicle_params_path", "allocation_model_path", "thruster_calibration_path")


def parse_config(document: Union[str, Dict[str, Any]]) -> ScenarioConfig:
    """Validate a scenario document (YAML text or an already-parsed mapping).

    Raises:
        ConfigError: Unparseable YAML, unknown key or invalid value; ``key``
            holds the dotted path of the first offending entry
    """
    if isinstance(document, str):
        try:
            document = yaml.safe_load(document)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse scenario document: {e}") from e
    if not isinstance(document, dict):
        raise ConfigError("scenario document must be a mapping")
    try:
        config = ScenarioConfig.model_validate(document)
    except PydanticValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(p) for p in first["loc"]) or "<root>"
        if first["type"] == "extra_forbidden":
            message = f"unknown key '{key}'"
        else:
            message = f"{key}: {first['msg']}"
        raise ConfigError(message, key=key) from e
    for warning in tuning_warnings(config):
        logger.warning(warning)
    return config


def tuning_warnings(config: ScenarioConfig) -> List[str]:
    """Shaping weights outside the robust tuning ranges."""
    weights, gate = config.mpc.weights, config.mpc.gate
    values = {
        "v_scale_mps": gate.v_scale_mps,
        "lambda_relax": weights.lambda_relax,
        "w_reb": weights.w_reb,
        "e_ref": weights.e_ref,
        "kappa_eff": weights.kappa_eff,
        "w_glide": weights.w_glide,
    }
    warnings = []
    for name, (low, high) in TUNING_RANGES.items():
        if not low <= values[name] <= high:
            warnings.append(f"{name}={values[name]:g} is outside the tuned range [{low:g}, {high:g}]")
    return warnings


def _resolved(path: str, base_dir: Path, key: str) -> str:
    resolved = Path(path)
    if not resolved.is_absolute():
        resolved = (base_dir / resolved).resolve()
    if not resolved.exists():
        raise ConfigError(f"{key}: file not found: {resolved}", key=key)
    return str(resolved)


def load_scenario_config(path: Union[str, Path]) -> ScenarioConfig:
    """Read, validate and resolve every file reference of a scenario file.

    Returns:
        ScenarioConfig whose file references are absolute paths
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}", key="config")
    config = parse_config(path.read_text())
    base_dir = path.resolve().parent

    updates: Dict[str, Any] = {}
    for key in _FILE_KEYS:
        value = getattr(config, key)
        if value is not None:
            updates[key] = _resolved(value, base_dir, key)
    if config.current_field.grid_path:
        grid = _resolved(config.current_field.grid_path, base_dir, "current_field.grid_path")
        updates["current_field"] = config.current_field.model_copy(update={"grid_path": grid})
    config = config.model_copy(update=updates)
    logger.info(f"Loaded scenario '{config.scenario.name}' from {path}")
    return config


def serialize_config(config: ScenarioConfig) -> str:
    """YAML text that parses back to an equal config."""
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)
