"""
Tests for scenario document loading (app_config/scenario_loader.py)
"""

import logging
from pathlib import Path

import pytest

from app_config.scenario_loader import (
    load_scenario_config,
    parse_config,
    serialize_config,
    tuning_warnings,
)
from models.schemas import ControllerMode, FieldKind, InterpolationMode
from utils.validation import ConfigError

MINIMAL = {'scenario': {'waypoints': [{'position_m': [1.0, 0.0, 0.0]}]}}


def test_minimal_document_defaults():
    """Only waypoints are required."""
    config = parse_config(MINIMAL)
    assert config.mpc.horizon == 15
    assert config.mpc.dt_s == pytest.approx(0.1)
    assert config.current_field.kind == FieldKind.UNIFORM
    assert config.scenario.modes == [ControllerMode.BASELINE, ControllerMode.HARNESSING]


def test_yaml_text_accepted():
    """YAML text parses like a mapping."""
    config = parse_config("scenario:\n  waypoints:\n    - position_m: [2, 0, 1]\n")
    assert config.scenario.waypoints[0].position_m == (2.0, 0.0, 1.0)


def test_unknown_nested_key():
    """Unknown keys are reported with their dotted path."""
    document = {**MINIMAL, 'mpc': {'weights': {'lambda_relx': 0.8}}}
    with pytest.raises(ConfigError) as info:
        parse_config(document)
    assert info.value.key == 'mpc.weights.lambda_relx'
    assert 'unknown key' in str(info.value)


def test_invalid_value():
    """Out-of-range values name their key."""
    with pytest.raises(ConfigError) as info:
        parse_config({**MINIMAL, 'mpc': {'horizon': 1}})
    assert info.value.key == 'mpc.horizon'


def test_waypoints_required():
    """A mission needs at least one waypoint."""
    with pytest.raises(ConfigError):
        parse_config({'scenario': {'waypoints': []}})


def test_not_a_mapping():
    """A bare list is not a scenario."""
    with pytest.raises(ConfigError):
        parse_config("- 1\n- 2\n")


def test_tuning_warnings(caplog):
    """Shaping weights outside the tuned ranges are warned about, not rejected."""
    document = {**MINIMAL, 'mpc': {'weights': {'kappa_eff': 5.0}, 'gate': {'v_scale_mps': 0.5}}}
    with caplog.at_level(logging.WARNING, logger='app_config.scenario_loader'):
        config = parse_config(document)
    warnings = tuning_warnings(config)
    assert len(warnings) == 2
    assert any('kappa_eff' in w for w in warnings)
    assert 'v_scale_mps' in caplog.text


def test_defaults_are_in_tuned_ranges():
    """The default weights raise no tuning warnings."""
    assert tuning_warnings(parse_config(MINIMAL)) == []


def test_serialized_config_parses_back():
    """Serialized documents load to an equal config."""
    config = parse_config({**MINIMAL, 'mpc': {'horizon': 8, 'mode': 'baseline'}})
    assert parse_config(serialize_config(config)) == config


def test_file_references_resolve(scenario_dir):
    """Relative references become absolute paths next to the document."""
    config = load_scenario_config(scenario_dir / 'smoothed_grid.yaml')
    assert Path(config.vehicle_params_path).is_absolute()
    assert Path(config.current_field.grid_path).name == 'desk_smoothed.grid'
    assert Path(config.current_field.grid_path).exists()


def test_missing_reference(tmp_path):
    """A dangling file reference names its key."""
    path = tmp_path / 'scenario.yaml'
    path.write_text("scenario:\n  waypoints:\n    - position_m: [1, 0, 0]\n"
                    "thruster_calibration_path: nowhere.cal\n")
    with pytest.raises(ConfigError) as info:
        load_scenario_config(path)
    assert info.value.key == 'thruster_calibration_path'


def test_missing_document(tmp_path):
    """A missing scenario file is a config error."""
    with pytest.raises(ConfigError):
        load_scenario_config(tmp_path / 'absent.yaml')


def test_bundled_scenarios_load(scenario_dir):
    """Every bundled scenario validates."""
    for path in sorted(scenario_dir.glob('*.yaml')):
        config = load_scenario_config(path)
        assert config.scenario.name == path.stem


def test_grid_interpolation_override(scenario_dir):
    """The trilinear scenario keeps trilinear sampling."""
    config = load_scenario_config(scenario_dir / 'trilinear_seam.yaml')
    assert config.current_field.interpolation in (None, InterpolationMode.TRILINEAR)
