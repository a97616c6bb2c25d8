"""
Tests for thruster allocation and the power model (services/actuation.py)
"""

from pathlib import Path

import numpy as np
import pytest
import yaml

from services.actuation import (
    AllocationModel,
    CalibrationPoint,
    ThrustDirection,
    allocate,
    allocation_kkt_residual,
    bluerov2_heavy_k4,
    box_qp_problem,
    energy_accumulate,
    fit_power_model,
    load_allocation_model,
    load_calibration,
    parse_calibration,
    power_for_thrust,
    regularized_least_squares,
    saturation_fraction,
    save_power_model,
    solve_box_qp,
    thrust_for_power,
    total_power,
)
from services.vehicle import ControlWrench
from utils.validation import CalibrationError, ConfigError, RankError, ValidationError

DATA_DIR = Path(__file__).resolve().parent.parent / 'data'


def _synthetic_table(a_f=0.55, b_f=0.78, a_r=0.47, b_r=0.76):
    powers = [5.0, 20.0, 60.0, 150.0, 300.0]
    table = [CalibrationPoint(ThrustDirection.FORWARD, p, a_f * p ** b_f) for p in powers]
    table += [CalibrationPoint(ThrustDirection.REVERSE, p, -a_r * p ** b_r) for p in powers]
    return table


class TestAllocationModel:
    """Geometry and bounds validation."""

    def test_bundled_file_matches_constructed_geometry(self):
        """The shipped YAML holds the constructed K4."""
        model = load_allocation_model(DATA_DIR / 'thrusters' / 'allocation.yaml')
        np.testing.assert_allclose(model.k4, bluerov2_heavy_k4(), atol=1e-12)
        assert model.thruster_count == 6

    def test_rank_deficient_geometry(self):
        """K4 without full row rank is rejected."""
        k4 = bluerov2_heavy_k4()
        k4[3] = k4[0]
        with pytest.raises(ValidationError):
            AllocationModel(k4, np.full(6, -40.0), np.full(6, 50.0))

    def test_bounds_must_straddle_zero(self):
        """t_min < 0 < t_max for every thruster."""
        with pytest.raises(ValidationError):
            AllocationModel(bluerov2_heavy_k4(), np.full(6, 1.0), np.full(6, 50.0))

    def test_missing_file(self, tmp_path):
        """A missing allocation file is a config error."""
        with pytest.raises(ConfigError):
            load_allocation_model(tmp_path / 'absent.yaml')

    def test_spec_round_trip(self, allocation):
        """to_spec/from_spec keeps geometry and limits."""
        again = AllocationModel.from_spec(allocation.to_spec())
        np.testing.assert_array_equal(again.k4, allocation.k4)
        np.testing.assert_array_equal(again.t_max, allocation.t_max)


class TestAllocation:
    """Regularized box-constrained allocation."""

    def test_interior_matches_closed_form(self, allocation):
        """Unsaturated wrenches reproduce the regularized least-squares solution."""
        wrench = ControlWrench(10.0, 5.0, 8.0, 1.0)
        T = allocate(allocation, wrench)
        np.testing.assert_allclose(T, regularized_least_squares(allocation, wrench), rtol=0, atol=1e-10)

    def test_interior_delivers_commanded_wrench(self, allocation):
        """Regularization only perturbs the delivered wrench slightly."""
        wrench = ControlWrench(20.0, -10.0, 15.0, 2.0)
        delivered = allocation.delivered(allocate(allocation, wrench))
        np.testing.assert_allclose(delivered.as_vector(), wrench.as_vector(), atol=1e-2)

    def test_interior_is_positively_homogeneous(self, allocation):
        """Scaling an unsaturated wrench scales the thrusts by the same factor."""
        wrench = np.array([12.0, -6.0, 9.0, 1.5])
        T = allocate(allocation, wrench)
        assert np.all((2.5 * T < allocation.t_max) & (2.5 * T > allocation.t_min))
        for alpha in (0.1, 0.5, 2.5):
            np.testing.assert_allclose(allocate(allocation, alpha * wrench), alpha * T, rtol=0, atol=1e-9)

    def test_zero_wrench(self, allocation):
        """No command means no thrust."""
        np.testing.assert_array_equal(allocate(allocation, ControlWrench()), np.zeros(6))

    def test_two_thruster_grid_oracle(self):
        """A saturated two-thruster QP beats every point of a fine grid."""
        K = np.array([[1.0, 0.5], [0.2, 1.0]])
        tau = np.array([5.0, -3.0])
        lo, hi = np.array([-2.0, -2.0]), np.array([2.0, 2.0])
        T = solve_box_qp(K, tau, lo, hi, 1e-4)
        objective = box_qp_problem(K, tau, lo, hi, 1e-4).objective
        grid = np.linspace(-2.0, 2.0, 401)
        best = min(objective(np.array([a, b]))[0] for a in grid for b in grid)
        assert np.all(T >= lo) and np.all(T <= hi)
        assert objective(T)[0] <= best + 1e-12

    def test_kkt_on_random_wrenches(self, allocation, rng):
        """Allocations stay in the box and satisfy KKT, saturated or not."""
        limits = np.array([150.0, 150.0, 110.0, 40.0])
        for _ in range(1000):
            tau = rng.uniform(-limits, limits)
            T = allocate(allocation, tau)
            assert np.all(T >= allocation.t_min) and np.all(T <= allocation.t_max)
            assert allocation_kkt_residual(allocation, tau, T) <= 1e-8

    def test_saturation_fraction(self, allocation):
        """Steps at a limit are counted per thruster."""
        thrusts = np.zeros((4, 6))
        thrusts[:2, 0] = 51.5
        thrusts[3, 5] = -40.2
        np.testing.assert_allclose(saturation_fraction(allocation, thrusts), [0.5, 0, 0, 0, 0, 0.25])
        np.testing.assert_array_equal(saturation_fraction(allocation, np.zeros((0, 6))), np.zeros(6))


class TestCalibrationParsing:
    """THRUSTCAL v1 documents."""

    def test_bundled_table(self):
        """The T200 table has both branches."""
        table = load_calibration(DATA_DIR / 'thrusters' / 't200_16v.cal')
        directions = {p.direction for p in table}
        assert directions == {ThrustDirection.FORWARD, ThrustDirection.REVERSE}
        assert len(table) == 26

    def test_missing_header(self):
        """The header line is mandatory."""
        with pytest.raises(CalibrationError):
            parse_calibration("P 10 4.4\n")

    def test_malformed_line(self):
        """Bad tokens name the line."""
        with pytest.raises(CalibrationError, match='line 3'):
            parse_calibration("THRUSTCAL v1\nP 10 4.4\nX 10 4.4\n")

    def test_empty_table(self):
        """A header alone is an empty table."""
        with pytest.raises(CalibrationError, match='empty'):
            parse_calibration("THRUSTCAL v1\n# nothing measured\n")

    def test_missing_file(self, tmp_path):
        """A missing table is a calibration error."""
        with pytest.raises(CalibrationError):
            load_calibration(tmp_path / 'absent.cal')


class TestPowerModel:
    """Log-log power-law fit and inversion."""

    def test_exact_power_law_recovered(self):
        """Noise-free data gives back the generating coefficients."""
        model = fit_power_model(_synthetic_table())
        np.testing.assert_allclose(model.coefficients(), (0.55, 0.78, 0.47, 0.76), rtol=1e-10)
        assert model.rms_forward < 1e-10
        assert model.rms_reverse < 1e-10

    def test_bundled_fit_is_monotone(self, power_model):
        """The T200 fit is increasing with small log residuals."""
        assert power_model.b_f > 0 and power_model.b_r > 0
        assert power_model.rms_forward <= 0.1
        assert power_model.rms_reverse <= 0.1
        powers = np.linspace(1.0, 390.0, 50)
        forward = [thrust_for_power(power_model, p) for p in powers]
        assert np.all(np.diff(forward) > 0)

    def test_power_is_monotone_in_thrust(self, power_model):
        """Power never decreases as |T| grows on either branch."""
        magnitudes = np.linspace(0.0, 60.0, 301)
        forward = [power_for_thrust(power_model, t) for t in magnitudes]
        reverse = [power_for_thrust(power_model, -t) for t in magnitudes]
        assert np.all(np.diff(forward) >= 0)
        assert np.all(np.diff(reverse) >= 0)
        assert forward[0] == reverse[0] == 0.0
        assert power_for_thrust(power_model, 1e-9) < 1e-6
        assert power_for_thrust(power_model, -1e-9) < 1e-6

    def test_zero_thrust_costs_nothing(self, power_model):
        """P(0) = 0."""
        assert power_for_thrust(power_model, 0.0) == 0.0
        assert total_power(power_model, np.zeros(6)) == 0.0

    def test_inverse_on_both_branches(self, power_model):
        """Thrust-for-power and power-for-thrust invert each other."""
        for direction in ThrustDirection:
            thrust = thrust_for_power(power_model, 120.0, direction)
            assert power_for_thrust(power_model, thrust) == pytest.approx(120.0, rel=1e-10)

    def test_reverse_branch_sign(self, power_model):
        """Reverse thrust is negative."""
        assert thrust_for_power(power_model, 50.0, ThrustDirection.REVERSE) < 0

    def test_negative_power_rejected(self, power_model):
        """Power must be non-negative."""
        with pytest.raises(ValidationError):
            thrust_for_power(power_model, -1.0)

    def test_degenerate_branch(self):
        """All powers equal makes the regression rank deficient."""
        table = [CalibrationPoint(ThrustDirection.FORWARD, 10.0, t) for t in (4.0, 4.4, 4.8)]
        table += _synthetic_table()[5:]
        with pytest.raises(RankError):
            fit_power_model(table)

    def test_too_few_points(self):
        """Each branch needs three points."""
        with pytest.raises(CalibrationError):
            fit_power_model(_synthetic_table()[:2] + _synthetic_table()[5:])

    def test_saved_model(self, power_model, tmp_path):
        """Saved coefficients load back as YAML."""
        path = save_power_model(power_model, tmp_path / 'model' / 'thruster_model.yaml')
        document = yaml.safe_load(path.read_text())
        assert document['forward']['a'] == pytest.approx(power_model.a_f)
        assert document['reverse']['points'] == 13


class TestEnergy:
    """Energy accumulation over a wrench sequence."""

    def test_hover_sequence_is_free(self, power_model, allocation):
        """Zero wrenches use no energy."""
        stats = energy_accumulate(power_model, allocation, [ControlWrench()] * 5, 0.1)
        assert stats.total_j == 0.0
        assert stats.thrusts.shape == (5, 6)

    def test_energy_is_power_times_dt(self, power_model, allocation):
        """Energy per step is P dt."""
        wrench = ControlWrench(30.0, 0.0, 0.0, 0.0)
        stats = energy_accumulate(power_model, allocation, [wrench, wrench], 0.2)
        power = total_power(power_model, allocate(allocation, wrench))
        assert stats.total_j == pytest.approx(2 * 0.2 * power)
        assert stats.max_j == pytest.approx(0.2 * power)

    def test_rejects_non_positive_dt(self, power_model, allocation):
        """dt must be positive."""
        with pytest.raises(ValidationError):
            energy_accumulate(power_model, allocation, [ControlWrench()], 0.0)
