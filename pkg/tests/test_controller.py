"""
Tests for the multiple-shooting transcription and the MPC step (services/controller.py)
"""

import numpy as np
import pytest

from models.schemas import ControllerMode, CostMode, FieldKind, MpcConfig, SolverStatus
from services.controller import (
    HorizonPlan,
    MpcController,
    decision_vector,
    hover_guess,
    mpc_step,
    plan_objectives,
    sample_horizon_currents,
    shift_plan,
    terminal_weight,
    transcribe,
)
from services.costs import StageContext, dare_terminal, stage_cost, terminal_cost
from services.currents import AnalyticField
from services.nlp import check_gradients
from services.vehicle import ControlWrench, CurrentSample, VehicleState, linearize_euler_step, step_euler
from utils.validation import ValidationError

HORIZON = 5


@pytest.fixture
def config():
    return MpcConfig(horizon=HORIZON)


@pytest.fixture
def goal():
    goal = np.zeros(12)
    goal[:3] = [3.0, 1.0, 2.0]
    goal[5] = 0.3
    return goal


def _rollout(params, x0, wrenches, currents, dt):
    states = [x0]
    for u, c in zip(wrenches, currents):
        states.append(step_euler(states[-1], u, c, params, dt))
    return states


def _wrenches():
    return [ControlWrench(10.0 + k, -2.0, 5.0 - k, 0.5) for k in range(HORIZON)]


def _currents():
    return [CurrentSample.horizontal(0.1 + 0.01 * k, -0.05) for k in range(HORIZON)]


class TestWarmStart:
    """Shifting and hover guesses."""

    def test_shift_drops_first_stage(self):
        """The shifted plan starts at stage 1 and repeats the last stage."""
        states = [VehicleState.at_rest([float(k), 0.0, 0.0]) for k in range(4)]
        wrenches = [ControlWrench(X=float(k)) for k in range(3)]
        plan = HorizonPlan(states=states, wrenches=wrenches, currents=[CurrentSample()] * 3)
        new_states, new_wrenches = shift_plan(plan)
        assert [s.position[0] for s in new_states] == [1.0, 2.0, 3.0, 3.0]
        assert [w.X for w in new_wrenches] == [1.0, 2.0, 2.0]

    def test_hover_guess(self):
        """The hover guess holds the pose at rest."""
        x_now = VehicleState(eta=[1.0, 2.0, 3.0, 0.0, 0.0, 0.5], nu=[0.3, 0, 0, 0, 0, 0])
        states, wrenches = hover_guess(x_now, 4)
        assert len(states) == 5 and len(wrenches) == 4
        assert states[0] is x_now
        np.testing.assert_array_equal(states[-1].nu, np.zeros(6))
        np.testing.assert_array_equal(states[-1].eta, x_now.eta)

    def test_horizon_currents_follow_warm_positions(self):
        """Samples are taken at the first N warm-start positions."""
        field = AnalyticField(kind=FieldKind.SHEAR, gradient=(0.1, 0.0), axis=0)
        states = [VehicleState.at_rest([float(k), 0.0, 0.0]) for k in range(4)]
        currents = sample_horizon_currents(field, states)
        assert [c.v_c_ned[0] for c in currents] == pytest.approx([0.0, 0.1, 0.2])

    def test_horizon_currents_need_two_states(self):
        """A single state is not a horizon."""
        with pytest.raises(ValidationError):
            sample_horizon_currents(AnalyticField.uniform(0.1, 0.0), [VehicleState.at_rest([0, 0, 0])])


class TestTranscription:
    """NLP layout, defects and objective."""

    def test_dimensions_and_bounds(self, config, params, goal):
        """n = 16 N, m = 12 N, with state and wrench bounds tiled per stage."""
        problem = transcribe(config, VehicleState.at_rest([0, 0, 0]), goal, _currents(), params)
        assert problem.n == 16 * HORIZON
        assert problem.m == 12 * HORIZON
        assert problem.upper[3] == pytest.approx(config.state_bounds.roll_pitch_rad)
        assert np.isinf(problem.upper[0])
        wrench_start = 12 * HORIZON
        np.testing.assert_allclose(problem.lower[wrench_start:wrench_start + 4], config.wrench_bounds.lower())

    def test_current_count_checked(self, config, params, goal):
        """One current sample per stage is required."""
        with pytest.raises(ValidationError):
            transcribe(config, VehicleState.at_rest([0, 0, 0]), goal, _currents()[:-1], params)

    def test_defects_vanish_on_euler_rollout(self, config, params, goal):
        """An Euler rollout of the prediction model satisfies every defect."""
        x0 = VehicleState(eta=[0, 0, 1, 0.05, -0.02, 0.1], nu=[0.2, 0.05, 0, 0, 0, 0.01])
        currents = _currents()
        wrenches = _wrenches()
        states = _rollout(params, x0, wrenches, currents, config.dt_s)
        problem = transcribe(config, x0, goal, currents, params)
        c, J = problem.constraints(decision_vector(config, params, goal, states, wrenches))
        assert np.max(np.abs(c)) < 1e-10
        assert J.shape == (problem.m, problem.n)

    def test_objective_matches_stage_costs(self, config, params, goal):
        """The NLP objective equals the scaled sum of stage costs plus the terminal cost."""
        x0 = VehicleState.at_rest([0.0, 0.0, 1.0])
        currents, wrenches = _currents(), _wrenches()
        states = _rollout(params, x0, wrenches, currents, config.dt_s)
        w = decision_vector(config, params, goal, states, wrenches)

        shaped, baseline = 0.0, 0.0
        for k in range(HORIZON):
            ctx = StageContext(states[k], wrenches[k], currents[k], goal, k=k,
                               prev_wrench=wrenches[k - 1] if k else None)
            shaped += stage_cost(ctx, config.weights, config.gate, CostMode.SHAPED)
            baseline += stage_cost(ctx, config.weights, config.gate, CostMode.BASELINE)
        tail = terminal_cost(states[-1].as_vector(), goal, terminal_weight(config, params, goal[5]))

        got_shaped, got_baseline, gates = plan_objectives(config, params, x0.as_vector(), goal, currents, w)
        assert got_shaped == pytest.approx(shaped + tail, rel=1e-9)
        assert got_baseline == pytest.approx(baseline + tail, rel=1e-9)
        assert gates.shape == (HORIZON,)

        problem = transcribe(config, x0, goal, currents, params)
        assert problem.objective(w)[0] == pytest.approx(config.objective_scale * (shaped + tail), rel=1e-9)

    def test_baseline_mode_objective(self, params, goal):
        """Baseline controllers optimize the unshaped objective."""
        config = MpcConfig(horizon=HORIZON, mode=ControllerMode.BASELINE)
        x0 = VehicleState.at_rest([0.0, 0.0, 1.0])
        currents, wrenches = _currents(), _wrenches()
        states = _rollout(params, x0, wrenches, currents, config.dt_s)
        w = decision_vector(config, params, goal, states, wrenches)
        _, baseline, _ = plan_objectives(config, params, x0.as_vector(), goal, currents, w)
        problem = transcribe(config, x0, goal, currents, params)
        assert problem.objective(w)[0] == pytest.approx(config.objective_scale * baseline, rel=1e-9)

    def test_gradients_match_finite_differences(self, config, params, goal, rng):
        """Objective gradient and defect Jacobian agree with central differences."""
        x0 = VehicleState.at_rest([0.0, 0.0, 1.0])
        currents, wrenches = _currents(), _wrenches()
        states = _rollout(params, x0, wrenches, currents, config.dt_s)
        w = decision_vector(config, params, goal, states, wrenches)
        w = w + 0.01 * rng.standard_normal(w.size)
        problem = transcribe(config, x0, goal, currents, params)
        assert check_gradients(problem, w) < 1e-5

    def test_configured_terminal_weight(self, params):
        """An explicit qf_diag bypasses the Riccati weight."""
        weights = MpcConfig().weights.model_copy(update={'qf_diag': tuple(float(i) for i in range(1, 13))})
        config = MpcConfig(horizon=HORIZON, weights=weights)
        np.testing.assert_array_equal(terminal_weight(config, params), np.diag(np.arange(1.0, 13.0)))

    def test_riccati_terminal_weight_by_default(self, params):
        """Without qf_diag the terminal weight comes from the linearized Euler step."""
        config = MpcConfig()
        assert config.weights.qf_diag is None
        A, B = linearize_euler_step(params, config.dt_s, np.zeros(12), np.zeros(4), np.zeros(3))
        assert A.shape == (12, 12) and B.shape == (12, 4)
        Qf = terminal_weight(config, params, goal_yaw=0.3)
        expected = dare_terminal(params, config.dt_s, config.weights.Q, config.weights.R, 0.3, config.flow_mode)
        np.testing.assert_allclose(Qf, expected, rtol=1e-12)
        np.testing.assert_allclose(Qf, Qf.T, atol=1e-9)
        assert np.all(np.linalg.eigvalsh(Qf) > 0)


class TestMpcStep:
    """Receding-horizon solves."""

    def test_first_wrench_heads_for_goal(self, config, params):
        """From rest the first surge command points at a goal ahead."""
        goal = np.zeros(12)
        goal[:3] = [3.0, 0.0, 0.0]
        u, plan = mpc_step(config, AnalyticField.uniform(0.0, 0.0), VehicleState.at_rest([0, 0, 0]),
                           goal, None, params)
        assert u.X > 0
        assert plan.horizon == HORIZON
        assert len(plan.states) == HORIZON + 1
        assert isinstance(plan.status, SolverStatus)
        assert np.all(u.as_vector() <= config.wrench_bounds.upper())
        assert np.all(u.as_vector() >= config.wrench_bounds.lower())

    @pytest.mark.parametrize('mode', list(ControllerMode))
    def test_at_goal_in_still_water_commands_nothing(self, config, neutral_params, mode):
        """A neutrally buoyant vehicle resting on the goal needs no thrust."""
        goal = np.zeros(12)
        goal[:3] = [3.0, 1.0, 2.0]
        x_now = VehicleState.at_rest(goal[:3])
        u, _ = mpc_step(config.with_mode(mode), AnalyticField.uniform(0.0, 0.0), x_now, goal, None, neutral_params)
        bounds = np.maximum(-config.wrench_bounds.lower(), config.wrench_bounds.upper())
        assert np.all(np.abs(u.as_vector()) <= 1e-3 * bounds)

    def test_still_water_shaping_is_bounded_by_gate_floor(self, config, params, goal):
        """With no current the gate sits at its floor and harnessing stays within that of baseline."""
        field = AnalyticField.uniform(0.0, 0.0)
        x_now = VehicleState.at_rest([0.0, 0.0, 0.0])
        u_b, _ = mpc_step(config.with_mode(ControllerMode.BASELINE), field, x_now, goal, None, params)
        u_h, plan = mpc_step(config.with_mode(ControllerMode.HARNESSING), field, x_now, goal, None, params)

        gate, weights = config.gate, config.weights
        floor = 0.5 * np.tanh(np.sqrt(gate.eps_c) / gate.v_scale_mps)
        np.testing.assert_allclose(plan.gates, floor, rtol=1e-9)
        gap = np.max(np.abs(u_h.as_vector() - u_b.as_vector()))
        assert gap <= 2.0 * (weights.kappa_eff + weights.lambda_relax) * floor * np.max(np.abs(u_b.as_vector()))

    def test_aligned_current_opens_gate(self, params):
        """A current pointing at the goal gives gates above one half and a cheaper shaped objective."""
        goal = np.zeros(12)
        goal[:3] = [10.0, 0.0, 0.0]
        _, plan = mpc_step(MpcConfig(), AnalyticField.uniform(0.2, 0.0), VehicleState.at_rest([0, 0, 0]),
                           goal, None, params)
        assert plan.mean_gate >= 0.5
        assert plan.shaped_objective <= plan.baseline_objective

    def test_zero_shaping_weights_reduce_to_baseline(self, config, params, goal):
        """With every shaping weight at zero both modes command the same wrench."""
        off = config.model_copy(update={'weights': config.weights.gate_off()})
        field = AnalyticField.uniform(0.15, 0.05)
        x_now = VehicleState.at_rest([0.0, 0.0, 0.0])
        u_b, _ = mpc_step(off.with_mode(ControllerMode.BASELINE), field, x_now, goal, None, params)
        u_h, _ = mpc_step(off.with_mode(ControllerMode.HARNESSING), field, x_now, goal, None, params)
        np.testing.assert_allclose(u_h.as_vector(), u_b.as_vector(), rtol=0, atol=1e-9)

    def test_deterministic(self, config, params):
        """Same inputs give the same wrench."""
        goal = np.zeros(12)
        goal[:3] = [2.0, 1.0, 0.5]
        field = AnalyticField.uniform(0.1, 0.0)
        x_now = VehicleState.at_rest([0, 0, 0])
        first, _ = mpc_step(config, field, x_now, goal, None, params)
        second, _ = mpc_step(config, field, x_now, goal, None, params)
        np.testing.assert_array_equal(first.as_vector(), second.as_vector())

    def test_rejects_non_finite_state(self, config, params):
        """A NaN measurement is refused before solving."""
        x_now = VehicleState.at_rest([0, 0, 0])
        object.__setattr__(x_now, 'nu', np.array([np.nan, 0, 0, 0, 0, 0]))
        with pytest.raises(ValidationError):
            mpc_step(config, AnalyticField.uniform(0.0, 0.0), x_now, np.zeros(12), None, params)

    def test_controller_keeps_warm_start(self, config, params):
        """The controller stores the plan and reset clears it."""
        goal = np.zeros(12)
        goal[:3] = [2.0, 0.0, 0.0]
        controller = MpcController(config, params)
        field = AnalyticField.uniform(0.1, 0.0)
        _, plan = controller.step(field, VehicleState.at_rest([0, 0, 0]), goal)
        assert controller.plan is plan
        _, second = controller.step(field, plan.states[1], goal)
        assert second.horizon == HORIZON
        controller.reset()
        assert controller.plan is None
