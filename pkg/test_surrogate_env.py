import math

import numpy as np
import pytest

from dataset import features_equal
from errors import ConfigurationError, ExpertError
from policy import ActionId
from state import TASKS, EnvConfig, WorldState
from surrogate_env import (INTRINSIC_BASE, ObservationModel, ScriptedExpert, demo_seeds, gen_demos, observe,
                           reset, rollout, scripted_expert, step, success)

RANDOMISED = dict(rest_scale_range=(0.95, 1.05), max_strain_range=(0.08, 0.2),
                  hues=(36.0, 108.0, 180.0, 252.0, 324.0), distance_range=(1.5, 3.0),
                  lateral_max=2.0, heading_dev_deg=20.0)


def posed(state: WorldState, x, y, heading, arm=None) -> WorldState:
    state = state.copy()
    state.base_pose[:] = (x, y, heading)
    if arm is not None:
        state.arm_offset[:] = arm
    return state


def shifted(state: WorldState, dx, dy) -> WorldState:
    moved = state.copy()
    moved.geometry = state.geometry.shifted(dx, dy)
    moved.base_pose[:2] += (dx, dy)
    moved.curtain[:, :2] += (dx, dy)
    return moved


def spacing_ok(state: WorldState) -> bool:
    gaps = np.linalg.norm(np.diff(state.curtain, axis=0), axis=1)
    return bool(np.all(gaps >= state.min_spacing - 1e-9) and np.all(gaps <= state.max_spacing + 1e-9))


class TestKinematics:

    def test_forward_from_heading_zero_moves_along_x(self):
        state = posed(reset(EnvConfig(), 0), 0.0, -2.0, 0.0)
        nxt = step(state, ActionId.BODY_FORWARD)
        assert nxt.base_pose[0] == pytest.approx(0.1)
        assert nxt.base_pose[1] == pytest.approx(-2.0)
        assert nxt.step_count == state.step_count + 1
        assert state.base_pose[0] == 0.0

    def test_turns_change_heading_by_the_turn_step(self):
        state = posed(reset(EnvConfig(), 0), 0.0, -2.0, 0.0)
        assert step(state, ActionId.BODY_TURN_LEFT).base_pose[2] == pytest.approx(math.radians(10.0))
        assert step(state, ActionId.BODY_TURN_RIGHT).base_pose[2] == pytest.approx(-math.radians(10.0))

    def test_hand_moves_are_clamped_to_the_reach_box(self):
        state = posed(reset(EnvConfig(), 0), 0.0, -2.0, math.pi / 2, arm=(0.9, 0.0, 0.5))
        assert step(state, ActionId.HAND_FORWARD).arm_offset[0] == pytest.approx(0.9)
        assert step(state, ActionId.HAND_BACKWARD).arm_offset[0] == pytest.approx(0.85)

    @pytest.mark.parametrize("gap, grasped", [(0.07, True), (0.09, False)])
    def test_grasp_radius(self, gap, grasped):
        state = reset(EnvConfig(), 0)
        handle = state.curtain[state.handle_index]
        state = posed(state, handle[0] - gap, -0.45, math.pi / 2, arm=(0.45, 0.0, handle[2]))
        assert np.linalg.norm(state.tip() - handle) == pytest.approx(gap)
        nxt = step(state, ActionId.HAND_GRASP)
        assert (nxt.grasped_particle == nxt.handle_index) is grasped
        assert nxt.gripper_closed is grasped

    def test_release_drops_the_handle_back_on_the_rail(self):
        state = reset(EnvConfig(), 0)
        handle = state.curtain[state.handle_index]
        state = step(posed(state, handle[0], -0.45, math.pi / 2, arm=(0.45, 0.0, handle[2])), ActionId.HAND_GRASP)
        state = step(state, ActionId.HAND_DOWN)
        released = step(state, ActionId.HAND_RELEASE)
        assert released.grasped_particle is None
        assert released.curtain[-1, 1] == released.geometry.origin[1]
        assert released.curtain[-1, 2] == released.geometry.rail_z

    def test_gap_cover_base_cannot_cross_the_rail(self):
        state = posed(reset(EnvConfig(task='gap_cover'), 0), 0.0, -0.05, math.pi / 2)
        nxt = step(state, ActionId.BODY_FORWARD)
        assert nxt.last_move_rejected
        np.testing.assert_array_equal(nxt.base_pose, state.base_pose)

    def test_base_stays_inside_the_arena(self):
        state = posed(reset(EnvConfig(), 0), 3.95, -2.0, 0.0)
        assert step(state, ActionId.BODY_FORWARD).last_move_rejected

    def test_spacing_limits_hold_under_mixed_actions(self):
        rng = np.random.default_rng(0)
        for task in TASKS:
            for seed in range(10):
                state = reset(EnvConfig(task=task), seed)
                assert spacing_ok(state)
                for _ in range(300):
                    try:
                        action = scripted_expert(state)
                    except ExpertError:
                        action = None
                    if action is None or rng.random() < 0.3:
                        action = int(rng.integers(14))
                    state = step(state, action)
                    assert spacing_ok(state), f"{task} seed {seed} step {state.step_count}"
                    assert state.curtain[0, 0] == state.geometry.anchor_x


class TestReset:

    def test_draws_stay_inside_the_configured_ranges(self):
        for task in TASKS:
            config = EnvConfig(task=task, **RANDOMISED)
            for seed in range(1000):
                state = reset(config, seed)
                nominal = config.width / (config.particles - 1)
                assert 0.95 - 1e-12 <= state.rest_length / nominal <= 1.05 + 1e-12
                assert 0.08 <= state.max_strain <= 0.2
                assert state.hue in RANDOMISED['hues']
                assert 1.5 <= -state.base_pose[1] <= 3.0
                assert abs(state.base_pose[0]) <= 2.0
                assert abs(state.base_pose[2] - math.pi / 2) <= math.radians(20.0) + 1e-12
                assert not success(state)

    def test_zero_width_ranges_pin_the_start_pose(self):
        config = EnvConfig(distance_range=(2.0, 2.0), lateral_max=0.0, heading_dev_deg=0.0)
        for seed in range(20):
            np.testing.assert_allclose(reset(config, seed).base_pose, [0.0, -2.0, math.pi / 2])

    def test_same_seed_same_state(self):
        config = EnvConfig(task='gap_cover', **RANDOMISED)
        a, b = reset(config, 42), reset(config, 42)
        np.testing.assert_array_equal(a.base_pose, b.base_pose)
        np.testing.assert_array_equal(a.curtain, b.curtain)
        assert a.hue == b.hue

    def test_infeasible_geometry_is_a_configuration_error(self):
        with pytest.raises(ConfigurationError, match="wider than the curtain reach"):
            reset(EnvConfig(task='gap_cover', gap_ratio=0.5), 0)
        with pytest.raises(ConfigurationError, match="cannot span"):
            reset(EnvConfig(rest_scale_range=(0.9, 0.9), max_strain_range=(0.0, 0.0)), 0)

    def test_invalid_config_values(self):
        with pytest.raises(ConfigurationError):
            EnvConfig(task='fold_laundry')
        with pytest.raises(ConfigurationError):
            EnvConfig(particles=2)
        with pytest.raises(ConfigurationError):
            EnvConfig(distance_range=(3.0, 1.0))
        with pytest.raises(ConfigurationError, match="unknown env keys"):
            EnvConfig.from_dict({"gravity": 9.81})


class TestObservation:

    def test_lift_has_full_column_rank(self):
        model = ObservationModel()
        assert model.intrinsic_dim == INTRINSIC_BASE + 3 * 16
        assert np.linalg.matrix_rank(model.lift) == model.intrinsic_dim

    def test_feature_dim_below_intrinsic_dim_is_rejected(self):
        with pytest.raises(ConfigurationError, match="intrinsic dimension"):
            ObservationModel(feature_dim=50)

    def test_particles_outside_the_view_are_zeroed(self):
        model = ObservationModel()
        state = reset(EnvConfig(distance_range=(2.0, 2.0), lateral_max=0.0, heading_dev_deg=0.0), 0)
        assert np.any(model.intrinsic(state)[INTRINSIC_BASE:] != 0.0)
        away = posed(state, 0.0, -2.0, -math.pi / 2)
        np.testing.assert_array_equal(model.intrinsic(away)[INTRINSIC_BASE:], 0.0)

    def test_noise_is_bounded_and_reproducible(self):
        model = ObservationModel(noise_scale=0.005)
        state = reset(EnvConfig(), 3)
        clean = model.lift @ model.intrinsic(state)
        feature = observe(state, model)
        assert np.max(np.abs(feature - clean)) <= 0.005
        np.testing.assert_array_equal(feature, observe(state, model))

    def test_features_are_translation_invariant(self):
        model = ObservationModel()
        for task in TASKS:
            state = reset(EnvConfig(task=task), 5)
            moved = shifted(state, 0.5, -0.25)
            for _ in range(40):
                np.testing.assert_allclose(observe(moved, model), observe(state, model), atol=1e-9)
                action = scripted_expert(state)
                if action is None:
                    break
                state, moved = step(state, action), step(moved, action)

    def test_hand_cue_is_the_weighted_handle_offset_from_the_tip(self):
        model = ObservationModel(hand_weight=4.0)
        state = reset(EnvConfig(task='gap_cover'), 0)
        handle = state.curtain[state.handle_index]
        facing = posed(state, handle[0], -0.45, math.pi / 2, arm=(0.45, 0.0, 0.5))
        cue = model.intrinsic(facing)[INTRINSIC_BASE - 3:INTRINSIC_BASE]
        np.testing.assert_allclose(cue, [0.0, 0.0, 4.0 * (handle[2] - 0.5)], atol=1e-12)
        away = posed(state, handle[0], -0.45, -math.pi / 2)
        np.testing.assert_array_equal(model.intrinsic(away)[INTRINSIC_BASE - 3:INTRINSIC_BASE], 0.0)

    def test_closed_gripper_entry_uses_the_gripper_weight(self):
        model = ObservationModel()
        state = reset(EnvConfig(), 0)
        assert model.intrinsic(state)[8] == 0.0
        state.gripper_closed = True
        assert model.intrinsic(state)[8] == pytest.approx(0.2)


class TestExpert:

    @pytest.mark.parametrize("task", TASKS)
    def test_expert_finishes_a_few_episodes(self, task):
        config = EnvConfig(task=task)
        for seed in range(3):
            result = rollout(config, seed, ScriptedExpert(seed), 500)
            assert result.success, f"{task} seed {seed}"
            assert scripted_expert(result.final_state) is None

    @pytest.mark.slow
    @pytest.mark.parametrize("task", TASKS)
    def test_expert_finishes_every_seed(self, task):
        config = EnvConfig(task=task)
        for seed in range(100):
            assert rollout(config, seed, ScriptedExpert(seed), 500).success, f"{task} seed {seed}"

    def test_expert_refuses_to_act_outside_the_arena(self):
        state = posed(reset(EnvConfig(), 0), 10.0, -2.0, math.pi / 2)
        with pytest.raises(ExpertError, match="outside the arena"):
            scripted_expert(state)

    @pytest.mark.parametrize("pose, message", [
        ((0.0, -3.5, math.pi / 2), "start distance"),
        ((1.5, -1.5, math.pi / 2), "lateral offset"),
        ((0.0, -1.5, math.pi / 2 + math.radians(30.0)), "heading deviation"),
    ])
    def test_expert_refuses_start_poses_outside_the_reset_ranges(self, pose, message):
        state = posed(reset(EnvConfig(task='gap_cover'), 0), *pose)
        with pytest.raises(ExpertError, match=message):
            scripted_expert(state)
        state.step_count = 1
        assert scripted_expert(state) is not None

    @pytest.mark.parametrize("seed", range(3))
    def test_jitter_is_undone_after_one_body_move(self, seed):
        config = EnvConfig(task='gap_cover')
        expert = ScriptedExpert(seed, jitter_period=2)
        states, actions = [reset(config, seed)], []
        while not success(states[-1]) and len(actions) < 500:
            action = expert(states[-1])
            if action is None:
                break
            actions.append(ActionId(action))
            states.append(step(states[-1], action))
        assert success(states[-1])

        nudges = {ActionId.HAND_UP: ActionId.HAND_DOWN, ActionId.HAND_DOWN: ActionId.HAND_UP}
        body = {ActionId.BODY_FORWARD, ActionId.BODY_BACKWARD, ActionId.BODY_LEFT, ActionId.BODY_RIGHT,
                ActionId.BODY_TURN_LEFT, ActionId.BODY_TURN_RIGHT}
        found, i = 0, 0
        while i < len(actions) - 2:
            if actions[i] in nudges and actions[i + 1] in body:
                assert actions[i + 2] == nudges[actions[i]], f"step {i}"
                np.testing.assert_allclose(states[i + 3].arm_offset, states[i].arm_offset, atol=1e-12)
                found += 1
                i += 3
            else:
                i += 1
        assert found > 0

    def test_rollout_stops_when_the_policy_gives_up(self):
        result = rollout(EnvConfig(), 0, lambda state, feature: None)
        assert result.steps == 0
        assert len(result.features) == 1
        assert not result.success


class TestGenDemos:

    def test_generation_is_deterministic(self):
        first = gen_demos('gap_cover', 2, seed=3)
        second = gen_demos('gap_cover', 2, seed=3)
        assert features_equal(first, second)
        assert first.traj_ids == ['gap_cover-0000', 'gap_cover-0001']
        assert first.metadata['episode_seeds'] == demo_seeds('gap_cover', 2, 3)

    def test_first_step_repeats_the_first_command(self):
        dataset = gen_demos('curtain_open', 1, seed=0)
        traj = dataset.trajectory('curtain_open-0000')
        assert traj.actions[0] == traj.actions[1]
        assert traj.task_tag == 'curtain_open'

    def test_demo_seeds_differ_between_tasks(self):
        assert demo_seeds('gap_cover', 5, 0) != demo_seeds('curtain_open', 5, 0)

    def test_needs_at_least_one_demo(self):
        with pytest.raises(ConfigurationError):
            gen_demos('gap_cover', 0)
