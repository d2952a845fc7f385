"""Tests for nashvi.estimator: rollouts, the G(PO)MDP estimator and its bounds."""

import csv

import numpy as np
import pytest

from nashvi.estimator import (
    EstimatedField,
    error_bound,
    gpomdp_estimate,
    resolve_k1,
    rollout,
    truncated_gradient,
    truncation_bound,
    write_trajectories,
)
from nashvi.exceptions import DomainError, EstimationError, PolicyDomainError
from nashvi.exact import evaluate
from nashvi.policy import PolicyParams, random_params, uniform_params
from nashvi.util import STREAM_ESTIMATOR, substream


class TestRollout:
    def test_shapes_and_rewards(self, two_player, box_space, rng):
        traj = rollout(two_player, uniform_params(box_space), 5, rng)
        assert len(traj) == 6
        assert traj.horizon == 5
        assert traj.actions.shape == (6, 2)
        for l in range(6):
            j = two_player.joint_index(tuple(traj.actions[l]))
            np.testing.assert_array_equal(traj.rewards[l], two_player.reward[:, traj.states[l], j])

    def test_negative_horizon(self, two_player, box_space, rng):
        with pytest.raises(DomainError):
            rollout(two_player, uniform_params(box_space), -1, rng)

    def test_discounted_return_matches_value(self, two_player, box_space):
        params = uniform_params(box_space)
        estimate = gpomdp_estimate(
            two_player, params, 150, 2000, substream(5, STREAM_ESTIMATOR), keep_trajectories=True
        )
        discounts = two_player.discount ** np.arange(151)
        returns = np.array([discounts @ t.rewards for t in estimate.trajectories])
        J = evaluate(two_player, params).total_reward
        np.testing.assert_allclose(returns.mean(axis=0), J, atol=0.4)


class TestGpomdpEstimate:
    def test_zero_reward_is_zero(self, zero_game, box_space, rng):
        estimate = gpomdp_estimate(zero_game, random_params(box_space, rng), 10, 50, rng)
        np.testing.assert_array_equal(estimate.field, np.zeros(4))
        np.testing.assert_array_equal(estimate.std, np.zeros(4))

    def test_thread_split_is_invisible(self, two_player, box_space, rng):
        params = random_params(box_space, rng)
        one = gpomdp_estimate(two_player, params, 8, 300, substream(1, STREAM_ESTIMATOR, 2), threads=1)
        four = gpomdp_estimate(two_player, params, 8, 300, substream(1, STREAM_ESTIMATOR, 2), threads=4)
        np.testing.assert_array_equal(one.field, four.field)
        np.testing.assert_array_equal(one.std, four.std)

    def test_unbiased_for_truncated_gradient(self, two_player, box_space, rng):
        params = random_params(box_space, rng, margin=0.1)
        expected = truncated_gradient(two_player, params, 3)
        repeats = 50
        fields = np.array([
            gpomdp_estimate(two_player, params, 3, 2000, substream(2, STREAM_ESTIMATOR, r)).field
            for r in range(repeats)
        ])
        stderr = fields.std(axis=0, ddof=1) / np.sqrt(repeats)
        assert (np.abs(fields.mean(axis=0) - expected) <= 3 * stderr).all()

    def test_truncated_gradient_approaches_field(self, two_player, box_space):
        params = uniform_params(box_space)
        F = evaluate(two_player, params).field
        errors = [np.linalg.norm(truncated_gradient(two_player, params, T) - F) for T in (1, 3, 5)]
        assert errors[0] > errors[1] > errors[2]

    def test_truncated_gradient_limit(self, two_player, box_space):
        with pytest.raises(EstimationError):
            truncated_gradient(two_player, uniform_params(box_space), 20)

    def test_stderr_scales_with_trajectories(self, two_player, box_space):
        params = uniform_params(box_space)
        sizes = np.array([100, 1000, 10_000])
        stderr = np.array([
            gpomdp_estimate(two_player, params, 10, int(n), substream(3, STREAM_ESTIMATOR, int(n))).stderr
            for n in sizes
        ])
        slopes = np.polyfit(np.log(sizes), np.log(stderr), 1)[0]
        assert ((slopes > -0.6) & (slopes < -0.4)).all()

    def test_contribution_and_score_bounds(self, two_player, box_space, rng):
        T = 20
        estimate = gpomdp_estimate(two_player, random_params(box_space, rng), T, 200, rng)
        B = box_space.score_bound()
        assert (estimate.score_max <= B + 1e-9).all()
        l = np.arange(T + 1)
        bound = np.sum(two_player.discount ** l * two_player.reward_bound * (l + 1) * B)
        assert (estimate.contribution_max <= bound).all()

    def test_agent_gradient(self, two_player, box_space, rng):
        estimate = gpomdp_estimate(two_player, uniform_params(box_space), 5, 20, rng)
        np.testing.assert_array_equal(estimate.agent_gradient(box_space, 1), -estimate.field[2:])

    def test_rejects_infeasible(self, two_player, box_space, rng):
        with pytest.raises(PolicyDomainError):
            gpomdp_estimate(two_player, PolicyParams(box_space, [1.5, 0, 0, 0]), 5, 10, rng)

    def test_rejects_bad_sizes(self, two_player, box_space, rng):
        with pytest.raises(DomainError):
            gpomdp_estimate(two_player, uniform_params(box_space), 5, 0, rng)
        with pytest.raises(DomainError):
            gpomdp_estimate(two_player, uniform_params(box_space), -2, 10, rng)


class TestBounds:
    def test_truncation_decays(self):
        assert truncation_bound(2, 198.0, 4.0, 0.9, 200) < truncation_bound(2, 198.0, 4.0, 0.9, 20)

    def test_error_bound_decreases_with_trajectories(self):
        assert error_bound(20, 1000, 0.5, 2, 8.0, 4.0, 0.9) < error_bound(20, 100, 0.5, 2, 8.0, 4.0, 0.9)

    def test_error_bound_contains_truncation(self):
        assert error_bound(20, 100, 0.5, 2, 8.0, 4.0, 0.9) > truncation_bound(2, 8.0, 4.0, 0.9, 20)

    def test_domain(self):
        with pytest.raises(DomainError):
            error_bound(20, 100, 0.0, 2, 8.0, 4.0, 0.9)
        with pytest.raises(DomainError):
            truncation_bound(2, 8.0, 4.0, 1.0, 20)
        with pytest.raises(DomainError):
            truncation_bound(2, float("inf"), 4.0, 0.9, 20)


class TestResolveK1:
    def test_rule(self):
        assert resolve_k1("K+1", 9) == 10
        assert resolve_k1("k + 1", 1) == 2

    def test_fixed(self):
        assert resolve_k1(50, 9) == 50

    def test_unknown(self):
        with pytest.raises(DomainError):
            resolve_k1("2K", 1)


class TestEstimatedField:
    def test_substream_keys(self, two_player, box_space):
        field = EstimatedField(two_player, box_space, T=5, K1="K+1", seed=3)
        field.begin_outer(4)
        theta = uniform_params(box_space).theta
        first = field(theta)
        assert field.last.key == (4, 0)
        assert field.last.K1 == 5
        expected = gpomdp_estimate(two_player, uniform_params(box_space), 5, 5, substream(3, STREAM_ESTIMATOR, 4, 0))
        np.testing.assert_array_equal(first, expected.field)

        field(theta)
        assert field.last.key == (4, 1)
        assert field.evaluations == 2

    def test_begin_outer_resets_calls(self, two_player, box_space):
        field = EstimatedField(two_player, box_space, T=3, K1=4, seed=0)
        theta = uniform_params(box_space).theta
        field.begin_outer(1)
        a = field(theta)
        field.begin_outer(1)
        np.testing.assert_array_equal(field(theta), a)

    def test_log_limit(self, two_player, box_space):
        field = EstimatedField(two_player, box_space, T=2, K1=5, seed=0, log_limit=7)
        theta = uniform_params(box_space).theta
        field(theta)
        field(theta)
        assert len(field.logged) == 7
        assert field.logged[-1].key == (1, 1, 1)


class TestWriteTrajectories:
    def test_columns(self, two_player, box_space, tmp_path):
        field = EstimatedField(two_player, box_space, T=2, K1=5, seed=0, log_limit=3)
        field(uniform_params(box_space).theta)
        path = tmp_path / "traj.csv"
        assert write_trajectories(field.logged, path) == 3
        with open(path) as f:
            rows = list(csv.reader(f))
        assert rows[0] == [
            "outer", "call", "trajectory_id", "step", "state",
            "action_1", "action_2", "reward_1", "reward_2",
        ]
        assert len(rows) == 1 + 3 * 3
        assert rows[1][:4] == ["1", "0", "0", "0"]
