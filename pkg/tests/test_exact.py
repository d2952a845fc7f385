"""Tests for nashvi.exact: values, occupancy, the pseudo gradient and field callables."""

import csv

import numpy as np
import pytest

from nashvi.exact import (
    ExactField,
    action_value,
    discounted_occupancy,
    dump_values,
    evaluate,
    induced_kernel,
    lipschitz_bound,
    pseudo_gradient,
    regularized_field,
    total_reward,
    value_function,
)
from nashvi.exceptions import DomainError, SolverConfigError
from nashvi.policy import ParamSpace, PolicyParams, random_params, uniform_params, vertex_params

from conftest import KERNEL, L_BUNDLED, random_game

OCCUPANCY = np.array([0.623853, 0.376147])


def _fd_gradient(game, params, h=1e-6):
    """Central differences of J_i along agent i's own coordinates."""
    space = params.space
    out = np.empty(space.size)
    for i in range(space.n_agents):
        sl = space.agent_slice(i)
        for c in range(sl.start, sl.stop):
            bump = np.zeros(space.size)
            bump[c] = h
            up = evaluate(game, PolicyParams(space, params.theta + bump)).total_reward[i]
            down = evaluate(game, PolicyParams(space, params.theta - bump)).total_reward[i]
            out[c] = (up - down) / (2 * h)
    return out


def _field_jacobian(game, space, h=0.1):
    base = uniform_params(space).theta
    F0 = evaluate(game, PolicyParams(space, base)).field
    columns = []
    for c in range(space.size):
        bump = np.zeros(space.size)
        bump[c] = h
        columns.append((evaluate(game, PolicyParams(space, base + bump)).field - F0) / h)
    return np.stack(columns, axis=1)


class TestValues:
    def test_kernel_ignores_policy(self, two_player, box_space, rng):
        params = random_params(box_space, rng)
        np.testing.assert_allclose(induced_kernel(two_player, params), KERNEL)

    def test_constant_reward_vertex(self, two_player):
        space = ParamSpace.for_game(two_player, "direct")
        params = vertex_params(space, [(0, 0), (0, 0)])
        np.testing.assert_allclose(value_function(two_player, params, 0), [30.0, 30.0])
        np.testing.assert_allclose(value_function(two_player, params, 1), [30.0, 30.0])

    def test_uniform_profile(self, two_player, box_space):
        params = uniform_params(box_space)
        # mean stage reward 2.25 for both agents, every state
        assert total_reward(two_player, params, 0) == pytest.approx(22.5)
        assert total_reward(two_player, params, 1) == pytest.approx(22.5)

    def test_constant_reward_game(self, rng):
        game = random_game(rng)
        game = game.with_rewards(np.full_like(game.reward, 0.7), reward_bound=1.0)
        space = ParamSpace.for_game(game, "alpha_greedy", 0.1)
        params = random_params(space, rng)
        np.testing.assert_allclose(evaluate(game, params).value, 0.7 / (1 - game.discount))

    def test_action_value_consistency(self, rng):
        game = random_game(rng)
        space = ParamSpace.for_game(game, "alpha_greedy", 0.2)
        ev = evaluate(game, random_params(space, rng))
        assert ev.bellman_residual() < 1e-10
        assert ev.consistency_residual() < 1e-10
        assert action_value(game, ev.params, 1).shape == (3, 6)

    def test_agent_out_of_range(self, two_player, box_space):
        with pytest.raises(IndexError):
            total_reward(two_player, uniform_params(box_space), 2)


class TestOccupancy:
    def test_bundled(self, two_player, box_space):
        d = discounted_occupancy(two_player, uniform_params(box_space))
        np.testing.assert_allclose(d, OCCUPANCY, atol=1e-6)

    def test_distribution(self, rng):
        game = random_game(rng)
        space = ParamSpace.for_game(game, "direct")
        ev = evaluate(game, random_params(space, rng))
        assert ev.occupancy.sum() == pytest.approx(1.0)
        assert (ev.occupancy >= 0).all()
        assert ev.occupancy_residual() < 1e-10


class TestPseudoGradient:
    def test_matches_differences_bundled(self, two_player, box_space, rng):
        for _ in range(5):
            params = random_params(box_space, rng, margin=0.05)
            np.testing.assert_allclose(
                -pseudo_gradient(two_player, params), _fd_gradient(two_player, params), rtol=1e-5, atol=1e-6
            )

    @pytest.mark.parametrize("kind,alpha", [("direct", 0.0), ("alpha_greedy", 0.1)])
    def test_matches_differences_random(self, rng, kind, alpha):
        game = random_game(rng)
        space = ParamSpace.for_game(game, kind, alpha)
        params = random_params(space, rng, margin=0.05)
        np.testing.assert_allclose(
            -pseudo_gradient(game, params), _fd_gradient(game, params), rtol=1e-5, atol=1e-6
        )

    def test_action_zero_dominant(self, two_player, box_space, rng):
        for _ in range(10):
            assert (pseudo_gradient(two_player, random_params(box_space, rng)) < 0).all()

    def test_jacobian_norm(self, two_player, box_space):
        # F is affine on this game, so a coarse difference recovers the Jacobian exactly
        norm = np.linalg.norm(_field_jacobian(two_player, box_space), 2)
        assert 6.10 < norm < L_BUNDLED

    def test_empirical_lipschitz(self, two_player, box_space, rng):
        for _ in range(200):
            a = random_params(box_space, rng).theta
            b = random_params(box_space, rng).theta
            dF = pseudo_gradient(two_player, PolicyParams(box_space, a)) - pseudo_gradient(
                two_player, PolicyParams(box_space, b)
            )
            assert np.linalg.norm(dF) <= L_BUNDLED * np.linalg.norm(a - b) + 1e-12

    @pytest.mark.parametrize("kind,alpha", [("two_action_box", 0.01), ("two_action_box", 0.5), ("alpha_greedy", 0.1)])
    def test_norm_bound(self, rng, kind, alpha):
        game = random_game(rng, n_actions=(2, 2) if kind == "two_action_box" else (2, 3))
        space = ParamSpace.for_game(game, kind, alpha)
        bound = np.sqrt(game.n_agents) * space.score_bound() * game.reward_bound / (1 - game.discount) ** 2
        for _ in range(20):
            assert np.linalg.norm(pseudo_gradient(game, random_params(space, rng))) <= bound

    def test_norm_bound_bundled(self, two_player, box_space):
        bound = np.sqrt(2) * box_space.score_bound() * two_player.reward_bound / (1 - two_player.discount) ** 2
        for rules in [((0, 0), (0, 0)), ((1, 1), (1, 1)), ((0, 1), (1, 0))]:
            field = pseudo_gradient(two_player, vertex_params(box_space, rules))
            assert np.linalg.norm(field) <= bound


class TestFieldCallables:
    def test_exact_field_counts(self, two_player, box_space):
        field = ExactField(two_player, box_space)
        theta = uniform_params(box_space).theta
        np.testing.assert_array_equal(field(theta), pseudo_gradient(two_player, uniform_params(box_space)))
        field(uniform_params(box_space))
        assert field.evaluations == 2

    def test_regularized_adds_pull(self, two_player, box_space):
        base = ExactField(two_player, box_space)
        center = np.full(4, 0.5)
        fk = regularized_field(base, 0.05, center, L_BUNDLED)
        theta = np.array([1.0, 0.5, 0.0, 0.5])
        expected = base(theta) + (theta - center) / 0.05
        np.testing.assert_allclose(fk(theta), expected)

    def test_regularized_strongly_monotone(self, two_player, box_space, rng):
        beta = 0.5 / L_BUNDLED
        fk = regularized_field(ExactField(two_player, box_space), beta, np.full(4, 0.5), L_BUNDLED)
        for _ in range(200):
            a = random_params(box_space, rng).theta
            b = random_params(box_space, rng).theta
            lhs = (fk(a) - fk(b)) @ (a - b)
            assert lhs >= (1 / beta - L_BUNDLED) * (a - b) @ (a - b) - 1e-10

    def test_beta_out_of_range(self, two_player, box_space):
        base = ExactField(two_player, box_space)
        with pytest.raises(SolverConfigError, match="beta out of range"):
            regularized_field(base, 0.2, np.zeros(4), L_BUNDLED)
        with pytest.raises(SolverConfigError):
            regularized_field(base, 0.0, np.zeros(4))


class TestLipschitzBound:
    def test_formula(self):
        assert lipschitz_bound(1.0, 0.0, 1.0, 1, 0.5) == pytest.approx(np.sqrt(288.0))

    def test_grows_with_agents(self):
        assert lipschitz_bound(1.0, 1.0, 2.0, 3, 0.9) > lipschitz_bound(1.0, 1.0, 2.0, 2, 0.9)

    def test_domain(self):
        with pytest.raises(DomainError):
            lipschitz_bound(1.0, 0.0, 1.0, 1, 1.0)
        with pytest.raises(DomainError):
            lipschitz_bound(1.0, 0.0, float("inf"), 1, 0.5)


class TestDumpValues:
    def test_rows(self, two_player, box_space, tmp_path):
        path = tmp_path / "values.csv"
        dump_values(evaluate(two_player, uniform_params(box_space)), path)
        with open(path) as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["quantity", "agent", "state", "joint_action", "value"]
        assert len(rows) == 1 + 2 + 2 * (2 + 2 * 4)
        assert [r[0] for r in rows[1:3]] == ["d", "d"]
        assert float(rows[1][4]) == pytest.approx(OCCUPANCY[0], abs=1e-6)


class TestSingleState:
    def test_values_are_stage_payoffs(self, single_state):
        space = ParamSpace.for_game(single_state, "two_action_box", 0.0)
        params = PolicyParams(space, [0.8, 0.3])
        # stage payoffs xy + 2x - 2y + 2 and xy + 2y - 2x + 2 at x = 0.8, y = 0.3
        np.testing.assert_allclose(evaluate(single_state, params).total_reward, [32.4, 12.4])
        np.testing.assert_allclose(discounted_occupancy(single_state, params), [1.0])
