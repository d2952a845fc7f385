"""Shared fixtures for nashvi tests."""

import numpy as np
import pytest
import yaml

from nashvi.game import TabularGame, bundled_game_path, load_game
from nashvi.policy import ParamSpace

# Constants of the bundled two-player game.
KERNEL = np.array([[0.6, 0.4], [0.7, 0.3]])
GAMMA = 0.9
ALPHA = 0.01
L_BUNDLED = 6.12


def make_game(transition, reward, gamma=0.9, rho=None, reward_bound=None, n_actions=None):
    """TabularGame from dense arrays; n_actions inferred for one agent when omitted."""
    transition = np.asarray(transition, dtype=float)
    reward = np.asarray(reward, dtype=float)
    n_states = transition.shape[0]
    if n_actions is None:
        n_actions = (transition.shape[1],)
    if rho is None:
        rho = np.full(n_states, 1.0 / n_states)
    if reward_bound is None:
        reward_bound = max(float(np.abs(reward).max()), 1.0)
    return TabularGame(n_states, tuple(n_actions), transition, reward, gamma, np.asarray(rho, float), reward_bound)


def random_game(rng, n_states=3, n_actions=(2, 3), gamma=0.8):
    n_joint = int(np.prod(n_actions))
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_joint))
    reward = rng.uniform(-1.0, 1.0, size=(len(n_actions), n_states, n_joint))
    rho = rng.dirichlet(np.ones(n_states))
    return make_game(transition, reward, gamma, rho, 1.0, n_actions)


@pytest.fixture
def two_player():
    return load_game(bundled_game_path())


@pytest.fixture
def box_space(two_player):
    return ParamSpace.for_game(two_player, "two_action_box", ALPHA)


@pytest.fixture
def zero_game(two_player):
    return two_player.with_rewards(np.zeros_like(two_player.reward), reward_bound=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def write_game(tmp_path):
    """Return a helper that writes a game dict to YAML and returns the path."""
    def _write(data: dict, name: str = "game.yaml"):
        path = tmp_path / name
        path.write_text(yaml.dump(data, default_flow_style=None, sort_keys=False))
        return path
    return _write


@pytest.fixture
def two_player_data():
    """The bundled game as a plain dict, for editing in tests."""
    with open(bundled_game_path()) as f:
        return yaml.safe_load(f)


@pytest.fixture
def single_state(two_player):
    """The bundled stage game repeated in one absorbing state."""
    transition = np.ones((1, 4, 1))
    return make_game(transition, two_player.reward[:, :1, :], gamma=GAMMA, reward_bound=4.0, n_actions=(2, 2))
