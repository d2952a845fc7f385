"""
Finite discounted stochastic games.

A game holds a time-homogeneous kernel ``transition[s, j, s']`` and per-agent
rewards ``reward[i, s, j]``, where ``j`` is the flattened joint action with
agent 0 varying fastest (see ``nashvi.util.joint_table``).

Game file format (YAML, 0-based indices):
    n_agents: 2
    n_states: 2
    n_actions: [2, 2]
    gamma: 0.9
    rho: [0.5, 0.5]
    transitions:
      - {state: 0, actions: [0, 1], probs: [0.6, 0.4]}
      - {state: 1, probs: [0.7, 0.3]}      # no actions = every joint action
    rewards:
      - {agent: 0, actions: [0, 0], value: 3}   # no state = every state
    reward_bound: 4
    defaults:                              # optional run defaults
      policy: {kind: two_action_box, alpha: 0.01}
      solver: {L: 6.12}
"""

from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from nashvi.exceptions import GameConfigError
from nashvi.util import Report, joint_index, joint_table

ROW_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class TabularGame:
    """Immutable finite discounted stochastic game."""

    n_states: int
    n_actions: tuple[int, ...]
    transition: np.ndarray
    reward: np.ndarray
    discount: float
    initial_dist: np.ndarray
    reward_bound: float
    name: str = ""
    defaults: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "n_actions", tuple(int(m) for m in self.n_actions))
        for attr in ("transition", "reward", "initial_dist"):
            arr = np.array(getattr(self, attr), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, attr, arr)

    @property
    def n_agents(self) -> int:
        return len(self.n_actions)

    @property
    def n_joint(self) -> int:
        return int(np.prod(self.n_actions))

    @cached_property
    def joint_table(self) -> np.ndarray:
        table = joint_table(self.n_actions)
        table.flags.writeable = False
        return table

    def joint_index(self, actions) -> int:
        return joint_index(actions, self.n_actions)

    def with_rewards(self, reward: np.ndarray, reward_bound: Optional[float] = None) -> "TabularGame":
        """Copy of this game with a different reward tensor."""
        bound = reward_bound if reward_bound is not None else max(float(np.abs(reward).max()), self.reward_bound)
        return TabularGame(
            self.n_states, self.n_actions, self.transition, reward, self.discount,
            self.initial_dist, bound, self.name, dict(self.defaults),
        )


def validate_game(game: TabularGame) -> Report:
    """Check every TabularGame invariant. Never raises."""
    report = Report(name="game")
    n_states, n_agents = game.n_states, game.n_agents

    if n_agents < 1:
        report.add("n_agents must be positive")
    if n_states < 1:
        report.add("n_states must be positive")
    for i, m in enumerate(game.n_actions):
        if m < 1:
            report.add(f"n_actions[{i}] = {m} must be positive")
    if not report.ok:
        return report

    n_joint = game.n_joint
    if game.transition.shape != (n_states, n_joint, n_states):
        report.add(
            f"transition shape {game.transition.shape} != {(n_states, n_joint, n_states)}"
        )
    if game.reward.shape != (n_agents, n_states, n_joint):
        report.add(f"reward shape {game.reward.shape} != {(n_agents, n_states, n_joint)}")
    if game.initial_dist.shape != (n_states,):
        report.add(f"initial_dist shape {game.initial_dist.shape} != {(n_states,)}")
    if not report.ok:
        return report

    # NaN fails every comparison below, so non-finite entries are reported first
    finite_rows = np.isfinite(game.transition).all(axis=2)
    for s, j in zip(*np.nonzero(~finite_rows)):
        report.add(f"transition[{s}, {j}]: non-finite probability")
    for s, j in zip(*np.nonzero((game.transition < 0).any(axis=2) & finite_rows)):
        report.add(f"transition[{s}, {j}]: negative probability")
    sums = game.transition.sum(axis=2)
    for s, j in zip(*np.nonzero((np.abs(sums - 1.0) > ROW_TOLERANCE) & finite_rows)):
        report.add(f"transition[{s}, {j}]: row sum {sums[s, j]:.15g} != 1")

    if not np.isfinite(game.initial_dist).all():
        report.add("initial_dist: non-finite probability")
    else:
        if (game.initial_dist < 0).any():
            report.add("initial_dist: negative probability")
        if abs(game.initial_dist.sum() - 1.0) > ROW_TOLERANCE:
            report.add(f"initial_dist: sum {game.initial_dist.sum():.15g} != 1")

    if not np.isfinite(game.reward_bound) or not game.reward_bound > 0:
        report.add(f"reward_bound {game.reward_bound} must be positive and finite")
    finite_reward = np.isfinite(game.reward)
    for i, s, j in zip(*np.nonzero(~finite_reward)):
        report.add(f"reward[{i}, {s}, {j}] = {game.reward[i, s, j]} is not finite")
    over = finite_reward & (np.abs(game.reward) > game.reward_bound)
    for i, s, j in zip(*np.nonzero(over)):
        report.add(
            f"reward[{i}, {s}, {j}] = {game.reward[i, s, j]:g} exceeds reward_bound {game.reward_bound:g}"
        )

    if not 0.0 < game.discount < 1.0:
        report.add(f"discount {game.discount} out of range (0, 1)")
    return report


def _draw(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(k, len(probs) - 1)


def sample_transition(game: TabularGame, s: int, a, rng: np.random.Generator) -> int:
    """Draw s' ~ transition(s, a). ``a`` is a joint index or a per-agent action tuple."""
    if not 0 <= s < game.n_states:
        raise IndexError(f"State {s} out of range ({game.n_states} states)")
    j = a if np.isscalar(a) else game.joint_index(a)
    if not 0 <= j < game.n_joint:
        raise IndexError(f"Joint action {j} out of range ({game.n_joint} joint actions)")
    return _draw(game.transition[s, j], rng)


def sample_initial(game: TabularGame, rng: np.random.Generator) -> int:
    """Draw s(0) ~ initial_dist."""
    return _draw(game.initial_dist, rng)


# ---------------------------------------------------------------------------
# Game files
# ---------------------------------------------------------------------------

def bundled_game_path(name: str = "two_player") -> Path:
    """Path of a game file shipped inside the package."""
    return Path(str(resources.files("nashvi") / "games" / f"{name}.yaml"))


def _require(data: dict, key: str, issues: list[str]) -> Any:
    if key not in data:
        issues.append(f"missing field '{key}'")
        return None
    return data[key]


def load_game(path: Path) -> TabularGame:
    """
    Load and validate a YAML game file. Rows within 1e-12 of summing to one
    are renormalized; anything else invalid raises GameConfigError.
    """
    path = Path(path)
    if not path.is_file():
        raise GameConfigError(path, ["file does not exist"])
    try:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise GameConfigError(path, [f"YAML parse error: {exc}"])
    if not isinstance(data, dict):
        raise GameConfigError(path, ["top level must be a mapping"])

    issues: list[str] = []
    n_agents = _require(data, "n_agents", issues)
    n_states = _require(data, "n_states", issues)
    n_actions = _require(data, "n_actions", issues)
    gamma = _require(data, "gamma", issues)
    rho = _require(data, "rho", issues)
    if issues:
        raise GameConfigError(path, issues)

    n_actions = tuple(int(m) for m in n_actions)
    if int(n_agents) != len(n_actions):
        raise GameConfigError(path, [f"n_agents = {n_agents} but n_actions has {len(n_actions)} entries"])
    n_states = int(n_states)
    if n_states < 1 or any(m < 1 for m in n_actions):
        raise GameConfigError(path, ["n_states and every n_actions entry must be positive"])
    if len(rho) != n_states:
        raise GameConfigError(path, [f"rho has {len(rho)} entries, expected {n_states}"])

    table = joint_table(n_actions)
    n_joint = len(table)
    transition = np.zeros((n_states, n_joint, n_states))
    given = np.zeros((n_states, n_joint), dtype=bool)
    reward = np.zeros((len(n_actions), n_states, n_joint))

    def _joint(entry, where) -> list[int]:
        if "actions" not in entry:
            return list(range(n_joint))
        try:
            return [joint_index(entry["actions"], n_actions)]
        except IndexError as exc:
            issues.append(f"{where}: {exc}")
            return []

    def _states(entry, where) -> list[int]:
        if "state" not in entry:
            return list(range(n_states))
        s = int(entry["state"])
        if not 0 <= s < n_states:
            issues.append(f"{where}: state {s} out of range")
            return []
        return [s]

    for n, entry in enumerate(data.get("transitions") or []):
        where = f"transitions[{n}]"
        probs = np.asarray(entry.get("probs", []), dtype=float)
        if probs.shape != (n_states,):
            issues.append(f"{where}: probs must have {n_states} entries")
            continue
        for s in _states(entry, where):
            for j in _joint(entry, where):
                transition[s, j] = probs
                given[s, j] = True

    for n, entry in enumerate(data.get("rewards") or []):
        where = f"rewards[{n}]"
        i = int(entry.get("agent", -1))
        if not 0 <= i < len(n_actions):
            issues.append(f"{where}: agent {entry.get('agent')} out of range")
            continue
        for s in _states(entry, where):
            for j in _joint(entry, where):
                reward[i, s, j] = float(entry.get("value", 0.0))

    for s, j in zip(*np.nonzero(~given)):
        issues.append(f"missing transition row for state {s}, actions {list(table[j])}")
    if issues:
        raise GameConfigError(path, issues)

    sums = transition.sum(axis=2, keepdims=True)
    close = np.abs(sums - 1.0) <= ROW_TOLERANCE
    with np.errstate(divide="ignore", invalid="ignore"):
        transition = np.where(close, transition / sums, transition)
    rho = np.asarray(rho, dtype=float)
    if abs(rho.sum() - 1.0) <= ROW_TOLERANCE:
        rho = rho / rho.sum()

    bound = data.get("reward_bound")
    if bound is None:
        bound = float(np.abs(reward).max()) or 1.0

    game = TabularGame(
        n_states=n_states,
        n_actions=n_actions,
        transition=transition,
        reward=reward,
        discount=float(gamma),
        initial_dist=rho,
        reward_bound=float(bound),
        name=str(data.get("name", path.stem)),
        defaults=data.get("defaults") or {},
    )
    report = validate_game(game)
    if not report.ok:
        raise GameConfigError(path, report.issues)
    return game
