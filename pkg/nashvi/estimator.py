"""
Monte-Carlo G(PO)MDP estimation of the pseudo gradient.

One estimator call consumes a single uniform block of shape (K1, T+1, N+1):
row j drives trajectory j, column 0 of step l draws the state (initial state
at l = 0, transition otherwise) and column 1+i draws agent i's action. Rows
are independent, so any split of rows across threads produces the same
per-trajectory contributions, and the final average is a fixed-order reduction.
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from nashvi.exceptions import DomainError, EstimationError
from nashvi.game import TabularGame
from nashvi.policy import ParamSpace, PolicyParams, action_probs, joint_action_probs, prob_jacobian
from nashvi.util import STREAM_ESTIMATOR, format_float, joint_table, substream

logger = logging.getLogger(__name__)

MAX_ENUMERATED_PATHS = 1_000_000
MIN_ROWS_PER_THREAD = 64


@dataclass(frozen=True, eq=False)
class Trajectory:
    """(state, joint action, reward vector) for steps 0..T."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    key: tuple = ()

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    def __len__(self) -> int:
        return len(self.states)


@dataclass(frozen=True, eq=False)
class GradientEstimate:
    """
    Average of K1 per-trajectory G(PO)MDP contributions.

    ``field`` is the estimated F = -grad J, ``std`` the per-coordinate sample
    standard deviation of single-trajectory contributions (standard error is
    std / sqrt(K1)). ``score_max[i]`` is the largest single-step score norm seen
    for agent i and ``contribution_max[i]`` the largest per-trajectory
    contribution norm of agent i's block.
    """

    field: np.ndarray
    std: np.ndarray
    T: int
    K1: int
    score_max: np.ndarray
    contribution_max: np.ndarray
    key: tuple = ()
    trajectories: Optional[list[Trajectory]] = None

    @property
    def gradient(self) -> np.ndarray:
        return -self.field

    @property
    def stderr(self) -> np.ndarray:
        return self.std / np.sqrt(self.K1)

    def agent_gradient(self, space: ParamSpace, i: int) -> np.ndarray:
        return self.gradient[space.agent_slice(i)]


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

def _inverse_cdf(rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise categorical draw: first index whose cumulative mass exceeds u * total."""
    cdf = np.cumsum(rows, axis=1)
    idx = (cdf <= (u * cdf[:, -1])[:, None]).sum(axis=1)
    return np.minimum(idx, rows.shape[1] - 1)


def _simulate(game: TabularGame, params: PolicyParams, uniforms: np.ndarray):
    n_rows, steps, _ = uniforms.shape
    n_agents = game.n_agents
    probs = [action_probs(params, i) for i in range(n_agents)]
    strides = np.concatenate([[1], np.cumprod(game.n_actions[:-1])]).astype(np.intp)

    states = np.empty((n_rows, steps), dtype=np.intp)
    actions = np.empty((n_rows, steps, n_agents), dtype=np.intp)
    joints = np.empty((n_rows, steps), dtype=np.intp)

    s = _inverse_cdf(np.broadcast_to(game.initial_dist, (n_rows, game.n_states)), uniforms[:, 0, 0])
    for l in range(steps):
        if l > 0:
            s = _inverse_cdf(game.transition[s, joints[:, l - 1]], uniforms[:, l, 0])
        states[:, l] = s
        for i in range(n_agents):
            actions[:, l, i] = _inverse_cdf(probs[i][s], uniforms[:, l, 1 + i])
        joints[:, l] = actions[:, l] @ strides
    return states, actions, joints


def rollout(game: TabularGame, params: PolicyParams, T: int, rng: np.random.Generator) -> Trajectory:
    """Simulate one trajectory of T+1 steps."""
    if T < 0:
        raise DomainError(f"Horizon T = {T} must be nonnegative")
    uniforms = rng.random((1, T + 1, game.n_agents + 1))
    states, actions, joints = _simulate(game, params, uniforms)
    rewards = game.reward[:, states[0], joints[0]].T
    return Trajectory(states[0], actions[0], rewards)


# ---------------------------------------------------------------------------
# G(PO)MDP
# ---------------------------------------------------------------------------

def _contributions(game, params, states, actions, joints):
    """Per-trajectory gradient contributions, shape (rows, space.size)."""
    space = params.space
    n_rows, steps = states.shape
    out = np.zeros((n_rows, space.size))
    score_max = np.zeros(game.n_agents)
    discounts = game.discount ** np.arange(steps)
    for i in range(game.n_agents):
        probs = action_probs(params, i)
        jac = prob_jacobian(space, i)
        block = out[:, space.agent_slice(i)]
        cumulative = np.zeros((n_rows, space.agent_dim(i)))
        for l in range(steps):
            s, a = states[:, l], actions[:, l, i]
            p = probs[s, a]
            if np.any(p <= 0.0):
                row = int(np.argmax(p <= 0.0))
                raise EstimationError(
                    f"Sampled action {a[row]} of agent {i} in state {s[row]} has probability {p[row]:g}"
                )
            score = jac[s, a] / p[:, None]
            score_max[i] = max(score_max[i], float(np.linalg.norm(score, axis=1).max()))
            cumulative += score
            block += cumulative * (discounts[l] * game.reward[i, s, joints[:, l]])[:, None]
    return out, score_max


def gpomdp_estimate(
    game: TabularGame,
    params: PolicyParams,
    T: int,
    K1: int,
    rng: np.random.Generator,
    threads: int = 1,
    key: tuple = (),
    keep_trajectories: bool = False,
) -> GradientEstimate:
    """
    Truncated G(PO)MDP estimate of the pseudo gradient from K1 trajectories of
    horizon T. Results depend only on the generator state, never on ``threads``.
    """
    if T < 0:
        raise DomainError(f"Horizon T = {T} must be nonnegative")
    if K1 < 1:
        raise DomainError(f"K1 = {K1} must be at least 1")
    params.check()

    uniforms = rng.random((K1, T + 1, game.n_agents + 1))
    states = np.empty((K1, T + 1), dtype=np.intp)
    actions = np.empty((K1, T + 1, game.n_agents), dtype=np.intp)
    joints = np.empty((K1, T + 1), dtype=np.intp)
    contributions = np.empty((K1, params.space.size))
    score_max = np.zeros(game.n_agents)

    def _chunk(rows: slice):
        st, ac, jo = _simulate(game, params, uniforms[rows])
        states[rows], actions[rows], joints[rows] = st, ac, jo
        contributions[rows], chunk_max = _contributions(game, params, st, ac, jo)
        return chunk_max

    n_chunks = max(1, min(int(threads), K1 // MIN_ROWS_PER_THREAD))
    bounds = np.linspace(0, K1, n_chunks + 1).astype(int)
    chunks = [slice(bounds[c], bounds[c + 1]) for c in range(n_chunks)]
    if n_chunks == 1:
        maxima = [_chunk(chunks[0])]
    else:
        with ThreadPoolExecutor(max_workers=n_chunks) as pool:
            maxima = list(pool.map(_chunk, chunks))
    for chunk_max in maxima:
        score_max = np.maximum(score_max, chunk_max)

    space = params.space
    contribution_max = np.array([
        float(np.linalg.norm(contributions[:, space.agent_slice(i)], axis=1).max())
        for i in range(game.n_agents)
    ])
    std = contributions.std(axis=0, ddof=1) if K1 > 1 else np.zeros(space.size)

    trajectories = None
    if keep_trajectories:
        trajectories = [
            Trajectory(states[j], actions[j], game.reward[:, states[j], joints[j]].T, key + (j,))
            for j in range(K1)
        ]

    return GradientEstimate(
        field=-contributions.mean(axis=0),
        std=std,
        T=T,
        K1=K1,
        key=key,
        score_max=score_max,
        contribution_max=contribution_max,
        trajectories=trajectories,
    )


def _score_table(params: PolicyParams) -> np.ndarray:
    """Concatenated per-agent scores for every (state, joint action), shape (S, J, size)."""
    space = params.space
    table = joint_table(space.n_actions)
    out = np.zeros((space.n_states, len(table), space.size))
    for i in range(space.n_agents):
        probs = action_probs(params, i)[:, table[:, i]]
        jac = prob_jacobian(space, i)[:, table[:, i]]
        with np.errstate(divide="ignore", invalid="ignore"):
            score = np.where(probs[..., None] > 0, jac / probs[..., None], 0.0)
        out[:, :, space.agent_slice(i)] = score
    return out


def truncated_gradient(game: TabularGame, params: PolicyParams, T: int) -> np.ndarray:
    """
    Exact expectation of the horizon-T G(PO)MDP estimator (returned as a field,
    -grad J_T) by enumerating every (state, joint action) path of length T+1.
    """
    n_paths = float(game.n_states * game.n_joint) ** (T + 1)
    if n_paths > MAX_ENUMERATED_PATHS:
        raise EstimationError(f"{n_paths:.0f} paths exceed the enumeration limit of {MAX_ENUMERATED_PATHS}")

    space = params.space
    policy = joint_action_probs(params)
    scores = _score_table(params)
    owner = np.concatenate([np.full(space.agent_dim(i), i) for i in range(space.n_agents)])
    coord_reward = game.reward[owner]  # (size, S, J)

    S, J = game.n_states, game.n_joint
    prob = (game.initial_dist[:, None] * policy).reshape(-1)
    last_s = np.repeat(np.arange(S), J)
    last_j = np.tile(np.arange(J), S)
    cumulative = scores[last_s, last_j]
    total = cumulative * coord_reward[:, last_s, last_j].T

    for l in range(1, T + 1):
        step = game.transition[last_s, last_j][:, :, None] * policy[None, :, :]  # (paths, S, J)
        prob = (prob[:, None, None] * step).reshape(-1)
        n_prev = len(last_s)
        last_s = np.tile(np.repeat(np.arange(S), J), n_prev)
        last_j = np.tile(np.arange(J), S * n_prev)
        cumulative = np.repeat(cumulative, S * J, axis=0) + scores[last_s, last_j]
        total = np.repeat(total, S * J, axis=0) + game.discount ** l * cumulative * coord_reward[:, last_s, last_j].T
        keep = prob > 0
        prob, last_s, last_j = prob[keep], last_s[keep], last_j[keep]
        cumulative, total = cumulative[keep], total[keep]

    return -(prob @ total)


def truncation_bound(n_agents: int, B_theta: float, reward_bound: float, gamma: float, T: int) -> float:
    """sigma_T = 2 N (B U)^2 [((T+1)/(1-gamma) + gamma/(1-gamma)^2) gamma^(T+1)]^2."""
    _check_bound_inputs(n_agents, B_theta, reward_bound, gamma)
    if T < 0:
        raise DomainError(f"Horizon T = {T} must be nonnegative")
    tail = ((T + 1) / (1.0 - gamma) + gamma / (1.0 - gamma) ** 2) * gamma ** (T + 1)
    return float(2.0 * n_agents * (B_theta * reward_bound) ** 2 * tail ** 2)


def error_bound(
    T: int, K1: int, delta: float, n_agents: int, B_theta: float, reward_bound: float, gamma: float
) -> float:
    """
    M(T, K1, delta): with probability at least 1 - delta/(4 K1) the squared
    estimation error ||F_hat - F||^2 stays below this value.
    """
    if not 0.0 < delta <= 1.0:
        raise DomainError(f"delta {delta} out of range (0, 1]")
    if K1 < 1:
        raise DomainError(f"K1 = {K1} must be at least 1")
    sigma = truncation_bound(n_agents, B_theta, reward_bound, gamma, T)
    spread = 16.0 * np.log(8.0 * K1 / delta) * n_agents * B_theta ** 2 * reward_bound ** 2 * gamma ** 2
    return float(sigma + spread / ((1.0 - gamma) ** 4 * K1))


def _check_bound_inputs(n_agents, B_theta, reward_bound, gamma) -> None:
    if not 0.0 < gamma < 1.0:
        raise DomainError(f"gamma {gamma} out of range (0, 1)")
    if n_agents < 1:
        raise DomainError(f"n_agents {n_agents} must be positive")
    for name, value in (("B_theta", B_theta), ("reward_bound", reward_bound)):
        if not value >= 0 or not np.isfinite(value):
            raise DomainError(f"{name} {value} must be finite and nonnegative")


# ---------------------------------------------------------------------------
# Field callable used by the solver
# ---------------------------------------------------------------------------

K1Rule = Union[int, str]


def resolve_k1(rule: K1Rule, k: int) -> int:
    """Trajectory count at outer iteration k: a fixed integer, or 'K+1' for k + 1."""
    if isinstance(rule, str):
        if rule.replace(" ", "").upper() != "K+1":
            raise DomainError(f"Unknown K1 rule '{rule}'")
        return k + 1
    return int(rule)


class EstimatedField:
    """
    theta -> F_hat(theta). Every call draws a fresh estimate from the substream
    (seed, STREAM_ESTIMATOR, k, call), where k is set by ``begin_outer`` and call
    counts calls within the current outer iteration.
    """

    def __init__(
        self,
        game: TabularGame,
        space: ParamSpace,
        T: int,
        K1: K1Rule,
        seed: int,
        threads: int = 1,
        log_limit: int = 0,
    ):
        self.game = game
        self.space = space
        self.T = int(T)
        self.K1 = K1
        self.seed = int(seed)
        self.threads = int(threads)
        self.k = 1
        self.call = 0
        self.evaluations = 0
        self.log_limit = int(log_limit)
        self.logged: list[Trajectory] = []
        self.last: Optional[GradientEstimate] = None

    def begin_outer(self, k: int) -> None:
        self.k = int(k)
        self.call = 0

    def __call__(self, theta) -> np.ndarray:
        params = theta if isinstance(theta, PolicyParams) else PolicyParams(self.space, theta)
        key = (self.k, self.call)
        rng = substream(self.seed, STREAM_ESTIMATOR, *key)
        keep = len(self.logged) < self.log_limit
        estimate = gpomdp_estimate(
            self.game, params, self.T, resolve_k1(self.K1, self.k), rng,
            threads=self.threads, key=key, keep_trajectories=keep,
        )
        if keep:
            self.logged.extend(estimate.trajectories[: self.log_limit - len(self.logged)])
        self.call += 1
        self.evaluations += 1
        self.last = estimate
        return estimate.field


def write_trajectories(trajectories: Iterable[Trajectory], path: Path) -> int:
    """
    CSV log with columns outer, call, trajectory_id, step, state, action_1..N,
    reward_1..N. Returns the number of trajectories written.
    """
    count = 0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        header_written = False
        for traj in trajectories:
            n_agents = traj.actions.shape[1]
            if not header_written:
                writer.writerow(
                    ["outer", "call", "trajectory_id", "step", "state"]
                    + [f"action_{i + 1}" for i in range(n_agents)]
                    + [f"reward_{i + 1}" for i in range(n_agents)]
                )
                header_written = True
            if len(traj.key) == 3:
                outer, call, tid = traj.key
            else:
                outer, call, tid = "", "", count
            for l in range(len(traj)):
                writer.writerow(
                    [outer, call, tid, l, int(traj.states[l])]
                    + [int(a) for a in traj.actions[l]]
                    + [format_float(r) for r in traj.rewards[l]]
                )
            count += 1
    logger.info("Wrote %d trajectories to %s", count, path)
    return count
