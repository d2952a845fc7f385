"""
Nash gaps and variational-inequality diagnostics.

Best responses are exact: with the opponents fixed, agent i faces an MDP, and
its smoothed action distributions (1-alpha) x + alpha * uniform turn into an
equivalent MDP over deterministic rules, solved by policy iteration.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from nashvi.exact import evaluate
from nashvi.exceptions import DomainError, PolicyDomainError
from nashvi.game import TabularGame
from nashvi.policy import (
    ParamSpace,
    PolicyParams,
    grid_points,
    joint_action_probs,
    linear_minimum,
    random_params,
    vertex_params,
)
from nashvi.util import STREAM_SAMPLING, compensated_cumsum, substream

logger = logging.getLogger(__name__)

GAP_TOLERANCE = 1e-9
MAX_PROFILES = 4096
MAX_PI_ITERATIONS = 1000


# ---------------------------------------------------------------------------
# Best responses
# ---------------------------------------------------------------------------

def agent_mdp(game: TabularGame, params: PolicyParams, i: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Agent i's MDP against the fixed opponents, already smoothed by the
    parameterization: reward (S, A_i) and kernel (S, A_i, S).
    """
    opponents = joint_action_probs(params, skip=i)
    own = np.zeros((game.n_joint, game.n_actions[i]))
    own[np.arange(game.n_joint), game.joint_table[:, i]] = 1.0
    weights = opponents[:, :, None] * own[None, :, :]  # (S, J, A_i)
    reward = np.einsum("sjb,sj->sb", weights, game.reward[i])
    kernel = np.einsum("sjb,sjt->sbt", weights, game.transition)
    alpha = params.space.alpha
    if alpha > 0:
        reward = (1.0 - alpha) * reward + alpha * reward.mean(axis=1, keepdims=True)
        kernel = (1.0 - alpha) * kernel + alpha * kernel.mean(axis=1, keepdims=True)
    return reward, kernel


def policy_iteration(reward: np.ndarray, kernel: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Optimal deterministic rule and its values. Ties go to the lowest action index."""
    n_states = reward.shape[0]
    rows = np.arange(n_states)
    rule = np.zeros(n_states, dtype=np.intp)
    for _ in range(MAX_PI_ITERATIONS):
        values = np.linalg.solve(np.eye(n_states) - gamma * kernel[rows, rule], reward[rows, rule])
        q = reward + gamma * kernel @ values
        best = np.argmax(q, axis=1)
        keep = q[rows, rule] >= q[rows, best] - 1e-12
        new_rule = np.where(keep, rule, best)
        if np.array_equal(new_rule, rule):
            return rule, values
        rule = new_rule
    logger.warning("Policy iteration did not settle in %d sweeps", MAX_PI_ITERATIONS)
    return rule, values


def _agent_vertex(space: ParamSpace, i: int, rule: Sequence[int]) -> np.ndarray:
    rule = np.asarray(rule, dtype=np.intp)
    if space.is_box:
        return (rule == 0).astype(float)
    block = np.zeros(space.block_shape(i))
    block[np.arange(space.n_states), rule] = 1.0
    return block.reshape(-1)


def best_response(game: TabularGame, params: PolicyParams, i: int) -> tuple[float, PolicyParams]:
    """sup over Theta_i of J_i(theta_i, theta_-i), attained at a (smoothed) vertex."""
    if not 0 <= i < game.n_agents:
        raise IndexError(f"Agent {i} out of range ({game.n_agents} agents)")
    reward, kernel = agent_mdp(game, params, i)
    rule, _ = policy_iteration(reward, kernel, game.discount)
    reply = params.with_block(i, _agent_vertex(params.space, i, rule))
    return float(evaluate(game, reply).total_reward[i]), reply


def best_response_value(game: TabularGame, params: PolicyParams, i: int) -> float:
    return best_response(game, params, i)[0]


def agent_rules(space: ParamSpace, i: int):
    """Every deterministic rule of agent i, as per-state action tuples."""
    return itertools.product(range(space.n_actions[i]), repeat=space.n_states)


def best_response_by_enumeration(game: TabularGame, params: PolicyParams, i: int) -> float:
    """max of J_i over agent i's deterministic rules (exhaustive)."""
    space = params.space
    count = space.n_actions[i] ** space.n_states
    if count > MAX_PROFILES:
        raise DomainError(f"{count} rules exceed the enumeration limit of {MAX_PROFILES}")
    return max(
        float(evaluate(game, params.with_block(i, _agent_vertex(space, i, rule))).total_reward[i])
        for rule in agent_rules(space, i)
    )


# ---------------------------------------------------------------------------
# Gaps
# ---------------------------------------------------------------------------

@dataclass
class NashGap:
    best_response: np.ndarray
    value: np.ndarray
    gaps: np.ndarray

    @property
    def sup_gap(self) -> float:
        return float(self.gaps.max())


def nash_gap(game: TabularGame, params: PolicyParams) -> NashGap:
    value = evaluate(game, params).total_reward
    br = np.array([best_response_value(game, params, i) for i in range(game.n_agents)])
    return NashGap(best_response=br, value=np.array(value), gaps=br - value)


def weighted_gap(gaps: Sequence[float], exponent: float) -> np.ndarray:
    """eps_K = sum_{k<=K} k^e g(k) / sum_{k<=K} k^e for every K, with compensated sums."""
    gaps = np.asarray(gaps, dtype=float)
    if gaps.size == 0:
        raise DomainError("gap sequence is empty")
    weights = np.arange(1, len(gaps) + 1, dtype=float) ** exponent
    return compensated_cumsum(weights * gaps) / compensated_cumsum(weights)


@dataclass
class GapReport:
    """Per-iterate gaps for theta_1..theta_K and their weighted aggregates."""

    best_response: np.ndarray   # (K, N)
    value: np.ndarray           # (K, N)
    gaps: np.ndarray            # (K, N)
    sup_gap: np.ndarray         # (K,)
    eps: np.ndarray             # (K,) weighted sup-gap
    eps_agentwise: np.ndarray   # (K,) max_i of weighted gap_i
    exponent: float

    @property
    def K(self) -> int:
        return len(self.sup_gap)


def gap_report(game: TabularGame, space: ParamSpace, thetas: Sequence[np.ndarray], exponent: float) -> GapReport:
    results = [nash_gap(game, PolicyParams(space, theta)) for theta in thetas]
    br = np.array([r.best_response for r in results])
    value = np.array([r.value for r in results])
    gaps = br - value
    sup_gap = gaps.max(axis=1)
    agentwise = np.max([weighted_gap(gaps[:, i], exponent) for i in range(game.n_agents)], axis=0)
    return GapReport(
        best_response=br,
        value=value,
        gaps=gaps,
        sup_gap=sup_gap,
        eps=weighted_gap(sup_gap, exponent),
        eps_agentwise=agentwise,
        exponent=exponent,
    )


# ---------------------------------------------------------------------------
# Variational-inequality diagnostics
# ---------------------------------------------------------------------------

def svi_prime_gap(game: TabularGame, params: PolicyParams) -> float:
    """sup over Theta of <F(theta_hat), theta_hat - theta>; zero at first-order equilibria."""
    F = evaluate(game, params).field
    low, _ = linear_minimum(params.space, F)
    return float(F @ params.theta - low)


@dataclass
class MviResult:
    residual: float
    worst_point: Optional[np.ndarray]
    n_points: int


def mvi_residual(
    game: TabularGame,
    candidate: PolicyParams,
    points: Optional[np.ndarray] = None,
    grid: int = 9,
    n_random: int = 1000,
    seed: int = 0,
) -> MviResult:
    """
    min over sample points theta of <F(theta), theta - candidate>. A
    nonnegative result means the candidate solves the Minty inequality on the
    sample. Points default to a regular grid plus uniform random points.
    """
    candidate.check()
    space = candidate.space
    if points is None:
        samples = []
        try:
            samples.append(grid_points(space, grid))
        except PolicyDomainError as exc:
            logger.warning("Skipping grid: %s", exc)
        if n_random > 0:
            rng = substream(seed, STREAM_SAMPLING)
            samples.append(np.array([random_params(space, rng).theta for _ in range(n_random)]))
        points = np.concatenate(samples) if samples else np.zeros((0, space.size))

    residual, worst = 0.0, None
    for theta in points:
        F = evaluate(game, PolicyParams(space, theta)).field
        value = float(F @ (theta - candidate.theta))
        if worst is None or value < residual:
            residual, worst = value, np.array(theta)
    if worst is not None and residual < -GAP_TOLERANCE:
        logger.info("Minty inequality fails at %s (%.3e)", worst.tolist(), residual)
    return MviResult(residual=residual if worst is not None else 0.0, worst_point=worst, n_points=len(points))


@dataclass
class DominationResult:
    holds: bool
    slack: float
    per_agent: np.ndarray


def gradient_domination_check(game: TabularGame, params: PolicyParams, M1: float) -> DominationResult:
    """
    gap_i <= M1 * sup_{theta_bar_i} <F_i(theta), theta_i - theta_bar_i> for every
    agent. The slack is the right side minus the left, worst over agents.
    """
    if not M1 > 0:
        raise DomainError(f"M1 {M1} must be positive")
    space = params.space
    F = evaluate(game, params).field
    gaps = nash_gap(game, params).gaps
    slacks = np.empty(game.n_agents)
    for i in range(game.n_agents):
        Fi = F[space.agent_slice(i)]
        low, _ = linear_minimum(space, Fi, agent=i)
        linearized = float(Fi @ params.theta[space.agent_slice(i)] - low)
        slacks[i] = M1 * linearized - gaps[i]
    worst = float(slacks.min())
    return DominationResult(holds=worst >= -GAP_TOLERANCE, slack=worst, per_agent=slacks)


# ---------------------------------------------------------------------------
# Pure equilibria
# ---------------------------------------------------------------------------

@dataclass
class PureEquilibrium:
    rules: tuple[tuple[int, ...], ...]
    params: PolicyParams
    values: np.ndarray
    sup_gap: float


def pure_equilibria(game: TabularGame, space: ParamSpace, tol: float = GAP_TOLERANCE) -> list[PureEquilibrium]:
    """Deterministic (smoothed-vertex) profiles whose sup-gap is at most tol."""
    count = 1
    for i in range(space.n_agents):
        count *= space.n_actions[i] ** space.n_states
    if count > MAX_PROFILES:
        raise DomainError(f"{count} profiles exceed the enumeration limit of {MAX_PROFILES}")

    found = []
    for rules in itertools.product(*(agent_rules(space, i) for i in range(space.n_agents))):
        params = vertex_params(space, rules)
        gap = nash_gap(game, params)
        if gap.sup_gap <= tol:
            found.append(PureEquilibrium(tuple(rules), params, gap.value, gap.sup_gap))
    logger.info("Enumerated %d profiles, %d pure equilibria", count, len(found))
    return found
