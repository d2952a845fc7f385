"""
Exact evaluation of a policy profile by dynamic programming.

Everything for one theta hangs off a FieldEvaluation, which factorizes
I - gamma P^pi once and reuses it for the value functions (column solves) and
for the discounted occupancy (a transposed solve).
"""

import csv
import logging
from functools import cached_property
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.linalg import LinAlgError, lu_factor, lu_solve

from nashvi.exceptions import DomainError, NumericError, SolverConfigError
from nashvi.game import TabularGame
from nashvi.policy import ParamSpace, PolicyParams, joint_action_probs, prob_jacobian
from nashvi.util import format_float

logger = logging.getLogger(__name__)


class FieldEvaluation:
    """Memoized V, Q, d, J and the pseudo gradient at a single theta."""

    def __init__(self, game: TabularGame, params: PolicyParams):
        self.game = game
        self.params = params

    @property
    def theta(self) -> np.ndarray:
        return self.params.theta

    @cached_property
    def policy(self) -> np.ndarray:
        """Joint product policy, shape (S, J)."""
        return joint_action_probs(self.params)

    @cached_property
    def kernel(self) -> np.ndarray:
        """P^pi(s'|s), shape (S, S)."""
        return np.einsum("sj,sjt->st", self.policy, self.game.transition)

    @cached_property
    def policy_reward(self) -> np.ndarray:
        """r_i^pi(s), shape (N, S)."""
        return np.einsum("sj,nsj->ns", self.policy, self.game.reward)

    @cached_property
    def _factor(self):
        system = np.eye(self.game.n_states) - self.game.discount * self.kernel
        try:
            return lu_factor(system, check_finite=True)
        except (LinAlgError, ValueError) as exc:
            raise NumericError(f"Factorization of I - gamma P^pi failed: {exc}") from exc

    @cached_property
    def value(self) -> np.ndarray:
        """V_i(s), shape (N, S)."""
        return _finite(lu_solve(self._factor, self.policy_reward.T).T, "value function")

    @cached_property
    def qvalue(self) -> np.ndarray:
        """Q_i(s, j), shape (N, S, J)."""
        future = np.einsum("sjt,nt->nsj", self.game.transition, self.value)
        return self.game.reward + self.game.discount * future

    @cached_property
    def occupancy(self) -> np.ndarray:
        """Normalized discounted state distribution d, shape (S,)."""
        d = (1.0 - self.game.discount) * lu_solve(self._factor, self.game.initial_dist, trans=1)
        return _finite(d, "occupancy")

    @cached_property
    def total_reward(self) -> np.ndarray:
        """J_i, shape (N,)."""
        return self.value @ self.game.initial_dist

    @cached_property
    def gradients(self) -> list[np.ndarray]:
        """Per-agent policy gradient of J_i with respect to theta_i."""
        game, space = self.game, self.params.space
        out = []
        for i in range(game.n_agents):
            opponents = joint_action_probs(self.params, skip=i)
            own = np.zeros((game.n_joint, game.n_actions[i]))
            own[np.arange(game.n_joint), game.joint_table[:, i]] = 1.0
            weighted = (opponents * self.qvalue[i]) @ own
            grad = np.einsum("s,sb,sbc->c", self.occupancy, weighted, prob_jacobian(space, i))
            out.append(grad / (1.0 - game.discount))
        return out

    @cached_property
    def field(self) -> np.ndarray:
        """F(theta) = (-grad_i J_i)_i, concatenated in agent order."""
        return _finite(-np.concatenate(self.gradients), "pseudo gradient")

    def bellman_residual(self) -> float:
        target = self.policy_reward + self.game.discount * self.value @ self.kernel.T
        return float(np.abs(self.value - target).max())

    def occupancy_residual(self) -> float:
        gamma = self.game.discount
        target = (1.0 - gamma) * self.game.initial_dist + gamma * self.occupancy @ self.kernel
        return float(np.abs(self.occupancy - target).max())

    def consistency_residual(self) -> float:
        """max |V_i(s) - sum_j pi(j|s) Q_i(s, j)|."""
        return float(np.abs(self.value - np.einsum("sj,nsj->ns", self.policy, self.qvalue)).max())


def _finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"Non-finite {what}")
    return arr


def evaluate(game: TabularGame, params: PolicyParams) -> FieldEvaluation:
    return FieldEvaluation(game, params)


def _check_agent(game: TabularGame, i: int) -> None:
    if not 0 <= i < game.n_agents:
        raise IndexError(f"Agent {i} out of range ({game.n_agents} agents)")


def induced_kernel(game: TabularGame, params: PolicyParams) -> np.ndarray:
    return evaluate(game, params).kernel


def value_function(game: TabularGame, params: PolicyParams, i: int) -> np.ndarray:
    _check_agent(game, i)
    return evaluate(game, params).value[i]


def action_value(game: TabularGame, params: PolicyParams, i: int) -> np.ndarray:
    _check_agent(game, i)
    return evaluate(game, params).qvalue[i]


def discounted_occupancy(game: TabularGame, params: PolicyParams) -> np.ndarray:
    return evaluate(game, params).occupancy


def total_reward(game: TabularGame, params: PolicyParams, i: int) -> float:
    _check_agent(game, i)
    return float(evaluate(game, params).total_reward[i])


def pseudo_gradient(game: TabularGame, params: PolicyParams) -> np.ndarray:
    return evaluate(game, params).field


# ---------------------------------------------------------------------------
# Field callables used by the solver
# ---------------------------------------------------------------------------

ThetaLike = Union[np.ndarray, PolicyParams]


class ExactField:
    """theta -> F(theta) by exact evaluation. Counts evaluations."""

    def __init__(self, game: TabularGame, space: ParamSpace):
        self.game = game
        self.space = space
        self.evaluations = 0

    def __call__(self, theta: ThetaLike) -> np.ndarray:
        params = theta if isinstance(theta, PolicyParams) else PolicyParams(self.space, theta)
        self.evaluations += 1
        return evaluate(self.game, params).field


class RegularizedField:
    """F_k(theta) = F(theta) + (theta - center) / beta."""

    def __init__(self, base, beta: float, center: np.ndarray):
        self.base = base
        self.beta = float(beta)
        self.center = np.asarray(center, dtype=float).copy()

    def __call__(self, theta: ThetaLike) -> np.ndarray:
        point = theta.theta if isinstance(theta, PolicyParams) else np.asarray(theta, dtype=float)
        return self.base(point) + (point - self.center) / self.beta


def regularized_field(base, beta: float, center: np.ndarray, L: Optional[float] = None) -> RegularizedField:
    """Build F_k, rejecting beta outside (0, 1/L)."""
    if not beta > 0:
        raise SolverConfigError([f"beta {beta} out of range (0, 1/L)"])
    if L is not None and beta * L >= 1.0:
        raise SolverConfigError([f"beta out of range: beta * L = {beta * L:g} >= 1"])
    return RegularizedField(base, beta, center)


def lipschitz_bound(reward_bound: float, L_theta: float, B_theta: float, n_agents: int, gamma: float) -> float:
    """
    L = sqrt(2 U_R^2 L_Theta^2 / (1-gamma)^6 + 2 (1+gamma)^2 U_R^2 N B_Theta^4 / (1-gamma)^6)
    for parameterizations whose score is bounded by B_Theta and L_Theta-Lipschitz.
    """
    if not 0.0 < gamma < 1.0:
        raise DomainError(f"gamma {gamma} out of range (0, 1)")
    if n_agents < 1:
        raise DomainError(f"n_agents {n_agents} must be positive")
    for name, value in (("reward_bound", reward_bound), ("L_theta", L_theta), ("B_theta", B_theta)):
        if not value >= 0 or not np.isfinite(value):
            raise DomainError(f"{name} {value} must be finite and nonnegative")
    scale = reward_bound ** 2 / (1.0 - gamma) ** 6
    return float(np.sqrt(2.0 * scale * L_theta ** 2 + 2.0 * (1.0 + gamma) ** 2 * scale * n_agents * B_theta ** 4))


def dump_values(evaluation: FieldEvaluation, path: Path) -> None:
    """Write V, Q and d to a long-format CSV (quantity, agent, state, joint_action, value)."""
    game = evaluation.game
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["quantity", "agent", "state", "joint_action", "value"])
        for s in range(game.n_states):
            writer.writerow(["d", "", s, "", format_float(evaluation.occupancy[s])])
        for i in range(game.n_agents):
            for s in range(game.n_states):
                writer.writerow(["V", i, s, "", format_float(evaluation.value[i, s])])
            for s in range(game.n_states):
                for j in range(game.n_joint):
                    writer.writerow(["Q", i, s, j, format_float(evaluation.qvalue[i, s, j])])
    logger.info("Wrote value dump to %s", path)
