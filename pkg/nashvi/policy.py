"""
Parameterized stationary policies and the admissible parameter set.

Three affine parameterizations are supported:

    direct          pi_i(a|s) = theta_i[s, a],                theta_i[s] on the simplex
    alpha_greedy    pi_i(a|s) = (1-alpha) theta_i[s, a] + alpha/|A_i|
    two_action_box  pi_i(0|s) = (1-alpha) theta_i[s] + alpha/2,
                    pi_i(1|s) = (1-alpha) (1-theta_i[s]) + alpha/2,  theta_i[s] in [0, 1]

Parameters of all agents live in one flat vector, agent by agent, each agent's
block in row-major (state, action) order.
"""

import itertools
from dataclasses import dataclass
from enum import Enum
from functools import cached_property, lru_cache
from typing import Optional

import numpy as np

from nashvi.exceptions import PolicyDomainError, ZeroProbabilityError
from nashvi.util import joint_table

FEASIBILITY_TOLERANCE = 1e-10


class Kind(str, Enum):
    DIRECT = "direct"
    ALPHA_GREEDY = "alpha_greedy"
    TWO_ACTION_BOX = "two_action_box"


@dataclass(frozen=True)
class ParamSpace:
    """Product of per-state simplices or unit intervals, one factor per agent."""

    kind: Kind
    n_states: int
    n_actions: tuple[int, ...]
    alpha: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "n_actions", tuple(int(m) for m in self.n_actions))
        alpha = float(self.alpha)
        if self.kind is Kind.DIRECT:
            alpha = 0.0
        elif self.kind is Kind.ALPHA_GREEDY and not 0.0 < alpha < 1.0:
            raise PolicyDomainError(f"alpha_greedy needs alpha in (0, 1), got {alpha}")
        elif self.kind is Kind.TWO_ACTION_BOX:
            if not 0.0 <= alpha < 1.0:
                raise PolicyDomainError(f"two_action_box needs alpha in [0, 1), got {alpha}")
            if any(m != 2 for m in self.n_actions):
                raise PolicyDomainError(
                    f"two_action_box needs exactly 2 actions per agent, got {list(self.n_actions)}"
                )
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def for_game(cls, game, kind, alpha: float = 0.0) -> "ParamSpace":
        return cls(Kind(kind), game.n_states, game.n_actions, alpha)

    @property
    def is_box(self) -> bool:
        return self.kind is Kind.TWO_ACTION_BOX

    @property
    def n_agents(self) -> int:
        return len(self.n_actions)

    def agent_dim(self, i: int) -> int:
        return self.n_states if self.is_box else self.n_states * self.n_actions[i]

    def block_shape(self, i: int) -> tuple[int, ...]:
        return (self.n_states,) if self.is_box else (self.n_states, self.n_actions[i])

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        return tuple(np.concatenate([[0], np.cumsum([self.agent_dim(i) for i in range(self.n_agents)])]))

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    def agent_slice(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def split(self, theta: np.ndarray) -> list[np.ndarray]:
        """Per-agent views of a flat vector, shaped like block_shape(i)."""
        return [theta[self.agent_slice(i)].reshape(self.block_shape(i)) for i in range(self.n_agents)]

    def agent_diameter(self, i: int) -> float:
        per_state = 1.0 if self.is_box else (np.sqrt(2.0) if self.n_actions[i] > 1 else 0.0)
        return float(per_state * np.sqrt(self.n_states))

    @property
    def diameter(self) -> float:
        """D = sqrt(sum_i D_i^2)."""
        return float(np.sqrt(sum(self.agent_diameter(i) ** 2 for i in range(self.n_agents))))

    def score_bound(self) -> float:
        """
        Closed-form sup over Theta of ||grad log pi||. Each score vector has a
        single nonzero entry (1-alpha)/pi_min, so the bound is (1-alpha)/pi_min.
        Infinite for the direct kind.
        """
        if self.kind is Kind.DIRECT:
            return float("inf")
        if self.is_box:
            return (1.0 - self.alpha) / (self.alpha / 2.0) if self.alpha > 0 else float("inf")
        return max((1.0 - self.alpha) / (self.alpha / m) for m in self.n_actions)


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """A point of the parameter space. Immutable."""

    space: ParamSpace
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        if theta.shape != (self.space.size,):
            raise PolicyDomainError(
                f"Parameter vector has {theta.size} entries, space needs {self.space.size}"
            )
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    @property
    def kind(self) -> Kind:
        return self.space.kind

    def block(self, i: int) -> np.ndarray:
        return self.theta[self.space.agent_slice(i)].reshape(self.space.block_shape(i))

    def with_block(self, i: int, block: np.ndarray) -> "PolicyParams":
        """Copy with agent i's parameters replaced."""
        theta = self.theta.copy()
        theta[self.space.agent_slice(i)] = np.asarray(block, dtype=float).reshape(-1)
        return PolicyParams(self.space, theta)

    def violations(self, tol: float = FEASIBILITY_TOLERANCE) -> list[str]:
        issues = []
        for i in range(self.space.n_agents):
            block = self.block(i)
            if self.space.is_box:
                for s in np.nonzero((block < -tol) | (block > 1 + tol))[0]:
                    issues.append(f"theta[{i}][{s}] = {block[s]:g} outside [0, 1]")
            else:
                bad = (block < -tol).any(axis=1) | (np.abs(block.sum(axis=1) - 1.0) > tol)
                for s in np.nonzero(bad)[0]:
                    issues.append(f"theta[{i}][{s}] not on the probability simplex")
        return issues

    def is_feasible(self, tol: float = FEASIBILITY_TOLERANCE) -> bool:
        return not self.violations(tol)

    def check(self) -> None:
        issues = self.violations()
        if issues:
            raise PolicyDomainError("; ".join(issues))


# ---------------------------------------------------------------------------
# Probabilities and derivatives
# ---------------------------------------------------------------------------

def action_probs(params: PolicyParams, i: int) -> np.ndarray:
    """pi_i(a|s) for every (s, a), shape (n_states, n_actions[i])."""
    space = params.space
    block = params.block(i)
    if space.is_box:
        p0 = (1.0 - space.alpha) * block + space.alpha / 2.0
        return np.stack([p0, (1.0 - space.alpha) * (1.0 - block) + space.alpha / 2.0], axis=1)
    return (1.0 - space.alpha) * block + space.alpha / space.n_actions[i]


def _check_index(space: ParamSpace, i: int, s: int, a: Optional[int] = None) -> None:
    if not 0 <= i < space.n_agents:
        raise IndexError(f"Agent {i} out of range ({space.n_agents} agents)")
    if not 0 <= s < space.n_states:
        raise IndexError(f"State {s} out of range ({space.n_states} states)")
    if a is not None and not 0 <= a < space.n_actions[i]:
        raise IndexError(f"Action {a} out of range for agent {i}")


def action_prob(params: PolicyParams, i: int, s: int, a: int) -> float:
    _check_index(params.space, i, s, a)
    params.check()
    return float(action_probs(params, i)[s, a])


@lru_cache(maxsize=64)
def prob_jacobian(space: ParamSpace, i: int) -> np.ndarray:
    """d pi_i(a|s) / d theta_i[c] as an array of shape (n_states, n_actions[i], agent_dim(i))."""
    n_states, m = space.n_states, space.n_actions[i]
    jac = np.zeros((n_states, m, space.agent_dim(i)))
    scale = 1.0 - space.alpha
    for s in range(n_states):
        if space.is_box:
            jac[s, 0, s] = scale
            jac[s, 1, s] = -scale
        else:
            for a in range(m):
                jac[s, a, s * m + a] = scale
    jac.flags.writeable = False
    return jac


def grad_theta_prob(params: PolicyParams, i: int, s: int, a: int) -> np.ndarray:
    _check_index(params.space, i, s, a)
    params.check()
    return prob_jacobian(params.space, i)[s, a].copy()


def grad_log_prob(params: PolicyParams, i: int, s: int, a: int) -> np.ndarray:
    prob = action_prob(params, i, s, a)
    if prob <= 0.0:
        raise ZeroProbabilityError(i, s, a)
    return prob_jacobian(params.space, i)[s, a] / prob


def joint_action_probs(params: PolicyParams, skip: Optional[int] = None) -> np.ndarray:
    """
    Product policy over flattened joint actions, shape (n_states, n_joint).
    With ``skip=i`` agent i's factor is left out (the opponents' policy).
    """
    space = params.space
    table = joint_table(space.n_actions)
    out = np.ones((space.n_states, len(table)))
    for k in range(space.n_agents):
        if k != skip:
            out *= action_probs(params, k)[:, table[:, k]]
    return out


def sample_action(params: PolicyParams, i: int, s: int, rng: np.random.Generator) -> int:
    _check_index(params.space, i, s)
    cdf = np.cumsum(action_probs(params, i)[s])
    a = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(a, len(cdf) - 1)


# ---------------------------------------------------------------------------
# Projection and geometry
# ---------------------------------------------------------------------------

def _project_simplex_rows(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex (sort and threshold)."""
    n_rows, m = v.shape
    feasible = (v >= 0).all(axis=1) & (np.abs(v.sum(axis=1) - 1.0) <= 1e-12)
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    cond = u - css / np.arange(1, m + 1) > 0
    rho = m - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(n_rows), rho] / (rho + 1)
    projected = np.maximum(v - tau[:, None], 0.0)
    return np.where(feasible[:, None], v, projected)


def project(point, space: ParamSpace) -> PolicyParams:
    """Unique Euclidean projection of a raw vector onto Theta."""
    point = np.asarray(point, dtype=float)
    if point.shape != (space.size,):
        raise PolicyDomainError(f"Point of shape {point.shape} does not match space size {space.size}")
    if space.is_box:
        return PolicyParams(space, np.clip(point, 0.0, 1.0))
    out = np.empty_like(point)
    for i in range(space.n_agents):
        rows = point[space.agent_slice(i)].reshape(space.block_shape(i))
        out[space.agent_slice(i)] = _project_simplex_rows(rows).reshape(-1)
    return PolicyParams(space, out)


def uniform_params(space: ParamSpace) -> PolicyParams:
    if space.is_box:
        return PolicyParams(space, np.full(space.size, 0.5))
    blocks = [np.full(space.block_shape(i), 1.0 / space.n_actions[i]).reshape(-1) for i in range(space.n_agents)]
    return PolicyParams(space, np.concatenate(blocks))


def vertex_params(space: ParamSpace, rules) -> PolicyParams:
    """
    Parameters of a deterministic profile. ``rules[i][s]`` is agent i's action in
    state s; for two_action_box, action 0 maps to theta = 1 and action 1 to 0.
    """
    blocks = []
    for i in range(space.n_agents):
        rule = np.asarray(rules[i], dtype=np.intp)
        if space.is_box:
            blocks.append((rule == 0).astype(float))
        else:
            block = np.zeros(space.block_shape(i))
            block[np.arange(space.n_states), rule] = 1.0
            blocks.append(block.reshape(-1))
    return PolicyParams(space, np.concatenate(blocks))


def random_params(space: ParamSpace, rng: np.random.Generator, margin: float = 0.0) -> PolicyParams:
    """Random point of Theta at least ``margin`` away from the boundary coordinate-wise."""
    if space.is_box:
        return PolicyParams(space, rng.uniform(margin, 1.0 - margin, size=space.size))
    blocks = []
    for i in range(space.n_agents):
        m = space.n_actions[i]
        x = rng.dirichlet(np.ones(m), size=space.n_states)
        blocks.append((margin + (1.0 - margin * m) * x).reshape(-1))
    return PolicyParams(space, np.concatenate(blocks))


def linear_minimum(space: ParamSpace, g: np.ndarray, agent: Optional[int] = None) -> tuple[float, np.ndarray]:
    """
    min over Theta (or Theta_agent) of <g, theta>, with a minimizing vertex.
    ``g`` is the full flat vector, or agent's block when ``agent`` is given.
    Ties go to the lowest action index.
    """
    agents = range(space.n_agents) if agent is None else [agent]
    if agent is None:
        parts = [g[space.agent_slice(i)] for i in agents]
    else:
        parts = [np.asarray(g, dtype=float).reshape(-1)]
    value = 0.0
    vertex = []
    for i, gi in zip(agents, parts):
        if space.is_box:
            v = (gi < 0).astype(float)
            value += float(np.minimum(gi, 0.0).sum())
        else:
            rows = gi.reshape(space.block_shape(i))
            best = np.argmin(rows, axis=1)
            v = np.zeros_like(rows)
            v[np.arange(space.n_states), best] = 1.0
            value += float(rows[np.arange(space.n_states), best].sum())
            v = v.reshape(-1)
        vertex.append(v)
    return value, np.concatenate(vertex)


def grid_points(space: ParamSpace, n: int, max_points: int = 200_000) -> np.ndarray:
    """
    Regular grid over Theta: n points per box coordinate, or the simplex lattice
    with resolution n-1 in every (agent, state) block.
    """
    if space.is_box:
        axes = [np.linspace(0.0, 1.0, n)] * space.size
    else:
        axes = []
        for i in range(space.n_agents):
            m = space.n_actions[i]
            lattice = [c for c in itertools.product(range(n), repeat=m) if sum(c) == n - 1]
            simplex = np.asarray(lattice, dtype=float) / max(n - 1, 1)
            axes.extend([simplex] * space.n_states)
    count = int(np.prod([len(ax) for ax in axes], dtype=float))
    if count > max_points:
        raise PolicyDomainError(f"Grid of {count} points exceeds the limit of {max_points}")
    points = [np.concatenate([np.atleast_1d(p) for p in combo]) for combo in itertools.product(*axes)]
    return np.asarray(points)
