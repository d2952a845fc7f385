"""
Two-loop proximal solver for the game's variational inequality.

Outer loop: F_k(theta) = F(theta) + (theta - theta_k)/beta, which is strongly
monotone for beta < 1/L. Inner loop: single-call extra-gradient on F_k,
started at theta^1 = z^1 = theta_k. The outer update is one more proximal
half-step from the inner loop's final z.

Exact mode reuses F_k(theta^{h+1}) as the next iteration's F_k(theta^h); the
stochastic mode draws a fresh estimate at every evaluation.
"""

import logging
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Optional, Union

import numpy as np

from nashvi.estimator import EstimatedField, K1Rule, resolve_k1
from nashvi.exact import ExactField, regularized_field
from nashvi.exceptions import DomainError, SolverConfigError
from nashvi.game import TabularGame
from nashvi.policy import ParamSpace, PolicyParams, project, uniform_params
from nashvi.util import STREAM_TAU, Report, substream

logger = logging.getLogger(__name__)

FORMULA_TOLERANCE = 1e-12
DEFAULT_INNER_CAP = 1_000_000


class Mode(str, Enum):
    EXACT = "exact"
    STOCHASTIC = "stochastic"


class Schedule(str, Enum):
    CONSTANT = "constant"
    DIMINISHING = "diminishing"


# ---------------------------------------------------------------------------
# Step-size formulas
# ---------------------------------------------------------------------------

def eta_window(L: float, beta: float) -> tuple[float, float, float]:
    """The three upper ends of the admissible constant inner step; eta must lie below their minimum."""
    mu = 1.0 / beta - L
    c = L ** 2 + 1.0 / beta ** 2
    return (
        1.0 / mu,
        (-mu + np.sqrt(mu ** 2 + 32.0 * c)) / 16.0,
        (-mu + np.sqrt(mu ** 2 + 8.0 * c)) / 32.0,
    )


def eta_tilde_for(L: float, beta: float) -> float:
    return 1.0 / (2.0 * np.sqrt(L ** 2 + 1.0 / beta ** 2))


def l2_lower_bound(L: float, beta: float) -> float:
    return max(1.0 / beta - L, 6.0 * (L ** 2 + 1.0 / beta ** 2))


def l1_for(l2: float) -> float:
    return min(1.0 / (2.0 * np.sqrt(l2)), 1.0 / (4.0 * l2))


def outer_weights(K: int, exponent: float) -> np.ndarray:
    """gamma_k = k^exponent for k = 1..K."""
    return np.arange(1, K + 1, dtype=float) ** exponent


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class SolverConfig:
    mode: Mode
    L: float
    beta: float
    eta_tilde: float
    K: int
    weight_exponent: float
    eta: float
    l2: float
    l1: float
    schedule: Schedule
    inner_schedule: Union[int, str] = "k"
    K1: K1Rule = "K+1"
    T: int = 20
    seed: int = 0
    inner_cap: int = DEFAULT_INNER_CAP
    threads: int = 1

    @classmethod
    def build(
        cls,
        mode,
        L: float,
        K: int = 300,
        beta: Optional[float] = None,
        eta: Optional[float] = None,
        l2: Optional[float] = None,
        weight_exponent: Optional[float] = None,
        schedule=None,
        **kwargs,
    ) -> "SolverConfig":
        """Fill derived quantities and defaults. Does not validate."""
        mode = Mode(mode)
        L = float(L)
        beta = 0.5 / L if beta is None else float(beta)
        if eta is None:
            window = eta_window(L, beta) if beta > 0 and beta * L < 1 else (0.0,)
            eta = 0.9 * min(window)
        if l2 is None:
            l2 = l2_lower_bound(L, beta) if beta > 0 else 0.0
        if weight_exponent is None:
            weight_exponent = 0.5 if mode is Mode.EXACT else 0.25
        if schedule is None:
            schedule = Schedule.CONSTANT if mode is Mode.EXACT else Schedule.DIMINISHING
        return cls(
            mode=mode,
            L=L,
            beta=beta,
            eta_tilde=eta_tilde_for(L, beta) if beta > 0 else 0.0,
            K=int(K),
            weight_exponent=float(weight_exponent),
            eta=float(eta),
            l2=float(l2),
            l1=l1_for(l2) if l2 > 0 else 0.0,
            schedule=Schedule(schedule),
            **kwargs,
        )

    def step(self, h: int) -> float:
        """Inner step size eta_h."""
        if self.schedule is Schedule.CONSTANT:
            return self.eta
        return self.l1 / h ** (2.0 / 3.0)

    def inner_steps(self, k: int) -> int:
        """H_k: k itself, or a fixed count."""
        if self.inner_schedule == "k":
            return k
        return int(self.inner_schedule)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["mode"] = self.mode.value
        out["schedule"] = self.schedule.value
        return out


def validate_config(cfg: SolverConfig) -> Report:
    """Check every SolverConfig invariant. Never raises."""
    report = Report(name="solver")
    if not cfg.L > 0:
        report.add(f"L {cfg.L} must be positive")
        return report
    if not 0.0 < cfg.beta < 1.0 / cfg.L:
        report.add(f"beta out of range: {cfg.beta} not in (0, 1/L = {1.0 / cfg.L:.6g})")
        return report
    if abs(cfg.eta_tilde - eta_tilde_for(cfg.L, cfg.beta)) > FORMULA_TOLERANCE:
        report.add(f"eta_tilde {cfg.eta_tilde} != 1/(2 sqrt(L^2 + 1/beta^2))")
    if cfg.K < 1:
        report.add(f"K = {cfg.K} must be at least 1")
    if not cfg.weight_exponent >= 0:
        report.add(f"weight exponent {cfg.weight_exponent} must be nonnegative")
    if cfg.inner_schedule != "k":
        try:
            if int(cfg.inner_schedule) < 1:
                report.add(f"inner_schedule {cfg.inner_schedule} must be 'k' or a positive integer")
        except (TypeError, ValueError):
            report.add(f"inner_schedule {cfg.inner_schedule!r} must be 'k' or a positive integer")
    if cfg.inner_cap < 0:
        report.add(f"inner_cap {cfg.inner_cap} must be nonnegative")

    if cfg.schedule is Schedule.CONSTANT:
        upper = min(eta_window(cfg.L, cfg.beta))
        if not 0.0 < cfg.eta < upper:
            report.add(f"eta out of range: {cfg.eta} not in (0, {upper:.6g})")
    else:
        lower = l2_lower_bound(cfg.L, cfg.beta)
        if cfg.l2 < lower - FORMULA_TOLERANCE * max(1.0, lower):
            report.add(f"l2 {cfg.l2} below lower bound {lower:.6g}")
        if cfg.l2 > 0 and abs(cfg.l1 - l1_for(cfg.l2)) > FORMULA_TOLERANCE:
            report.add(f"l1 {cfg.l1} != min(1/(2 sqrt(l2)), 1/(4 l2))")

    if cfg.mode is Mode.STOCHASTIC:
        if cfg.T < 0:
            report.add(f"T = {cfg.T} must be nonnegative")
        try:
            if resolve_k1(cfg.K1, 1) < 1:
                report.add(f"K1 = {cfg.K1} must be at least 1")
        except (DomainError, TypeError, ValueError) as exc:
            report.add(str(exc))
        if cfg.threads < 1:
            report.add(f"threads = {cfg.threads} must be at least 1")
    return report


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------

def prox_step(z: np.ndarray, g: np.ndarray, eta: float, space: ParamSpace) -> np.ndarray:
    """argmin_theta <2 eta g, theta> + ||theta - z||^2, which is project(z - eta g)."""
    return project(np.asarray(z, dtype=float) - eta * np.asarray(g, dtype=float), space).theta


@dataclass
class InnerResult:
    theta: np.ndarray
    z: np.ndarray
    residual: float
    evaluations: int
    trace: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)


def inner_loop(
    field_k: Callable[[np.ndarray], np.ndarray],
    start: np.ndarray,
    H: int,
    steps: Callable[[int], float],
    space: ParamSpace,
    reuse: bool = True,
    trace: bool = False,
) -> InnerResult:
    """
    Single-call extra-gradient on field_k for H iterations from theta^1 = z^1 = start.
    With ``reuse`` the evaluation at theta^{h+1} serves as the next iteration's
    evaluation at theta^h (H+1 evaluations); otherwise every use is fresh (2H).
    """
    theta = np.asarray(start, dtype=float).copy()
    z = theta.copy()
    evaluations = 0
    residual = 0.0
    history = [(theta.copy(), z.copy())] if trace else []

    g_theta = None
    if reuse:
        g_theta = field_k(theta)
        evaluations += 1
    for h in range(1, H + 1):
        eta = steps(h)
        if not reuse:
            g_theta = field_k(theta)
            evaluations += 1
        theta_next = prox_step(z, g_theta, eta, space)
        g_next = field_k(theta_next)
        evaluations += 1
        z = prox_step(z, g_next, eta, space)
        residual = float(np.linalg.norm(theta_next - theta))
        theta = theta_next
        if reuse:
            g_theta = g_next
        if trace:
            history.append((theta.copy(), z.copy()))
    return InnerResult(theta, z, residual, evaluations, history)


def outer_step(field_k, z_final: np.ndarray, eta_tilde: float, space: ParamSpace) -> np.ndarray:
    return prox_step(z_final, field_k(z_final), eta_tilde, space)


def sample_tau(weights, rng: np.random.Generator) -> int:
    """Draw tau in 1..K with P(tau = k) proportional to weights[k-1]."""
    weights = np.asarray(weights, dtype=float)
    if weights.size == 0:
        raise DomainError("weights must be nonempty")
    if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
        raise DomainError("weights must be positive and finite")
    cdf = np.cumsum(weights)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(weights) - 1) + 1


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------

@dataclass
class InnerStats:
    k: int
    H: int
    residual: float
    evaluations: int


@dataclass
class RunRecord:
    """Iterates theta_1..theta_{K+1} of one run plus diagnostics."""

    thetas: list[np.ndarray]
    inner: list[InnerStats]
    tau: int
    weights: np.ndarray
    seed: int
    config: SolverConfig
    evaluations: int
    wall_clock: float = 0.0
    gamma0: float = 0.0
    capped: bool = False
    trajectories: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.inner)

    @property
    def output(self) -> np.ndarray:
        """theta_{tau_K}."""
        return self.thetas[self.tau - 1]


def _check_runnable(cfg: SolverConfig, space: ParamSpace) -> None:
    report = validate_config(cfg)
    if cfg.mode is Mode.STOCHASTIC and not np.isfinite(space.score_bound()):
        report.add(f"stochastic mode needs a positive exploration floor; {space.kind.value} with alpha={space.alpha} has none")
    if not report.ok:
        raise SolverConfigError(report.issues)


def run(
    game: TabularGame,
    space: ParamSpace,
    cfg: SolverConfig,
    theta0: Optional[np.ndarray] = None,
    log_limit: int = 0,
) -> RunRecord:
    """
    Run K outer iterations in the configured mode. Each exact outer step costs
    H_k + 2 evaluations: one at theta^1, one per inner step, and one at z for
    the outer half-step.
    """
    _check_runnable(cfg, space)
    started = time.perf_counter()

    if cfg.mode is Mode.EXACT:
        base = ExactField(game, space)
    else:
        base = EstimatedField(game, space, cfg.T, cfg.K1, cfg.seed, cfg.threads, log_limit=log_limit)

    start = uniform_params(space) if theta0 is None else PolicyParams(space, theta0)
    start.check()
    theta = start.theta.copy()
    thetas = [theta.copy()]
    stats: list[InnerStats] = []
    remaining = cfg.inner_cap
    capped = False

    for k in range(1, cfg.K + 1):
        if isinstance(base, EstimatedField):
            base.begin_outer(k)
        before = base.evaluations
        field_k = regularized_field(base, cfg.beta, theta, cfg.L)

        H = cfg.inner_steps(k)
        if H > remaining:
            if not capped:
                logger.warning("Inner iteration cap %d reached at k=%d; truncating inner loops", cfg.inner_cap, k)
            capped = True
            H = remaining
        remaining -= H

        result = inner_loop(field_k, theta, H, cfg.step, space, reuse=cfg.mode is Mode.EXACT)
        theta = outer_step(field_k, result.z, cfg.eta_tilde, space)
        thetas.append(theta.copy())

        evaluations = base.evaluations - before
        stats.append(InnerStats(k=k, H=H, residual=result.residual, evaluations=evaluations))
        logger.debug(
            "k=%d H=%d residual=%.3e evaluations=%d", k, H, result.residual, evaluations
        )

    weights = outer_weights(cfg.K, cfg.weight_exponent)
    tau = sample_tau(weights, substream(cfg.seed, STREAM_TAU))
    record = RunRecord(
        thetas=thetas,
        inner=stats,
        tau=tau,
        weights=weights,
        seed=cfg.seed,
        config=cfg,
        evaluations=base.evaluations,
        wall_clock=time.perf_counter() - started,
        capped=capped,
        trajectories=list(getattr(base, "logged", [])),
    )
    logger.info(
        "%s run finished: K=%d evaluations=%d tau=%d (%.2fs)",
        cfg.mode.value, cfg.K, record.evaluations, tau, record.wall_clock,
    )
    return record


def run_algorithm1(game: TabularGame, space: ParamSpace, cfg: SolverConfig, theta0=None) -> RunRecord:
    """Exact pseudo gradients, constant inner step, k^(1/2) output weights by default."""
    if cfg.mode is not Mode.EXACT:
        raise SolverConfigError([f"run_algorithm1 needs exact mode, got {cfg.mode.value}"])
    return run(game, space, cfg, theta0)


def run_algorithm2(
    game: TabularGame, space: ParamSpace, cfg: SolverConfig, theta0=None, log_limit: int = 0
) -> RunRecord:
    """G(PO)MDP estimates, diminishing inner step, k^(1/4) output weights by default."""
    if cfg.mode is not Mode.STOCHASTIC:
        raise SolverConfigError([f"run_algorithm2 needs stochastic mode, got {cfg.mode.value}"])
    return run(game, space, cfg, theta0, log_limit=log_limit)
