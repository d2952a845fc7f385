"""
Property suites run against a configured game.

Each suite returns a Report; an empty issue list means it passed. Random
points come from the sampling substream of the run seed, one key per suite.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.stats import chisquare

from nashvi.estimator import error_bound, gpomdp_estimate
from nashvi.exact import evaluate
from nashvi.exceptions import DomainError
from nashvi.game import TabularGame
from nashvi.metrics import gradient_domination_check, mvi_residual, pure_equilibria
from nashvi.policy import ParamSpace, PolicyParams, random_params
from nashvi.solver import outer_weights, sample_tau
from nashvi.util import STREAM_ESTIMATOR, STREAM_SAMPLING, Report, substream

logger = logging.getLogger(__name__)

RESIDUAL_TOLERANCE = 1e-9
SLACK_TOLERANCE = 1e-9


@dataclass
class VerifySettings:
    L: float
    beta: float
    M1: float = 1.0
    seed: int = 0
    n_points: int = 100
    n_pairs: int = 10_000
    fd_step: float = 1e-6
    fd_rtol: float = 1e-4
    interior_margin: float = 0.05
    domination_points: int = 1000
    coverage_repeats: int = 400
    coverage_T: int = 20
    coverage_K1: int = 100
    coverage_delta: float = 0.5
    mvi_grid: int = 9
    mvi_random: int = 1000
    tau_K: int = 10
    tau_draws: int = 100_000
    tau_pvalue: float = 1e-3


def _rng(settings: VerifySettings, suite: str) -> np.random.Generator:
    return substream(settings.seed, STREAM_SAMPLING, SUITES_ORDER.index(suite))


def _random_points(space, rng, n, margin=0.0) -> list[PolicyParams]:
    return [random_params(space, rng, margin) for _ in range(n)]


def gradient_suite(game: TabularGame, space: ParamSpace, settings: VerifySettings) -> Report:
    """Pseudo gradient against central finite differences of J_i."""
    report = Report(name="gradient")
    rng = _rng(settings, "gradient")
    h = settings.fd_step
    worst = 0.0
    for params in _random_points(space, rng, settings.n_points, settings.interior_margin):
        grad = -evaluate(game, params).field
        fd = np.empty(space.size)
        for i in range(space.n_agents):
            for c in range(space.agent_slice(i).start, space.agent_slice(i).stop):
                bump = np.zeros(space.size)
                bump[c] = h
                up = evaluate(game, PolicyParams(space, params.theta + bump)).total_reward[i]
                down = evaluate(game, PolicyParams(space, params.theta - bump)).total_reward[i]
                fd[c] = (up - down) / (2 * h)
        scale = max(float(np.abs(grad).max()), 1e-8)
        error = float(np.abs(fd - grad).max()) / scale
        worst = max(worst, error)
        if error > settings.fd_rtol:
            report.add(f"relative error {error:.2e} at theta={params.theta.tolist()}")
    report.note(f"worst relative error {worst:.2e}")
    return report


def bellman_suite(game: TabularGame, space: ParamSpace, settings: VerifySettings) -> Report:
    """Bellman, occupancy and V/Q consistency residuals plus value and field-norm bounds."""
    report = Report(name="bellman")
    rng = _rng(settings, "bellman")
    bound = game.reward_bound / (1.0 - game.discount)
    field_bound = np.sqrt(game.n_agents) * space.score_bound() * bound / (1.0 - game.discount)
    for params in _random_points(space, rng, settings.n_points):
        ev = evaluate(game, params)
        residuals = {
            "bellman": ev.bellman_residual(),
            "occupancy": ev.occupancy_residual(),
            "consistency": ev.consistency_residual(),
            "occupancy sum": abs(float(ev.occupancy.sum()) - 1.0),
        }
        for what, value in residuals.items():
            if value > RESIDUAL_TOLERANCE:
                report.add(f"{what} residual {value:.2e} at theta={params.theta.tolist()}")
        if (ev.occupancy < -RESIDUAL_TOLERANCE).any():
            report.add(f"negative occupancy at theta={params.theta.tolist()}")
        if np.abs(ev.value).max() > bound + RESIDUAL_TOLERANCE:
            report.add(f"|V| exceeds U_R/(1-gamma) at theta={params.theta.tolist()}")
        if np.linalg.norm(ev.field) > field_bound + RESIDUAL_TOLERANCE:
            report.add(f"||F|| exceeds sqrt(N) B U_R/(1-gamma)^2 at theta={params.theta.tolist()}")
    return report


def _pairs(space, rng, n):
    for _ in range(n):
        a = random_params(space, rng).theta
        b = random_params(space, rng).theta
        if np.linalg.norm(a - b) > 0:
            yield a, b


def lipschitz_suite(game: TabularGame, space: ParamSpace, settings: VerifySettings) -> Report:
    """Empirical ||F(a) - F(b)|| / ||a - b|| never exceeds the configured L."""
    report = Report(name="lipschitz")
    rng = _rng(settings, "lipschitz")
    worst = 0.0
    for a, b in _pairs(space, rng, settings.n_pairs):
        Fa = evaluate(game, PolicyParams(space, a)).field
        Fb = evaluate(game, PolicyParams(space, b)).field
        worst = max(worst, float(np.linalg.norm(Fa - Fb) / np.linalg.norm(a - b)))
    report.note(f"empirical Lipschitz ratio {worst:.4f} (L = {settings.L:g})")
    if worst > settings.L:
        report.add(f"empirical ratio {worst:.4f} exceeds L = {settings.L:g}")
    return report


def monotonicity_suite(game: TabularGame, space: ParamSpace, settings: VerifySettings) -> Report:
    """<F_k(a) - F_k(b), a - b> >= (1/beta - L) ||a - b||^2 for the regularized field."""
    report = Report(name="monotonicity")
    rng = _rng(settings, "monotonicity")
    modulus = 1.0 / settings.beta - settings.L
    worst = np.inf
    for a, b in _pairs(space, rng, settings.n_pairs):
        diff = a - b
        dF = evaluate(game, PolicyParams(space, a)).field - evaluate(game, PolicyParams(space, b)).field
        slack = float((dF + diff / settings.beta) @ diff - modulus * diff @ diff)
        worst = min(worst, slack)
    report.note(f"worst slack {worst:.3e}")
    if worst < -SLACK_TOLERANCE:
        report.add(f"strong monotonicity violated, slack {worst:.3e}")
    return report


def domination_suite(game: TabularGame, space: ParamSpace, settings: VerifySettings) -> Report:
    """Gradient domination with the configured M1."""
    report = Report(name="domination")
    rng = _rng(settings, "domination")
    failures = 0
    worst = np.inf
    for params in _random_points(space, rng, settings.domination_points):
        result = gradient_domination_check(game, params, settings.M1)
        worst = min(worst, result.slack)
        if not result.holds:
            failures += 1
    report.note(f"worst slack {worst:.3e}")
    if failures:
        report.add(f"gradient domination with M1 = {settings.M1:g} fails at {failures} points")
    return report


def coverage_suite(game: TabularGame, space: ParamSpace, settings: VerifySettings) -> Report:
    """Frequency of ||F_hat - F||^2 <= M(T, K1, delta) reaches 1 - delta/(4 K1)."""
    report = Report(name="coverage")
    B = space.score_bound()
    if not np.isfinite(B):
        report.note(f"skipped: {space.kind.value} has no exploration floor")
        return report
    params = random_params(space, _rng(settings, "coverage"), settings.interior_margin)
    F = evaluate(game, params).field
    T, K1, delta = settings.coverage_T, settings.coverage_K1, settings.coverage_delta
    M = error_bound(T, K1, delta, game.n_agents, B, game.reward_bound, game.discount)
    covered = 0
    for r in range(settings.coverage_repeats):
        rng = substream(settings.seed, STREAM_ESTIMATOR, 0, r)
        estimate = gpomdp_estimate(game, params, T, K1, rng)
        covered += float(np.sum((estimate.field - F) ** 2)) <= M
    freq = covered / settings.coverage_repeats
    target = 1.0 - delta / (4 * K1)
    report.note(f"coverage {freq:.4f} (target {target:.4f}, M = {M:.3g})")
    if freq < target:
        report.add(f"coverage {freq:.4f} below {target:.4f}")
    return report


def mvi_suite(game: TabularGame, space: ParamSpace, settings: VerifySettings) -> Report:
    """Minty inequality at each enumerated pure equilibrium."""
    report = Report(name="mvi")
    try:
        equilibria = pure_equilibria(game, space)
    except DomainError as exc:
        report.note(f"skipped: {exc}")
        return report
    if not equilibria:
        report.note("skipped: no pure equilibrium to test")
        return report
    for eq in equilibria[:1]:
        result = mvi_residual(game, eq.params, grid=settings.mvi_grid, n_random=settings.mvi_random, seed=settings.seed)
        report.note(f"residual {result.residual:.3e} at {eq.params.theta.tolist()} over {result.n_points} points")
        if result.residual < -SLACK_TOLERANCE:
            report.add(
                f"Minty inequality fails for {eq.params.theta.tolist()} at "
                f"{result.worst_point.tolist()} ({result.residual:.3e})"
            )
    return report


def tau_suite(game: TabularGame, space: ParamSpace, settings: VerifySettings) -> Report:
    """Chi-square test of the output-index law for both weight exponents."""
    report = Report(name="tau")
    rng = _rng(settings, "tau")
    for exponent in (0.5, 0.25):
        weights = outer_weights(settings.tau_K, exponent)
        counts = np.zeros(settings.tau_K)
        for _ in range(settings.tau_draws):
            counts[sample_tau(weights, rng) - 1] += 1
        expected = settings.tau_draws * weights / weights.sum()
        pvalue = float(chisquare(counts, expected).pvalue)
        report.note(f"exponent {exponent}: p = {pvalue:.3g}")
        if pvalue <= settings.tau_pvalue:
            report.add(f"tau law rejected for exponent {exponent} (p = {pvalue:.3g})")
    return report


SUITES: dict[str, Callable[[TabularGame, ParamSpace, VerifySettings], Report]] = {
    "gradient": gradient_suite,
    "bellman": bellman_suite,
    "lipschitz": lipschitz_suite,
    "monotonicity": monotonicity_suite,
    "domination": domination_suite,
    "coverage": coverage_suite,
    "mvi": mvi_suite,
    "tau": tau_suite,
}
SUITES_ORDER = list(SUITES)


def run_suites(
    game: TabularGame,
    space: ParamSpace,
    settings: VerifySettings,
    names: Optional[Iterable[str]] = None,
) -> list[Report]:
    reports = []
    for name in names or SUITES_ORDER:
        if name not in SUITES:
            raise KeyError(f"Unknown suite '{name}'")
        logger.info("Running suite %s", name)
        reports.append(SUITES[name](game, space, settings))
    return reports
