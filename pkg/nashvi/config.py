"""
Run configuration.

Effective settings cascade like this, later layers winning:

    DEFAULTS -> the game file's ``defaults:`` mapping -> command-line overrides

Nested mappings merge key by key; lists are replaced, not appended.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np

from nashvi.estimator import resolve_k1
from nashvi.exceptions import DomainError, PolicyDomainError, RunConfigError, SolverConfigError
from nashvi.game import TabularGame, bundled_game_path, load_game
from nashvi.policy import ParamSpace, PolicyParams
from nashvi.solver import Mode, SolverConfig, validate_config

THREADS_ENV = "NASHVI_THREADS"

# Built-in defaults; a game file's ``defaults:`` section overrides these.
DEFAULTS = {
    "policy": {
        "kind": "alpha_greedy",
        "alpha": 0.01,
    },
    "solver": {
        "algorithm": "exact",     # exact | gpomdp
        "L": None,                # required, from the game file or --L
        "beta": None,             # None = 0.5 / L
        "eta": None,              # None = 0.9 * min of the step window
        "l2": None,               # None = its lower bound
        "K": 300,
        "T": 20,
        "K1": None,               # fixed trajectory count; overrides K1_rule
        "K1_rule": "K+1",
        "weights": None,          # half | quarter | None = by algorithm
        "schedule": None,         # constant | diminishing | None = by algorithm
        "inner_schedule": "k",
        "inner_cap": 1_000_000,
        "seed": 0,
        "M1": 1.0,
        "theta0": None,           # flat parameter vector; None = uniform
    },
}

WEIGHT_EXPONENTS = {"half": 0.5, "quarter": 0.25}
ALGORITHMS = {"exact": Mode.EXACT, "gpomdp": Mode.STOCHASTIC}


def deep_merge(base: dict, override: dict) -> dict:
    """
    Deep merge two dicts. Override values win.
    Lists are replaced, not appended.
    """
    result = base.copy()
    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = deep_merge(result[key], value)
        else:
            result[key] = value
    return result


def drop_unset(overrides: Mapping[str, Any]) -> dict:
    """Remove None leaves so unset CLI options don't mask lower layers."""
    out = {}
    for key, value in overrides.items():
        if isinstance(value, Mapping):
            value = drop_unset(value)
            if value:
                out[key] = value
        elif value is not None:
            out[key] = value
    return out


def unknown_keys(settings: dict, reference: dict = DEFAULTS, prefix: str = "") -> list[str]:
    issues = []
    for key, value in settings.items():
        if key not in reference:
            issues.append(f"unknown setting '{prefix}{key}'")
        elif isinstance(reference[key], dict) and isinstance(value, dict):
            issues.extend(unknown_keys(value, reference[key], f"{prefix}{key}."))
    return issues


def resolve_threads(env: Optional[Mapping[str, str]] = None) -> int:
    """Rollout thread cap from NASHVI_THREADS; 1 when unset."""
    env = os.environ if env is None else env
    raw = env.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return 1
    try:
        threads = int(raw)
    except ValueError:
        raise RunConfigError(f"{THREADS_ENV}={raw!r} is not an integer")
    if threads < 1:
        raise RunConfigError(f"{THREADS_ENV}={threads} must be at least 1")
    return threads


@dataclass
class RunConfig:
    game_path: Path
    game: TabularGame
    space: ParamSpace
    solver: SolverConfig
    M1: float
    theta0: Optional[np.ndarray]
    settings: dict = field(default_factory=dict)

    @property
    def algorithm(self) -> str:
        return "exact" if self.solver.mode is Mode.EXACT else "gpomdp"


def _weight_exponent(value) -> Optional[float]:
    if value is None:
        return None
    if isinstance(value, str):
        if value not in WEIGHT_EXPONENTS:
            raise RunConfigError(f"weights must be one of {sorted(WEIGHT_EXPONENTS)}, got '{value}'")
        return WEIGHT_EXPONENTS[value]
    return float(value)


def cascade(game: TabularGame, overrides: Optional[Mapping[str, Any]] = None) -> dict:
    """DEFAULTS, then the game's defaults, then overrides. Unknown keys are an error."""
    layers = [game.defaults, drop_unset(overrides or {})]
    issues = []
    for layer in layers:
        issues.extend(unknown_keys(layer))
    if issues:
        raise RunConfigError("; ".join(issues))
    settings = DEFAULTS
    for layer in layers:
        settings = deep_merge(settings, layer)
    return settings


def resolve_space(game: TabularGame, settings: dict) -> ParamSpace:
    policy = settings["policy"]
    try:
        return ParamSpace.for_game(game, policy["kind"], policy.get("alpha") or 0.0)
    except (PolicyDomainError, ValueError) as exc:
        raise RunConfigError(f"policy: {exc}")


def resolve_run_config(
    game_path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    env: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """Load the game, cascade settings and build a validated solver configuration."""
    game_path = Path(game_path) if game_path is not None else bundled_game_path()
    game = load_game(game_path)
    settings = cascade(game, overrides)
    space = resolve_space(game, settings)
    solver = settings["solver"]

    algorithm = solver["algorithm"]
    if algorithm not in ALGORITHMS:
        raise RunConfigError(f"algorithm must be one of {sorted(ALGORITHMS)}, got '{algorithm}'")
    if solver["L"] is None:
        raise RunConfigError("L is required: set solver.L in the game file or pass --L")

    K1 = solver["K1"] if solver["K1"] is not None else solver["K1_rule"]
    try:
        resolve_k1(K1, 1)
    except DomainError as exc:
        raise RunConfigError(str(exc))

    try:
        cfg = SolverConfig.build(
            ALGORITHMS[algorithm],
            L=float(solver["L"]),
            K=int(solver["K"]),
            beta=solver["beta"],
            eta=solver["eta"],
            l2=solver["l2"],
            weight_exponent=_weight_exponent(solver["weights"]),
            schedule=solver["schedule"],
            inner_schedule=solver["inner_schedule"],
            K1=K1,
            T=int(solver["T"]),
            seed=int(solver["seed"]),
            inner_cap=int(solver["inner_cap"]),
            threads=resolve_threads(env),
        )
    except (TypeError, ValueError) as exc:
        raise RunConfigError(f"solver: {exc}")
    report = validate_config(cfg)
    if not report.ok:
        raise SolverConfigError(report.issues)

    theta0 = None
    if solver["theta0"] is not None:
        theta0 = np.asarray(solver["theta0"], dtype=float)
        start = PolicyParams(space, theta0)
        violations = start.violations()
        if violations:
            raise RunConfigError("theta0: " + "; ".join(violations))

    return RunConfig(
        game_path=game_path,
        game=game,
        space=space,
        solver=cfg,
        M1=float(solver["M1"]),
        theta0=theta0,
        settings=settings,
    )
