import functools
import logging
from pathlib import Path

import click
import numpy as np

from nashvi.config import RunConfig, cascade, resolve_run_config, resolve_space
from nashvi.estimator import write_trajectories
from nashvi.exact import dump_values, evaluate
from nashvi.exceptions import (
    DomainError,
    EstimationError,
    GameConfigError,
    NumericError,
    PolicyDomainError,
    RunConfigError,
    SolverConfigError,
)
from nashvi.game import bundled_game_path, load_game, validate_game
from nashvi.metrics import gap_report, pure_equilibria
from nashvi.policy import PolicyParams
from nashvi.report import build_metadata, meta_path, write_metadata, write_run_csv
from nashvi.solver import run
from nashvi.verify import SUITES_ORDER, VerifySettings, run_suites

EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_IO = 3

CONFIG_ERRORS = (GameConfigError, RunConfigError, SolverConfigError, PolicyDomainError, DomainError)
NUMERIC_ERRORS = (NumericError, EstimationError, FloatingPointError, np.linalg.LinAlgError)


def fail(message: str, code: int):
    click.echo(f"ERROR: {message}", err=True)
    raise SystemExit(code)


def exit_codes(func):
    """Map library failures to exit codes: 1 config, 2 numeric, 3 I/O."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except CONFIG_ERRORS as exc:
            fail(str(exc), EXIT_CONFIG)
        except NUMERIC_ERRORS as exc:
            fail(f"numeric failure: {exc}", EXIT_NUMERIC)
        except OSError as exc:
            fail(f"I/O failure: {exc}", EXIT_IO)
    return wrapper


def game_option(func):
    return click.option(
        "--game", "game_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
        help="Game file (YAML). Defaults to the bundled nashvi/games/two_player.yaml.",
    )(func)


def policy_options(func):
    func = click.option("--alpha", type=float, default=None, help="Exploration weight alpha.")(func)
    func = click.option(
        "--kind", type=click.Choice(["direct", "alpha_greedy", "two_action_box"]), default=None,
        help="Policy parameterization.",
    )(func)
    return func


def solver_options(func):
    options = [
        click.option("--algorithm", type=click.Choice(["exact", "gpomdp"]), default=None,
                     help="exact pseudo gradients or G(PO)MDP estimates."),
        click.option("--K", "K", type=int, default=None, help="Outer iterations."),
        click.option("--seed", type=int, default=None, help="Base seed."),
        click.option("--L", "L", type=float, default=None, help="Lipschitz constant of F."),
        click.option("--beta", type=float, default=None, help="Proximal weight, in (0, 1/L)."),
        click.option("--eta", type=float, default=None, help="Constant inner step (exact mode)."),
        click.option("--M1", "M1", type=float, default=None, help="Gradient-domination constant."),
        click.option("--T", "T", type=int, default=None, help="Rollout horizon."),
        click.option("--K1", "K1", type=int, default=None, help="Fixed trajectories per estimate."),
        click.option("--K1-rule", "K1_rule", type=str, default=None, help="Trajectory rule, e.g. K+1."),
        click.option("--weights", type=click.Choice(["half", "quarter"]), default=None,
                     help="Output weights k^(1/2) or k^(1/4)."),
        click.option("--inner-cap", type=int, default=None, help="Cap on total inner iterations."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _overrides(kind, alpha, **solver) -> dict:
    return {"policy": {"kind": kind, "alpha": alpha}, "solver": solver}


def _verify_settings(config: RunConfig) -> VerifySettings:
    return VerifySettings(L=config.solver.L, beta=config.solver.beta, M1=config.M1, seed=config.solver.seed)


def _print_reports(reports) -> bool:
    all_ok = True
    for report in reports:
        status = "PASS" if report.ok else "FAIL"
        click.echo(f"{status}  {report.name}")
        for note in report.notes:
            click.echo(f"      {note}")
        for issue in report.issues:
            click.echo(f"      - {issue}")
        all_ok = all_ok and report.ok
    return all_ok


@click.group()
@click.option("-v", "--verbose", count=True, help="More log output (repeatable).")
def cli(verbose):
    """Nash equilibria of stochastic games by proximal extra-gradient."""
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)


@cli.command("run")
@game_option
@policy_options
@solver_options
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=Path("run.csv"),
              show_default=True, help="CSV output path.")
@click.option("--dump-values", "values_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Write V, Q and d at the final iterate (exact evaluation).")
@click.option("--dump-trajectories", "trajectories_path", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Log estimator trajectories (gpomdp only).")
@click.option("--trajectory-limit", type=int, default=10_000, show_default=True,
              help="Maximum number of trajectories logged.")
@click.option("--verify", "also_verify", is_flag=True, help="Run the verify suites after the run.")
@exit_codes
def run_cmd(game_path, kind, alpha, out, values_path, trajectories_path, trajectory_limit, also_verify, **solver):
    """Run the solver and write per-iterate gaps as CSV.

    \b
    Examples:
        nashvi run --algorithm exact --K 300 --seed 7
        nashvi run --algorithm gpomdp --K 200 --T 20 --K1-rule K+1
    """
    config = resolve_run_config(game_path, _overrides(kind, alpha, **solver))
    log_limit = trajectory_limit if trajectories_path and config.algorithm == "gpomdp" else 0
    record = run(config.game, config.space, config.solver, config.theta0, log_limit=log_limit)
    gaps = gap_report(config.game, config.space, record.thetas[:-1], config.solver.weight_exponent)

    rows = write_run_csv(out, config.space, record, gaps)
    write_metadata(meta_path(out), build_metadata(config, record, gaps))
    click.echo(
        f"Wrote {rows} rows to {out} (tau={record.tau}, "
        f"eps_weighted={gaps.eps[-1]:.6g}, evaluations={record.evaluations})"
    )

    if values_path:
        final = evaluate(config.game, PolicyParams(config.space, record.thetas[-1]))
        dump_values(final, values_path)
        click.echo(f"Wrote values to {values_path}")
    if trajectories_path:
        if config.algorithm != "gpomdp":
            click.echo("--dump-trajectories only applies to --algorithm gpomdp", err=True)
        else:
            count = write_trajectories(record.trajectories, trajectories_path)
            click.echo(f"Wrote {count} trajectories to {trajectories_path}")

    if also_verify:
        if not _print_reports(run_suites(config.game, config.space, _verify_settings(config))):
            raise SystemExit(EXIT_CONFIG)


@cli.command("verify")
@game_option
@policy_options
@solver_options
@click.option("--suite", "suites", type=click.Choice(SUITES_ORDER), multiple=True,
              help="Suite to run (repeatable). Default: all.")
@exit_codes
def verify_cmd(game_path, kind, alpha, suites, **solver):
    """Run the property suites against a game.

    \b
    Suites: gradient, bellman, lipschitz, monotonicity, domination,
            coverage, mvi, tau
    """
    config = resolve_run_config(game_path, _overrides(kind, alpha, **solver))
    reports = run_suites(config.game, config.space, _verify_settings(config), suites or None)
    if not _print_reports(reports):
        raise SystemExit(1)


@cli.command("validate")
@game_option
@exit_codes
def validate_cmd(game_path):
    """Check a game file against the model's invariants."""
    path = game_path or bundled_game_path()
    try:
        game = load_game(path)
    except GameConfigError as exc:
        click.echo(f"INVALID  {path}")
        for issue in exc.issues:
            click.echo(f"  - {issue}")
        raise SystemExit(1)
    report = validate_game(game)
    click.echo(
        f"VALID  {path} ({game.n_agents} agents, {game.n_states} states, "
        f"actions {list(game.n_actions)}, gamma {game.discount:g})"
    )
    if not report.ok:
        raise SystemExit(1)


@cli.command("equilibria")
@game_option
@policy_options
@exit_codes
def equilibria_cmd(game_path, kind, alpha):
    """List the pure (deterministic-profile) equilibria of a game."""
    game = load_game(game_path or bundled_game_path())
    space = resolve_space(game, cascade(game, _overrides(kind, alpha)))
    found = pure_equilibria(game, space)
    if not found:
        click.echo("No pure equilibria.")
        return
    for eq in found:
        rules = "  ".join(f"agent {i + 1}: {list(rule)}" for i, rule in enumerate(eq.rules))
        values = ", ".join(f"{v:.6g}" for v in eq.values)
        click.echo(f"{rules}  theta={eq.params.theta.tolist()}  J=({values})")
