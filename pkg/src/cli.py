"""Command line entry point: ``bml <command> --config FILE | --fixture NAME``."""
import functools
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import click
from pydantic import ValidationError

from src.config.experiment_config import ExperimentConfig, load_config
from src.config.fixtures import bundled_fixtures, load_fixture
from src.config.settings import LOG_FILE, LOG_LEVEL
from src.models.errors import BanditError, ConfigInvalid
from src.services.experiment import ExperimentResult, run_experiment
from src.services.logging_config import configure_logging
from src.services.results import emit_results, emit_trace, render_results

logger = logging.getLogger(__name__)


def _fail(error: BanditError) -> None:
    click.echo(json.dumps(error.to_dict()), err=True)
    sys.exit(2 if isinstance(error, ConfigInvalid) else 1)


def handle_errors(func):
    """Report library errors as a JSON object on stderr with a nonzero exit."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ValidationError as e:
            errors = [{"field": ".".join(str(p) for p in err["loc"]), "message": err["msg"]} for err in e.errors()]
            _fail(ConfigInvalid(f"invalid input: {len(errors)} problem(s)", errors))
        except BanditError as e:
            _fail(e)
    return wrapper


def common_options(func):
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Experiment config (JSON)"),
        click.option("--fixture", help="Name of a bundled fixture"),
        click.option("--seed", type=int, help="Override the base seed"),
        click.option("--out", type=click.Path(dir_okay=False), help="Result file; stdout when omitted"),
        click.option("--format", "fmt", type=click.Choice(["csv", "json"]), help="Result format"),
        click.option("--trace", is_flag=True, default=False, help="Also write per-slot traces / the policy tree"),
        click.option("--replications", type=int, help="Override the replication count"),
        click.option("--workers", type=int, help="Worker processes for replications"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def resolve_config(config_path: Optional[str], fixture: Optional[str], mode: Optional[str],
                   **overrides) -> ExperimentConfig:
    if bool(config_path) == bool(fixture):
        raise ConfigInvalid("give exactly one of --config and --fixture",
                            [{"field": "config", "message": "exactly one of --config/--fixture"}])
    config = load_config(config_path) if config_path else load_fixture(fixture)
    if mode is not None and config.mode != mode:
        overrides["mode"] = mode
    return config.with_overrides(**overrides)


def write_outputs(config: ExperimentConfig, result: ExperimentResult, out: Optional[str], fmt: Optional[str]) -> None:
    fmt = fmt or config.format
    out = out or config.output
    if out:
        emit_results(result.rows, fmt, out)
        base = Path(out)
        for label, records in result.traces.items():
            emit_trace(records, base.with_name(f"{base.stem}.{label}.trace.csv"))
        if result.policy_tree is not None:
            tree_path = base.with_name(f"{base.stem}.policy.json")
            tree_path.write_text(json.dumps(result.policy_tree, indent=2))
            logger.info(f"Wrote policy tree to {tree_path}")
    else:
        click.echo(render_results(result.rows, fmt), nl=False)
        if result.policy_tree is not None:
            click.echo(json.dumps(result.policy_tree, indent=2))


def _run(mode: Optional[str], config_path, fixture, seed, out, fmt, trace, replications, workers, **extra):
    config = resolve_config(config_path, fixture, mode, seed=seed, replications=replications,
                            workers=workers, **extra)
    result = run_experiment(config, trace=trace or config.trace, with_tree=trace and config.mode == "dp")
    write_outputs(config, result, out, fmt)
    return result


@click.group()
@click.option("--log-level", default=LOG_LEVEL, show_default=True, help="Logging level")
@click.option("--log-file", default=LOG_FILE, help="Also log to this file")
def main(log_level: str, log_file: Optional[str]):
    """Cognitive medium access bandit simulator."""
    configure_logging(log_level, log_file)


@main.command("optimal-dp")
@common_options
@handle_errors
def optimal_dp(**kwargs):
    """Exact Bayesian DP value, first action and (with --trace) the policy tree."""
    result = _run("dp", **kwargs)
    row = result.rows[0]
    logger.info(f"V*={row.value_exact or row.value_bits} bits, first action {row.first_action}")


@main.command()
@common_options
@handle_errors
def simulate(**kwargs):
    """Single-user Monte-Carlo loss against the genie."""
    _run("single-user", **kwargs)


@main.command()
@common_options
@click.option("--users", type=int, help="Override the number of users K")
@handle_errors
def multiuser(users, **kwargs):
    """Multi-user contention simulation."""
    _run("multi-user", users=users, **kwargs)


def parse_grid(grid: str) -> dict:
    """``T=1000,10000`` or ``K=2,4`` (several separated by ';')."""
    parsed = {}
    for part in filter(None, (p.strip() for p in grid.split(";"))):
        axis, _, values = part.partition("=")
        axis = axis.strip().upper()
        if axis not in ("T", "K") or not values:
            raise ConfigInvalid(f"bad grid '{part}'", [{"field": "grid", "message": "use T=a,b,c or K=a,b,c"}])
        try:
            numbers = [int(v) for v in values.split(",") if v.strip()]
        except ValueError:
            raise ConfigInvalid(f"bad grid '{part}'", [{"field": "grid", "message": "values must be integers"}])
        parsed["t_grid" if axis == "T" else "k_grid"] = numbers
    return parsed


@main.command()
@common_options
@click.option("--grid", help="Grid override, e.g. T=1000,10000,100000")
@handle_errors
def sweep(grid, **kwargs):
    """Loss over a grid of horizons and/or user counts."""
    _run("sweep", **(parse_grid(grid) if grid else {}), **kwargs)


@main.command()
@common_options
@click.option("--grid", help="User-count grid, e.g. K=20,40,80")
@handle_errors
def equilibrium(grid, **kwargs):
    """Closed-form optimal mixed strategy versus Nash split over K."""
    _run("equilibrium", **(parse_grid(grid) if grid else {}), **kwargs)


@main.command()
@handle_errors
def fixtures():
    """List bundled fixtures."""
    for name, config in bundled_fixtures().items():
        click.echo(f"{name}\t{config.mode}\tN={config.n_channels} T={config.horizon} K={config.users}")


if __name__ == "__main__":
    main()
