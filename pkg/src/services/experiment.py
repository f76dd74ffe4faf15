"""Experiment orchestration: turns an ExperimentConfig into result rows."""
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

from src.config.experiment_config import ExperimentConfig
from src.models.bayes_dp import (
    history_tree_value,
    myopic_policy,
    optimal_action,
    optimal_value,
    policy_tree,
    policy_value,
    static_value,
    switch_is_absorbing,
)
from src.models.channel import DiscretePrior, ObservationCounts, ThetaVector
from src.models.errors import ConfigInvalid
from src.models.index_strategies import (
    fit_exponent,
    lower_bound_constant,
    optimistic_switching_fraction,
    optimistic_switching_loss,
    random_strategy_loss,
)
from src.models.multiuser import (
    equilibrium_report,
    kkt_optimal_mixed,
    loss_slope,
    nash_fractions,
    symmetric_throughput,
)
from src.models.schemas import MixedStrategy, ResultRow
from src.models.simulation import SimulationSpec, SlotTrace, measure_loss, measure_multiuser
from src.models.strategies import STRATEGIES
from src.services.rng import ROLE_THETA, RngSeed

logger = logging.getLogger(__name__)

PROPORTIONAL = {"nash-tau", "rule2"}
OPTIMAL_MIXED = {"kkt-mixed", "rule3"}


@dataclass
class ExperimentResult:
    rows: List[ResultRow]
    traces: Dict[str, List[SlotTrace]] = field(default_factory=dict)
    policy_tree: Optional[dict] = None


def _base_row(config: ExperimentConfig, strategy: str, **values) -> ResultRow:
    fields = dict(
        experiment=config.name,
        mode=config.mode,
        strategy=strategy,
        n_channels=config.n_channels,
        horizon_slots=config.horizon,
        users=config.users,
        sensing=config.sensing,
        bandwidth_bits=config.bandwidth,
        replications=config.replications,
        seed=config.seed,
    )
    fields.update(values)
    return ResultRow(**fields)


def _check_strategies(names: Sequence[str]) -> None:
    unknown = [n for n in names if n not in STRATEGIES]
    if unknown:
        raise ConfigInvalid(f"unknown strategies {unknown}",
                            [{"field": "strategies", "message": f"choose from {sorted(STRATEGIES)}"}])


def _labels(channels) -> List[int]:
    return [c + 1 for c in (channels if isinstance(channels, tuple) else (channels,))]


# dp mode

def random_two_atom_prior(seed: int, index: int, known_second: bool = False) -> DiscretePrior:
    """Two-channel, two-atom prior with tenths as probabilities; with
    ``known_second`` both atoms share channel 2's availability."""
    rng = RngSeed(seed=seed, stream=index).generator(ROLE_THETA)
    tenths = [Fraction(int(v), 10) for v in rng.integers(0, 11, size=4)]
    weight = Fraction(int(rng.integers(1, 10)), 10)
    a, b, c, d = tenths
    if known_second:
        d = b
    return DiscretePrior.of([[a, b], [c, d]], [weight, 1 - weight])


def oracle_check(config: ExperimentConfig) -> Tuple[bool, bool]:
    """Exact DP against the history-tree oracle on random priors, and the
    absorbing-switch property on their known-channel variants."""
    matches, absorbing = True, True
    for i in range(config.oracle_priors):
        prior = random_two_atom_prior(config.seed, i)
        known = random_two_atom_prior(config.seed, i, known_second=True)
        for horizon in config.oracle_horizons:
            value, _ = optimal_value(prior, horizon, config.bandwidth, state_cap=config.state_cap)
            if value != history_tree_value(prior, horizon, config.bandwidth):
                logger.warning(f"DP disagrees with the history-tree oracle for prior {i}, T={horizon}")
                matches = False
            _, table = optimal_value(known, horizon, config.bandwidth, state_cap=config.state_cap)
            if not switch_is_absorbing(table, 1):
                logger.warning(f"Switch to the known channel is not absorbing for prior {i}, T={horizon}")
                absorbing = False
    logger.info(f"Checked {config.oracle_priors} random priors: oracle_match={matches}, absorbing={absorbing}")
    return matches, absorbing


def run_dp(config: ExperimentConfig, with_tree: bool = False) -> ExperimentResult:
    prior = config.prior if config.prior is not None else DiscretePrior.point_mass(config.theta)
    value, table = optimal_value(prior, config.horizon, config.bandwidth, sensing=config.sensing,
                                 exact=config.exact, state_cap=config.state_cap)
    root = ObservationCounts.zeros(prior.n_channels)
    first, _ = optimal_action(table, root, config.horizon)
    extras = {}
    if config.sensing == 1:
        extras["myopic_bayes_bits"] = float(policy_value(prior, config.horizon, config.bandwidth, myopic_policy,
                                                         exact=config.exact))
        if config.horizon >= 2:
            for label, free in (("action_after_free", True), ("action_after_busy", False)):
                after = root.model_copy(deep=True)
                after.record(first, free)
                if (after.key(), config.horizon - 1) in table:
                    extras[label] = _labels(optimal_action(table, after, config.horizon - 1)[0])
    if config.oracle_priors:
        extras["oracle_match"], extras["absorbing"] = oracle_check(config)
    row = _base_row(
        config, "dp-optimal",
        replications=0,
        value_bits=float(value),
        value_exact=str(value) if isinstance(value, Fraction) else None,
        myopic_bits=float(static_value(prior, config.horizon, config.bandwidth, config.sensing)),
        first_action=_labels(first),
        **extras,
    )
    logger.info(f"{config.name}: V*={value} over {config.horizon} slots, first action {row.first_action}")
    return ExperimentResult(rows=[row], policy_tree=policy_tree(table) if with_tree else None)


# simulation modes

def _spec(config: ExperimentConfig, strategies: Tuple[str, ...]) -> SimulationSpec:
    return SimulationSpec(
        strategies=strategies,
        horizon=config.horizon,
        bandwidth=config.bandwidth,
        sensing=config.sensing,
        theta=config.theta,
        prior=config.prior,
        belief=config.belief,
        seed=config.seed,
        discount=config.discount,
        truncation_eps=config.truncation_eps,
        exact=config.exact,
        state_cap=config.state_cap,
    )


def _single_user_reference(config: ExperimentConfig, name: str) -> Dict[str, object]:
    """Closed forms that apply to a known-theta single-user run."""
    theta = config.theta
    if theta is None:
        return {}
    values = {}
    if config.sensing == 1:
        values["lower_bound_bits"] = lower_bound_constant(theta, config.bandwidth).bits_per_log_t
    if name == "genie":
        values["closed_form_bits"] = 0.0
    elif name == "random" and config.sensing == 1:
        values["closed_form_bits"] = random_strategy_loss(theta, config.horizon, config.bandwidth)
    elif name == "stay-with-winner-optimistic":
        values["closed_form_bits"] = optimistic_switching_loss(theta, config.horizon, config.bandwidth)
        share = optimistic_switching_fraction(theta)
        order = sorted(range(theta.n_channels), key=lambda i: (-theta.values[i], i))
        reference = [0.0] * theta.n_channels
        reference[order[0]] = 1.0 - share
        if theta.n_channels > 1:
            reference[order[1]] = share
        values["reference_freq"] = reference
    return values


def run_single_user(config: ExperimentConfig, trace: bool = False) -> ExperimentResult:
    _check_strategies(config.strategies)
    rows, traces = [], {}
    for name in config.strategies:
        report, records = measure_loss(_spec(config, (name,)), config.replications, config.workers, trace)
        per_log = report.mean_loss_bits / math.log(config.horizon) if config.horizon > 1 else None
        rows.append(_base_row(
            config, name,
            mean_bits=report.mean_bits,
            genie_bits=report.genie_bits,
            mean_loss_bits=report.mean_loss_bits,
            ci_bits=report.ci_bits,
            pseudo_loss_bits=report.pseudo_loss_bits,
            pseudo_ci_bits=report.pseudo_ci_bits,
            loss_per_log_t_bits=per_log,
            sense_slots=report.sense_slots,
            selection_freq=[s / (config.horizon * config.sensing) for s in report.sense_slots],
            **_single_user_reference(config, name),
        ))
        if trace:
            traces[f"{name}-T{config.horizon}"] = records
    return ExperimentResult(rows=rows, traces=traces)


def _populations(config: ExperimentConfig) -> List[Tuple[str, ...]]:
    if config.user_strategies:
        return [tuple(config.user_strategies)]
    return [(name,) * config.users for name in config.strategies]


def _multiuser_reference(config: ExperimentConfig, population: Tuple[str, ...]) -> Dict[str, object]:
    if config.theta is None or len(set(population)) != 1:
        return {}
    name = population[0]
    if name in PROPORTIONAL:
        strategy = MixedStrategy(probabilities=tuple(nash_fractions(config.theta)))
    elif name in OPTIMAL_MIXED:
        strategy, _ = kkt_optimal_mixed(config.theta, config.users)
    else:
        return {}
    closed = symmetric_throughput(config.theta, config.users, strategy, config.horizon, config.bandwidth)
    return {"reference_freq": list(strategy.probabilities), "closed_form_bits": closed.per_user_bits}


def run_multi_user(config: ExperimentConfig, trace: bool = False) -> ExperimentResult:
    rows, traces = [], {}
    for population in _populations(config):
        _check_strategies(population)
        report, records = measure_multiuser(_spec(config, population), config.replications, config.workers, trace)
        label = population[0] if len(set(population)) == 1 else "+".join(population)
        freq = [sum(f[i] for f in report.selection_freq) / len(population) for i in range(config.n_channels)]
        rows.append(_base_row(
            config, label,
            mean_bits=sum(report.per_user_bits) / len(population),
            genie_bits=report.centralized_bits,
            mean_loss_bits=report.loss_bits,
            ci_bits=report.ci_bits,
            per_user_bits=report.per_user_bits,
            selection_freq=freq,
            **_multiuser_reference(config, population),
        ))
        if trace:
            traces[f"{label}-K{config.users}-T{config.horizon}"] = records
    return ExperimentResult(rows=rows, traces=traces)


# closed forms

def run_equilibrium(config: ExperimentConfig) -> ExperimentResult:
    theta: ThetaVector = config.theta
    grid = config.k_grid or [config.users]
    slopes = {}
    if len(grid) >= 2:
        slopes = {"slope_p_star": loss_slope(theta, grid), "slope_nash": loss_slope(theta, grid, nash=True)}
    rows = []
    for users in grid:
        report = equilibrium_report(theta, users, config.horizon, config.bandwidth)
        per_user_loss = report.loss_bits_p_star / users
        rows.append(_base_row(
            config, "equilibrium",
            users=users,
            replications=0,
            closed_form_bits=report.per_user_bits_p_star,
            genie_bits=report.centralized_bits,
            per_user_bits=[report.per_user_bits_p_star, report.per_user_bits_nash],
            loss_p_star_bits=report.loss_bits_p_star,
            loss_nash_bits=report.loss_bits_nash,
            per_user_loss_p_star_bits=per_user_loss,
            c1=_finite(report.c1),
            c2=_finite(report.c2),
            nash_stable=report.nash_stable,
            p_star_deviation_gain_bits=report.p_star_deviation_gain_bits,
            p_star=report.p_star,
            tau=report.tau,
            **slopes,
        ))
    return ExperimentResult(rows=rows)


def _finite(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


# sweeps

def run_sweep(config: ExperimentConfig, trace: bool = False) -> ExperimentResult:
    t_grid = config.t_grid or [config.horizon]
    k_grid = config.k_grid or [config.users]
    rows, traces = [], {}
    for users in k_grid:
        for horizon in t_grid:
            mode = "single-user" if users == 1 and not config.user_strategies else "multi-user"
            point = config.model_copy(update={"horizon": horizon, "users": users, "mode": mode})
            logger.info(f"{config.name}: sweep point T={horizon}, K={users}")
            result = run_single_user(point, trace) if mode == "single-user" else run_multi_user(point, trace)
            rows.extend(r.model_copy(update={"mode": "sweep"}) for r in result.rows)
            traces.update(result.traces)
    return ExperimentResult(rows=_with_exponents(rows), traces=traces)


def _with_exponents(rows: List[ResultRow]) -> List[ResultRow]:
    """Fill ``fitted_exponent``: slope of log loss against log T per
    (strategy, K), using the pseudo-loss when it was measured."""
    groups: Dict[Tuple[str, int], List[ResultRow]] = {}
    for row in rows:
        groups.setdefault((row.strategy, row.users), []).append(row)
    exponents = {}
    for group_key, group in groups.items():
        horizons = [r.horizon_slots for r in group]
        losses = [r.pseudo_loss_bits if r.pseudo_loss_bits is not None else r.mean_loss_bits for r in group]
        if len(set(horizons)) < 2 or any(v is None or v <= 0 for v in losses):
            continue
        exponents[group_key] = fit_exponent(horizons, losses)
    return [
        r.model_copy(update={"fitted_exponent": exponents.get((r.strategy, r.users))}) for r in rows
    ]


def run_experiment(config: ExperimentConfig, trace: Optional[bool] = None, with_tree: bool = False) -> ExperimentResult:
    """Run one configured experiment; deterministic given the config and its seed."""
    trace = config.trace if trace is None else trace
    logger.info(f"Starting experiment '{config.name}' in {config.mode} mode")
    if config.mode == "dp":
        result = run_dp(config, with_tree)
    elif config.mode == "single-user":
        result = run_single_user(config, trace)
    elif config.mode == "multi-user":
        result = run_multi_user(config, trace)
    elif config.mode == "sweep":
        result = run_sweep(config, trace)
    else:
        result = run_equilibrium(config)
    logger.info(f"Experiment '{config.name}' produced {len(result.rows)} rows")
    return result
