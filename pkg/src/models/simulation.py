"""Seeded block simulation for one or many users.

Each replication owns independent streams (theta draw, channel states,
contention backoff, one per user) derived from ``(seed, replication)``.
Replications are simulated in batches; a batch's rows never interact, so
results are identical however replications are split across workers.
"""
import logging
import math
import multiprocessing
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import stats

from src.config.settings import DEFAULT_DISCOUNT, DEFAULT_STATE_CAP, DEFAULT_TRUNCATION_EPS, SLOT_CHUNK
from src.models.channel import DiscretePrior, ThetaVector, sample_theta
from src.models.multiuser import resolve_batch
from src.models.schemas import LossReport, MultiuserReport
from src.models.strategies import StrategyContext, build_strategy
from src.services.rng import ROLE_CHANNEL, ROLE_CONTENTION, ROLE_THETA, RngSeed

logger = logging.getLogger(__name__)

CI_LEVEL = 0.95


class SlotTrace(BaseModel):
    """What one user sensed (1-based channels) and sent in one slot of one replication."""
    model_config = ConfigDict(frozen=True)

    replication: int
    slot: int
    user: int = 0
    channels: List[int]
    free: List[bool]
    transmitted: List[bool]


class BlockResult(BaseModel):
    """Bits transmitted over one block, with the per-slot trace."""
    bits: float
    per_user_bits: List[float]
    pseudo_loss_bits: float
    sense_slots: List[List[int]]
    theta: List[float]
    trace: List[SlotTrace] = []


class SimulationSpec(BaseModel):
    """Everything a worker needs to rebuild and run a batch of replications."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    strategies: Tuple[str, ...]
    horizon: int
    bandwidth: float = 1.0
    sensing: int = 1
    theta: Optional[ThetaVector] = None
    prior: Optional[DiscretePrior] = None
    belief: Optional[DiscretePrior] = None
    seed: int = 0
    discount: float = DEFAULT_DISCOUNT
    truncation_eps: float = DEFAULT_TRUNCATION_EPS
    exact: bool = True
    state_cap: int = DEFAULT_STATE_CAP

    @model_validator(mode="after")
    def _one_source(self):
        if (self.theta is None) == (self.prior is None):
            raise ValueError("exactly one of theta and prior must be set")
        if not self.strategies:
            raise ValueError("at least one user strategy is required")
        if len(self.strategies) > 1 and self.sensing != 1:
            raise ValueError("multi-user runs sense one channel per user")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        return self

    @property
    def users(self) -> int:
        return len(self.strategies)

    @property
    def n_channels(self) -> int:
        return self.theta.n_channels if self.theta is not None else self.prior.n_channels

    def effective_belief(self) -> DiscretePrior:
        if self.belief is not None:
            return self.belief
        if self.prior is not None:
            return self.prior
        return DiscretePrior.point_mass(self.theta)


@dataclass
class BatchResult:
    """Raw per-replication arrays for replications [start, stop)."""
    start: int
    bits: np.ndarray
    pseudo_loss: np.ndarray
    sensed: np.ndarray
    thetas: np.ndarray
    trace: List[SlotTrace] = field(default_factory=list)


def draw_thetas(spec: SimulationSpec, start: int, stop: int) -> np.ndarray:
    """Per-replication availability: fixed theta, or one prior draw per replication."""
    if spec.theta is not None:
        return np.tile(spec.theta.as_array(), (stop - start, 1))
    return np.stack([
        sample_theta(spec.prior, RngSeed(seed=spec.seed, stream=rep).generator(ROLE_THETA)).as_array()
        for rep in range(start, stop)
    ])


def top_sum(thetas: np.ndarray, m: int) -> np.ndarray:
    return np.sort(thetas, axis=1)[:, ::-1][:, :m].sum(axis=1)


def simulate_batch(spec: SimulationSpec, start: int, stop: int, trace: bool = False) -> BatchResult:
    """Run replications ``start .. stop - 1``; traces cover replication ``start`` only."""
    rows = stop - start
    n, m, users = spec.n_channels, spec.sensing, spec.users
    thetas = draw_thetas(spec, start, stop)
    seeds = [RngSeed(seed=spec.seed, stream=rep) for rep in range(start, stop)]
    channel_rngs = [s.generator(ROLE_CHANNEL) for s in seeds]
    contention_rngs = [s.generator(ROLE_CONTENTION) for s in seeds]
    user_rngs = [[s.user_generator(k) for s in seeds] for k in range(users)]

    belief = spec.effective_belief()
    strategies = [
        build_strategy(name, StrategyContext(
            n_channels=n, horizon=spec.horizon, theta=thetas, sensing=m, bandwidth=spec.bandwidth,
            users=users, user=k, belief=belief, discount=spec.discount,
            truncation_eps=spec.truncation_eps, exact=spec.exact, state_cap=spec.state_cap))
        for k, name in enumerate(spec.strategies)
    ]

    bits = np.zeros((rows, users))
    pseudo = np.zeros(rows)
    best = top_sum(thetas, m)
    records: List[SlotTrace] = []
    done = 0
    while done < spec.horizon:
        size = min(SLOT_CHUNK, spec.horizon - done)
        states = np.stack([g.random((size, n)) for g in channel_rngs]) < thetas[:, None, :]
        uniforms = [np.stack([g.random((size, n + 1)) for g in rngs]) for rngs in user_rngs]
        backoff = np.stack([g.random((size, users, 2)) for g in contention_rngs]) if users > 1 else None

        for t in range(size):
            slot = done + t + 1
            chosen = [s.choose(slot, u[:, t]) for s, u in zip(strategies, uniforms)]
            free = [np.take_along_axis(states[:, t], c, axis=1) for c in chosen]
            if users == 1:
                sent = [free[0]]
                pseudo += best - np.take_along_axis(thetas, chosen[0], axis=1).sum(axis=1)
            else:
                won = resolve_batch(np.hstack(chosen), np.hstack(free), backoff[:, t, :, 0], backoff[:, t, :, 1])
                sent = [won[:, k:k + 1] for k in range(users)]
            for k in range(users):
                bits[:, k] += sent[k].sum(axis=1)
                strategies[k].observe(slot, chosen[k], free[k])
            if trace:
                records.extend(
                    SlotTrace(replication=start, slot=slot, user=k, channels=(chosen[k][0] + 1).tolist(),
                              free=free[k][0].tolist(), transmitted=sent[k][0].tolist())
                    for k in range(users))
        done += size

    sensed = np.stack([s.sensed for s in strategies], axis=1)
    logger.debug(f"Simulated replications {start}..{stop - 1} of {spec.strategies}")
    return BatchResult(start=start, bits=bits * spec.bandwidth, pseudo_loss=pseudo * spec.bandwidth,
                       sensed=sensed, thetas=thetas, trace=records)


def _run_chunk(args: Tuple[SimulationSpec, int, int, bool]) -> BatchResult:
    spec, start, stop, trace = args
    return simulate_batch(spec, start, stop, trace)


def run_replications(spec: SimulationSpec, replications: int, workers: int = 1,
                     trace: bool = False) -> BatchResult:
    """All replications, fanned out over a process pool when ``workers`` > 1
    and concatenated in replication order."""
    if replications < 1:
        raise ValueError(f"replications must be >= 1, got {replications}")
    workers = max(1, min(workers, replications))
    size = math.ceil(replications / workers)
    jobs = [(spec, a, min(a + size, replications), trace and a == 0) for a in range(0, replications, size)]
    if workers == 1:
        parts = [_run_chunk(job) for job in jobs]
    else:
        with multiprocessing.get_context().Pool(workers) as pool:
            parts = pool.map(_run_chunk, jobs)
    return BatchResult(
        start=0,
        bits=np.concatenate([p.bits for p in parts]),
        pseudo_loss=np.concatenate([p.pseudo_loss for p in parts]),
        sensed=np.concatenate([p.sensed for p in parts]),
        thetas=np.concatenate([p.thetas for p in parts]),
        trace=[r for p in parts for r in p.trace],
    )


def _to_block(result: BatchResult) -> BlockResult:
    return BlockResult(
        bits=float(result.bits[0].sum()),
        per_user_bits=result.bits[0].tolist(),
        pseudo_loss_bits=float(result.pseudo_loss[0]),
        sense_slots=result.sensed[0].tolist(),
        theta=result.thetas[0].tolist(),
        trace=result.trace,
    )


def run_block(strategy: str, theta: ThetaVector, horizon: int, bandwidth: float, seed: RngSeed,
              sensing: int = 1, belief: Optional[DiscretePrior] = None, trace: bool = True,
              **options) -> BlockResult:
    """One block of ``horizon`` slots for a single user on the replication
    stream selected by ``seed``."""
    spec = SimulationSpec(strategies=(strategy,), horizon=horizon, bandwidth=bandwidth, sensing=sensing,
                          theta=theta, belief=belief, seed=seed.seed, **options)
    return _to_block(simulate_batch(spec, seed.stream, seed.stream + 1, trace))


def run_multiuser_block(strategies: Sequence[str], horizon: int, bandwidth: float, seed: RngSeed,
                        theta: Optional[ThetaVector] = None, prior: Optional[DiscretePrior] = None,
                        trace: bool = False, **options) -> BlockResult:
    """One block with one user per entry of ``strategies`` contending for channels."""
    spec = SimulationSpec(strategies=tuple(strategies), horizon=horizon, bandwidth=bandwidth,
                          theta=theta, prior=prior, seed=seed.seed, **options)
    return _to_block(simulate_batch(spec, seed.stream, seed.stream + 1, trace))


def centralized_bound(thetas: np.ndarray, users: int, horizon: int, bandwidth: float) -> np.ndarray:
    """Bits from assigning each user its own channel, best channels first."""
    return bandwidth * horizon * top_sum(thetas, min(users, thetas.shape[1]))


def _mean_ci(values: np.ndarray) -> Tuple[float, float]:
    mean = float(np.mean(values))
    if len(values) < 2:
        return mean, 0.0
    z = stats.norm.ppf(0.5 + CI_LEVEL / 2)
    return mean, float(z * np.std(values, ddof=1) / math.sqrt(len(values)))


def measure_loss(spec: SimulationSpec, replications: int, workers: int = 1,
                 trace: bool = False) -> Tuple[LossReport, List[SlotTrace]]:
    """Genie bits minus realized bits for a single-user spec, with a normal
    confidence interval, plus the expected (pseudo) loss of the choices made."""
    if spec.users != 1:
        raise ValueError("measure_loss takes a single-user spec")
    result = run_replications(spec, replications, workers, trace)
    genie = spec.bandwidth * spec.horizon * top_sum(result.thetas, spec.sensing)
    realized = result.bits[:, 0]
    losses = genie - realized
    mean_loss, ci = _mean_ci(losses)
    pseudo, pseudo_ci = _mean_ci(result.pseudo_loss)
    report = LossReport(
        strategy=spec.strategies[0],
        horizon=spec.horizon,
        replications=replications,
        genie_bits=float(np.mean(genie)),
        mean_bits=float(np.mean(realized)),
        losses=losses.tolist(),
        mean_loss_bits=mean_loss,
        ci_bits=ci,
        pseudo_loss_bits=pseudo,
        pseudo_ci_bits=pseudo_ci,
        sense_slots=result.sensed[:, 0].mean(axis=0).tolist(),
    )
    logger.info(f"{report.strategy}: T={spec.horizon} loss {mean_loss:.6g} +/- {ci:.3g} bits")
    return report, result.trace


def measure_multiuser(spec: SimulationSpec, replications: int, workers: int = 1,
                      trace: bool = False) -> Tuple[MultiuserReport, List[SlotTrace]]:
    result = run_replications(spec, replications, workers, trace)
    per_user = [_mean_ci(result.bits[:, k]) for k in range(spec.users)]
    total = result.bits.sum(axis=1)
    bound = centralized_bound(result.thetas, spec.users, spec.horizon, spec.bandwidth)
    loss, ci = _mean_ci(bound - total)
    report = MultiuserReport(
        strategies=list(spec.strategies),
        horizon=spec.horizon,
        replications=replications,
        per_user_bits=[m for m, _ in per_user],
        per_user_ci_bits=[c for _, c in per_user],
        total_bits=float(np.mean(total)),
        centralized_bits=float(np.mean(bound)),
        loss_bits=loss,
        ci_bits=ci,
        selection_freq=(result.sensed.mean(axis=0) / spec.horizon).tolist(),
    )
    logger.info(f"{spec.users} users {sorted(set(spec.strategies))}: T={spec.horizon} "
                f"total {report.total_bits:.6g} of {report.centralized_bits:.6g} bits")
    return report, result.trace
