"""Experiment configuration documents."""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.config.settings import (
    DEFAULT_BANDWIDTH,
    DEFAULT_DISCOUNT,
    DEFAULT_REPLICATIONS,
    DEFAULT_SEED,
    DEFAULT_STATE_CAP,
    DEFAULT_TRUNCATION_EPS,
    DEFAULT_WORKERS,
)
from src.models.channel import DiscretePrior, ThetaVector
from src.models.errors import ConfigInvalid
from src.services.rng import MAX_SEED

logger = logging.getLogger(__name__)

Mode = Literal["dp", "single-user", "multi-user", "sweep", "equilibrium"]


class ExperimentConfig(BaseModel):
    """One experiment: the channel model, the strategies to run and how to run them.

    Exactly one of ``theta`` (known availabilities) and ``prior`` (theta
    redrawn per replication) is set. ``belief`` optionally gives the prior
    Bayesian strategies reason with in a known-theta run.
    """
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    mode: Mode
    n_channels: Optional[int] = Field(None, ge=1)
    horizon: int = Field(..., ge=1, description="Slots per block (T)")
    users: int = Field(1, ge=1, description="Competing users (K)")
    sensing: int = Field(1, ge=1, description="Channels sensed per slot (M)")
    bandwidth: float = Field(DEFAULT_BANDWIDTH, gt=0, description="Bits per free slot (B)")
    theta: Optional[ThetaVector] = None
    prior: Optional[DiscretePrior] = None
    belief: Optional[DiscretePrior] = None
    strategies: List[str] = Field(default_factory=lambda: ["ucb1"])
    user_strategies: Optional[List[str]] = None
    replications: int = Field(DEFAULT_REPLICATIONS, ge=1)
    seed: int = Field(DEFAULT_SEED, ge=0, le=MAX_SEED)
    output: Optional[str] = None
    format: Literal["csv", "json"] = "csv"
    t_grid: Optional[List[int]] = None
    k_grid: Optional[List[int]] = None
    discount: float = Field(DEFAULT_DISCOUNT, gt=0, lt=1)
    truncation_eps: float = Field(DEFAULT_TRUNCATION_EPS, gt=0)
    exact: bool = True
    state_cap: int = Field(DEFAULT_STATE_CAP, ge=1)
    oracle_priors: int = Field(0, ge=0, description="Random two-atom priors checked against the exhaustive oracle")
    oracle_horizons: List[int] = Field(default_factory=lambda: [2, 3, 4])
    workers: int = Field(DEFAULT_WORKERS, ge=1)
    trace: bool = False

    @field_validator("theta", mode="before")
    @classmethod
    def _theta_from_list(cls, value):
        if isinstance(value, (list, tuple)):
            return {"values": list(value)}
        return value

    @field_validator("t_grid", "k_grid", "oracle_horizons")
    @classmethod
    def _positive_grid(cls, values):
        if values is not None and (not values or any(v < 1 for v in values)):
            raise ValueError("grid values must be positive integers")
        return values

    @model_validator(mode="after")
    def _consistent(self):
        if (self.theta is None) == (self.prior is None):
            raise ValueError("exactly one of theta and prior must be set")
        width = self.theta.n_channels if self.theta is not None else self.prior.n_channels
        if self.n_channels is None:
            self.n_channels = width
        elif self.n_channels != width:
            raise ValueError(f"n_channels={self.n_channels} but theta/prior has {width} channels")
        if self.belief is not None and self.belief.n_channels != width:
            raise ValueError("belief and theta disagree on the number of channels")
        if self.sensing > self.n_channels:
            raise ValueError(f"sensing M={self.sensing} exceeds N={self.n_channels}")
        if self.user_strategies is not None and len(self.user_strategies) != self.users:
            raise ValueError(f"user_strategies lists {len(self.user_strategies)} strategies for {self.users} users")
        if self.mode == "sweep" and not (self.t_grid or self.k_grid):
            raise ValueError("sweep mode needs t_grid or k_grid")
        if self.mode == "equilibrium" and self.theta is None:
            raise ValueError("equilibrium mode needs a known theta")
        if self.mode == "multi-user" and self.sensing != 1:
            raise ValueError("multi-user runs sense one channel per user")
        if not self.strategies and not self.user_strategies and self.mode not in ("dp", "equilibrium"):
            raise ValueError("at least one strategy is required")
        return self

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """Copy with the non-None overrides applied and revalidated."""
        data = self.model_dump(mode="json")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return parse_config(data)


def _field_errors(error: ValidationError) -> List[Dict[str, str]]:
    return [
        {"field": ".".join(str(p) for p in e["loc"]) or "config", "message": e["msg"]}
        for e in error.errors()
    ]


def parse_config(data: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        errors = _field_errors(e)
        raise ConfigInvalid(f"invalid experiment config: {len(errors)} problem(s)", errors) from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigInvalid(f"config file not found: {path}", [{"field": "config", "message": "file not found"}])
    except json.JSONDecodeError as e:
        raise ConfigInvalid(f"config file {path} is not valid JSON: {e}",
                            [{"field": "config", "message": str(e)}])
    logger.info(f"Loaded experiment config from {path}")
    return parse_config(data)
