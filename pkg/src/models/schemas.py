"""Pydantic records exchanged between the simulator layers and written to result files."""
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SIMPLEX_TOL = 1e-12


class MixedStrategy(BaseModel):
    """Channel-selection distribution shared by every user."""
    model_config = ConfigDict(frozen=True)

    probabilities: Tuple[float, ...]

    @field_validator("probabilities")
    @classmethod
    def _on_simplex(cls, p):
        if not p:
            raise ValueError("mixed strategy needs at least one channel")
        if any(v < 0 for v in p):
            raise ValueError("probabilities must be nonnegative")
        if abs(sum(p) - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"probabilities must sum to 1, got {sum(p):.15g}")
        return p


class ChannelContention(BaseModel):
    """One channel in one slot: who sensed it, whether it was free, who transmitted."""
    model_config = ConfigDict(frozen=True)

    contenders: Tuple[int, ...] = ()
    free: bool
    winner: Optional[int] = None

    @model_validator(mode="after")
    def _winner_consistent(self):
        if self.winner is not None and self.winner not in self.contenders:
            raise ValueError(f"winner {self.winner} is not among contenders {self.contenders}")
        if (self.winner is not None) != (self.free and bool(self.contenders)):
            raise ValueError("a winner exists exactly when the channel is free and contended")
        return self


class ContentionOutcome(BaseModel):
    model_config = ConfigDict(frozen=True)

    channels: Tuple[ChannelContention, ...]

    def winners(self) -> List[int]:
        return [c.winner for c in self.channels if c.winner is not None]


class LowerBound(BaseModel):
    model_config = ConfigDict(frozen=True)

    bits_per_log_t: float = Field(..., ge=0)
    degenerate: bool = False


class Throughput(BaseModel):
    """Closed-form throughput of K users all playing the same mixed strategy."""
    model_config = ConfigDict(frozen=True)

    per_user_bits: float
    total_bits: float
    loss_bits: float = Field(..., ge=0)
    per_user_loss_bits: float = Field(..., ge=0)


class LossReport(BaseModel):
    """Monte-Carlo loss of one strategy against the genie."""
    strategy: str
    horizon: int
    replications: int
    genie_bits: float
    mean_bits: float
    losses: List[float]
    mean_loss_bits: float
    ci_bits: float = Field(..., ge=0)
    pseudo_loss_bits: float
    pseudo_ci_bits: float = Field(..., ge=0)
    sense_slots: List[float]


class EquilibriumReport(BaseModel):
    """Closed-form comparison of the optimal symmetric strategy and the Nash split."""
    tau: List[float]
    p_star: List[float]
    lagrange_multiplier: float
    per_user_bits_p_star: float
    per_user_bits_nash: float
    loss_bits_p_star: float = Field(..., ge=0)
    loss_bits_nash: float = Field(..., ge=0)
    centralized_bits: float
    c1: float
    c2: float
    c1_prefactor_bits: float
    c2_prefactor_bits: float
    allocation: List[int]
    nash_stable: bool
    p_star_deviation_gain_bits: float

    @field_validator("tau")
    @classmethod
    def _fractions_sum_to_one(cls, tau):
        if abs(sum(tau) - 1.0) > 1e-9:
            raise ValueError("allocation fractions must sum to 1")
        return tau


class ResultRow(BaseModel):
    """One line of a result file. Field order is the column order."""
    experiment: str
    mode: str
    strategy: str
    n_channels: int
    horizon_slots: int
    users: int = 1
    sensing: int = 1
    bandwidth_bits: float
    replications: int = 0
    seed: int = 0
    mean_bits: Optional[float] = None
    genie_bits: Optional[float] = None
    mean_loss_bits: Optional[float] = None
    ci_bits: Optional[float] = Field(None, ge=0)
    pseudo_loss_bits: Optional[float] = None
    pseudo_ci_bits: Optional[float] = Field(None, ge=0)
    loss_per_log_t_bits: Optional[float] = None
    lower_bound_bits: Optional[float] = None
    closed_form_bits: Optional[float] = None
    fitted_exponent: Optional[float] = None
    per_user_bits: Optional[List[float]] = None
    sense_slots: Optional[List[float]] = None
    selection_freq: Optional[List[float]] = None
    reference_freq: Optional[List[float]] = None
    value_bits: Optional[float] = None
    value_exact: Optional[str] = None
    myopic_bits: Optional[float] = None
    myopic_bayes_bits: Optional[float] = None
    first_action: Optional[List[int]] = None
    action_after_free: Optional[List[int]] = None
    action_after_busy: Optional[List[int]] = None
    oracle_match: Optional[bool] = None
    absorbing: Optional[bool] = None
    c1: Optional[float] = None
    c2: Optional[float] = None
    loss_p_star_bits: Optional[float] = None
    loss_nash_bits: Optional[float] = None
    per_user_loss_p_star_bits: Optional[float] = None
    slope_p_star: Optional[float] = None
    slope_nash: Optional[float] = None
    nash_stable: Optional[bool] = None
    p_star_deviation_gain_bits: Optional[float] = None
    p_star: Optional[List[float]] = None
    tau: Optional[List[float]] = None


class MultiuserReport(BaseModel):
    """Monte-Carlo throughput of K competing users."""
    strategies: List[str]
    horizon: int
    replications: int
    per_user_bits: List[float]
    per_user_ci_bits: List[float]
    total_bits: float
    centralized_bits: float
    loss_bits: float
    ci_bits: float = Field(..., ge=0)
    selection_freq: List[List[float]]
