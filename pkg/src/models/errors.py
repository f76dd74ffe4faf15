"""Exceptions raised by the bandit medium access library."""
from typing import Any, Dict, List, Optional


class BanditError(Exception):
    """Base class for every error the library raises on purpose."""

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable form used by the CLI error object."""
        return {"error": type(self).__name__, "message": str(self), "fields": []}


class ZeroLikelihood(BanditError):
    """An observation has probability zero under every atom of the prior."""


class StateSpaceExceeded(BanditError):
    """A count-state table grew past the configured cap."""

    def __init__(self, states: int, cap: int):
        super().__init__(f"state space exceeded: {states} states > cap {cap}")
        self.states = states
        self.cap = cap


class UnknownState(BanditError):
    """A (counts, horizon) pair is not present in a value table."""


class UninitializedChannel(BanditError):
    """An index was requested for a channel that was never sensed."""


class DivergenceInfinite(BanditError):
    """D(p||q) is infinite because q is 0 or 1 while p differs from q."""


class AllChannelsBusy(BanditError):
    """Every channel has zero availability, so no allocation exists."""


class ConfigInvalid(BanditError):
    """An experiment configuration failed validation."""

    def __init__(self, message: str, errors: Optional[List[Dict[str, str]]] = None):
        super().__init__(message)
        self.errors = errors or []

    def to_dict(self) -> Dict[str, Any]:
        payload = super().to_dict()
        payload["fields"] = self.errors
        return payload


class ResultsIoError(BanditError):
    """Result rows could not be written or read."""
