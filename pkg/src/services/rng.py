"""Seeded, splittable random streams.

Every replication owns a family of independent generators derived from
``SeedSequence(seed, spawn_key=(replication, role))``. Adding replications
or users never perturbs the draws of existing ones, and the draws do not
depend on which worker runs a replication.
"""
import numpy as np
from pydantic import BaseModel, ConfigDict, Field

# Stream roles inside one replication
ROLE_THETA = 0
ROLE_CHANNEL = 1
ROLE_CONTENTION = 2
ROLE_USER_BASE = 3

MAX_SEED = 2**64 - 1


class RngSeed(BaseModel):
    """A base seed plus the replication index that selects a stream family."""
    model_config = ConfigDict(frozen=True)

    seed: int = Field(..., ge=0, le=MAX_SEED, description="64-bit unsigned base seed")
    stream: int = Field(0, ge=0, description="Replication index")

    def generator(self, role: int) -> np.random.Generator:
        """Independent generator for one role (theta, channel, contention, user k)."""
        return make_generator(self.seed, self.stream, role)

    def user_generator(self, user: int) -> np.random.Generator:
        return self.generator(ROLE_USER_BASE + user)


def make_generator(seed: int, stream: int, role: int) -> np.random.Generator:
    sequence = np.random.SeedSequence(seed, spawn_key=(stream, role))
    return np.random.Generator(np.random.PCG64(sequence))
