"""Runtime settings for the bandit medium access simulator."""
import os
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Base directory
BASE_DIR = Path(__file__).resolve().parent.parent.parent

# Bundled fixtures and default log location
FIXTURES_DIR = Path(__file__).resolve().parent / "fixtures"
LOGS_DIR = BASE_DIR / "logs"


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if value is None or value == "":
        return default
    return int(value)


# Experiment defaults
DEFAULT_SEED = _env_int("BML_SEED", 20240601)
DEFAULT_REPLICATIONS = _env_int("BML_REPLICATIONS", 200)
DEFAULT_WORKERS = _env_int("BML_WORKERS", 1)
DEFAULT_BANDWIDTH = float(os.getenv("BML_BANDWIDTH", "100"))

# Exact DP / stopping-index tables refuse to grow past this many states
DEFAULT_STATE_CAP = _env_int("BML_STATE_CAP", 5_000_000)

# Gittins defaults
DEFAULT_DISCOUNT = 0.9
DEFAULT_TRUNCATION_EPS = 1e-6

# Slots simulated per vectorized chunk
SLOT_CHUNK = 1024

# Logging
LOG_LEVEL = os.getenv("BML_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("BML_LOG_FILE") or None

# Floating-point comparisons in float-mode DP
FLOAT_TOL = 1e-12
