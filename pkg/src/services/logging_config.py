"""Logging configuration for the bandit medium access simulator."""
import logging
import os
from pathlib import Path
from typing import Optional

from src.config.settings import LOGS_DIR

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


def log_path(log_file: str) -> Path:
    """Bare file names go under the logs directory; anything with a directory part is used as given."""
    path = Path(log_file)
    return LOGS_DIR / path if path.parent == Path(".") else path


def configure_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """Set up root logging once for CLI runs.

    Console output always; a file handler is added when ``log_file`` is set,
    falling back to console only if the file cannot be opened.
    """
    handlers = [logging.StreamHandler()]
    warning = None
    if log_file:
        path = log_path(log_file)
        try:
            os.makedirs(path.parent, exist_ok=True)
            handlers.append(logging.FileHandler(path))
        except OSError as e:
            warning = f"Could not open log file '{path}': {e}"

    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )
    if warning:
        logger.warning(warning)
    logger.debug(f"Logging configured at {level}")
