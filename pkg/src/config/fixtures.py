"""Bundled experiment fixtures.

Each JSON document under ``FIXTURES_DIR`` is an ExperimentConfig whose
``name`` matches its file stem.
"""
import json
import logging
from functools import lru_cache
from typing import Dict

from src.config.experiment_config import ExperimentConfig, parse_config
from src.config.settings import FIXTURES_DIR
from src.models.errors import ConfigInvalid

logger = logging.getLogger(__name__)


@lru_cache(maxsize=1)
def _documents() -> Dict[str, dict]:
    docs = {}
    for path in sorted(FIXTURES_DIR.glob("*.json")):
        docs[path.stem] = json.loads(path.read_text())
    logger.debug(f"Found {len(docs)} bundled fixtures in {FIXTURES_DIR}")
    return docs


def fixture_names():
    return list(_documents())


def load_fixture(name: str) -> ExperimentConfig:
    docs = _documents()
    if name not in docs:
        raise ConfigInvalid(f"unknown fixture '{name}'",
                            [{"field": "fixture", "message": f"choose from {sorted(docs)}"}])
    return parse_config(docs[name])


def bundled_fixtures() -> Dict[str, ExperimentConfig]:
    """Every bundled fixture, validated, by name."""
    return {name: load_fixture(name) for name in _documents()}
