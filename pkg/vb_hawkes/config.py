"""
Runtime settings read from the environment (and an optional ``.env`` file).
"""

import os
import logging
from dataclasses import dataclass

from dotenv import load_dotenv

DEFAULT_CACHE_DIR = '.cache'
DEFAULT_CACHE_TTL = 86400  # 24 hours


@dataclass
class Settings:
    """Process-wide settings; CLI flags take precedence over these"""
    cache_dir: str = DEFAULT_CACHE_DIR
    cache_ttl: int = DEFAULT_CACHE_TTL
    log_level: str = 'INFO'
    workers: int = 1


def _read_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if value is None:
        return default
    try:
        return int(value)
    except ValueError:
        logging.warning(f"Invalid {name} value '{value}', using default")
        return default


def load_settings() -> Settings:
    """
    Load settings from environment variables

    Recognised variables:
        CACHE_DIR: directory for cached fit results (default: .cache)
        CACHE_TTL: cache time-to-live in seconds, -1 for no expiry (default: 86400)
        VB_HAWKES_LOG_LEVEL: logging level name (default: INFO)
        VB_HAWKES_WORKERS: threads used by grid selection (default: 1)

    Returns:
        Settings instance
    """
    load_dotenv()

    workers = _read_int('VB_HAWKES_WORKERS', 1)
    if workers < 1:
        logging.warning(f"VB_HAWKES_WORKERS must be positive, got {workers}; using 1")
        workers = 1

    return Settings(
        cache_dir=os.getenv('CACHE_DIR', DEFAULT_CACHE_DIR),
        cache_ttl=_read_int('CACHE_TTL', DEFAULT_CACHE_TTL),
        log_level=os.getenv('VB_HAWKES_LOG_LEVEL', 'INFO').upper(),
        workers=workers,
    )
