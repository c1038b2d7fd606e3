"""
Runtime defaults and solver options.

Environment variables:
    INTERVAL_SAR_SEED       default seed for every randomized command
    INTERVAL_SAR_JOBS       default worker count (falls back to cpu count)
    INTERVAL_SAR_LOG_LEVEL  logging level name for the CLI (default WARNING)

Command-line flags always take precedence over these values.
"""

import logging
import os
from dataclasses import dataclass

DEFAULT_SEED = 20240917
DEFAULT_PERMUTATIONS = 999
DEFAULT_LOG_LEVEL = "WARNING"

logger = logging.getLogger(__name__)


def _int_from_env(name: str, default: int) -> int:
    env_value = os.getenv(name)
    if env_value is None or env_value.strip() == "":
        return default
    try:
        return int(env_value)
    except ValueError:
        logger.warning("Invalid %s value '%s', using default %d", name, env_value, default)
        return default


def get_default_seed() -> int:
    """
    Seed used when no --seed flag is given.

    Returns:
        int: INTERVAL_SAR_SEED if set and parsable, else DEFAULT_SEED
    """
    return _int_from_env("INTERVAL_SAR_SEED", DEFAULT_SEED)


def get_default_jobs() -> int:
    """
    Worker count used when no --jobs flag is given.

    Returns:
        int: INTERVAL_SAR_JOBS if set, else the number of available cores
    """
    jobs = _int_from_env("INTERVAL_SAR_JOBS", os.cpu_count() or 1)
    return max(1, jobs)


def get_log_level() -> str:
    level = os.getenv("INTERVAL_SAR_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper()
    if not isinstance(logging.getLevelName(level), int):
        logger.warning("Invalid INTERVAL_SAR_LOG_LEVEL value '%s', using %s", level, DEFAULT_LOG_LEVEL)
        return DEFAULT_LOG_LEVEL
    return level


@dataclass(frozen=True)
class SolverOptions:
    """
    Numerical tolerances shared by the QP solver and the estimators.

    Attributes:
        primal_tol: Absolute slack allowed on G beta <= h
        stationarity_tol: Relative tolerance on the KKT gradient residual
        complementarity_tol: Bound on lambda_i * slack_i
        rank_tol: Relative eigenvalue threshold for Z'Z singularity
        condition_limit: Largest accepted condition number of I - rho W
        max_iter_factor: Iteration cap is factor * (p + constraints)
    """

    primal_tol: float = 1e-8
    stationarity_tol: float = 1e-6
    complementarity_tol: float = 1e-6
    rank_tol: float = 1e-10
    condition_limit: float = 1e12
    max_iter_factor: int = 100
