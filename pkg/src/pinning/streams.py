"""
Reproducible random streams and chunked replica execution.

Replica i of a computation draws from its own counter-based generator keyed
by (seed, purpose, i). Replicas are grouped into fixed-size chunks that a
thread pool may run in any order; results are reassembled by replica index,
so outputs never depend on the worker count.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from src.constants import config
from src.pinning.models import MomentEstimate

logger = logging.getLogger(__name__)

# Purposes keep streams for different estimators disjoint.
STREAM_ENVIRONMENT = 0
STREAM_TILTED_ENVIRONMENT = 1
STREAM_RENEWAL = 2


def replica_generator(seed: int, replica: int, purpose: int = STREAM_ENVIRONMENT) -> np.random.Generator:
    """Philox generator for one replica, keyed by (seed, purpose, replica)."""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(purpose, replica))
    return np.random.Generator(np.random.Philox(sequence))


def run_chunked(
    task: Callable[[int, int], np.ndarray],
    replicas: int,
    workers: Optional[int] = None,
    chunk_size: Optional[int] = None,
) -> np.ndarray:
    """
    Evaluate ``task(start, stop)`` over fixed chunks of replica indices and
    concatenate the results along axis 0 in replica order.
    """
    workers = workers or config.WORKERS
    chunk_size = chunk_size or config.CHUNK_SIZE
    bounds = [(start, min(start + chunk_size, replicas)) for start in range(0, replicas, chunk_size)]
    if workers == 1 or len(bounds) == 1:
        parts = [task(start, stop) for start, stop in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda bound: task(*bound), bounds))
    logger.debug(f"ran {replicas} replicas in {len(bounds)} chunks with {workers} workers")
    return np.concatenate(parts, axis=0)


def z_value(confidence: Optional[float] = None) -> float:
    """One-sided normal quantile: P(mean > point + z stderr) = 1 - confidence."""
    confidence = confidence if confidence is not None else config.CONFIDENCE
    return float(norm.ppf(confidence))


def mean_estimate(values: np.ndarray, confidence: Optional[float] = None) -> MomentEstimate:
    """Replica mean with standard error and the one-sided upper confidence limit."""
    confidence = confidence if confidence is not None else config.CONFIDENCE
    values = np.asarray(values, dtype=float)
    replicas = values.size
    stderr = float(np.std(values, ddof=1) / math.sqrt(replicas)) if replicas > 1 else 0.0
    return MomentEstimate.from_moments(float(np.mean(values)), stderr, replicas, confidence, z_value(confidence))


__all__ = [
    "STREAM_ENVIRONMENT",
    "STREAM_TILTED_ENVIRONMENT",
    "STREAM_RENEWAL",
    "replica_generator",
    "run_chunked",
    "z_value",
    "mean_estimate",
]
