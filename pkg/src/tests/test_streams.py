"""
Unit tests for random streams and chunked replica execution.
"""
import sys
from pathlib import Path

import numpy as np
import pytest

# Add the project root to the Python path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from src.pinning.streams import (
    STREAM_ENVIRONMENT,
    STREAM_RENEWAL,
    mean_estimate,
    replica_generator,
    run_chunked,
    z_value,
)


def draw_task(seed):
    def task(start, stop):
        return np.stack([replica_generator(seed, i).standard_normal(5) for i in range(start, stop)])
    return task


class TestStreams:
    """Counter-based generators keyed by (seed, purpose, replica)."""

    def test_reproducible(self):
        first = replica_generator(7, 3).random(10)
        assert np.array_equal(first, replica_generator(7, 3).random(10))

    def test_keys_separate_streams(self):
        base = replica_generator(7, 3).random(10)
        assert not np.array_equal(base, replica_generator(7, 4).random(10))
        assert not np.array_equal(base, replica_generator(8, 3).random(10))
        assert not np.array_equal(base, replica_generator(7, 3, STREAM_RENEWAL).random(10))
        assert np.array_equal(base, replica_generator(7, 3, STREAM_ENVIRONMENT).random(10))


class TestChunking:
    """Fixed chunks reassembled in replica order."""

    @pytest.mark.parametrize("workers", [1, 2, 5])
    @pytest.mark.parametrize("chunk_size", [1, 7, 64])
    def test_independent_of_workers_and_chunks(self, workers, chunk_size):
        reference = run_chunked(draw_task(11), 30, workers=1, chunk_size=30)
        result = run_chunked(draw_task(11), 30, workers=workers, chunk_size=chunk_size)
        assert result.shape == (30, 5)
        assert np.array_equal(result, reference)


class TestEstimates:
    """Replica means with upper confidence limits."""

    def test_z_value_is_one_sided(self):
        assert z_value(0.95) == pytest.approx(1.644854, abs=1e-6)
        assert z_value(0.99) == pytest.approx(2.326348, abs=1e-6)

    def test_mean_estimate(self):
        values = np.array([1.0, 2.0, 3.0, 4.0])
        estimate = mean_estimate(values, confidence=0.95)
        stderr = np.std(values, ddof=1) / 2.0
        assert estimate.point == 2.5
        assert estimate.stderr == pytest.approx(stderr)
        assert estimate.upper == pytest.approx(2.5 + z_value(0.95) * stderr)
        assert estimate.replicas == 4

    def test_single_value(self):
        estimate = mean_estimate(np.array([0.3]))
        assert estimate.stderr == 0.0
        assert estimate.upper == estimate.point
