"""
Log-space transfer recursion shared by the pure and quenched models.

For site weights z_1..z_N the recursion W_0 = 1,
W_m = sum_{j<m} W_j K(m-j) z_m gives the pinned partition function of every
prefix. Rows of the batch are independent and are processed in one pass.
"""
import numpy as np
from scipy.special import logsumexp


def batch_log_partition(log_K: np.ndarray, log_z: np.ndarray) -> np.ndarray:
    """
    Prefix log partition functions for a batch of weight sequences.

    Args:
        log_K: log K(1..N), shape (N,)
        log_z: per-site log weights h + beta*omega_m, shape (R, N)

    Returns:
        array of shape (R, N+1); column m holds log W_m, column 0 is 0.
    """
    log_z = np.atleast_2d(np.asarray(log_z, dtype=float))
    rows, N = log_z.shape
    if log_K.shape[0] < N:
        raise ValueError(f"need log K up to {N}, got {log_K.shape[0]}")
    W = np.empty((rows, N + 1), dtype=float)
    W[:, 0] = 0.0
    for m in range(1, N + 1):
        # j = 0..m-1 pairs with K(m-j): log_K[m-1], ..., log_K[0]
        W[:, m] = logsumexp(W[:, :m] + log_K[m - 1::-1], axis=1) + log_z[:, m - 1]
    return W


def log_partition(log_K: np.ndarray, log_z: np.ndarray) -> np.ndarray:
    """Single-sequence version of :func:`batch_log_partition`; returns shape (N+1,)."""
    return batch_log_partition(log_K, np.asarray(log_z, dtype=float)[None, :])[0]


__all__ = ["batch_log_partition", "log_partition"]
