"""Path-count estimation by eigenvalue soft thresholding of a subcarrier-averaged covariance."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Operating thresholds for unit channel/transmit power, indexed by SNR in dB.
DEFAULT_EPS_TABLE = {-15.0: 1.54, -10.0: 0.50, -5.0: 0.16, 0.0: 0.05, 5.0: 0.016, 10.0: 0.005}


def group_average(blocks, P):
    """Average consecutive groups of P subcarrier blocks; a trailing partial group is dropped.

    Args:
        blocks: array of shape (K, rows, cols).
        P: group size, 1 <= P <= K.

    Returns:
        Array of shape (K // P, rows, cols).
    """
    blocks = np.asarray(blocks)
    K = blocks.shape[0]
    if not 1 <= P <= K:
        raise ValueError(f"group size P={P} must lie in [1, {K}]")
    n_groups = K // P
    return blocks[: n_groups * P].reshape(n_groups, P, *blocks.shape[1:]).mean(axis=1)


def soft_threshold(lam, eps):
    """Closed-form minimiser of ``0.5*||x - lam||^2 + eps*||x||_1`` over ``x >= 0``."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError(f"eigenvalues must be non-negative, got min {lam.min()}")
    if eps < 0:
        raise ValueError(f"threshold must be non-negative, got {eps}")
    return np.maximum(lam - eps, 0.0)


def eps_for_snr(snr_db, table=None):
    """Log-linear interpolation of the threshold table; clamps outside its range."""
    table = DEFAULT_EPS_TABLE if table is None else table
    items = sorted((float(s), float(v)) for s, v in table.items())
    snrs = np.array([s for s, _ in items])
    vals = np.array([v for _, v in items])
    return float(np.exp(np.interp(snr_db, snrs, np.log(vals))))


@dataclass
class ModelOrderResult:
    L_hat: int
    eigenvalues: np.ndarray
    thresholded: np.ndarray
    flags: list = field(default_factory=list)


def averaged_covariance(blocks, P):
    """``(1/(N_o*N_P)) * Y Y^H`` with Y the group averages concatenated column-wise."""
    avg = group_average(blocks, P)
    n_groups, rows, n_snap = avg.shape
    Y = avg.transpose(1, 0, 2).reshape(rows, n_groups * n_snap)
    return Y @ Y.conj().T / (n_snap * n_groups)


def covariance_eigenvalues(blocks, P):
    lam = np.linalg.eigvalsh(averaged_covariance(blocks, P))[::-1]
    return np.clip(lam, 0.0, None)


def estimate_num_paths(blocks, P, eps, L_max=8) -> ModelOrderResult:
    """Number of eigenvalues that survive soft thresholding, clamped to ``[1, min(rows - 1, L_max)]``."""
    if not eps > 0:
        raise ValueError(f"threshold must be positive, got {eps}")
    lam = covariance_eigenvalues(blocks, P)
    kept = soft_threshold(lam, eps)
    count = int(np.count_nonzero(kept))
    flags = []
    upper = min(lam.size - 1, int(L_max))
    if count == 0:
        flags.append("threshold-too-high")
    if count > upper:
        flags.append("order-capped")
    return ModelOrderResult(max(1, min(count, upper)), lam, kept, flags)


def count_above(lam_sets, eps):
    """Vectorised path counts for many eigenvalue vectors at one threshold (no clamping)."""
    return np.sum(np.asarray(lam_sets) > eps, axis=-1)


def calibrate_threshold(lam_sets, true_L, grid=None, L_max=8):
    """Threshold maximising the empirical probability of the correct count.

    Among all maximisers the geometric midpoint is returned, which keeps the
    choice away from both failure edges.
    """
    lam_sets = np.asarray(lam_sets, dtype=float)
    true_L = np.broadcast_to(np.asarray(true_L), lam_sets.shape[:1])
    if grid is None:
        grid = np.logspace(-5, 2, 561)
    upper = min(lam_sets.shape[1] - 1, L_max)
    hits = np.array([
        np.mean(np.clip(count_above(lam_sets, e), 1, upper) == true_L) for e in grid
    ])
    best = np.flatnonzero(hits == hits.max())
    eps = float(np.sqrt(grid[best[0]] * grid[best[-1]]))
    return eps, float(hits.max())
