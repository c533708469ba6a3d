"""Reconstruction and rate metrics."""

from __future__ import annotations

import numpy as np


def nmse(H, H_hat):
    """Total squared error over all subcarriers divided by total channel energy."""
    H = np.asarray(H)
    H_hat = np.asarray(H_hat)
    if H.shape != H_hat.shape:
        raise ValueError(f"shape mismatch: {H.shape} vs {H_hat.shape}")
    energy = float(np.sum(np.abs(H) ** 2))
    if energy == 0.0:
        raise ValueError("true channel has zero energy")
    return float(np.sum(np.abs(H - H_hat) ** 2)) / energy


def to_db(x):
    return 10.0 * np.log10(np.maximum(x, 1e-300))


def eigen_beamformers(H_hat, n_streams):
    """Top right/left singular vectors of each estimated matrix: (F_p, W_c)."""
    U, _, Vh = np.linalg.svd(np.asarray(H_hat))
    return Vh[..., :n_streams, :].conj().swapaxes(-1, -2), U[..., :, :n_streams]


def ase(H, H_hat, n_streams, noise_var):
    """Average spectral efficiency over subcarriers, beamforming designed from ``H_hat``.

    Uses fully digital truncated-SVD precoding and combining with equal power
    ``1/n_streams`` per stream; noise is coloured by the combiner.
    """
    H = np.asarray(H)
    if n_streams > min(H.shape[-2:]):
        raise ValueError(f"{n_streams} streams exceed the channel dimensions {H.shape[-2:]}")
    F, W = eigen_beamformers(H_hat, n_streams)
    eff = W.conj().swapaxes(-1, -2) @ H @ F                 # (K, N_s, N_s)
    Rn = noise_var * (W.conj().swapaxes(-1, -2) @ W)
    M = np.eye(n_streams) + np.linalg.solve(Rn, eff @ eff.conj().swapaxes(-1, -2)) / n_streams
    _, logdet = np.linalg.slogdet(M)
    return float(np.mean(logdet) / np.log(2))
