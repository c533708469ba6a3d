"""On-grid orthogonal matching pursuit over a Kronecker angle dictionary.

Per-subcarrier mode recovers each H[k] independently; common-support mode
selects one shared set of angle pairs for all subcarriers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..array_model import ArrayGeometry, ChannelRealization, upa_matrix
from ..training import PhaseSet


def frequency_grid(n):
    return -np.pi + 2 * np.pi * np.arange(n) / n


def angle_dictionary(geom: ArrayGeometry, grid_h, grid_v):
    """UPA responses on a uniform spatial-frequency grid, horizontal index fastest."""
    mu, nu = np.meshgrid(frequency_grid(grid_h), frequency_grid(grid_v), indexing="xy")
    return upa_matrix(mu.ravel(), nu.ravel(), geom)


@dataclass
class SoundingFrames:
    """Random analog training: frame m sends ``tx[:, m]`` and combines with ``W[m]``."""

    tx: np.ndarray          # (N_BS, T)
    W: np.ndarray           # (T, N_UD, n_rf_ud)
    data: np.ndarray        # (K, T, n_rf_ud)
    noise_var: float


def make_frames(cfg, n_frames, rng):
    ps = PhaseSet(cfg.n_q_ps)
    n_bs, n_ud = cfg.bs_geometry.total, cfg.ud_geometry.total
    F = np.exp(1j * rng.choice(ps.values, size=(n_frames, n_bs, cfg.n_rf_bs))) / np.sqrt(n_bs)
    q = np.exp(2j * np.pi * rng.uniform(size=(n_frames, cfg.n_rf_bs)))
    tx = np.einsum("tbr,tr->bt", F, q)
    tx *= np.sqrt(cfg.n_rf_bs / cfg.n_streams_d) / np.linalg.norm(tx, axis=0)
    W = np.exp(1j * rng.choice(ps.values, size=(n_frames, n_ud, cfg.n_rf_ud))) / np.sqrt(n_ud)
    return tx, W


def sound(ch: ChannelRealization, cfg, n_frames, noise_var, rng_frames, rng_noise) -> SoundingFrames:
    tx, W = make_frames(cfg, n_frames, rng_frames)
    right = ch.A_bs.conj().T @ tx                            # (L, T)
    left = np.einsum("tur,ul->trl", W.conj(), ch.A_ud)      # (T, n_rf, L)
    data = np.einsum("trl,kl,lt->ktr", left, ch.all_d(), right, optimize=True)
    if noise_var > 0:
        shape = (ch.K, n_frames, ch.ud.total)
        n = np.sqrt(noise_var / 2) * (rng_noise.standard_normal(shape) + 1j * rng_noise.standard_normal(shape))
        data = data + np.einsum("tur,ktu->ktr", W.conj(), n, optimize=True)
    return SoundingFrames(tx, W, data, noise_var)


@dataclass
class OmpResult:
    ud_atoms: np.ndarray
    bs_atoms: np.ndarray
    coeffs: np.ndarray                 # (K, n_atoms)
    n_iter: list = field(default_factory=list)


class _Operator:
    """Separable measurement operator for atom (i, j): column m-block ``(W_m^H a_i) * (b_j^H t_m)``."""

    def __init__(self, frames: SoundingFrames, D_ud, D_bs):
        self.U = np.einsum("tur,ui->tri", frames.W.conj(), D_ud)   # (T, n_rf, G_ud)
        self.V = (D_bs.conj().T @ frames.tx).T                      # (T, G_bs)
        norms_u = np.sum(np.abs(self.U) ** 2, axis=1)               # (T, G_ud)
        self.norms = norms_u.T @ (np.abs(self.V) ** 2)              # (G_ud, G_bs)
        self.G_bs = D_bs.shape[1]

    def score(self, R, chunk=8):
        """Summed ``|Phi^H r_k|^2 / ||Phi_col||^2`` over residuals R of shape (K, T, n_rf)."""
        total = np.zeros(self.norms.shape)
        for s in range(0, R.shape[0], chunk):
            P = np.einsum("tri,ktr->kti", self.U.conj(), R[s:s + chunk], optimize=True)
            C = np.einsum("kti,tj->kij", P, self.V.conj(), optimize=True)
            total += np.sum(np.abs(C) ** 2, axis=0)
        return total / self.norms

    def columns(self, atoms):
        i, j = np.divmod(np.asarray(atoms), self.G_bs)
        cols = self.U[:, :, i] * self.V[:, None, j]                 # (T, n_rf, n)
        return cols.reshape(-1, len(atoms))


def omp(frames: SoundingFrames, D_ud, D_bs, max_atoms, min_gain=1e-3, common_support=False) -> OmpResult:
    """Greedy recovery; stops at the noise floor, on a small relative gain, or at ``max_atoms``."""
    op = _Operator(frames, D_ud, D_bs)
    K, T, n_rf = frames.data.shape
    Y = frames.data.reshape(K, -1)
    noise_floor = frames.noise_var * T * n_rf
    groups = [np.arange(K)] if common_support else [np.array([k]) for k in range(K)]
    coeffs = np.zeros((K, max_atoms), dtype=complex)
    supports = np.zeros((K, max_atoms), dtype=int)
    n_used = np.zeros(K, dtype=int)
    iters = []
    for ks in groups:
        Yk = Y[ks]
        resid = Yk.copy()
        support = []
        energy = float(np.sum(np.abs(resid) ** 2))
        x = np.zeros((len(ks), 0), dtype=complex)
        while len(support) < max_atoms and energy > noise_floor * len(ks):
            score = op.score(resid.reshape(len(ks), T, n_rf)).ravel()
            score[support] = -1.0
            cand = support + [int(np.argmax(score))]
            Phi = op.columns(cand)
            x_new = np.linalg.lstsq(Phi, Yk.T, rcond=None)[0].T
            r_new = Yk - x_new @ Phi.T
            e_new = float(np.sum(np.abs(r_new) ** 2))
            if energy - e_new < min_gain * energy:
                break
            support, x, resid, energy = cand, x_new, r_new, e_new
        iters.append(len(support))
        n = len(support)
        coeffs[ks, :n] = x
        supports[ks, :n] = support
        n_used[ks] = n
    n_max = int(n_used.max()) if K else 0
    return _collect(coeffs[:, :n_max], supports[:, :n_max], n_used, op.G_bs, iters)


def _collect(coeffs, supports, n_used, G_bs, iters):
    mask = np.arange(coeffs.shape[1])[None, :] < n_used[:, None]
    coeffs = np.where(mask, coeffs, 0.0)
    ud, bs = np.divmod(supports, G_bs)
    return OmpResult(ud, bs, coeffs, iters)


def reconstruct(res: OmpResult, D_ud, D_bs):
    """(K, N_UD, N_BS) channel estimate."""
    A = D_ud[:, res.ud_atoms]                  # (N_UD, K, n)
    B = D_bs[:, res.bs_atoms].conj()           # (N_BS, K, n)
    return np.einsum("ukn,kn,bkn->kub", A, res.coeffs, B, optimize=True)


def omp_baseline(ch: ChannelRealization, cfg, noise_var, rng_frames, rng_noise, common_support=False):
    """Sound the channel with ``T_CE`` random frames and recover it on the grid."""
    frames = sound(ch, cfg, cfg.T_CE, noise_var, rng_frames, rng_noise)
    D_ud = angle_dictionary(cfg.ud_geometry, *cfg.omp_grid_ud)
    D_bs = angle_dictionary(cfg.bs_geometry, *cfg.omp_grid_bs)
    res = omp(frames, D_ud, D_bs, cfg.omp_max_atoms, cfg.omp_min_gain, common_support)
    return reconstruct(res, D_ud, D_bs), res
