"""Closed-loop estimation: downlink AoAs, uplink AoDs/delays, pairing, reconstruction."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .array_model import (
    ArrayGeometry,
    ChannelRealization,
    PathSet,
    angles_from_frequencies,
    freq_channel,
    khatri_rao,
    normalization,
    upa_matrix,
)
from .errors import DomainError, EstimationError
from .mdu_esprit import SmoothingPlan, estimate_frequencies
from .model_order import estimate_num_paths
from .training import MeasurementBlock
from .uplink_beams import QuantizedAngles, quantize_angles

DELAY_GUARD = 1.0  # in samples


@dataclass
class DownlinkResult:
    aoas: QuantizedAngles
    L_hat: int
    freqs: np.ndarray
    eigenvalues: np.ndarray | None = None
    flags: list = field(default_factory=list)


@dataclass
class UplinkResult:
    theta_bs: np.ndarray
    phi_bs: np.ndarray
    delays: np.ndarray
    bs_freqs: np.ndarray        # (L, 2) physical (unconjugated) spatial frequencies
    delay_freqs: np.ndarray
    flags: list = field(default_factory=list)

    @property
    def n_paths(self) -> int:
        return self.delays.size


@dataclass
class ChannelEstimate:
    pathset: PathSet
    ud: ArrayGeometry
    bs: ArrayGeometry
    K: int
    f_s: float
    permutation: tuple = ()
    residual: float = float("nan")
    n_candidates: int = 0
    flags: list = field(default_factory=list)

    @property
    def L_hat(self) -> int:
        return self.pathset.n_paths

    def realization(self) -> ChannelRealization:
        return ChannelRealization(self.pathset, self.ud, self.bs, self.K, self.f_s)


def _angles_or_drop(mu, nu, flags, label):
    keep, theta, phi = [], [], []
    for l, (m, n) in enumerate(zip(mu, nu)):
        try:
            t, p = angles_from_frequencies(m, n)
        except DomainError:
            flags.append(f"{label}-path-dropped")
            continue
        keep.append(l)
        theta.append(float(t))
        phi.append(float(p))
    return np.asarray(keep, dtype=int), np.asarray(theta), np.asarray(phi)


def downlink_estimate(block: MeasurementBlock, cfg, eps=None, L_hat=None) -> DownlinkResult:
    """Path count, 2-D AoA estimates and their quantized feedback form.

    Passing ``L_hat`` bypasses model-order estimation.
    """
    flags = []
    eig = None
    if L_hat is None:
        mo = estimate_num_paths(block.per_subcarrier(), cfg.P, eps, cfg.L_max)
        L_hat, eig = mo.L_hat, mo.eigenvalues
        flags += mo.flags
    plan = SmoothingPlan((cfg.m_ud_h, cfg.m_ud_v), tuple(cfg.g_d))
    est = estimate_frequencies(block.data, L_hat, plan, cfg.shift_solver)
    flags += est.flags
    keep, theta, phi = _angles_or_drop(est.freqs[:, 0], est.freqs[:, 1], flags, "aoa")
    if keep.size == 0:
        raise EstimationError("no downlink path survived angle conversion")
    aoas = quantize_angles(theta, phi, cfg.n_q_ang)
    flags += list(aoas.flags)
    return DownlinkResult(aoas, int(L_hat), est.freqs[keep], eig, flags)


def uplink_estimate(block: MeasurementBlock, L_hat, cfg) -> UplinkResult:
    """3-D estimation over (horizontal, vertical, subcarrier); the BS response enters conjugated."""
    flags = []
    plan = SmoothingPlan((cfg.m_bs_h, cfg.m_bs_v, cfg.K), tuple(cfg.g_u))
    est = estimate_frequencies(block.data, L_hat, plan, cfg.shift_solver)
    flags += est.flags
    mu, nu, mu_tau = -est.freqs[:, 0], -est.freqs[:, 1], est.freqs[:, 2]
    keep, theta, phi = _angles_or_drop(mu, nu, flags, "aod")
    if keep.size == 0:
        raise EstimationError("no uplink path survived angle conversion")
    mu_tau = mu_tau[keep]
    delays = -mu_tau * cfg.K / (2 * np.pi * cfg.f_s)
    guard = DELAY_GUARD / cfg.f_s
    if np.any(delays < -guard) or np.any(delays > cfg.tau_max + guard):
        flags.append("delay-out-of-range")
    order = np.lexsort((theta, delays))
    return UplinkResult(
        theta[order], phi[order], delays[order],
        np.stack([mu[keep], nu[keep]], axis=1)[order], mu_tau[order], flags,
    )


def sub_upa_matrix(mus, nus, full: ArrayGeometry, m_h, m_v):
    """Responses of the full array restricted to its leading m_h x m_v corner."""
    sub = upa_matrix(mus, nus, ArrayGeometry(m_h, m_v))
    return sub * np.sqrt(m_h * m_v / full.total)


def uplink_dictionary(up: UplinkResult, cfg):
    """Columns ``kron(a_tau, conj(a_BS_sub))`` matching the uplink block's row order."""
    a_bs = sub_upa_matrix(up.bs_freqs[:, 0], up.bs_freqs[:, 1], cfg.bs_geometry, cfg.m_bs_h, cfg.m_bs_v)
    a_tau = np.exp(1j * np.outer(np.arange(cfg.K), up.delay_freqs))
    return khatri_rao(a_tau, a_bs.conj())


def _small_ls(M, z, tol):
    Qm, Rm = np.linalg.qr(M)
    d = np.abs(np.diag(Rm))
    if d.size == 0 or d.min() <= tol * max(d.max(), 1e-300):
        return None, np.inf
    g = np.linalg.solve(Rm, Qm.conj().T @ z)
    r = z - M @ g
    return g, float(np.vdot(r, r).real)


def ml_pair_and_gains(y_bar, aoas: QuantizedAngles, up: UplinkResult, F_u, S_u, cfg, rank_tol=1e-10) -> ChannelEstimate:
    """Associate fed-back AoAs with (AoD, delay) tuples by minimum LS residual.

    ``F_u`` is the precoder actually transmitted, built from the AoAs in
    their fed-back order; candidate pairings only permute which AoA column
    accompanies each (AoD, delay) tuple.
    """
    flags = []
    n = min(aoas.n_paths, up.n_paths)
    if aoas.n_paths != up.n_paths:
        flags.append("path-count-mismatch")
        aoas = aoas.permuted(np.arange(n))
        up = UplinkResult(up.theta_bs[:n], up.phi_bs[:n], up.delays[:n], up.bs_freqs[:n], up.delay_freqs[:n], up.flags)
    if n > cfg.L_max:
        raise ValueError(f"{n} paths exceed the pairing cap {cfg.L_max}")

    Fm = F_u.product if hasattr(F_u, "product") else np.asarray(F_u)
    n_snap = S_u.shape[1]
    A_ud = upa_matrix(*aoas.frequencies(), cfg.ud_geometry)
    BT = (A_ud.T @ Fm @ S_u).T                              # (N_o, L), fed-back order
    A_tb = uplink_dictionary(up, cfg)                        # (K*n_sub, L)
    Y = np.asarray(y_bar).reshape(-1, n_snap)                # row-major inverse of the stacking
    if Y.shape[0] != A_tb.shape[0]:
        raise ValueError(f"uplink vector has {Y.shape[0]} rows per snapshot, dictionary {A_tb.shape[0]}")

    # kron(Q r_l, b_l) = (Q kron I) kron(r_l, b_l): reduce to an (L*N_o) x L problem
    Qa, Ra = np.linalg.qr(A_tb)
    z = (Qa.conj().T @ Y).reshape(-1)
    outside = float(np.vdot(Y, Y).real) - float(np.vdot(z, z).real)

    best = (np.inf, None, None)
    n_cand = 0
    for perm in itertools.permutations(range(n)):
        n_cand += 1
        g, res = _small_ls(khatri_rao(Ra, BT[:, perm]), z, rank_tol)
        if g is None:
            if "rank-deficient-candidate" not in flags:
                flags.append("rank-deficient-candidate")
            continue
        if res < best[0]:
            best = (res, perm, g)
    if best[1] is None:
        raise EstimationError("every pairing candidate was rank deficient")
    res, perm, gains = best

    beta = normalization(cfg.ud_geometry.total, cfg.bs_geometry.total, n)
    perm_arr = np.asarray(perm)
    ps = PathSet(
        gains=gains / beta,
        theta_ud=aoas.theta[perm_arr],
        phi_ud=aoas.phi[perm_arr],
        theta_bs=up.theta_bs,
        phi_bs=up.phi_bs,
        delays=up.delays,
        beta=beta,
    )
    return ChannelEstimate(
        ps, cfg.ud_geometry, cfg.bs_geometry, cfg.K, cfg.f_s,
        permutation=tuple(int(p) for p in perm), residual=max(res + outside, 0.0),
        n_candidates=n_cand, flags=flags,
    )


def pairing_count(n_paths):
    return math.factorial(n_paths)


def reconstruct_channel(est: ChannelEstimate, k):
    return freq_channel(est.realization(), k)


def reconstruct_all(est: ChannelEstimate):
    """All K estimated channel matrices (factored evaluation of the same model)."""
    return est.realization().stack()
