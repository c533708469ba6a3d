"""Angle feedback quantization and the multi-beam uplink sounding precoder."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .array_model import ArrayGeometry, frequencies_from_angles, upa_matrix
from .training import HybridMatrixPair, PhaseSet, constant_modulus, normalize_power


@dataclass(frozen=True)
class QuantizedAngles:
    theta: np.ndarray
    phi: np.ndarray
    n_bits: int
    theta_idx: np.ndarray
    phi_idx: np.ndarray
    flags: tuple = ()

    @property
    def n_paths(self) -> int:
        return self.theta.size

    @property
    def step(self) -> float:
        return np.pi / 2 ** self.n_bits

    def frequencies(self):
        return frequencies_from_angles(self.theta, self.phi)

    def permuted(self, order) -> "QuantizedAngles":
        order = np.asarray(order)
        return QuantizedAngles(
            self.theta[order], self.phi[order], self.n_bits,
            self.theta_idx[order], self.phi_idx[order], self.flags,
        )


def angle_codes(angles, n_bits):
    """Midrise cell index over [-pi/2, pi/2]; returns ``(codes, clamped_mask)``."""
    angles = np.atleast_1d(np.asarray(angles, dtype=float))
    n_cells = 2 ** int(n_bits)
    raw = np.floor((angles + np.pi / 2) / (np.pi / n_cells)).astype(int)
    codes = np.clip(raw, 0, n_cells - 1)
    outside = (angles < -np.pi / 2) | (angles > np.pi / 2)
    return codes, outside


def angles_from_codes(codes, n_bits):
    return -np.pi / 2 + (np.asarray(codes) + 0.5) * np.pi / 2 ** int(n_bits)


def quantize_angles(theta, phi, n_bits) -> QuantizedAngles:
    """Uniform midrise quantization of both angle components to ``n_bits`` each."""
    if int(n_bits) < 1:
        raise ValueError(f"need at least one quantization bit, got {n_bits}")
    t_idx, t_out = angle_codes(theta, n_bits)
    p_idx, p_out = angle_codes(phi, n_bits)
    flags = ("angle-clamped",) if np.any(t_out) or np.any(p_out) else ()
    return QuantizedAngles(
        angles_from_codes(t_idx, n_bits), angles_from_codes(p_idx, n_bits), int(n_bits), t_idx, p_idx, flags
    )


def multibeam_case(n_paths, n_rf):
    if n_paths < 1 or n_rf < 1:
        raise ValueError(f"need positive path and RF-chain counts, got {n_paths}, {n_rf}")
    if n_paths > n_rf:
        return "I"
    if n_rf % n_paths == 0:
        return "II"
    return "III"


def phase_shifter_groups(n_paths, n_shifters):
    """Group sizes: ``n_shifters // n_paths`` each, the first ``n_shifters % n_paths`` get one more."""
    base, extra = divmod(n_shifters, n_paths)
    if base < 1:
        raise ValueError(f"{n_shifters} phase shifters cannot serve {n_paths} paths")
    return [base + 1] * extra + [base] * (n_paths - extra)


def _partitioned_block(A_conj, n_cols):
    """Spread the paths over ``n_cols`` RF chains worth of phase shifters.

    Phase shifters are numbered column-major over the (antennas x n_cols)
    matrix; shifter p belongs to group l and takes the conjugated response of
    path l at antenna ``p mod antennas``.
    """
    n_ant, n_paths = A_conj.shape
    sizes = phase_shifter_groups(n_paths, n_ant * n_cols)
    path_of = np.repeat(np.arange(n_paths), sizes)
    pos = np.arange(n_ant * n_cols)
    f = A_conj[pos % n_ant, path_of]
    return f.reshape(n_ant, n_cols, order="F")


def multibeam_analog_target(A_conj, n_rf):
    """Unquantized analog matrix for the three path/RF-chain regimes."""
    n_paths = A_conj.shape[1]
    case = multibeam_case(n_paths, n_rf)
    if case == "I":
        return _partitioned_block(A_conj, n_rf), case
    n_rep = n_rf // n_paths
    block = np.tile(A_conj, (1, n_rep))
    if case == "II":
        return block, case
    return np.concatenate([block, _partitioned_block(A_conj, n_rf % n_paths)], axis=1), case


def design_multibeam_precoder(est: QuantizedAngles, n_rf, geom: ArrayGeometry, ps: PhaseSet, rng, n_streams=None):
    """Hybrid precoder radiating one beam per fed-back direction.

    Returns ``(pair, case)``. The digital part has random unit-modulus entries
    and the product is scaled to ``||F||_F^2 = n_rf``.
    """
    if est.n_paths < 1:
        raise ValueError("need at least one direction")
    n_streams = n_rf - 1 if n_streams is None else int(n_streams)
    if not 1 <= n_streams <= n_rf:
        raise ValueError(f"need 1 <= n_streams <= {n_rf}, got {n_streams}")
    A = upa_matrix(*est.frequencies(), geom)
    target, case = multibeam_analog_target(A.conj(), n_rf)
    analog = constant_modulus(target, ps, geom.total)
    digital = np.exp(2j * np.pi * rng.uniform(0.0, 1.0, (n_rf, n_streams)))
    return normalize_power(HybridMatrixPair(analog, digital), n_rf), case


def default_angle_grid(n=181):
    return np.linspace(-np.pi / 2, np.pi / 2, n)


def beam_pattern(F, geom: ArrayGeometry, thetas=None, phis=None):
    """Radiated power ``||a(theta, phi)^T F||^2`` on a (theta x phi) grid.

    The transmit response uses the plain transpose because the uplink
    channel is ``H^T``; with this convention a beam built from conjugated
    responses peaks at its intended direction.
    """
    Fm = F.product if isinstance(F, HybridMatrixPair) else np.asarray(F)
    thetas = default_angle_grid() if thetas is None else np.asarray(thetas, dtype=float)
    phis = default_angle_grid() if phis is None else np.asarray(phis, dtype=float)
    T, P = np.meshgrid(thetas, phis, indexing="ij")
    mu, nu = frequencies_from_angles(T.ravel(), P.ravel())
    resp = upa_matrix(mu, nu, geom).T @ Fm
    return np.sum(np.abs(resp) ** 2, axis=1).reshape(T.shape)


def write_beam_pattern_csv(path, thetas, phis, gain):
    path = Path(path)
    gain_db = 10 * np.log10(np.maximum(gain, 1e-300))
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta_rad", "phi_rad", "gain_db"])
            for i, t in enumerate(thetas):
                for j, p in enumerate(phis):
                    w.writerow([f"{t:.10g}", f"{p:.10g}", f"{gain_db[i, j]:.6f}"])
    except OSError as exc:
        raise OSError(f"cannot write beam pattern to {path}: {exc}") from exc
    return path


def is_local_max(gain, i, j):
    """True when entry (i, j) is >= all of its (up to 8) grid neighbours."""
    sl = gain[max(i - 1, 0):i + 2, max(j - 1, 0):j + 2]
    return bool(gain[i, j] >= sl.max())


def nearest_index(grid, value):
    return int(np.argmin(np.abs(np.asarray(grid) - value)))
