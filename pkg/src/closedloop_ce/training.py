"""Training signals, hybrid front ends and noisy measurement synthesis.

The downlink block has shape ``N_UD_sub x (K*N_o_d)`` (column ``k*N_o + i``);
the uplink block has shape ``(K*N_BS_sub) x N_o_u`` (row ``k*N_BS_sub + s``).
Within a sub-array block the horizontal antenna index varies fastest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import hadamard

from .array_model import ChannelRealization


@dataclass(frozen=True)
class PhaseSet:
    """Phases realisable by an ``n_bits`` phase-shift network."""

    n_bits: int

    def __post_init__(self):
        if int(self.n_bits) < 1:
            raise ValueError(f"PSN resolution must be >= 1 bit, got {self.n_bits}")

    @property
    def size(self) -> int:
        return 2 ** self.n_bits

    @property
    def step(self) -> float:
        return 2 * np.pi / self.size

    @property
    def values(self):
        return -np.pi + self.step * np.arange(self.size)


def wrap_phase(theta):
    """Map to (-pi, pi]."""
    wrapped = np.mod(np.asarray(theta, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


def quantize_phase(theta, ps: PhaseSet):
    """Nearest member of ``ps`` (circular distance); exact ties go to the lower grid index."""
    pos = (wrap_phase(theta) + np.pi) / ps.step
    idx = np.mod(np.ceil(pos - 0.5).astype(int), ps.size)
    return ps.values[idx]


def constant_modulus(matrix, ps: PhaseSet, n_ant):
    """Project onto the analog constraint set: modulus ``1/sqrt(n_ant)``, phases in ``ps``."""
    return np.exp(1j * quantize_phase(np.angle(matrix), ps)) / np.sqrt(n_ant)


@dataclass(frozen=True)
class HybridMatrixPair:
    analog: np.ndarray
    digital: np.ndarray

    @property
    def product(self):
        return self.analog @ self.digital


def scrambling_code(K, root=1):
    """Unit-modulus Zadoff-Chu sequence of length K."""
    K = int(K)
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if math.gcd(root, K) != 1:
        raise ValueError(f"ZC root {root} must be coprime with {K}")
    k = np.arange(K)
    if K % 2 == 0:
        return np.exp(-1j * np.pi * root * k * k / K)
    return np.exp(-1j * np.pi * root * k * (k + 1) / K)


def training_symbols(n_streams, n_snapshots, rng):
    """Pilot matrix with entries ``exp(j*2*pi*phi)/n_streams``, phi ~ U[0, 1]."""
    return np.exp(2j * np.pi * rng.uniform(0.0, 1.0, (n_streams, n_snapshots))) / n_streams


def _unit_phase(rng, shape):
    return np.exp(2j * np.pi * rng.uniform(0.0, 1.0, shape))


def normalize_power(pair: HybridMatrixPair, budget) -> HybridMatrixPair:
    """Rescale the digital part so that ``||analog @ digital||_F^2 == budget``."""
    power = np.linalg.norm(pair.product) ** 2
    return HybridMatrixPair(pair.analog, pair.digital * np.sqrt(budget / power))


def random_precoder(n_ant, n_rf, n_streams, ps: PhaseSet, rng) -> HybridMatrixPair:
    """Random sounding precoder: PSN phases drawn uniformly from ``ps``."""
    if n_streams > n_rf:
        raise ValueError(f"{n_streams} streams exceed {n_rf} RF chains")
    analog = np.exp(1j * rng.choice(ps.values, size=(n_ant, n_rf))) / np.sqrt(n_ant)
    digital = _unit_phase(rng, (n_rf, n_streams))
    return normalize_power(HybridMatrixPair(analog, digital), n_rf)


def unitary_basis(n, kind):
    if kind == "dft":
        idx = np.arange(n)
        return np.exp(-2j * np.pi * np.outer(idx, idx) / n) / np.sqrt(n)
    if kind == "hadamard":
        if n & (n - 1):
            raise ValueError(f"Hadamard basis needs a power-of-two size, got {n}")
        return hadamard(n).astype(complex) / np.sqrt(n)
    raise ValueError(f"unknown basis {kind!r}")


def default_basis(ps: PhaseSet) -> str:
    return "dft" if ps.n_bits >= 2 else "hadamard"


def num_slots(n_sub, n_streams):
    return -(-n_sub // n_streams)


def combiner_antenna_order(n_ant_h, n_ant_v, m_sub_h, m_sub_v, count):
    """Antenna indices visited by successive combiner streams.

    The sub-UPA is enumerated horizontal-fastest; streams beyond it continue
    into the next vertical row (wrapping modulo the array size), and are later
    discarded by the selection matrix.
    """
    n_ant = n_ant_h * n_ant_v
    order = [p + n_ant_h * q for q in range(m_sub_v) for p in range(m_sub_h)]
    extra = [(p + n_ant_h * m_sub_v) % n_ant for p in range(m_sub_h)]
    rest = [a for a in range(n_ant) if a not in set(order) | set(extra)]
    order = order + extra + rest
    if count > len(order):
        raise ValueError(f"cannot assign {count} combiner streams to {n_ant} antennas")
    return np.asarray(order[:count])


def design_combiners(n_ant_h, n_ant_v, m_sub_h, m_sub_v, n_rf, n_streams, n_slots, ps: PhaseSet, basis=None):
    """Per-slot hybrid combiners that turn the hybrid array into a digital sub-UPA.

    Returns ``(pairs, W_tilde)`` where ``W_tilde`` concatenates the per-slot
    products column-wise. The digital part is scaled so that
    ``selection_matrix(n_sub, .) @ W_tilde^H`` is a 0/1 antenna selection
    whenever the basis phases are representable by ``ps``.
    """
    if n_streams >= n_rf:
        raise ValueError(f"need n_streams < n_rf, got {n_streams} >= {n_rf}")
    if m_sub_h > n_ant_h or m_sub_v > n_ant_v or min(m_sub_h, m_sub_v) < 1:
        raise ValueError(f"sub-array {m_sub_h}x{m_sub_v} does not fit array {n_ant_h}x{n_ant_v}")
    n_ant = n_ant_h * n_ant_v
    if n_slots * n_streams < m_sub_h * m_sub_v:
        raise ValueError(f"{n_slots} slots x {n_streams} streams cannot cover the sub-array")
    U = unitary_basis(n_rf, basis or default_basis(ps))
    digital = U[:, :n_streams] * np.sqrt(n_ant / n_rf)
    order = combiner_antenna_order(n_ant_h, n_ant_v, m_sub_h, m_sub_v, n_slots * n_streams)

    pairs = []
    for m in range(n_slots):
        rows = np.tile(U[:, -1].conj(), (n_ant, 1))
        idx = order[m * n_streams:(m + 1) * n_streams]
        if len(set(idx.tolist())) != idx.size:
            raise ValueError(f"slot {m} selects a repeated antenna: {idx}")
        rows[idx, :] = U[:, :n_streams].conj().T
        pairs.append(HybridMatrixPair(constant_modulus(rows, ps, n_ant), digital))
    W_tilde = np.concatenate([p.product for p in pairs], axis=1)
    return pairs, W_tilde


def selection_matrix(n_keep, n_total):
    if n_keep > n_total or n_keep < 0:
        raise ValueError(f"cannot keep {n_keep} of {n_total} rows")
    return np.eye(n_keep, n_total)


@dataclass
class MeasurementBlock:
    data: np.ndarray
    layout: str
    K: int
    n_sub: int
    n_snapshots: int
    n_slots: int
    n_streams: int
    noise_var: float
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.layout == "downlink":
            expected = (self.n_sub, self.K * self.n_snapshots)
        elif self.layout == "uplink":
            expected = (self.K * self.n_sub, self.n_snapshots)
        else:
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.data.shape != expected:
            raise ValueError(f"{self.layout} block has shape {self.data.shape}, expected {expected}")

    def per_subcarrier(self):
        """(K, n_sub, n_snapshots) view of the per-subcarrier blocks."""
        if self.layout == "downlink":
            return self.data.reshape(self.n_sub, self.K, self.n_snapshots).transpose(1, 0, 2)
        return self.data.reshape(self.K, self.n_sub, self.n_snapshots)


def _combined_noise(W_tilde, n_streams, K, n_snapshots, noise_var, rng):
    """Per-slot AWGN at the antennas passed through that slot's combiner."""
    n_ant, n_cols = W_tilde.shape
    n_slots = n_cols // n_streams
    shape = (K, n_slots, n_ant, n_snapshots)
    noise = np.sqrt(noise_var / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    Wh = W_tilde.reshape(n_ant, n_slots, n_streams).transpose(1, 2, 0).conj()   # (slots, s, u)
    return np.matmul(Wh, noise).reshape(K, n_slots * n_streams, n_snapshots)


def _check_combiner(W_tilde, n_streams, n_sub, n_ant):
    if W_tilde.shape[0] != n_ant:
        raise ValueError(f"combiner has {W_tilde.shape[0]} rows, array has {n_ant} antennas")
    if W_tilde.shape[1] % n_streams:
        raise ValueError(f"combiner width {W_tilde.shape[1]} is not a multiple of {n_streams} streams")
    if n_sub > W_tilde.shape[1]:
        raise ValueError(f"cannot keep {n_sub} of {W_tilde.shape[1]} combined outputs")


def synth_downlink(ch: ChannelRealization, F_d, W_tilde, S_d, x_d, noise_var, rng, n_sub) -> MeasurementBlock:
    """Received, descrambled and aggregated downlink training block."""
    F = F_d.product if isinstance(F_d, HybridMatrixPair) else np.asarray(F_d)
    n_streams, n_snap = S_d.shape
    if F.shape != (ch.bs.total, n_streams):
        raise ValueError(f"precoder shape {F.shape} != {(ch.bs.total, n_streams)}")
    if np.shape(x_d) != (ch.K,):
        raise ValueError(f"scrambling code must have length {ch.K}")
    _check_combiner(W_tilde, n_streams, n_sub, ch.ud.total)

    front = W_tilde.conj().T @ ch.A_ud                     # (N_d*N_s, L)
    back = ch.A_bs.conj().T @ F @ S_d                      # (L, N_o)
    signal = np.einsum("rl,kl,lo->kro", front, ch.all_d(), back, optimize=True)
    received = signal * x_d[:, None, None]
    if noise_var > 0:
        received = received + _combined_noise(W_tilde, n_streams, ch.K, n_snap, noise_var, rng)
    y = received * x_d.conj()[:, None, None]
    kept = y[:, :n_sub, :]                                  # J_d
    data = kept.transpose(1, 0, 2).reshape(n_sub, ch.K * n_snap)
    return MeasurementBlock(
        data=data, layout="downlink", K=ch.K, n_sub=n_sub, n_snapshots=n_snap,
        n_slots=W_tilde.shape[1] // n_streams, n_streams=n_streams, noise_var=noise_var,
    )


def uplink_reshape_chain(kept):
    """Vectorise/stack/reshape per-subcarrier blocks (K, n_sub, N_o) into the
    ``(K*n_sub) x N_o`` uplink layout, following each step explicitly.

    Returns ``(Y_bar, y_bar)`` where ``y_bar`` is the stacked vector.
    """
    K, n_sub, n_snap = kept.shape
    # y_k = vec(X_k^T)
    cols = [np.reshape(kept[k].T, -1, order="F") for k in range(K)]
    Y_tilde = np.stack(cols, axis=1)                        # (n_sub*N_o, K)
    y_bar = np.reshape(Y_tilde, -1, order="F")              # vec
    Y_mat = np.reshape(y_bar, (n_snap, K * n_sub), order="F")  # mat(.; N_o, K*n_sub)
    return Y_mat.T, y_bar


def synth_uplink(ch: ChannelRealization, F_u, W_tilde, S_u, x_u, noise_var, rng, n_sub):
    """Uplink block over the reciprocal channel ``H[k]^T``.

    Returns ``(block, y_bar)`` with ``block.data`` the ``(K*n_sub) x N_o``
    matrix and ``y_bar`` its stacked-vector form.
    """
    F = F_u.product if isinstance(F_u, HybridMatrixPair) else np.asarray(F_u)
    n_streams, n_snap = S_u.shape
    if F.shape != (ch.ud.total, n_streams):
        raise ValueError(f"precoder shape {F.shape} != {(ch.ud.total, n_streams)}")
    if np.shape(x_u) != (ch.K,):
        raise ValueError(f"scrambling code must have length {ch.K}")
    _check_combiner(W_tilde, n_streams, n_sub, ch.bs.total)

    front = W_tilde.conj().T @ ch.A_bs.conj()               # (N_u*N_s, L)
    back = ch.A_ud.T @ F @ S_u                              # (L, N_o)
    signal = np.einsum("rl,kl,lo->kro", front, ch.all_d(), back, optimize=True)
    received = signal * x_u[:, None, None]
    if noise_var > 0:
        received = received + _combined_noise(W_tilde, n_streams, ch.K, n_snap, noise_var, rng)
    y = received * x_u.conj()[:, None, None]
    Y_bar, y_bar = uplink_reshape_chain(y[:, :n_sub, :])
    block = MeasurementBlock(
        data=Y_bar, layout="uplink", K=ch.K, n_sub=n_sub, n_snapshots=n_snap,
        n_slots=W_tilde.shape[1] // n_streams, n_streams=n_streams, noise_var=noise_var,
    )
    return block, y_bar
