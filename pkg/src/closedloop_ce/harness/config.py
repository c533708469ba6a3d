"""System configuration and named profiles."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..array_model import ArrayGeometry
from ..model_order import DEFAULT_EPS_TABLE

# Thresholds re-fitted with `calibrate-eps` (200 trials per SNR, L in {3, 4, 5}).
FULL_PROFILE_EPS = {-15.0: 14.13, -10.0: 4.467, -5.0: 1.454, 0.0: 0.4732, 5.0: 0.1585, 10.0: 0.05158}
DESK_PROFILE_EPS = {-15.0: 11.22, -10.0: 3.868, -5.0: 1.296, 0.0: 0.4340, 5.0: 0.1496, 10.0: 0.05012}


@dataclass(frozen=True)
class SystemConfig:
    # arrays and RF chains
    n_bs_h: int = 12
    n_bs_v: int = 12
    n_ud_h: int = 12
    n_ud_v: int = 12
    n_rf_bs: int = 4
    n_rf_ud: int = 4
    n_q_ps: int = 3
    n_q_ang: int = 10
    # OFDM
    K: int = 128
    cp_len: int = 32
    f_s: float = 200e6
    f_c: float = 30e9
    # channel
    L: int = 3
    n_c: int = 16
    # training
    m_ud_h: int = 8
    m_ud_v: int = 8
    m_bs_h: int = 8
    m_bs_v: int = 8
    n_o_d: int = 3
    n_o_u: int = 3
    zc_root: int = 1
    basis: str | None = None
    # estimation
    P: int = 8
    eps_table: dict = field(default_factory=lambda: dict(DEFAULT_EPS_TABLE))
    g_d: tuple = (2, 2)
    g_u: tuple = (2, 2, 64)
    shift_solver: str = "ls"
    L_max: int = 8
    # experiment
    snr_list_db: tuple = (-15.0, -10.0, -5.0, 0.0, 5.0, 10.0)
    n_trials: int = 200
    seed: int = 2024
    compute_ase: bool = False
    # on-grid baseline
    omp_grid_ud: tuple = (24, 24)
    omp_grid_bs: tuple = (24, 24)
    omp_max_atoms: int = 16
    omp_min_gain: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "g_d", tuple(int(g) for g in self.g_d))
        object.__setattr__(self, "g_u", tuple(int(g) for g in self.g_u))
        object.__setattr__(self, "snr_list_db", tuple(float(s) for s in self.snr_list_db))
        object.__setattr__(self, "omp_grid_ud", tuple(int(g) for g in self.omp_grid_ud))
        object.__setattr__(self, "omp_grid_bs", tuple(int(g) for g in self.omp_grid_bs))
        object.__setattr__(self, "eps_table", {float(k): float(v) for k, v in self.eps_table.items()})
        if self.m_ud_h > self.n_ud_h or self.m_ud_v > self.n_ud_v:
            raise ValueError("UD sub-array exceeds the UD array")
        if self.m_bs_h > self.n_bs_h or self.m_bs_v > self.n_bs_v:
            raise ValueError("BS sub-array exceeds the BS array")
        if min(self.n_rf_bs, self.n_rf_ud) < 2:
            raise ValueError("each side needs at least two RF chains")
        if len(self.g_d) != 2 or len(self.g_u) != 3:
            raise ValueError("need two downlink and three uplink smoothing parameters")
        if self.shift_solver not in ("ls", "tls"):
            raise ValueError(f"unknown shift-invariance solver {self.shift_solver!r}")
        if self.n_c >= self.K:
            raise ValueError("maximum delay spread must be shorter than the symbol")

    @property
    def ud_geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.n_ud_h, self.n_ud_v)

    @property
    def bs_geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.n_bs_h, self.n_bs_v)

    @property
    def tau_max(self) -> float:
        return self.n_c / self.f_s

    @property
    def n_streams_d(self) -> int:
        return self.n_rf_ud - 1

    @property
    def n_streams_u(self) -> int:
        return self.n_rf_bs - 1

    @property
    def n_sub_ud(self) -> int:
        return self.m_ud_h * self.m_ud_v

    @property
    def n_sub_bs(self) -> int:
        return self.m_bs_h * self.m_bs_v

    @property
    def N_d(self) -> int:
        return math.ceil(self.n_sub_ud / self.n_streams_d)

    @property
    def N_u(self) -> int:
        return math.ceil(self.n_sub_bs / self.n_streams_u)

    @property
    def T_CE(self) -> int:
        return self.N_d * self.n_o_d + self.N_u * self.n_o_u

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["eps_table"] = {str(k): v for k, v in self.eps_table.items()}
        return d


def full_profile(**overrides) -> SystemConfig:
    base = dict(eps_table=dict(FULL_PROFILE_EPS))
    base.update(overrides)
    return SystemConfig(**base)


def desk_profile(**overrides) -> SystemConfig:
    base = dict(
        n_bs_h=8, n_bs_v=8, n_ud_h=8, n_ud_v=8,
        m_ud_h=6, m_ud_v=6, m_bs_h=6, m_bs_v=6,
        K=64, cp_len=16, n_c=8, g_u=(2, 2, 32),
        omp_grid_ud=(16, 16), omp_grid_bs=(16, 16), n_trials=100, eps_table=dict(DESK_PROFILE_EPS),
    )
    base.update(overrides)
    return SystemConfig(**base)


PROFILES = {"full": full_profile, "desk": desk_profile}


def load_config(path, profile="full") -> SystemConfig:
    """Flat JSON object of SystemConfig fields applied on top of a profile."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    known = {f.name for f in dataclasses.fields(SystemConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"{path}: unknown config keys {unknown}")
    return PROFILES[profile](**raw)
