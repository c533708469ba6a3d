"""UPA geometry, steering vectors and sparse wideband channel synthesis.

Conventions used throughout the package:

* antenna and subcarrier indices are 0-based;
* a UPA response is ``kron(a_v(nu), a_h(mu))`` so the horizontal index varies
  fastest along the stacked antenna axis;
* spatial frequencies are ``mu = pi*sin(theta)*cos(phi)`` and
  ``nu = pi*sin(phi)``; the delay frequency is ``-2*pi*f_s*tau/K``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .errors import DomainError

ANGLE_LIMIT = np.pi / 3
DEGENERATE_TOL = 1e-3


@dataclass(frozen=True)
class ArrayGeometry:
    """Half-wavelength uniform planar array with ``n_h`` x ``n_v`` elements."""

    n_h: int
    n_v: int

    def __post_init__(self):
        if int(self.n_h) < 1 or int(self.n_v) < 1:
            raise ValueError(f"array dimensions must be >= 1, got {self.n_h}x{self.n_v}")

    @property
    def total(self) -> int:
        return self.n_h * self.n_v


def steering_vector(mu, n):
    """Unit-norm ULA steering vector ``exp(j*m*mu)/sqrt(n)``, m = 0..n-1."""
    n = int(n)
    if n < 1:
        raise ValueError(f"steering vector length must be >= 1, got {n}")
    return np.exp(1j * mu * np.arange(n)) / np.sqrt(n)


def steering_matrix(mus, n):
    """Columns are ``steering_vector(mu, n)`` for each entry of ``mus``."""
    mus = np.atleast_1d(np.asarray(mus, dtype=float))
    if int(n) < 1:
        raise ValueError(f"steering vector length must be >= 1, got {n}")
    return np.exp(1j * np.outer(np.arange(n), mus)) / np.sqrt(n)


def upa_response(mu, nu, geom: ArrayGeometry):
    return np.kron(steering_vector(nu, geom.n_v), steering_vector(mu, geom.n_h))


def upa_matrix(mus, nus, geom: ArrayGeometry):
    """Column-wise Khatri-Rao product ``A_v (.) A_h`` of the UPA steering matrices."""
    a_h = steering_matrix(mus, geom.n_h)
    a_v = steering_matrix(nus, geom.n_v)
    return khatri_rao(a_v, a_h)


def khatri_rao(a, b):
    """Column-wise Kronecker product; row index of ``b`` varies fastest."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"column mismatch: {a.shape} vs {b.shape}")
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def delay_frequency(tau, K, f_s):
    return -2.0 * np.pi * f_s * np.asarray(tau, dtype=float) / K


def delay_steering(tau, K, f_s):
    """Subcarrier phase progression ``exp(j*k*mu_tau)`` (not normalised)."""
    if int(K) < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    mu_tau = delay_frequency(tau, K, f_s)
    return np.exp(1j * np.arange(K) * mu_tau)


def frequencies_from_angles(theta, phi):
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return np.pi * np.sin(theta) * np.cos(phi), np.pi * np.sin(phi)


def angles_from_frequencies(mu, nu):
    """Invert ``frequencies_from_angles``; raises DomainError outside its range."""
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    bad_nu = ~(np.abs(nu) < np.pi)
    if np.any(bad_nu):
        raise DomainError(f"vertical frequency out of range: {nu[bad_nu]}", nu[bad_nu])
    phi = np.arcsin(nu / np.pi)
    ratio = mu / (np.pi * np.cos(phi))
    bad_mu = np.abs(ratio) > 1.0
    if np.any(bad_mu):
        raise DomainError(f"horizontal frequency out of range: {mu[bad_mu]}", mu[bad_mu])
    return np.arcsin(ratio), phi


def delay_from_frequency(mu_tau, K, f_s, tol=1e-9):
    """``tau = -mu_tau*K/(2*pi*f_s)``; positive ``mu_tau`` beyond ``tol`` is aliased."""
    mu_tau = np.asarray(mu_tau, dtype=float)
    bad = mu_tau > tol
    if np.any(bad):
        raise DomainError(f"delay frequency {mu_tau[bad]} implies a negative delay", mu_tau[bad])
    return -mu_tau * K / (2.0 * np.pi * f_s)


@dataclass(frozen=True)
class PathSet:
    """Multipath parameters. ``gains`` excludes the normalisation ``beta``."""

    gains: np.ndarray
    theta_ud: np.ndarray
    phi_ud: np.ndarray
    theta_bs: np.ndarray
    phi_bs: np.ndarray
    delays: np.ndarray
    beta: float

    def __post_init__(self):
        for name in ("gains", "theta_ud", "phi_ud", "theta_bs", "phi_bs", "delays"):
            arr = np.atleast_1d(np.asarray(getattr(self, name)))
            object.__setattr__(self, name, arr)
        n = self.gains.size
        if n < 1:
            raise ValueError("a PathSet needs at least one path")
        for name in ("theta_ud", "phi_ud", "theta_bs", "phi_bs", "delays"):
            if getattr(self, name).size != n:
                raise ValueError(f"{name} has {getattr(self, name).size} entries, expected {n}")

    @property
    def n_paths(self) -> int:
        return self.gains.size

    @property
    def ud_frequencies(self):
        return frequencies_from_angles(self.theta_ud, self.phi_ud)

    @property
    def bs_frequencies(self):
        return frequencies_from_angles(self.theta_bs, self.phi_bs)

    @property
    def effective_gains(self):
        """``beta * alpha``: the per-path complex amplitude entering H[k]."""
        return self.beta * self.gains

    def permuted(self, order) -> "PathSet":
        order = np.asarray(order)
        return replace(
            self,
            gains=self.gains[order],
            theta_ud=self.theta_ud[order],
            phi_ud=self.phi_ud[order],
            theta_bs=self.theta_bs[order],
            phi_bs=self.phi_bs[order],
            delays=self.delays[order],
        )


def normalization(n_ud, n_bs, n_paths):
    return float(np.sqrt(n_ud * n_bs / n_paths))


def _degenerate(tuples, tol=DEGENERATE_TOL):
    diff = np.abs(tuples[:, None, :] - tuples[None, :, :])
    close = np.all(diff < tol, axis=-1)
    np.fill_diagonal(close, False)
    return bool(close.any())


def sample_pathset(cfg, rng, n_paths=None) -> PathSet:
    """Draw a random channel per the simulation model.

    ``cfg`` needs ``L``, ``tau_max``, ``K``, ``f_s``, ``ud_geometry`` and
    ``bs_geometry``. Gains are CN(0, 1), delays U[0, tau_max], angles
    U[-pi/3, pi/3]. Draws whose frequency tuples nearly coincide are redrawn.
    """
    L = int(cfg.L if n_paths is None else n_paths)
    if L < 1:
        raise ValueError(f"number of paths must be >= 1, got {L}")
    if not cfg.tau_max > 0:
        raise ValueError(f"tau_max must be positive, got {cfg.tau_max}")
    while True:
        gains = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) / np.sqrt(2)
        delays = rng.uniform(0.0, cfg.tau_max, L)
        ang = rng.uniform(-ANGLE_LIMIT, ANGLE_LIMIT, (4, L))
        mu_ud, nu_ud = frequencies_from_angles(ang[0], ang[1])
        mu_bs, nu_bs = frequencies_from_angles(ang[2], ang[3])
        tuples = np.stack([mu_ud, nu_ud, mu_bs, nu_bs, delay_frequency(delays, cfg.K, cfg.f_s)], axis=1)
        if not _degenerate(tuples):
            break
    return PathSet(
        gains=gains,
        theta_ud=ang[0],
        phi_ud=ang[1],
        theta_bs=ang[2],
        phi_bs=ang[3],
        delays=delays,
        beta=normalization(cfg.ud_geometry.total, cfg.bs_geometry.total, L),
    )


@dataclass(frozen=True)
class ChannelRealization:
    """Frequency-domain channel of one link, with cached factor matrices."""

    pathset: PathSet
    ud: ArrayGeometry
    bs: ArrayGeometry
    K: int
    f_s: float

    @cached_property
    def A_ud(self):
        return upa_matrix(*self.pathset.ud_frequencies, self.ud)

    @cached_property
    def A_bs(self):
        return upa_matrix(*self.pathset.bs_frequencies, self.bs)

    @cached_property
    def delay_frequencies(self):
        return delay_frequency(self.pathset.delays, self.K, self.f_s)

    @cached_property
    def A_tau(self):
        """K x L delay steering matrix, row k = ``exp(j*k*mu_tau)``."""
        return np.exp(1j * np.outer(np.arange(self.K), self.delay_frequencies))

    def d(self, k):
        """Diagonal of D[k]: ``beta*alpha_l*exp(-j*2*pi*k*f_s*tau_l/K)``."""
        self._check_k(k)
        return self.pathset.effective_gains * np.exp(1j * k * self.delay_frequencies)

    def all_d(self):
        """K x L matrix whose row k is ``d(k)``."""
        return self.A_tau * self.pathset.effective_gains[None, :]

    def stack(self):
        """All K channel matrices, shape (K, N_UD, N_BS), from the factored form."""
        return np.einsum("ul,kl,bl->kub", self.A_ud, self.all_d(), self.A_bs.conj(), optimize=True)

    def _check_k(self, k):
        if not (0 <= int(k) < self.K) or int(k) != k:
            raise ValueError(f"subcarrier index {k} outside [0, {self.K - 1}]")


def freq_channel(ch: ChannelRealization, k):
    """H[k] as an explicit sum of per-path outer products."""
    ch._check_k(k)
    ps = ch.pathset
    mu_ud, nu_ud = ps.ud_frequencies
    mu_bs, nu_bs = ps.bs_frequencies
    H = np.zeros((ch.ud.total, ch.bs.total), dtype=complex)
    for l in range(ps.n_paths):
        a_ud = upa_response(mu_ud[l], nu_ud[l], ch.ud)
        a_bs = upa_response(mu_bs[l], nu_bs[l], ch.bs)
        phase = np.exp(-2j * np.pi * k * ch.f_s * ps.delays[l] / ch.K)
        H += ps.gains[l] * np.outer(a_ud, a_bs.conj()) * phase
    return ps.beta * H


def freq_channel_factored(ch: ChannelRealization, k):
    """H[k] = A_UD diag(d[k]) A_BS^H."""
    return (ch.A_ud * ch.d(k)[None, :]) @ ch.A_bs.conj().T
