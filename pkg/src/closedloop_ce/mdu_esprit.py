"""Multi-dimensional unitary ESPRIT.

Data rows are indexed with dimension 1 fastest: row ``m_1 + M_1*(m_2 + M_2*(...))``,
i.e. the row vector of a source is ``a_R (x) ... (x) a_1`` (Kronecker).
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import schur
from scipy.sparse.linalg import svds

from .errors import ConsistencyError

SAFE_BAND = np.pi - 0.05
_DENSE_SVD_LIMIT = 400


@dataclass(frozen=True)
class SmoothingPlan:
    """Array dimensions ``dims`` (dimension 1 first) and smoothing windows."""

    dims: tuple
    smoothing: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        smoothing = tuple(int(g) for g in self.smoothing)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "smoothing", smoothing)
        if len(dims) != len(smoothing) or not dims:
            raise ValueError(f"dims {dims} and smoothing {smoothing} must be non-empty and the same length")
        for m, g in zip(dims, smoothing):
            if m < 1 or not 1 <= g <= m:
                raise ValueError(f"need 1 <= G_r <= M_r, got G={g}, M={m}")

    @property
    def R(self) -> int:
        return len(self.dims)

    @property
    def M(self) -> int:
        return int(np.prod(self.dims))

    @property
    def sub_dims(self):
        return tuple(m - g + 1 for m, g in zip(self.dims, self.smoothing))

    @property
    def M_sub(self) -> int:
        return int(np.prod(self.sub_dims))

    @property
    def G(self) -> int:
        return int(np.prod(self.smoothing))


@dataclass
class FrequencyEstimates:
    """Jointly paired estimates: ``freqs[l, r]`` is source l in dimension r."""

    freqs: np.ndarray
    flags: list = field(default_factory=list)

    @property
    def L(self) -> int:
        return self.freqs.shape[0]


def exchange_matrix(n):
    return np.eye(n)[::-1]


def unitary_q(n):
    """Sparse left-Pi-real unitary matrix (dense form, for reference and tests)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    m = n // 2
    Q = np.zeros((n, n), dtype=complex)
    I = np.eye(m)
    P = exchange_matrix(m)
    Q[:m, :m] = I
    Q[:m, n - m:] = 1j * I
    Q[n - m:, :m] = P
    Q[n - m:, n - m:] = -1j * P
    if n % 2:
        Q[m, m] = np.sqrt(2)
    return Q / np.sqrt(2)


def apply_qh(X):
    """``Q_n^H @ X`` without forming Q (n = rows of X)."""
    n = X.shape[0]
    m = n // 2
    top, bot = X[:m], X[n - m:][::-1]
    parts = [(top + bot) / np.sqrt(2)]
    if n % 2:
        parts.append(X[m:m + 1])
    parts.append(-1j * (top - bot) / np.sqrt(2))
    return np.concatenate(parts, axis=0)


def apply_q(X):
    """``Q_n @ X`` without forming Q."""
    n = X.shape[0]
    m = n // 2
    top, bot = X[:m], X[n - m:]
    parts = [(top + 1j * bot) / np.sqrt(2)]
    if n % 2:
        parts.append(X[m:m + 1])
    parts.append(((top - 1j * bot) / np.sqrt(2))[::-1])
    return np.concatenate(parts, axis=0)


def _as_tensor(Y, dims):
    return Y.reshape(tuple(reversed(dims)) + (Y.shape[1],))


def spatial_smooth(Y, plan: SmoothingPlan):
    """Concatenate all sub-array windows column-wise, g_R varying fastest."""
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape[0] != plan.M:
        raise ValueError(f"data has {Y.shape[0] if Y.ndim == 2 else Y.shape} rows, plan expects {plan.M}")
    if plan.G == 1:
        return Y
    T = _as_tensor(Y, plan.dims)
    sub = plan.sub_dims
    blocks = []
    for offsets in itertools.product(*(range(g) for g in plan.smoothing)):
        # tensor axes run R..1, so reverse the per-dimension slices
        idx = tuple(slice(o, o + s) for o, s in zip(reversed(offsets), reversed(sub)))
        blocks.append(T[idx].reshape(plan.M_sub, Y.shape[1]))
    return np.concatenate(blocks, axis=1)


def realify(Y_bar):
    """Forward-backward average and map to a real matrix of twice the width.

    Since ``Q^H Pi = Q^T``, ``Q_M^H [Y, Pi Y* Pi] Q_2N`` reduces to
    ``sqrt(2) * [Re W, -Im W]`` with ``W = Q_M^H Y``.
    """
    W = apply_qh(np.asarray(Y_bar))
    return np.sqrt(2.0) * np.concatenate([W.real, -W.imag], axis=1)


def realify_direct(Y_bar, check_tol=1e-6):
    """Literal dense evaluation of ``Q_M^H [Y, Pi Y* Pi] Q_2N`` with a realness check."""
    Y_bar = np.asarray(Y_bar)
    m, n = Y_bar.shape
    Z = np.concatenate([Y_bar, exchange_matrix(m) @ Y_bar.conj() @ exchange_matrix(n)], axis=1)
    out = unitary_q(m).conj().T @ Z @ unitary_q(2 * n)
    scale = max(np.abs(out).max(), 1e-300)
    residue = np.abs(out.imag).max() / scale
    if residue > check_tol:
        raise ConsistencyError(f"realified data has imaginary residue {residue:.3e}")
    return out.real


def signal_subspace(Y_re, L):
    """Top-L left singular vectors."""
    m, n = Y_re.shape
    if not 1 <= L < min(m, n):
        raise ValueError(f"need 1 <= L < {min(m, n)}, got L={L}")
    if min(m, n) <= _DENSE_SVD_LIMIT:
        U, _, _ = np.linalg.svd(Y_re, full_matrices=False)
        return U[:, :L]
    v0 = np.ones(min(m, n)) / np.sqrt(min(m, n))
    U, s, _ = svds(Y_re, k=L, v0=v0, tol=0, solver="arpack")
    return U[:, np.argsort(s)[::-1]]


def _shift_parts(E_s, plan: SmoothingPlan, r):
    sub = plan.sub_dims
    if sub[r] < 2:
        raise ValueError(f"dimension {r} has sub-array size {sub[r]}: no shift available")
    L = E_s.shape[1]
    X = _as_tensor(apply_q(E_s.astype(complex)), sub)
    axis = plan.R - 1 - r
    shifted = np.take(X, np.arange(1, sub[r]), axis=axis).reshape(-1, L)
    P = apply_qh(shifted)
    return P.real, P.imag


def solve_shift_invariance(E_s, plan: SmoothingPlan, r, method="ls"):
    """Real L x L matrix whose eigenvalues are ``tan(mu_r/2)``."""
    K1E, K2E = _shift_parts(E_s, plan, r)
    if method == "ls":
        return np.linalg.lstsq(K1E, K2E, rcond=None)[0]
    if method == "tls":
        L = E_s.shape[1]
        _, _, Vt = np.linalg.svd(np.concatenate([K1E, K2E], axis=1), full_matrices=True)
        V = Vt.T
        return -V[:L, L:] @ np.linalg.inv(V[L:, L:])
    raise ValueError(f"unknown method {method!r}")


def _lower_energy(mats):
    return sum(float(np.sum(np.tril(A, -1) ** 2)) for A in mats)


def _rotate(mats, i, j, theta):
    c, s = np.cos(theta), np.sin(theta)
    out = []
    for A in mats:
        B = A.copy()
        ri, rj = B[i].copy(), B[j].copy()
        B[i], B[j] = c * ri + s * rj, -s * ri + c * rj
        ci, cj = B[:, i].copy(), B[:, j].copy()
        B[:, i], B[:, j] = c * ci + s * cj, -s * ci + c * cj
        out.append(B)
    return out


_SAMPLES = 2 * np.pi * np.arange(5) / 5


def _best_angle(mats, i, j):
    """Minimise the lower-triangular energy over a plane rotation.

    In phi = 2*theta the objective is a trigonometric polynomial of degree 2,
    so five samples determine it and its stationary points are roots of a
    quartic in z = exp(j*phi).
    """
    f = np.array([_lower_energy(_rotate(mats, i, j, p / 2)) for p in _SAMPLES])
    # f(phi) = sum_{n=-2..2} c_n exp(j n phi)
    c = np.fft.fft(f) / 5
    coeffs = {0: c[0], 1: c[1], 2: c[2], -1: c[4], -2: c[3]}
    # z^2 * f'(phi)/j = sum n c_n z^{n+2}
    poly = [2 * coeffs[2], coeffs[1], 0.0, -coeffs[-1], -2 * coeffs[-2]]
    cands = [0.0]
    if np.any(np.abs(poly) > 1e-300):
        cands += list(np.angle(np.roots(poly)))

    def model(p):
        return sum(coeffs[n] * np.exp(1j * n * p) for n in coeffs).real

    best = min(cands, key=model)
    return best / 2


def simultaneous_schur(phis, max_sweeps=100, tol=1e-12):
    """Joint approximate triangularisation by orthogonal similarity.

    Returns ``(triangularised, history, converged)`` where ``history`` holds
    the lower-triangular energy after the warm start and after each sweep.
    """
    mats = [np.asarray(P, dtype=float) for P in phis]
    L = mats[0].shape[0]
    weights = 1.0 + np.sqrt(2.0) * np.arange(1, len(mats) + 1) / 7.0
    _, Z = schur(sum(w * A for w, A in zip(weights, mats)), output="real")
    mats = [Z.T @ A @ Z for A in mats]
    scale = max(sum(float(np.sum(A ** 2)) for A in mats), 1e-300)
    history = [_lower_energy(mats)]
    converged = L == 1
    for _ in range(max_sweeps if L > 1 else 0):
        for i in range(L - 1):
            for j in range(i + 1, L):
                theta = _best_angle(mats, i, j)
                if theta != 0.0:
                    rotated = _rotate(mats, i, j, theta)
                    if _lower_energy(rotated) <= _lower_energy(mats):
                        mats = rotated
        history.append(_lower_energy(mats))
        if history[-2] - history[-1] < tol * scale:
            converged = True
            break
    return mats, history, converged


def joint_diag(phis, max_sweeps=100):
    """Paired eigenvalues of commuting real matrices: list of R vectors.

    R = 2 uses the EVD of ``Phi_1 + j*Phi_2`` (sorted by real part);
    R >= 3 uses simultaneous Schur. A third output lists diagnostic flags.
    """
    phis = [np.asarray(P, dtype=float) for P in phis]
    shape = phis[0].shape
    if any(P.shape != shape or shape[0] != shape[1] for P in phis):
        raise ValueError("joint_diag needs square matrices of identical size")
    flags = []
    if len(phis) == 1:
        lam = np.linalg.eigvals(phis[0])
        return [np.sort(lam.real)], flags
    if len(phis) == 2:
        lam = np.linalg.eigvals(phis[0] + 1j * phis[1])
        lam = lam[np.argsort(lam.real, kind="stable")]
        return [lam.real, lam.imag], flags
    mats, _, converged = simultaneous_schur(phis, max_sweeps=max_sweeps)
    if not converged:
        warnings.warn("simultaneous Schur did not converge", RuntimeWarning, stacklevel=2)
        flags.append("ssd-not-converged")
    return [np.diag(A).copy() for A in mats], flags


@dataclass(frozen=True)
class MduEsprit:
    plan: SmoothingPlan
    method: str = "ls"

    def estimate(self, Y, L) -> FrequencyEstimates:
        return estimate_frequencies(Y, L, self.plan, self.method)


def estimate_frequencies(Y, L, plan: SmoothingPlan, method="ls") -> FrequencyEstimates:
    """Smooth, realify, extract the subspace and jointly solve all R dimensions."""
    L = int(L)
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    if plan.M_sub <= L:
        raise ValueError(f"sub-array size {plan.M_sub} must exceed L={L}")
    E_s = signal_subspace(realify(spatial_smooth(Y, plan)), L)
    phis = [solve_shift_invariance(E_s, plan, r, method) for r in range(plan.R)]
    diags, flags = joint_diag(phis)
    freqs = 2.0 * np.arctan(np.stack(diags, axis=1))
    if np.any(np.abs(freqs) > SAFE_BAND):
        flags.append("frequency-near-pi")
    return FrequencyEstimates(freqs=freqs, flags=flags)
