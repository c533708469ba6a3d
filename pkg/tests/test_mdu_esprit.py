import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import harmonic_data, match_error, separated_freqs
from scipy.optimize import linear_sum_assignment

from closedloop_ce.errors import ConsistencyError
from closedloop_ce.mdu_esprit import (
    MduEsprit,
    SmoothingPlan,
    apply_q,
    apply_qh,
    estimate_frequencies,
    exchange_matrix,
    joint_diag,
    realify,
    realify_direct,
    signal_subspace,
    simultaneous_schur,
    solve_shift_invariance,
    spatial_smooth,
    unitary_q,
)


# ---- unitary transforms -----------------------------------------------------

@pytest.mark.parametrize("n", [1, 2, 5, 8, 11])
def test_unitary_q_properties(n):
    Q = unitary_q(n)
    np.testing.assert_allclose(Q.conj().T @ Q, np.eye(n), atol=1e-14)
    np.testing.assert_allclose(exchange_matrix(n) @ Q.conj(), Q, atol=1e-14)


@pytest.mark.parametrize("n", [1, 4, 7])
def test_fast_q_products_match_dense(n):
    rng = np.random.default_rng(n)
    X = rng.standard_normal((n, 3)) + 1j * rng.standard_normal((n, 3))
    np.testing.assert_allclose(apply_qh(X), unitary_q(n).conj().T @ X, atol=1e-14)
    np.testing.assert_allclose(apply_q(X), unitary_q(n) @ X, atol=1e-14)


@given(st.integers(1, 9), st.integers(1, 6), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_realify_routes_agree(m, n, seed):
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
    fast = realify(Y)
    direct = realify_direct(Y)
    assert fast.dtype.kind == "f" and fast.shape == (m, 2 * n)
    np.testing.assert_allclose(fast, direct, atol=1e-12 * max(1.0, np.abs(direct).max()))


def test_realify_direct_residue_check():
    rng = np.random.default_rng(0)
    Y = rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3))
    out = realify_direct(Y)
    assert np.isrealobj(out)
    # a negative tolerance makes any residue, even zero, trip the check
    with pytest.raises(ConsistencyError):
        realify_direct(Y, check_tol=-1.0)


def test_realify_preserves_column_space_energy():
    rng = np.random.default_rng(2)
    Y = rng.standard_normal((6, 4)) + 1j * rng.standard_normal((6, 4))
    Z = np.concatenate([Y, exchange_matrix(6) @ Y.conj() @ exchange_matrix(4)], axis=1)
    np.testing.assert_allclose(np.linalg.svd(realify(Y), compute_uv=False), np.linalg.svd(Z, compute_uv=False), atol=1e-12)


# ---- smoothing --------------------------------------------------------------

def test_smoothing_one_dimension_example():
    plan = SmoothingPlan((4,), (2,))
    out = spatial_smooth(np.arange(4.0)[:, None], plan)
    np.testing.assert_array_equal(out, [[0, 1], [1, 2], [2, 3]])


def test_smoothing_identity_when_no_windows():
    Y = np.arange(12.0).reshape(6, 2)
    np.testing.assert_array_equal(spatial_smooth(Y, SmoothingPlan((3, 2), (1, 1))), Y)


@pytest.mark.parametrize("dims,g", [((4, 3), (2, 2)), ((3, 4, 5), (2, 1, 3)), ((5,), (3,))])
def test_smoothing_matches_index_loop(dims, g):
    plan = SmoothingPlan(dims, g)
    n = 2
    Y = np.arange(plan.M * n, dtype=float).reshape(plan.M, n)
    sub = plan.sub_dims
    strides = np.cumprod((1,) + dims[:-1])
    blocks = []
    for offs in itertools.product(*(range(x) for x in g)):
        rows = []
        for idx in itertools.product(*(range(s) for s in reversed(sub))):
            idx = idx[::-1]  # dimension 1 fastest
            rows.append(sum((o + i) * st_ for o, i, st_ in zip(offs, idx, strides)))
        blocks.append(Y[rows])
    np.testing.assert_array_equal(spatial_smooth(Y, plan), np.concatenate(blocks, axis=1))
    assert spatial_smooth(Y, plan).shape == (plan.M_sub, n * plan.G)


def test_plan_validation():
    with pytest.raises(ValueError):
        SmoothingPlan((4, 4), (5, 1))
    with pytest.raises(ValueError):
        SmoothingPlan((4,), (1, 1))
    with pytest.raises(ValueError):
        spatial_smooth(np.zeros((5, 2)), SmoothingPlan((4,), (1,)))


# ---- subspace and shift invariance -----------------------------------------

def test_signal_subspace_routes_agree():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((450, 3)) @ rng.standard_normal((3, 420)) + 1e-3 * rng.standard_normal((450, 420))
    U = signal_subspace(X, 3)
    Ud = np.linalg.svd(X, full_matrices=False)[0][:, :3]
    np.testing.assert_allclose(U @ U.T, Ud @ Ud.T, atol=1e-9)
    with pytest.raises(ValueError):
        signal_subspace(X[:5, :5], 5)


@pytest.mark.parametrize("method", ["ls", "tls"])
def test_shift_eigenvalues_are_half_angle_tangents(method):
    rng = np.random.default_rng(5)
    freqs = np.array([[-1.2], [0.4], [2.0]])
    plan = SmoothingPlan((10,), (3,))
    Y = harmonic_data(freqs, plan.dims, 6, rng)
    E = signal_subspace(realify(spatial_smooth(Y, plan)), 3)
    phi = solve_shift_invariance(E, plan, 0, method)
    lam = np.sort(np.linalg.eigvals(phi).real)
    np.testing.assert_allclose(lam, np.tan(np.sort(freqs[:, 0]) / 2), atol=1e-9)


def test_ls_and_tls_agree_noiseless():
    rng = np.random.default_rng(6)
    plan = SmoothingPlan((6, 5), (2, 2))
    Y = harmonic_data(separated_freqs(rng, 3, 2), plan.dims, 4, rng)
    E = signal_subspace(realify(spatial_smooth(Y, plan)), 3)
    for r in range(2):
        np.testing.assert_allclose(solve_shift_invariance(E, plan, r, "ls"), solve_shift_invariance(E, plan, r, "tls"), atol=1e-9)
    with pytest.raises(ValueError):
        solve_shift_invariance(E, plan, 0, "svd")


# ---- joint diagonalisation --------------------------------------------------

def commuting_family(rng, L, R):
    T = rng.standard_normal((L, L)) + 2 * np.eye(L)
    lam = rng.uniform(-3, 3, (R, L))
    return [T @ np.diag(lam[r]) @ np.linalg.inv(T) for r in range(R)], lam


@pytest.mark.parametrize("R", [1, 2, 3, 4])
def test_joint_diag_recovers_paired_eigenvalues(R):
    rng = np.random.default_rng(10 + R)
    for _ in range(10):
        phis, lam = commuting_family(rng, 4, R)
        diags, flags = joint_diag(phis)
        got = np.stack(diags, axis=1)
        truth = lam.T
        if R == 1:
            np.testing.assert_allclose(got[:, 0], np.sort(truth[:, 0]), atol=1e-8)
            continue
        cost = np.array([[np.max(np.abs(g - t)) for t in truth] for g in got])
        r, c = linear_sum_assignment(cost)
        assert cost[r, c].max() < 1e-6 and not flags


def test_joint_diag_shape_errors():
    with pytest.raises(ValueError):
        joint_diag([np.eye(2), np.eye(3)])


def test_simultaneous_schur_is_monotone():
    rng = np.random.default_rng(21)
    phis, _ = commuting_family(rng, 5, 3)
    noisy = [P + 0.05 * rng.standard_normal(P.shape) for P in phis]
    mats, history, converged = simultaneous_schur(noisy)
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))
    assert converged
    # orthogonal similarity keeps the Frobenius norm
    for A, B in zip(noisy, mats):
        assert abs(np.linalg.norm(A) - np.linalg.norm(B)) < 1e-10


# ---- end to end -------------------------------------------------------------

@pytest.mark.parametrize("dims,g,L", [((8, 8), (2, 2), 3), ((6, 6, 16), (2, 2, 8), 4), ((12,), (4,), 2)])
def test_estimate_noiseless(dims, g, L):
    rng = np.random.default_rng(sum(dims) + L)
    for _ in range(5):
        freqs = separated_freqs(rng, L, len(dims))
        Y = harmonic_data(freqs, dims, 3, rng)
        est = estimate_frequencies(Y, L, SmoothingPlan(dims, g))
        assert est.freqs.shape == (L, len(dims))
        assert match_error(est.freqs, freqs) < 1e-8


def test_estimate_with_noise_is_accurate():
    rng = np.random.default_rng(31)
    dims = (8, 8)
    freqs = separated_freqs(rng, 3, 2, gap=0.5)
    Y = harmonic_data(freqs, dims, 40, rng, noise=0.05)
    est = MduEsprit(SmoothingPlan(dims, (2, 2)), "tls").estimate(Y, 3)
    assert match_error(est.freqs, freqs) < 1e-2


def test_near_pi_flag_and_errors():
    rng = np.random.default_rng(40)
    freqs = np.array([[3.12, 0.2], [-0.5, -1.0]])
    est = estimate_frequencies(harmonic_data(freqs, (8, 8), 3, rng), 2, SmoothingPlan((8, 8), (2, 2)))
    assert "frequency-near-pi" in est.flags
    with pytest.raises(ValueError):
        estimate_frequencies(np.zeros((4, 2)), 3, SmoothingPlan((4,), (2,)))
    with pytest.raises(ValueError):
        estimate_frequencies(np.zeros((4, 2)), 0, SmoothingPlan((4,), (1,)))
