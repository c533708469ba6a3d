import csv
import json

import numpy as np
import pytest

from closedloop_ce.array_model import ChannelRealization, PathSet, angles_from_frequencies
from closedloop_ce.harness.baseline import (
    angle_dictionary,
    frequency_grid,
    omp,
    omp_baseline,
    reconstruct,
    sound,
)
from closedloop_ce.harness.cli import main
from closedloop_ce.harness.config import desk_profile, load_config, full_profile
from closedloop_ce.harness.metrics import ase, nmse, to_db
from closedloop_ce.harness.runner import (
    CSV_COLUMNS,
    calibrate_eps,
    run_sweep,
    run_trial,
    summarize,
    trial_seed,
    write_outputs,
)

# ---- metrics ----------------------------------------------------------------


def test_nmse_examples():
    rng = np.random.default_rng(0)
    H = rng.standard_normal((4, 3, 2)) + 1j * rng.standard_normal((4, 3, 2))
    assert nmse(H, H) == 0.0
    assert nmse(H, np.zeros_like(H)) == pytest.approx(1.0)
    assert nmse(H, 2 * H) == pytest.approx(1.0)
    assert nmse(H, 0.9 * H) == pytest.approx(0.01)
    assert to_db(0.01) == pytest.approx(-20.0)
    assert nmse(-3j * H, -3j * 0.9 * H) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        nmse(H, H[:2])
    with pytest.raises(ValueError):
        nmse(np.zeros((2, 2)), np.zeros((2, 2)))


def test_ase_diagonal_oracle():
    H = np.diag([3.0, 1.0]).astype(complex)[None]
    assert ase(H, H, 1, 1.0) == pytest.approx(np.log2(10.0))
    assert ase(H, H, 2, 1.0) == pytest.approx(np.log2((1 + 9 / 2) * (1 + 1 / 2)))
    # steering the single stream to the weak mode
    H_hat = np.diag([1.0, 3.0]).astype(complex)[None]
    assert ase(H, H_hat, 1, 1.0) == pytest.approx(np.log2(2.0))
    with pytest.raises(ValueError):
        ase(H, H, 3, 1.0)


def test_ase_rank_one_capacity():
    rng = np.random.default_rng(3)
    u = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    H = np.outer(u, v.conj())[None]
    s2 = np.linalg.norm(H[0], 2) ** 2
    assert ase(H, H, 1, 0.3) == pytest.approx(np.log2(1 + s2 / 0.3), abs=1e-10)


def test_perfect_csi_bounds_estimated_csi():
    rng = np.random.default_rng(4)
    for _ in range(50):
        H = rng.standard_normal((3, 6, 5)) + 1j * rng.standard_normal((3, 6, 5))
        H_hat = H + 0.5 * (rng.standard_normal(H.shape) + 1j * rng.standard_normal(H.shape))
        assert ase(H, H_hat, 2, 0.2) <= ase(H, H, 2, 0.2) + 1e-12


def test_ase_matches_literal_formula():
    rng = np.random.default_rng(1)
    H = rng.standard_normal((5, 6, 4)) + 1j * rng.standard_normal((5, 6, 4))
    H_hat = H + 0.3 * (rng.standard_normal(H.shape) + 1j * rng.standard_normal(H.shape))
    ns, var = 2, 0.5
    rates = []
    for k in range(5):
        U, _, Vh = np.linalg.svd(H_hat[k])
        W, F = U[:, :ns], Vh[:ns].conj().T
        Rn = var * W.conj().T @ W
        G = W.conj().T @ H[k] @ F
        rates.append(np.log2(np.linalg.det(np.eye(ns) + np.linalg.inv(Rn) @ G @ G.conj().T / ns).real))
    assert ase(H, H_hat, ns, var) == pytest.approx(np.mean(rates), rel=1e-10)
    assert ase(H, H_hat, ns, var) <= ase(H, H, ns, var) + 1e-9


# ---- config -----------------------------------------------------------------


def test_training_overhead():
    assert full_profile().T_CE == 132
    d = desk_profile()
    assert d.T_CE == 2 * 12 * 3
    assert full_profile(n_o_d=2, n_o_u=2).T_CE == 88


def test_config_loading(tmp_path):
    good = tmp_path / "c.json"
    good.write_text(json.dumps({"n_trials": 3, "snr_list_db": [0, 5]}))
    cfg = load_config(good, "desk")
    assert cfg.n_trials == 3 and cfg.snr_list_db == (0.0, 5.0) and cfg.K == 64
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n_trails": 3}))
    with pytest.raises(ValueError, match="n_trails"):
        load_config(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(ValueError):
        load_config(arr)
    with pytest.raises(OSError):
        load_config(tmp_path / "nope.json")


def test_config_validation():
    with pytest.raises(ValueError):
        desk_profile(m_ud_h=9)
    with pytest.raises(ValueError):
        desk_profile(shift_solver="qr")
    assert full_profile().to_dict()["eps_table"]


# ---- on-grid baseline -------------------------------------------------------


def on_grid_channel(cfg, picks, gains, delays):
    gu, gb = frequency_grid(cfg.omp_grid_ud[0]), frequency_grid(cfg.omp_grid_bs[0])
    cols = {k: [] for k in ("tu", "pu", "tb", "pb")}
    for (iu, ju, ib, jb) in picks:
        t, p = angles_from_frequencies(gu[iu], gu[ju])
        cols["tu"].append(t)
        cols["pu"].append(p)
        t, p = angles_from_frequencies(gb[ib], gb[jb])
        cols["tb"].append(t)
        cols["pb"].append(p)
    ps = PathSet(gains=gains, theta_ud=cols["tu"], phi_ud=cols["pu"], theta_bs=cols["tb"], phi_bs=cols["pb"],
                 delays=delays, beta=1.0)
    return ChannelRealization(ps, cfg.ud_geometry, cfg.bs_geometry, cfg.K, cfg.f_s)


@pytest.mark.parametrize("common", [False, True])
def test_omp_recovers_on_grid_channel(common):
    cfg = desk_profile(K=8, n_c=4)
    ch = on_grid_channel(cfg, [(6, 9, 10, 7), (11, 8, 4, 9)], [1.0, 0.6j], [0.0, 2.5 / cfg.f_s])
    H_hat, res = omp_baseline(ch, cfg, 0.0, np.random.default_rng(0), np.random.default_rng(1), common_support=common)
    assert nmse(ch.stack(), H_hat) < 1e-20
    if common:
        assert np.all(res.ud_atoms == res.ud_atoms[0]) and len(res.n_iter) == 1
    else:
        assert len(res.n_iter) == cfg.K


def test_omp_single_on_grid_path_one_iteration():
    cfg = desk_profile(K=4, n_c=2)
    ch = on_grid_channel(cfg, [(5, 9, 12, 6)], [0.8 - 0.3j], [1.0 / cfg.f_s])
    _, res = omp_baseline(ch, cfg, 0.0, np.random.default_rng(5), np.random.default_rng(6))
    assert res.n_iter == [1] * cfg.K


def test_omp_off_grid_leaves_a_floor():
    cfg = desk_profile(K=4, n_c=2)
    ps = PathSet(gains=[1.0], theta_ud=[0.237], phi_ud=[-0.411], theta_bs=[-0.5213], phi_bs=[0.1337],
                 delays=[0.0], beta=1.0)
    ch = ChannelRealization(ps, cfg.ud_geometry, cfg.bs_geometry, cfg.K, cfg.f_s)
    H_hat, _ = omp_baseline(ch, cfg, 0.0, np.random.default_rng(7), np.random.default_rng(8))
    assert to_db(nmse(ch.stack(), H_hat)) > -40.0


def test_omp_reconstruct_roundtrip_and_stopping():
    cfg = desk_profile(K=4, n_c=2)
    ch = on_grid_channel(cfg, [(7, 8, 8, 8)], [1.0], [0.0])
    frames = sound(ch, cfg, 40, 0.0, np.random.default_rng(2), np.random.default_rng(3))
    D_ud = angle_dictionary(cfg.ud_geometry, 16, 16)
    D_bs = angle_dictionary(cfg.bs_geometry, 16, 16)
    res = omp(frames, D_ud, D_bs, max_atoms=1)
    assert res.coeffs.shape == (4, 1)
    assert nmse(ch.stack(), reconstruct(res, D_ud, D_bs)) < 1e-20
    noisy = sound(ch, cfg, 40, 10.0, np.random.default_rng(2), np.random.default_rng(3))
    assert max(omp(noisy, D_ud, D_bs, max_atoms=8).n_iter) <= 8


# ---- runner -----------------------------------------------------------------


def tiny():
    return desk_profile(n_bs_h=6, n_bs_v=6, n_ud_h=6, n_ud_v=6, m_ud_h=5, m_ud_v=5, m_bs_h=5, m_bs_v=5,
                        K=32, n_c=4, g_u=(2, 2, 16), P=4, omp_grid_ud=(8, 8), omp_grid_bs=(8, 8),
                        snr_list_db=(0.0, 10.0), n_trials=2)


def test_trial_is_deterministic_and_shares_channel():
    cfg = tiny()
    seed = trial_seed(cfg.seed, 1, 0)
    a = run_trial(cfg, 10.0, seed, ("closed-loop", "random-fu", "closed-loop-genie", "omp"))
    b = run_trial(cfg, 10.0, seed, ("closed-loop", "random-fu", "closed-loop-genie", "omp"))
    assert [r.nmse for r in a] == [r.nmse for r in b]
    assert len({r.L_true for r in a}) == 1
    genie = a[2]
    assert genie.L_hat == genie.L_true
    assert a[0].L_hat == a[1].L_hat
    assert trial_seed(1, 0, 0) != trial_seed(1, 0, 1)
    with pytest.raises(ValueError):
        run_trial(cfg, 10.0, seed, ("magic",))


def test_noiseless_closed_loop_is_accurate():
    cfg = tiny()
    r = run_trial(cfg, 200.0, 5, ("closed-loop-genie",), L_true=2)[0]
    assert r.nmse < 1e-3 and not any(f.startswith("estimation-failed") for f in r.flags)


def test_sweep_outputs(tmp_path):
    cfg = tiny()
    results, summary = run_sweep(cfg, ("closed-loop", "random-fu"), out_dir=tmp_path)
    assert len(results) == 2 * 2 * 2 and len(summary) == 4
    rows = list(csv.DictReader((tmp_path / "results.csv").open()))
    assert len(rows) == 8 and tuple(rows[0]) == CSV_COLUMNS
    payload = json.loads((tmp_path / "summary.json").read_text())
    assert len(payload["summary"]) == 4 and payload["config"]["K"] == 32
    s = summarize(results)[0]
    assert s["n"] == 2 and 0.0 <= s["p_order_correct"] <= 1.0
    with pytest.raises(OSError):
        write_outputs(results, summary, tmp_path / "results.csv" / "x")


def test_calibrate_eps_shape():
    table, hits = calibrate_eps(tiny(), snr_list=(10.0,), n_trials=3)
    assert set(table) == {10.0} and table[10.0] > 0 and 0 <= hits[10.0] <= 1


# ---- CLI --------------------------------------------------------------------


def test_cli_smoke(tmp_path, capsys):
    cfg_path = tmp_path / "tiny.json"
    cfg_path.write_text(json.dumps(tiny().to_dict()))
    out = tmp_path / "out"
    assert main(["trial", "--config", str(cfg_path), "--snr", "10", "--out", str(out)]) == 0
    assert "NMSE" in capsys.readouterr().out
    assert main(["sweep", "--config", str(cfg_path), "--trials", "1", "--snr", "5", "--out", str(out),
                 "--methods", "closed-loop,omp"]) == 0
    assert len(list(csv.DictReader((out / "results.csv").open()))) == 2
    assert main(["beampattern", "--array", "8", "--grid", "21", "--out", str(out)]) == 0
    assert (out / "beampattern_8x8.csv").exists()
    assert main(["calibrate-eps", "--config", str(cfg_path), "--trials", "2", "--snr", "10", "--out", str(out)]) == 0
    assert "eps_table" in json.loads((out / "eps_table.json").read_text())
    assert main(["trial", "--config", str(tmp_path / "missing.json")]) == 1
    with pytest.raises(SystemExit):
        main(["sweep", "--methods", "bogus"])
