"""Monte Carlo trials, sweeps and threshold calibration."""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..array_model import ChannelRealization, sample_pathset
from ..errors import ConsistencyError, DomainError, EstimationError
from ..model_order import calibrate_threshold, covariance_eigenvalues, eps_for_snr
from ..pipeline import downlink_estimate, ml_pair_and_gains, reconstruct_all, uplink_estimate
from ..training import (
    PhaseSet,
    design_combiners,
    random_precoder,
    scrambling_code,
    synth_downlink,
    synth_uplink,
    training_symbols,
)
from ..uplink_beams import design_multibeam_precoder
from .baseline import omp_baseline
from .config import SystemConfig
from .metrics import ase, nmse, to_db

METHODS = ("closed-loop", "random-fu", "closed-loop-genie", "omp", "swomp")
CSV_COLUMNS = (
    "method", "snr_db", "trial", "seed", "nmse", "nmse_db", "ase", "L_true", "L_hat",
    "t_downlink_ms", "t_uplink_ms", "t_pair_ms", "flags",
)
ASE_STREAMS = 2
_RECOVERABLE = (EstimationError, DomainError, ConsistencyError, np.linalg.LinAlgError, ValueError)


@dataclass
class TrialResult:
    method: str
    snr_db: float
    trial: int
    seed: int
    L_true: int
    L_hat: int
    nmse: float
    ase: float = float("nan")
    t_downlink_ms: float = 0.0
    t_uplink_ms: float = 0.0
    t_pair_ms: float = 0.0
    flags: list = field(default_factory=list)
    estimate: object = None

    def row(self):
        return {
            "method": self.method, "snr_db": self.snr_db, "trial": self.trial, "seed": self.seed,
            "nmse": repr(self.nmse), "nmse_db": f"{float(to_db(self.nmse)):.4f}",
            "ase": repr(self.ase), "L_true": self.L_true, "L_hat": self.L_hat,
            "t_downlink_ms": f"{self.t_downlink_ms:.3f}", "t_uplink_ms": f"{self.t_uplink_ms:.3f}",
            "t_pair_ms": f"{self.t_pair_ms:.3f}", "flags": ";".join(self.flags),
        }


def trial_seed(master, snr_index, trial):
    return int(np.random.SeedSequence((int(master), int(snr_index), int(trial))).generate_state(1)[0])


def _streams(seed):
    """Independent generators for each random ingredient of a trial."""
    names = ("channel", "dl_signal", "dl_noise", "ul_digital", "ul_signal", "ul_noise", "omp_frames", "omp_noise")
    kids = np.random.SeedSequence(int(seed)).spawn(len(names))
    return dict(zip(names, kids))


def _rng(seqs, name):
    return np.random.default_rng(seqs[name])


@lru_cache(maxsize=16)
def _combiners(n_h, n_v, m_h, m_v, n_rf, n_streams, n_slots, n_bits, basis):
    return design_combiners(n_h, n_v, m_h, m_v, n_rf, n_streams, n_slots, PhaseSet(n_bits), basis)[1]


def downlink_combiner(cfg: SystemConfig):
    return _combiners(cfg.n_ud_h, cfg.n_ud_v, cfg.m_ud_h, cfg.m_ud_v, cfg.n_rf_ud,
                      cfg.n_streams_d, cfg.N_d, cfg.n_q_ps, cfg.basis)


def uplink_combiner(cfg: SystemConfig):
    return _combiners(cfg.n_bs_h, cfg.n_bs_v, cfg.m_bs_h, cfg.m_bs_v, cfg.n_rf_bs,
                      cfg.n_streams_u, cfg.N_u, cfg.n_q_ps, cfg.basis)


def noise_variance(snr_db):
    return 10.0 ** (-snr_db / 10.0)


def sample_channel(cfg, seqs, n_paths=None):
    ps = sample_pathset(cfg, _rng(seqs, "channel"), n_paths)
    return ChannelRealization(ps, cfg.ud_geometry, cfg.bs_geometry, cfg.K, cfg.f_s)


def run_downlink(cfg, ch, seqs, noise_var):
    rng = _rng(seqs, "dl_signal")
    F_d = random_precoder(cfg.bs_geometry.total, cfg.n_rf_bs, cfg.n_streams_d, PhaseSet(cfg.n_q_ps), rng)
    S_d = training_symbols(cfg.n_streams_d, cfg.n_o_d, rng)
    x_d = scrambling_code(cfg.K, cfg.zc_root)
    return synth_downlink(ch, F_d, downlink_combiner(cfg), S_d, x_d, noise_var, _rng(seqs, "dl_noise"), cfg.n_sub_ud)


def _closed_loop(cfg, ch, seqs, noise_var, down, multibeam, flags):
    ps = PhaseSet(cfg.n_q_ps)
    rng_dig = _rng(seqs, "ul_digital")
    if multibeam:
        F_u, case = design_multibeam_precoder(down.aoas, cfg.n_rf_ud, cfg.ud_geometry, ps, rng_dig, cfg.n_streams_u)
        flags.append(f"case-{case}")
    else:
        F_u = random_precoder(cfg.ud_geometry.total, cfg.n_rf_ud, cfg.n_streams_u, ps, rng_dig)
    S_u = training_symbols(cfg.n_streams_u, cfg.n_o_u, _rng(seqs, "ul_signal"))
    x_u = scrambling_code(cfg.K, cfg.zc_root)
    t0 = time.perf_counter()
    block, y_bar = synth_uplink(ch, F_u, uplink_combiner(cfg), S_u, x_u, noise_var, _rng(seqs, "ul_noise"), cfg.n_sub_bs)
    up = uplink_estimate(block, down.L_hat, cfg)
    flags += up.flags
    t1 = time.perf_counter()
    est = ml_pair_and_gains(y_bar, down.aoas, up, F_u, S_u, cfg)
    flags += est.flags
    t2 = time.perf_counter()
    return est, (t1 - t0) * 1e3, (t2 - t1) * 1e3


def run_trial(cfg: SystemConfig, snr_db, seed, methods=("closed-loop",), trial=0, keep_estimates=False, L_true=None):
    """One channel realisation processed by every requested method.

    All methods share the channel; the closed-loop variants additionally
    share the downlink measurement and every uplink random draw, so they
    differ only in the transmit precoder or in the injected path count.
    """
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    seqs = _streams(seed)
    ch = sample_channel(cfg, seqs, L_true)
    H = ch.stack()
    noise_var = noise_variance(snr_db)
    L = ch.pathset.n_paths
    results = []

    loop_methods = [m for m in methods if m in ("closed-loop", "random-fu", "closed-loop-genie")]
    block = None
    t_block = 0.0
    if loop_methods:
        t0 = time.perf_counter()
        block = run_downlink(cfg, ch, seqs, noise_var)
        t_block = (time.perf_counter() - t0) * 1e3
    eps = eps_for_snr(snr_db, cfg.eps_table)
    downs = {}

    for method in methods:
        flags = []
        res = TrialResult(method, float(snr_db), trial, int(seed), L, 0, 1.0, flags=flags)
        try:
            if method in ("omp", "swomp"):
                t0 = time.perf_counter()
                H_hat, info = omp_baseline(ch, cfg, noise_var, _rng(seqs, "omp_frames"), _rng(seqs, "omp_noise"),
                                           common_support=method == "swomp")
                res.t_uplink_ms = (time.perf_counter() - t0) * 1e3
                res.L_hat = int(np.max(info.n_iter)) if info.n_iter else 0
            else:
                genie = method == "closed-loop-genie"
                if genie not in downs:
                    t0 = time.perf_counter()
                    d = downlink_estimate(block, cfg, eps, L_hat=L if genie else None)
                    downs[genie] = (d, t_block + (time.perf_counter() - t0) * 1e3)
                down, res.t_downlink_ms = downs[genie]
                flags += down.flags
                res.L_hat = down.L_hat
                est, res.t_uplink_ms, res.t_pair_ms = _closed_loop(
                    cfg, ch, seqs, noise_var, down, method != "random-fu", flags)
                H_hat = reconstruct_all(est)
                if keep_estimates:
                    res.estimate = est
            res.nmse = nmse(H, H_hat)
            if cfg.compute_ase:
                res.ase = ase(H, H_hat, ASE_STREAMS, noise_var)
        except _RECOVERABLE as exc:
            flags.append(f"estimation-failed:{type(exc).__name__}")
            res.nmse = 1.0
        results.append(res)
    return results


def _trial_job(args):
    cfg, snr_index, snr_db, trial, methods = args
    seed = trial_seed(cfg.seed, snr_index, trial)
    return run_trial(cfg, snr_db, seed, methods, trial)


def _jobs(cfg, methods):
    return [(cfg, i, snr, t, tuple(methods)) for i, snr in enumerate(cfg.snr_list_db) for t in range(cfg.n_trials)]


def run_sweep(cfg: SystemConfig, methods=("closed-loop",), threads=1, out_dir=None, progress=None):
    """All SNR points x trials x methods; returns ``(results, summary)``."""
    jobs = _jobs(cfg, methods)
    results = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for i, rs in enumerate(pool.map(_trial_job, jobs, chunksize=4)):
                results.extend(rs)
                if progress:
                    progress(i + 1, len(jobs))
    else:
        for i, job in enumerate(jobs):
            results.extend(_trial_job(job))
            if progress:
                progress(i + 1, len(jobs))
    summary = summarize(results)
    if out_dir is not None:
        write_outputs(results, summary, out_dir, cfg)
    return results, summary


def _ci95(x):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float("nan")
    return float(1.96 * np.std(x, ddof=1) / np.sqrt(x.size))


def summarize(results):
    """Per (method, SNR): linear-mean NMSE with its dB value and 95% interval."""
    groups = {}
    for r in results:
        groups.setdefault((r.method, r.snr_db), []).append(r)
    out = []
    for (method, snr), rs in sorted(groups.items()):
        x = np.array([r.nmse for r in rs])
        mean, half = float(np.mean(x)), _ci95(x)
        a = np.array([r.ase for r in rs])
        out.append({
            "method": method, "snr_db": snr, "n": len(rs),
            "nmse_mean": mean, "nmse_db": float(to_db(mean)),
            "nmse_ci95": half,
            "nmse_db_ci95": [float(to_db(max(mean - half, 1e-300))), float(to_db(mean + half))],
            "ase_mean": float(np.nanmean(a)) if np.any(np.isfinite(a)) else None,
            "ase_ci95": _ci95(a[np.isfinite(a)]) if np.sum(np.isfinite(a)) > 1 else None,
            "p_order_correct": float(np.mean([r.L_hat == r.L_true for r in rs])),
            "n_failed": int(sum(any(f.startswith("estimation-failed") for f in r.flags) for r in rs)),
        })
    return out


def write_outputs(results, summary, out_dir, cfg=None):
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        with (out / "results.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for r in results:
                w.writerow(r.row())
        payload = {"summary": summary}
        if cfg is not None:
            payload["config"] = cfg.to_dict()
        (out / "summary.json").write_text(json.dumps(payload, indent=2))
    except OSError as exc:
        raise OSError(f"cannot write results under {out}: {exc}") from exc
    return out


def downlink_eigenvalues(cfg: SystemConfig, snr_db, seed, n_paths=None):
    """Eigenvalues of the averaged downlink covariance for one trial."""
    seqs = _streams(seed)
    ch = sample_channel(cfg, seqs, n_paths)
    block = run_downlink(cfg, ch, seqs, noise_variance(snr_db))
    return covariance_eigenvalues(block.per_subcarrier(), cfg.P)


def calibrate_eps(cfg: SystemConfig, snr_list=None, n_trials=200, path_counts=None, seed=None):
    """Re-fit the threshold table from downlink-only trials.

    Returns ``(table, hit_rates)`` keyed by SNR.
    """
    snr_list = cfg.snr_list_db if snr_list is None else snr_list
    path_counts = (cfg.L,) if path_counts is None else tuple(path_counts)
    master = cfg.seed if seed is None else seed
    table, hits = {}, {}
    for i, snr in enumerate(snr_list):
        lams, truth = [], []
        for j, L in enumerate(path_counts):
            for t in range(n_trials):
                s = int(np.random.SeedSequence((int(master), 7919, i, j, t)).generate_state(1)[0])
                lams.append(downlink_eigenvalues(cfg, snr, s, L))
                truth.append(L)
        eps, rate = calibrate_threshold(np.array(lams), np.array(truth), L_max=cfg.L_max)
        table[float(snr)] = eps
        hits[float(snr)] = rate
    return table, hits
