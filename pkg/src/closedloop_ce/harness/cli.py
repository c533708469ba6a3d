"""Command-line entry point: sweep, trial, beampattern, calibrate-eps."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..array_model import ArrayGeometry
from ..training import PhaseSet
from ..uplink_beams import beam_pattern, default_angle_grid, design_multibeam_precoder, quantize_angles, write_beam_pattern_csv
from .config import PROFILES, load_config
from .metrics import to_db
from .runner import METHODS, calibrate_eps, run_sweep, run_trial, summarize, write_outputs


def _config(args):
    cfg = load_config(args.config, args.profile) if args.config else PROFILES[args.profile]()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "trials", None):
        cfg = cfg.replace(n_trials=args.trials)
    if getattr(args, "snr", None):
        cfg = cfg.replace(snr_list_db=tuple(float(s) for s in args.snr.split(",")))
    return cfg


def _methods(text):
    methods = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    return methods


def _progress(done, total):
    if done == total or done % max(total // 20, 1) == 0:
        print(f"  {done}/{total} trials", file=sys.stderr, flush=True)


def cmd_sweep(args):
    cfg = _config(args)
    results, summary = run_sweep(cfg, args.methods, args.threads, args.out, _progress)
    for row in summary:
        print(f"{row['method']:>18s}  SNR {row['snr_db']:6.1f} dB  NMSE {row['nmse_db']:8.2f} dB  "
              f"P(L_hat=L) {row['p_order_correct']:.2f}  n={row['n']}")
    print(f"wrote {Path(args.out) / 'results.csv'}")


def cmd_trial(args):
    cfg = _config(args)
    seed = cfg.seed if args.seed is None else args.seed
    snr = float(args.snr) if args.snr else cfg.snr_list_db[-1]
    results = run_trial(cfg, snr, seed, args.methods, keep_estimates=True)
    for r in results:
        print(f"[{r.method}] NMSE {float(to_db(r.nmse)):.2f} dB  L={r.L_true}  L_hat={r.L_hat}  flags={r.flags}")
        if r.estimate is not None:
            ps = r.estimate.pathset
            for l in range(ps.n_paths):
                print(f"   path {l}: UD ({ps.theta_ud[l]:+.4f}, {ps.phi_ud[l]:+.4f})  "
                      f"BS ({ps.theta_bs[l]:+.4f}, {ps.phi_bs[l]:+.4f})  "
                      f"tau {ps.delays[l] * cfg.f_s:7.3f} Ts  |gain| {abs(ps.effective_gains[l]):.4f}")
    if args.out:
        write_outputs(results, summarize(results), args.out, cfg)


def cmd_beampattern(args):
    cfg = _config(args)
    rng = np.random.default_rng(cfg.seed if args.seed is None else args.seed)
    n = args.array
    geom = ArrayGeometry(n, n)
    if args.angles:
        pairs = json.loads(args.angles)
        theta, phi = np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])
    else:
        theta = rng.uniform(-np.pi / 3, np.pi / 3, args.paths)
        phi = rng.uniform(-np.pi / 3, np.pi / 3, args.paths)
    q = quantize_angles(theta, phi, cfg.n_q_ang)
    F, case = design_multibeam_precoder(q, cfg.n_rf_ud, geom, PhaseSet(cfg.n_q_ps), rng, cfg.n_streams_u)
    grid = default_angle_grid(args.grid)
    gain = beam_pattern(F, geom, grid, grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = write_beam_pattern_csv(out / f"beampattern_{n}x{n}.csv", grid, grid, gain)
    print(f"case {case}; wrote {path}")


def cmd_calibrate(args):
    cfg = _config(args)
    counts = tuple(int(x) for x in args.paths.split(",")) if args.paths else None
    table, hits = calibrate_eps(cfg, n_trials=args.trials or 200, path_counts=counts)
    for snr in sorted(table):
        print(f"SNR {snr:6.1f} dB  eps {table[snr]:.6g}  P(L_hat=L) {hits[snr]:.3f}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"eps_table": {str(k): v for k, v in table.items()}, "hit_rate": {str(k): v for k, v in hits.items()}}
    (out / "eps_table.json").write_text(json.dumps(payload, indent=2))
    print(f"wrote {out / 'eps_table.json'}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of SystemConfig overrides")
    common.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    common.add_argument("--out", default="out")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--methods", type=_methods, default=("closed-loop",))

    p = argparse.ArgumentParser(prog="closedloop-ce", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("sweep", parents=[common], help="Monte Carlo NMSE sweep over SNR")
    s.add_argument("--trials", type=int)
    s.add_argument("--snr", help="comma-separated SNR list in dB")
    s.set_defaults(func=cmd_sweep)
    t = sub.add_parser("trial", parents=[common], help="one verbose trial")
    t.add_argument("--snr")
    t.set_defaults(func=cmd_trial)
    b = sub.add_parser("beampattern", parents=[common], help="export a multi-beam pattern CSV")
    b.add_argument("--array", type=int, default=8)
    b.add_argument("--paths", type=int, default=5)
    b.add_argument("--grid", type=int, default=181)
    b.add_argument("--angles", help='JSON list of [theta, phi] pairs in radians')
    b.set_defaults(func=cmd_beampattern)
    c = sub.add_parser("calibrate-eps", parents=[common], help="re-fit the eigenvalue threshold table")
    c.add_argument("--trials", type=int)
    c.add_argument("--snr", help="comma-separated SNR list in dB")
    c.add_argument("--paths", help="comma-separated path counts to calibrate over")
    c.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0
