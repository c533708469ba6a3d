"""NMSE versus SNR for the closed-loop scheme, its random-precoder ablation and the OMP baselines.

    python3 scripts/nmse_vs_snr.py --profile full --trials 200 --out runs/nmse
"""

import argparse
import sys

from closedloop_ce.harness.config import PROFILES
from closedloop_ce.harness.runner import run_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--profile", choices=sorted(PROFILES), default="full")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--methods", default="closed-loop,random-fu,omp,swomp")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default="runs/nmse")
    args = p.parse_args()

    cfg = PROFILES[args.profile](n_trials=args.trials)
    methods = tuple(args.methods.split(","))

    def progress(done, total):
        if done == total or done % max(total // 20, 1) == 0:
            print(f"{done}/{total}", file=sys.stderr, flush=True)

    _, summary = run_sweep(cfg, methods, args.threads, args.out, progress)
    print(f"{'method':>18s} " + " ".join(f"{s:>8.0f}" for s in cfg.snr_list_db))
    for m in methods:
        row = {r["snr_db"]: r["nmse_db"] for r in summary if r["method"] == m}
        print(f"{m:>18s} " + " ".join(f"{row[s]:8.2f}" for s in cfg.snr_list_db))


if __name__ == "__main__":
    main()
