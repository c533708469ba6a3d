"""Re-fit the eigenvalue threshold table for a profile and print it as a Python dict."""

import argparse
import json
from pathlib import Path

from closedloop_ce.harness.config import PROFILES
from closedloop_ce.harness.runner import calibrate_eps


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--profile", choices=sorted(PROFILES), default="full")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--paths", default="3,4,5")
    p.add_argument("--out", default="runs/calibration")
    args = p.parse_args()

    cfg = PROFILES[args.profile]()
    table, hits = calibrate_eps(cfg, n_trials=args.trials, path_counts=tuple(int(x) for x in args.paths.split(",")))
    for snr in sorted(table):
        print(f"{snr:6.1f} dB  eps {table[snr]:.4g}  P(L_hat = L) {hits[snr]:.3f}")
    print("{" + ", ".join(f"{s}: {table[s]:.4g}" for s in sorted(table)) + "}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eps_table.json").write_text(json.dumps({"eps_table": {str(k): v for k, v in table.items()},
                                                    "hit_rate": {str(k): v for k, v in hits.items()}}, indent=2))


if __name__ == "__main__":
    main()
