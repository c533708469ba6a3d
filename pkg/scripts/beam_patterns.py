"""Export multi-beam uplink patterns for the same five AoAs on 8x8 and 16x16 arrays."""

import argparse
from pathlib import Path

import numpy as np

from closedloop_ce.array_model import ArrayGeometry
from closedloop_ce.harness.config import desk_profile
from closedloop_ce.training import PhaseSet
from closedloop_ce.uplink_beams import (
    beam_pattern,
    default_angle_grid,
    design_multibeam_precoder,
    nearest_index,
    quantize_angles,
    write_beam_pattern_csv,
)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--paths", type=int, default=5)
    p.add_argument("--out", default="runs/beams")
    args = p.parse_args()

    cfg = desk_profile()
    rng = np.random.default_rng(args.seed)
    theta = rng.uniform(-np.pi / 3, np.pi / 3, args.paths)
    phi = rng.uniform(-np.pi / 3, np.pi / 3, args.paths)
    q = quantize_angles(theta, phi, cfg.n_q_ang)
    grid = default_angle_grid(181)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    for n in (8, 16):
        geom = ArrayGeometry(n, n)
        F, case = design_multibeam_precoder(q, cfg.n_rf_ud, geom, PhaseSet(cfg.n_q_ps),
                                            np.random.default_rng(args.seed + n), cfg.n_streams_u)
        gain = beam_pattern(F, geom, grid, grid)
        path = write_beam_pattern_csv(out / f"beampattern_{n}x{n}.csv", grid, grid, gain)
        med = np.median(gain)
        at_aoa = [10 * np.log10(gain[nearest_index(grid, t), nearest_index(grid, f)] / med) for t, f in zip(q.theta, q.phi)]
        print(f"{n}x{n} case {case}: gain over median at each AoA " + " ".join(f"{g:.1f}" for g in at_aoa) + f" dB -> {path}")


if __name__ == "__main__":
    main()
