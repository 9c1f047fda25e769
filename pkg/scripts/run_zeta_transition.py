#!/usr/bin/env python3
"""Order parameter zeta across the transition line.

Sweeps alpha_x through alpha_z with the SOPB solver and records zeta: away
from the symmetric point the combined spin-parity symmetry pins zeta to 1;
at alpha_x = alpha_z it collapses in the deep sub-Ohmic regime and stays
intermediate in the shallow one.
"""

import argparse
import os

from tbsbm.driver import ExperimentConfig, run_sweep, write_text


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--s", type=float, default=0.25)
    ap.add_argument("--alpha-z", type=float, default=0.1)
    ap.add_argument("--l", type=int, default=12)
    ap.add_argument("--bond-dim", type=int, default=24)
    ap.add_argument("--half-width", type=float, default=0.01)
    ap.add_argument("--step", type=float, default=0.005)
    ap.add_argument("--out", default="out/zeta_transition")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    config = ExperimentConfig(
        solver="dmrg", policy="sopb", s=args.s,
        alpha_z=args.alpha_z, alpha_x=args.alpha_z,
        l_z=args.l, l_x=args.l, support="truncated",
        n_ph=16, n_opt=8, bond_dim=args.bond_dim, compute_zeta=True,
        sweep_param="alpha_x",
        sweep_start=args.alpha_z - args.half_width,
        sweep_stop=args.alpha_z + args.half_width,
        sweep_step=args.step,
        out=args.out, seed=args.seed)
    result = run_sweep(config)
    path = os.path.join(args.out, f"zeta_s{args.s}.csv")
    write_text(path, result.table(config))
    print(f"wrote {path} ({'ok' if result.ok else 'with failures'})")


if __name__ == "__main__":
    main()
