#!/usr/bin/env python3
"""Full-scale (256-antenna, 600-pulse) sweep. Hours, not minutes; the desk
profile in run_snr_sweep.py is the everyday tool."""

import argparse
import sys
import warnings
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from nfmotion.harness import ExperimentConfig, emit_csv, run_experiment, table2_preset


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--seed", type=int, default=2026)
    ap.add_argument("--values", default="-10,-5,0,5,10,15,20")
    ap.add_argument("--methods", default="vmp-system,vmp-subarray")
    ap.add_argument("--threads", type=int, default=2)
    ap.add_argument("--out", default="fullscale_sweep.csv")
    args = ap.parse_args()

    cfg = ExperimentConfig(
        scenario=table2_preset(),
        sweep_param="snr_db",
        sweep_values=tuple(float(v) for v in args.values.split(",")),
        methods=tuple(args.methods.split(",")),
        trials=args.trials,
        seed=args.seed,
        threads=args.threads,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        results = run_experiment(cfg)
    emit_csv(results, args.out)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
