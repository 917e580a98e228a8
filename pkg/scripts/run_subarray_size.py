#!/usr/bin/env python3
"""Subarray-size study at fixed total antenna count: sweeps M and reports how
location/velocity accuracy responds to the resolution-vs-diversity trade."""

import argparse
import sys
import warnings
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from nfmotion.harness import ExperimentConfig, desk_preset, emit_csv, run_experiment


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--seed", type=int, default=2026)
    ap.add_argument("--values", default="4,8,16,32")
    ap.add_argument("--methods", default="vmp-system,vmp-subarray")
    ap.add_argument("--out", default="subarray_size.csv")
    args = ap.parse_args()

    cfg = ExperimentConfig(
        scenario=desk_preset(),
        sweep_param="m_sub",
        sweep_values=tuple(float(v) for v in args.values.split(",")),
        methods=tuple(args.methods.split(",")),
        trials=args.trials,
        seed=args.seed,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        results = run_experiment(cfg)
    emit_csv(results, args.out)
    for row in results.aggregate():
        print(f"{row['method']:>14} M={int(row['sweep_value']):>3}: "
              f"rmse_p={row['rmse_p_m']*100:7.3f} cm  "
              f"rmse_v={row['rmse_v_mps']:7.4f} m/s")
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
