"""Command line front end.

Subcommands: simulate (write an NFZ1 snapshot file), estimate (run one method
on a snapshot file), crb (print the bounds for a scenario), sweep (Monte
Carlo sweep to CSV), selftest (quick oracle suite). Exit codes: 0 success,
2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
import warnings

import numpy as np

from . import fusion
from .baselines import GridSpec, grid_music, ml_estimate, subarray_average
from .config_io import ConfigError, build_experiment, load_experiment
from .crb import location_velocity_bounds
from .harness import (
    METHODS,
    ExperimentConfig,
    emit_csv,
    run_experiment,
    run_vmp_stage1,
)
from .snapshot_io import read_snapshots, write_snapshots
from .wavefield import draw_gains, noisy_delays, set_snr, synthesize_all

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _experiment_from_args(args) -> ExperimentConfig:
    overrides = {
        "sweep_param": getattr(args, "param", None),
        "trials": getattr(args, "trials", None),
        "seed": getattr(args, "seed", None),
        "threads": getattr(args, "threads", None),
        "out_path": getattr(args, "out", None),
    }
    if getattr(args, "values", None):
        overrides["sweep_values"] = tuple(
            float(v) for v in args.values.split(",") if v.strip())
    if getattr(args, "method", None):
        overrides["methods"] = (args.method,)
    if args.config:
        return load_experiment(args.config, overrides)
    raw = {} if not getattr(args, "preset", None) else {"preset": args.preset}
    return build_experiment(raw, overrides)


def _cmd_simulate(args) -> int:
    exp = _experiment_from_args(args)
    scn = exp.scenario
    cfg, pulse, target = scn.array_config(), scn.pulse_config(), scn.target()
    rng = np.random.default_rng([exp.seed, 1])
    gains = draw_gains(cfg, target, scn.pt_w, scn.g_tx, scn.g_rx,
                       scn.sigma_s2, rng=rng)
    noise = set_snr(gains, scn.snr_db, rng_seed=exp.seed)
    snaps = synthesize_all(cfg, pulse, target, gains, noise)
    out = args.out or exp.out_path or "snapshots.nfz"
    write_snapshots(out, snaps, cfg.k_t, cfg.k_r, noise.sigma)
    print(f"wrote {out}: K_t={cfg.k_t} K_r={cfg.k_r} M={cfg.m_sub} "
          f"L={pulse.n_pulses} sigma={noise.sigma:.6g}")
    return EXIT_OK


def _cmd_estimate(args) -> int:
    exp = _experiment_from_args(args)
    scn = exp.scenario
    cfg, pulse = scn.array_config(), scn.pulse_config()
    method = exp.methods[0]
    sf = read_snapshots(args.snapshots)
    if sf.m_sub != cfg.m_sub or sf.n_pulses != pulse.n_pulses:
        raise ConfigError(
            f"snapshot file dimensions (M={sf.m_sub}, L={sf.n_pulses}) do not "
            f"match the configuration (M={cfg.m_sub}, L={pulse.n_pulses})")
    snaps = sf.snapshots
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if method in ("vmp-system", "vmp-subarray", "subarray-avg"):
            posts = run_vmp_stage1(snaps, exp.cavi, exp.threads)
            msgs = fusion.calibrate_messages(
                fusion.build_messages(posts, cfg.k_t, cfg.k_r),
                cfg.m_sub, pulse.n_pulses)
            rng = np.random.default_rng([exp.seed, 2])
            tau = noisy_delays(cfg, scn.target(), scn.tau_std, rng)
            per_pair, fused = fusion.distributed_location(
                msgs, cfg, tau, tau_std=scn.tau_std)
            per_cfg, fused_v = fusion.distributed_velocity(
                msgs, cfg, pulse, fused.mean, doppler_sign=scn.doppler_sign)
            if method == "vmp-system":
                loc = fusion.centralized_location(msgs, cfg, init=fused.mean)
                vel = fusion.centralized_velocity(
                    msgs, cfg, pulse, loc.mean, doppler_sign=scn.doppler_sign)
                p_hat, v_hat = loc.mean, vel.mean
            elif method == "vmp-subarray":
                p_hat, v_hat = fused.mean, fused_v.mean
            else:
                res = subarray_average(per_pair, per_cfg)
                p_hat, v_hat = res.p_hat, res.v_hat
        elif method == "ml":
            res = ml_estimate(snaps, cfg, pulse,
                              init_grid=GridSpec.around(
                                  scn.p0, scn.loc_grid_half,
                                  2.0 * scn.loc_grid_step))
            p_hat, v_hat = res.p_hat, res.v_hat
        elif method == "grid-music":
            res = grid_music(
                snaps, cfg, pulse,
                loc_grid=GridSpec.around(scn.p0, scn.loc_grid_half,
                                         scn.loc_grid_step),
                vel_grid=GridSpec.around((0.0, 0.0), scn.vel_grid_half,
                                         scn.vel_grid_step))
            p_hat, v_hat = res.p_hat, res.v_hat
        else:
            raise ConfigError(f"unknown method {method!r}")
    print(f"method: {method}")
    print(f"p_hat_m: {p_hat[0]:.6f} {p_hat[1]:.6f}")
    print(f"v_hat_mps: {v_hat[0]:.6f} {v_hat[1]:.6f}")
    return EXIT_OK


def _cmd_crb(args) -> int:
    exp = _experiment_from_args(args)
    scn = exp.scenario
    cfg, pulse, target = scn.array_config(), scn.pulse_config(), scn.target()
    gains = draw_gains(cfg, target, scn.pt_w, scn.g_tx, scn.g_rx, scn.sigma_s2)
    sigma = set_snr(gains, scn.snr_db).sigma
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = location_velocity_bounds(cfg, pulse, target, gains, sigma)
    print(f"snr_db: {scn.snr_db}")
    print(f"sqrt_crb_p_m: {np.sqrt(rep.crb_p):.9g}")
    print(f"sqrt_crb_v_mps: {np.sqrt(rep.crb_v):.9g}")
    print(f"crb_p_db: {10*np.log10(np.sqrt(rep.crb_p)):.4f}")
    print(f"crb_v_db: {10*np.log10(np.sqrt(rep.crb_v)):.4f}")
    print(f"well_posed: {rep.well_posed}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    exp = _experiment_from_args(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        results = run_experiment(exp)
    out = args.out or exp.out_path or "sweep.csv"
    emit_csv(results, out, trial_log_path=exp.trial_log_path)
    print(f"wrote {out} ({len(results.records)} trial records)")
    return EXIT_OK


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    failures = run_selftest(verbose=True)
    return EXIT_OK if failures == 0 else EXIT_RUNTIME


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nfmotion",
        description="Near-field motion parameter estimation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_method=False):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--preset", choices=("desk", "tableII"))
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--trials", type=int)
        p.add_argument("--threads", type=int)
        if with_method:
            p.add_argument("--method", choices=METHODS)

    p_sim = sub.add_parser("simulate", help="write an NFZ1 snapshot file")
    common(p_sim)

    p_est = sub.add_parser("estimate", help="run one estimator on a snapshot file")
    common(p_est, with_method=True)
    p_est.add_argument("snapshots", help="NFZ1 file from simulate")

    p_crb = sub.add_parser("crb", help="print the location/velocity bounds")
    common(p_crb)

    p_sweep = sub.add_parser("sweep", help="Monte Carlo sweep to CSV")
    common(p_sweep, with_method=True)
    p_sweep.add_argument("--param", choices=("snr_db", "speed", "distance",
                                             "m_sub", "L"))
    p_sweep.add_argument("--values", help="comma-separated sweep values")

    p_self = sub.add_parser("selftest", help="run the built-in oracle checks")
    common(p_self)

    args = parser.parse_args(argv)
    handlers = {
        "simulate": _cmd_simulate,
        "estimate": _cmd_estimate,
        "crb": _cmd_crb,
        "sweep": _cmd_sweep,
        "selftest": _cmd_selftest,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
