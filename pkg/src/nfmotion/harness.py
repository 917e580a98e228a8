"""Monte Carlo experiment runner.

A Scenario bundles the physical configuration; an ExperimentConfig names a
sweep parameter, the estimation methods, and the trial budget. Every trial is
driven by RNG streams keyed on (seed, sweep value bits, trial, ...) so the
same (seed, value, trial) triple reproduces identical data in any experiment,
and per-pair noise streams are index-derived so pair-level parallelism cannot
change results.

Per trial, the Stage-1 subarray inference runs once and its wall time is
attributed to every VMP-family method (each would pay it standalone); the
stage-2 fusion is timed per method. The ML and grid baselines run standalone.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, fusion
from .baselines import BaselineResult, GridSpec
from .crb import location_velocity_bounds
from .geometry import ArrayConfig, PulseConfig, TargetState, check_near_field
from .subarray_vbi import CaviOptions, VbiPriors, run_cavi
from .wavefield import draw_gains, noisy_delays, set_snr, synthesize_all

METHODS = ("vmp-system", "vmp-subarray", "ml", "grid-music", "subarray-avg")
SWEEP_PARAMS = ("snr_db", "speed", "distance", "m_sub", "L")


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    """Physical setup plus the gain/noise model knobs."""

    n_tx: int = 64
    n_rx: int = 64
    m_sub: int = 16
    d0: float = 1.0
    fc: float = 28e9
    pri: float = 1e-5
    n_pulses: int = 100
    bandwidth: float = 200e6
    p0: tuple[float, float] = (8.0, 11.0)
    v0: tuple[float, float] = (10.0, 10.2)
    pt_dbm: float = 30.0
    gt_db: float = 15.0
    gr_db: float = 15.0
    sigma_s2: float = 1.0
    snr_db: float = 10.0
    delay_std: float | None = None  # None -> 1/(2*bandwidth)
    doppler_sign: float = fusion.DOPPLER_SIGN_DEFAULT
    loc_grid_half: float = 2.0
    loc_grid_step: float = 0.1
    vel_grid_half: float = 30.0
    vel_grid_step: float = 0.25

    def array_config(self) -> ArrayConfig:
        return ArrayConfig.from_carrier(self.fc, self.n_tx, self.n_rx,
                                        self.m_sub, d0=self.d0)

    def pulse_config(self) -> PulseConfig:
        return PulseConfig(pri=self.pri, n_pulses=self.n_pulses, fc=self.fc,
                           bandwidth=self.bandwidth)

    def target(self) -> TargetState:
        return TargetState(p0=np.array(self.p0), v0=np.array(self.v0))

    @property
    def pt_w(self) -> float:
        return 10.0 ** ((self.pt_dbm - 30.0) / 10.0)

    @property
    def g_tx(self) -> float:
        return 10.0 ** (self.gt_db / 10.0)

    @property
    def g_rx(self) -> float:
        return 10.0 ** (self.gr_db / 10.0)

    @property
    def tau_std(self) -> float:
        if self.delay_std is None:
            return 1.0 / (2.0 * self.bandwidth)
        return self.delay_std


def desk_preset() -> Scenario:
    """Fast profile: minutes for a full sweep, K_t = K_r = 4 of diversity.

    delay_std is the uniform range-bin quantization std of an ideal matched
    filter at bandwidth B, 1/(sqrt(12)*B).
    """
    return Scenario(delay_std=1.0 / (np.sqrt(12.0) * 200e6))


def table2_preset() -> Scenario:
    """Full-scale profile used by the published simulations."""
    return Scenario(n_tx=256, n_rx=256, m_sub=32, n_pulses=600,
                    p0=(15.0, 20.7), v0=(10.0, 10.2),
                    delay_std=1.0 / (np.sqrt(12.0) * 200e6),
                    loc_grid_half=2.0, loc_grid_step=0.1)


PRESETS = {"desk": desk_preset, "tableII": table2_preset}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario
    sweep_param: str = "snr_db"
    sweep_values: tuple = (0.0, 10.0, 20.0)
    methods: tuple = ("vmp-system", "vmp-subarray")
    trials: int = 50
    seed: int = 0
    threads: int = 1
    out_path: str | None = None
    trial_log_path: str | None = None
    cavi: CaviOptions = field(default_factory=CaviOptions)

    def __post_init__(self):
        if self.trials < 1:
            raise ExperimentError("trials must be >= 1")
        if not self.sweep_values:
            raise ExperimentError("sweep values must be nonempty")
        if self.sweep_param not in SWEEP_PARAMS:
            raise ExperimentError(f"unknown sweep parameter {self.sweep_param!r}")
        for m in self.methods:
            if m not in METHODS:
                raise ExperimentError(f"unknown method {m!r}")
        if not self.methods:
            raise ExperimentError("method set must be nonempty")


@dataclass
class TrialRecord:
    method: str
    sweep_param: str
    sweep_value: float
    trial: int
    p_hat: np.ndarray
    v_hat: np.ndarray
    err_p: float
    err_v: float
    runtime_s: float
    converged: bool


@dataclass
class ResultsTable:
    config: ExperimentConfig
    records: list[TrialRecord]
    crb: dict[float, tuple[float, float]]  # sweep value -> (crb_p, crb_v)

    def cell(self, method: str, value: float) -> list[TrialRecord]:
        return [r for r in self.records
                if r.method == method and r.sweep_value == value]

    def aggregate(self) -> list[dict]:
        rows = []
        for value in self.config.sweep_values:
            for method in self.config.methods:
                recs = self.cell(method, value)
                ok = [r for r in recs if r.converged]
                fail_rate = 1.0 - len(ok) / len(recs) if recs else 1.0
                if ok:
                    rmse_p = float(np.sqrt(np.mean([r.err_p ** 2 for r in ok])))
                    rmse_v = float(np.sqrt(np.mean([r.err_v ** 2 for r in ok])))
                    med_rt = float(np.median([r.runtime_s for r in ok]))
                else:
                    rmse_p = rmse_v = med_rt = float("nan")
                crb_p, crb_v = self.crb[value]
                rows.append({
                    "method": method,
                    "sweep_param": self.config.sweep_param,
                    "sweep_value": value,
                    "trials": len(recs),
                    "rmse_p_m": rmse_p,
                    "rmse_v_mps": rmse_v,
                    "crb_p_m": float(np.sqrt(crb_p)),
                    "crb_v_mps": float(np.sqrt(crb_v)),
                    "median_runtime_s": med_rt,
                    "fail_rate": fail_rate,
                })
        return rows

    def median_errors(self, method: str, value: float) -> tuple[float, float]:
        recs = [r for r in self.cell(method, value) if r.converged]
        if not recs:
            return float("nan"), float("nan")
        return (float(np.median([r.err_p for r in recs])),
                float(np.median([r.err_v for r in recs])))


def apply_sweep(scenario: Scenario, param: str, value: float) -> Scenario:
    """Scenario for one sweep cell.

    distance moves p0 radially along its original bearing; speed scales the
    velocity magnitude at fixed direction.
    """
    if param == "snr_db":
        return replace(scenario, snr_db=float(value))
    if param == "speed":
        v = np.asarray(scenario.v0, dtype=float)
        speed = np.linalg.norm(v)
        if speed == 0:
            raise ExperimentError("speed sweep needs a nonzero base velocity")
        unit = v / speed
        return replace(scenario, v0=tuple(unit * float(value)))
    if param == "distance":
        p = np.asarray(scenario.p0, dtype=float)
        bearing = p / np.linalg.norm(p)
        return replace(scenario, p0=tuple(bearing * float(value)))
    if param == "m_sub":
        return replace(scenario, m_sub=int(value))
    if param == "L":
        return replace(scenario, n_pulses=int(value))
    raise ExperimentError(f"unknown sweep parameter {param!r}")


def _value_key(value: float) -> int:
    """Stable 64-bit key for a sweep value (bit pattern of the float)."""
    return int(np.float64(value).view(np.uint64))


def _trial_rng(seed: int, value: float, trial: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed, _value_key(value), trial, purpose])


def _noise_seed(seed: int, value: float, trial: int) -> int:
    # per-pair streams are derived inside NoiseModel from this base
    return int(np.random.default_rng(
        [seed, _value_key(value), trial, 0xBEEF]).integers(0, 2 ** 63))


def run_vmp_stage1(snapshots, cavi_opts: CaviOptions, threads: int = 1):
    """CAVI over all pairs, optionally thread-parallel (results identical)."""
    keys = sorted(snapshots)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            posts = list(pool.map(
                lambda k: run_cavi(snapshots[k], opts=cavi_opts), keys))
    else:
        posts = [run_cavi(snapshots[k], opts=cavi_opts) for k in keys]
    return dict(zip(keys, posts))


def _run_trial_methods(scn: Scenario, cfg, pulse, target, snapshots, tau_hat,
                       methods, cavi_opts, threads, timer):
    """All requested methods on one synthesized trial; returns per-method
    (p_hat, v_hat, runtime, converged)."""
    out = {}
    vmp_family = [m for m in methods
                  if m in ("vmp-system", "vmp-subarray", "subarray-avg")]
    if vmp_family:
        t0 = timer()
        posts = run_vmp_stage1(snapshots, cavi_opts, threads)
        t_stage1 = timer() - t0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            t0 = timer()
            msgs = fusion.calibrate_messages(
                fusion.build_messages(posts, cfg.k_t, cfg.k_r),
                cfg.m_sub, pulse.n_pulses)
            per_pair, fused_loc = fusion.distributed_location(
                msgs, cfg, tau_hat, tau_std=scn.tau_std)
            per_cfg, fused_vel = fusion.distributed_velocity(
                msgs, cfg, pulse, fused_loc.mean,
                doppler_sign=scn.doppler_sign)
            t_shared = timer() - t0
            any_converged = any(p.converged for p in posts.values())
            if "vmp-subarray" in methods:
                out["vmp-subarray"] = (fused_loc.mean, fused_vel.mean,
                                       t_stage1 + t_shared, any_converged)
            if "vmp-system" in methods:
                t0 = timer()
                loc = fusion.centralized_location(msgs, cfg, init=fused_loc.mean)
                vel = fusion.centralized_velocity(
                    msgs, cfg, pulse, loc.mean, doppler_sign=scn.doppler_sign)
                out["vmp-system"] = (loc.mean, vel.mean,
                                     t_stage1 + t_shared + (timer() - t0),
                                     any_converged)
            if "subarray-avg" in methods:
                t0 = timer()
                res = baselines.subarray_average(per_pair, per_cfg)
                out["subarray-avg"] = (res.p_hat, res.v_hat,
                                       t_stage1 + t_shared + (timer() - t0),
                                       True)
    if "ml" in methods:
        t0 = timer()
        res = baselines.ml_estimate(
            snapshots, cfg, pulse,
            init_grid=GridSpec.around(scn.p0, scn.loc_grid_half,
                                      2.0 * scn.loc_grid_step))
        # hitting the iteration cap still yields a usable local estimate
        usable = bool(np.all(np.isfinite(res.p_hat))
                      and np.all(np.isfinite(res.v_hat)))
        out["ml"] = (res.p_hat, res.v_hat, timer() - t0, usable)
    if "grid-music" in methods:
        t0 = timer()
        res = baselines.grid_music(
            snapshots, cfg, pulse,
            loc_grid=GridSpec.around(scn.p0, scn.loc_grid_half, scn.loc_grid_step),
            vel_grid=GridSpec.around((0.0, 0.0), scn.vel_grid_half,
                                     scn.vel_grid_step))
        out["grid-music"] = (res.p_hat, res.v_hat, timer() - t0, True)
    return out


def run_experiment(config: ExperimentConfig,
                   timer=time.perf_counter) -> ResultsTable:
    """Seeded sweep over (value, trial, method); failures are recorded, not
    raised, unless more than half the trials of a cell fail."""
    records: list[TrialRecord] = []
    crb_cols: dict[float, tuple[float, float]] = {}
    for value in config.sweep_values:
        scn = apply_sweep(config.scenario, config.sweep_param, value)
        cfg = scn.array_config()
        pulse = scn.pulse_config()
        target = scn.target()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            check_near_field(cfg, target)
            nominal = draw_gains(cfg, target, scn.pt_w, scn.g_tx, scn.g_rx,
                                 scn.sigma_s2)
            sigma = set_snr(nominal, scn.snr_db).sigma
            report = location_velocity_bounds(cfg, pulse, target, nominal, sigma)
        crb_cols[value] = (report.crb_p, report.crb_v)
        failures = {m: 0 for m in config.methods}
        for trial in range(config.trials):
            gain_rng = _trial_rng(config.seed, value, trial, 1)
            gains = draw_gains(cfg, target, scn.pt_w, scn.g_tx, scn.g_rx,
                               scn.sigma_s2, rng=gain_rng)
            noise = set_snr(gains, scn.snr_db,
                            rng_seed=_noise_seed(config.seed, value, trial))
            snapshots = synthesize_all(cfg, pulse, target, gains, noise)
            tau_rng = _trial_rng(config.seed, value, trial, 2)
            tau_hat = noisy_delays(cfg, target, scn.tau_std, tau_rng)
            try:
                results = _run_trial_methods(
                    scn, cfg, pulse, target, snapshots, tau_hat,
                    config.methods, config.cavi, config.threads, timer)
            except Exception:
                for m in config.methods:
                    failures[m] += 1
                    records.append(TrialRecord(
                        method=m, sweep_param=config.sweep_param,
                        sweep_value=value, trial=trial,
                        p_hat=np.full(2, np.nan), v_hat=np.full(2, np.nan),
                        err_p=float("inf"), err_v=float("inf"),
                        runtime_s=0.0, converged=False))
                continue
            for m in config.methods:
                p_hat, v_hat, runtime, converged = results[m]
                if not converged:
                    failures[m] += 1
                records.append(TrialRecord(
                    method=m, sweep_param=config.sweep_param,
                    sweep_value=value, trial=trial,
                    p_hat=np.asarray(p_hat), v_hat=np.asarray(v_hat),
                    err_p=float(np.linalg.norm(p_hat - target.p0)),
                    err_v=float(np.linalg.norm(v_hat - target.v0)),
                    runtime_s=float(runtime), converged=bool(converged)))
        for m, n_fail in failures.items():
            if n_fail > config.trials / 2:
                warnings.warn(
                    f"cell ({config.sweep_param}={value}, {m}): "
                    f"{n_fail}/{config.trials} failures", stacklevel=2)
    return ResultsTable(config=config, records=records, crb=crb_cols)


CSV_HEADER = ("method,sweep_param,sweep_value,trials,rmse_p_m,rmse_v_mps,"
              "crb_p_m,crb_v_mps,median_runtime_s,fail_rate")


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def emit_csv(results: ResultsTable, path, trial_log_path=None) -> None:
    """Aggregate CSV (one row per method and sweep value), optional long-format
    per-trial file."""
    rows = results.aggregate()
    if not rows:
        raise ExperimentError("nothing to emit: empty results")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[k]) for k in CSV_HEADER.split(",")) + "\n")
    if trial_log_path:
        with open(trial_log_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("method,sweep_param,sweep_value,trial,px,py,vx,vy,"
                     "err_p_m,err_v_mps,runtime_s,converged\n")
            for r in results.records:
                fields = [r.method, r.sweep_param, r.sweep_value, r.trial,
                          r.p_hat[0], r.p_hat[1], r.v_hat[0], r.v_hat[1],
                          r.err_p, r.err_v, r.runtime_s, int(r.converged)]
                fh.write(",".join(_fmt(f) for f in fields) + "\n")


def read_csv_aggregates(path) -> list[dict]:
    """Parse an emitted aggregate CSV back into row dicts (full precision)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        out = []
        for line in fh:
            parts = line.strip().split(",")
            row = {}
            for key, val in zip(header, parts):
                if key in ("method", "sweep_param"):
                    row[key] = val
                elif key == "trials":
                    row[key] = int(val)
                else:
                    row[key] = float(val)
            out.append(row)
    return out
