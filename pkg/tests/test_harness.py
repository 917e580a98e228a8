import itertools
import re

import numpy as np
import pytest

from nfmotion.cli import main
from nfmotion.config_io import ConfigError, build_experiment, parse_config_text
from nfmotion.harness import (
    CSV_HEADER,
    ExperimentConfig,
    ExperimentError,
    Scenario,
    apply_sweep,
    desk_preset,
    emit_csv,
    read_csv_aggregates,
    run_experiment,
    run_vmp_stage1,
    table2_preset,
)
from nfmotion.subarray_vbi import CaviOptions
from nfmotion.wavefield import NoiseModel, draw_gains, synthesize_all


def tiny_scenario(**kw):
    """Small but fully functional scenario for harness-level tests."""
    defaults = dict(n_tx=16, n_rx=16, m_sub=8, n_pulses=24,
                    p0=(6.0, 9.0), v0=(8.0, -3.0), snr_db=15.0,
                    delay_std=1e-9, loc_grid_half=0.5, loc_grid_step=0.1,
                    vel_grid_half=12.0, vel_grid_step=0.5)
    defaults.update(kw)
    return Scenario(**defaults)


def tiny_experiment(methods=("vmp-system", "vmp-subarray"), trials=2,
                    values=(15.0,), **kw):
    return ExperimentConfig(scenario=tiny_scenario(), sweep_param="snr_db",
                            sweep_values=values, methods=methods,
                            trials=trials, seed=7, **kw)


def fake_timer():
    counter = itertools.count()
    return lambda: float(next(counter))


def test_experiment_config_validation():
    with pytest.raises(ExperimentError, match="trials"):
        tiny_experiment(trials=0)
    with pytest.raises(ExperimentError, match="values"):
        tiny_experiment(values=())
    with pytest.raises(ExperimentError, match="method"):
        tiny_experiment(methods=("warp-drive",))
    with pytest.raises(ExperimentError, match="sweep"):
        ExperimentConfig(scenario=tiny_scenario(), sweep_param="altitude",
                         sweep_values=(1.0,), methods=("ml",), trials=1)


def test_apply_sweep_semantics():
    scn = tiny_scenario()
    assert apply_sweep(scn, "snr_db", -3.0).snr_db == -3.0
    sped = apply_sweep(scn, "speed", 20.0)
    v = np.array(sped.v0)
    assert np.linalg.norm(v) == pytest.approx(20.0)
    assert v / np.linalg.norm(v) == pytest.approx(
        np.array(scn.v0) / np.linalg.norm(scn.v0))
    moved = apply_sweep(scn, "distance", 20.0)
    p = np.array(moved.p0)
    assert np.linalg.norm(p) == pytest.approx(20.0)
    assert p / 20.0 == pytest.approx(np.array(scn.p0) / np.linalg.norm(scn.p0))
    assert apply_sweep(scn, "m_sub", 4).m_sub == 4
    assert apply_sweep(scn, "L", 32).n_pulses == 32


def test_presets():
    desk = desk_preset()
    assert desk.n_tx == 64 and desk.m_sub == 16 and desk.n_pulses == 100
    big = table2_preset()
    assert big.n_tx == 256 and big.m_sub == 32 and big.n_pulses == 600
    assert big.p0 == (15.0, 20.7) and big.v0 == (10.0, 10.2)
    assert big.pt_dbm == 30.0 and big.gt_db == 15.0
    # spec default for directly built scenarios stays at 1/(2B)
    assert Scenario().tau_std == pytest.approx(1.0 / (2 * 200e6))


def test_stage1_threads_match_sequential():
    scn = tiny_scenario()
    cfg, pulse, target = scn.array_config(), scn.pulse_config(), scn.target()
    gains = draw_gains(cfg, target, scn.pt_w, scn.g_tx, scn.g_rx,
                       scn.sigma_s2, rng=np.random.default_rng(3))
    from nfmotion.wavefield import set_snr

    noise = set_snr(gains, 15.0, rng_seed=5)
    snaps = synthesize_all(cfg, pulse, target, gains, noise)
    seq = run_vmp_stage1(snaps, CaviOptions(), threads=1)
    par = run_vmp_stage1(snaps, CaviOptions(), threads=4)
    for key in seq:
        assert seq[key].eta_theta.eta == par[key].eta_theta.eta
        assert seq[key].beta_mean == par[key].beta_mean
        assert seq[key].sigma_hat == par[key].sigma_hat


def test_run_experiment_records_and_aggregates(tmp_path):
    cfgE = tiny_experiment(methods=("vmp-system", "vmp-subarray",
                                    "subarray-avg"), trials=3)
    res = run_experiment(cfgE, timer=fake_timer())
    assert len(res.records) == 3 * 3
    rows = res.aggregate()
    assert len(rows) == 3
    for row in rows:
        assert row["trials"] == 3
        assert row["fail_rate"] == 0.0
        assert row["rmse_p_m"] < 0.5
        assert row["crb_p_m"] > 0
    # aggregated RMSE must equal the formula applied to stored errors
    for method in cfgE.methods:
        recs = res.cell(method, 15.0)
        manual = np.sqrt(np.mean([r.err_p ** 2 for r in recs]))
        row = next(r for r in rows if r["method"] == method)
        assert row["rmse_p_m"] == pytest.approx(manual, abs=1e-12)


def test_run_experiment_deterministic_given_seed():
    cfgE = tiny_experiment(trials=2)
    r1 = run_experiment(cfgE, timer=fake_timer())
    r2 = run_experiment(cfgE, timer=fake_timer())
    for a, b in zip(r1.records, r2.records):
        assert np.array_equal(a.p_hat, b.p_hat)
        assert np.array_equal(a.v_hat, b.v_hat)
        assert a.runtime_s == b.runtime_s


def test_snapshots_reproduce_across_experiments():
    # the same (seed, sweep value, trial) produces identical data regardless
    # of which methods/experiment consume it
    from nfmotion.harness import _noise_seed, _trial_rng

    a = _trial_rng(9, 10.0, 3, 1).integers(0, 2 ** 32, 4)
    b = _trial_rng(9, 10.0, 3, 1).integers(0, 2 ** 32, 4)
    assert np.array_equal(a, b)
    assert _noise_seed(9, 10.0, 3) == _noise_seed(9, 10.0, 3)
    assert _noise_seed(9, 10.0, 3) != _noise_seed(9, 10.0, 4)
    assert _noise_seed(9, 10.0, 3) != _noise_seed(9, 5.0, 3)


def test_emit_csv_roundtrip(tmp_path):
    cfgE = tiny_experiment(trials=2)
    res = run_experiment(cfgE, timer=fake_timer())
    path = tmp_path / "agg.csv"
    log = tmp_path / "trials.csv"
    emit_csv(res, path, trial_log_path=log)
    text = path.read_text()
    assert text.splitlines()[0] == CSV_HEADER
    rows = read_csv_aggregates(path)
    for row, orig in zip(rows, res.aggregate()):
        for key in CSV_HEADER.split(","):
            if isinstance(orig[key], float):
                assert row[key] == pytest.approx(orig[key], abs=0.0)
            else:
                assert row[key] == orig[key]
    assert log.exists()
    assert len(log.read_text().splitlines()) == 1 + len(res.records)


def test_emit_csv_byte_identical_with_deterministic_timer(tmp_path):
    cfgE = tiny_experiment(trials=2)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    emit_csv(run_experiment(cfgE, timer=fake_timer()), p1)
    emit_csv(run_experiment(cfgE, timer=fake_timer()), p2)
    assert p1.read_bytes() == p2.read_bytes()
    # with the wall clock, everything except the runtime column still matches
    p3, p4 = tmp_path / "c.csv", tmp_path / "d.csv"
    emit_csv(run_experiment(cfgE), p3)
    emit_csv(run_experiment(cfgE), p4)
    strip = lambda t: re.sub(r"[^,]+(?=,[^,]+$)", "RT", t, flags=re.M)
    assert strip(p3.read_text()) == strip(p4.read_text())


def test_one_row_per_method_value(tmp_path):
    cfgE = tiny_experiment(methods=("vmp-subarray",), trials=1,
                           values=(10.0, 15.0))
    res = run_experiment(cfgE, timer=fake_timer())
    path = tmp_path / "two.csv"
    emit_csv(res, path)
    assert len(path.read_text().splitlines()) == 3  # header + 2 rows


# --- config file grammar ---

def test_parse_config_text():
    raw = parse_config_text("""
# comment
n_tx = 32
snr_db = 5.0   # trailing comment
methods = vmp-system,ml
""")
    assert raw == {"n_tx": "32", "snr_db": "5.0", "methods": "vmp-system,ml"}


def test_parse_config_rejects_unknown_key():
    with pytest.raises(ConfigError, match="unknown key 'n_tx_typo'"):
        parse_config_text("n_tx_typo = 32")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("n_tx = 32\nn_tx = 64")
    with pytest.raises(ConfigError, match="key = value"):
        parse_config_text("just some words")


def test_build_experiment_from_keys():
    exp = build_experiment(parse_config_text("""
preset = desk
n_tx = 32
n_rx = 32
m_sub = 8
n_pulses = 24
p0_x = 6.0
p0_y = 9.0
param = snr_db
values = 0,10
methods = vmp-subarray
trials = 4
seed = 11
"""))
    assert exp.scenario.n_tx == 32
    assert exp.scenario.p0 == (6.0, 9.0)
    assert exp.sweep_values == (0.0, 10.0)
    assert exp.methods == ("vmp-subarray",)
    assert exp.trials == 4 and exp.seed == 11


def test_build_experiment_requires_core_keys_without_preset():
    with pytest.raises(ConfigError, match="missing config key 'n_tx'"):
        build_experiment({"n_rx": "16"})
    # preset waives the requirement
    exp = build_experiment({"preset": "desk", "snr_db": "5"})
    assert exp.scenario.snr_db == 5.0


def test_build_experiment_bad_values():
    with pytest.raises(ConfigError):
        build_experiment({"values": "1,two,3"})
    with pytest.raises(ConfigError):
        build_experiment({"preset": "galactic"})
    with pytest.raises(ConfigError):
        build_experiment({"methods": "time-travel"})


# --- CLI ---

def write_tiny_config(tmp_path, extra=""):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("""
n_tx = 16
n_rx = 16
m_sub = 8
n_pulses = 24
p0_x = 6.0
p0_y = 9.0
v0_x = 8.0
v0_y = -3.0
snr_db = 15
delay_std = 1e-9
loc_grid_half = 0.5
vel_grid_half = 12.0
vel_grid_step = 0.5
""" + extra)
    return cfg


def test_missing_core_key_named(tmp_path, capsys):
    # explicit (preset-free) configurations must name the array basics
    cfg = tmp_path / "missing.cfg"
    cfg.write_text("n_rx = 16\nm_sub = 8\n")
    assert main(["crb", "--config", str(cfg)]) == 2
    assert "n_tx" in capsys.readouterr().err


def test_cli_simulate_estimate_roundtrip(tmp_path, capsys):
    cfg = write_tiny_config(tmp_path)
    snap_path = tmp_path / "s.nfz"
    assert main(["simulate", "--config", str(cfg), "--seed", "3",
                 "--out", str(snap_path)]) == 0
    assert snap_path.exists()
    code = main(["estimate", "--config", str(cfg), "--seed", "3",
                 "--method", "vmp-subarray", str(snap_path)])
    out = capsys.readouterr().out
    assert code == 0
    match = re.search(r"p_hat_m: ([-\d.]+) ([-\d.]+)", out)
    p_hat = np.array([float(match.group(1)), float(match.group(2))])
    assert np.linalg.norm(p_hat - np.array([6.0, 9.0])) < 0.3


def test_cli_crb(tmp_path, capsys):
    cfg = write_tiny_config(tmp_path)
    assert main(["crb", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "sqrt_crb_p_m" in out and "sqrt_crb_v_mps" in out
    val = float(re.search(r"sqrt_crb_p_m: ([\d.eE+-]+)", out).group(1))
    assert 0 < val < 1.0


def test_cli_sweep_row_count(tmp_path):
    cfg = write_tiny_config(tmp_path, extra="methods = vmp-subarray\n")
    out = tmp_path / "sweep.csv"
    code = main(["sweep", "--config", str(cfg), "--param", "snr_db",
                 "--values", "5,15", "--trials", "2", "--seed", "1",
                 "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 3


def test_cli_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("n_tx_typo = 9\n")
    assert main(["crb", "--config", str(bad)]) == 2
    assert "configuration error" in capsys.readouterr().err
    missing = tmp_path / "nope.cfg"
    assert main(["crb", "--config", str(missing)]) == 2


def test_cli_estimate_dimension_mismatch_exit_2(tmp_path):
    cfg = write_tiny_config(tmp_path)
    snap_path = tmp_path / "s.nfz"
    main(["simulate", "--config", str(cfg), "--seed", "3",
          "--out", str(snap_path)])
    other = tmp_path / "other.cfg"
    other.write_text(cfg.read_text().replace("m_sub = 8", "m_sub = 4"))
    assert main(["estimate", "--config", str(other), "--method",
                 "vmp-subarray", str(snap_path)]) == 2


def test_cli_selftest(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") >= 5
    assert "[FAIL]" not in out
