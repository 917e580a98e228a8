"""Built-in oracle checks, runnable without pytest via `nfmotion selftest`.

Each check recomputes an expected value through an independent route (power
series, finite differences, exhaustive search) and compares the production
path against it.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .circular import a_inverse, a_ratio, bessel_ratio
from .crb import fim_rho, jacobian_psi
from .geometry import (
    ArrayConfig,
    PulseConfig,
    TargetState,
    bistatic_doppler,
    subarray_angles,
)
from .subarray_vbi import run_cavi
from .wavefield import NoiseModel, draw_gains, set_snr, synthesize_all


def _series_iv(order: int, x: float, terms: int = 60) -> float:
    total = 0.0
    for m in range(terms):
        total += (x / 2.0) ** (2 * m + order) / (
            math.factorial(m) * math.factorial(m + order))
    return total


def check_bessel() -> bool:
    want = _series_iv(1, 2.0) / _series_iv(0, 2.0)
    got = bessel_ratio(1, 2.0)
    return abs(want - got) < 1e-12


def check_a_inverse() -> bool:
    for r in (0.1, 0.447, 0.697775, 0.9, 0.99, 0.9999):
        if abs(a_ratio(a_inverse(r)) - r) > 1e-10:
            return False
    return True


def check_doppler_roundtrip() -> bool:
    cfg = ArrayConfig.from_carrier(28e9, 32, 32, 8, d0=1.0)
    tgt = TargetState(p0=(8.0, 11.0), v0=(10.0, 10.2))
    h = 1e-6
    for (m, n) in ((0, 0), (3, 2)):
        def range_sum(t):
            p = tgt.p0 - t * tgt.v0  # projection convention of the Doppler sign
            r_t = np.linalg.norm(cfg.tx_subarray_ref(m) - p)
            r_r = np.linalg.norm(cfg.rx_subarray_ref(n) - p)
            return r_t + r_r
        fd = -(range_sum(h) - range_sum(-h)) / (2 * h) / cfg.wavelength
        f = bistatic_doppler(cfg, tgt, m, n)
        if abs(f - fd) > 1e-6 * abs(fd):
            return False
    return True


def check_fim_fd() -> bool:
    cfg = ArrayConfig.from_carrier(28e9, 8, 8, 4, d0=1.0)
    pulse = PulseConfig(pri=1e-5, n_pulses=6, fc=28e9)
    tgt = TargetState(p0=(8.0, 11.0), v0=(10.0, 10.2))
    gains = draw_gains(cfg, tgt, 1.0, 10.0, 10.0, 1.0)
    psi = jacobian_psi(cfg, tgt)
    h = 1e-6

    def theta_of(p):
        return subarray_angles(cfg, p).theta[1]

    fd = (theta_of(tgt.p0 + np.array([h, 0.0]))
          - theta_of(tgt.p0 - np.array([h, 0.0]))) / (2 * h)
    if abs(psi[1, 0] - fd) > 1e-6 * max(abs(fd), 1.0):
        return False
    f = fim_rho(cfg, pulse, tgt, gains, 1e-3)
    w = np.linalg.eigvalsh(f)
    return bool(np.all(w > -1e-9 * abs(w).max()))


def check_cavi_noiseless() -> bool:
    cfg = ArrayConfig.from_carrier(28e9, 32, 32, 16, d0=1.0)
    pulse = PulseConfig(pri=1e-5, n_pulses=32, fc=28e9)
    tgt = TargetState(p0=(8.0, 11.0), v0=(10.0, 10.2))
    gains = draw_gains(cfg, tgt, 1.0, 10.0, 10.0, 1.0)
    snaps = synthesize_all(cfg, pulse, tgt, gains, NoiseModel(sigma=0.0))
    ang = subarray_angles(cfg, tgt.p0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        post = run_cavi(snaps[(0, 0)])
    err_theta = abs(post.eta_theta.mu - ang.theta[0])
    f_true = 2 * np.pi * pulse.pri * bistatic_doppler(cfg, tgt, 0, 0)
    err_f = abs(post.eta_f.mu - f_true)
    return err_theta < 1e-3 and err_f < 1e-3


CHECKS = (
    ("bessel ratio vs power series", check_bessel),
    ("A^-1 round trip", check_a_inverse),
    ("Doppler finite-difference round trip", check_doppler_roundtrip),
    ("FIM/Jacobian finite differences", check_fim_fd),
    ("noiseless CAVI recovery", check_cavi_noiseless),
)


def run_selftest(verbose: bool = False) -> int:
    failures = 0
    for name, fn in CHECKS:
        try:
            ok = fn()
        except Exception as exc:  # noqa: BLE001 - report, keep going
            ok = False
            if verbose:
                print(f"[ERROR] {name}: {exc}")
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}")
        failures += 0 if ok else 1
    return failures
