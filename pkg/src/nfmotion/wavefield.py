"""Synthesis of noisy subarray snapshots for a moving-target scenario.

Two generation modes:

* ``subarray-exact``: each transmit/receive subarray pair (m, n) observes
  z_mn = beta_mn * a_r(phi_n) (x) a_t(theta_m) (x) d(f_mn) + noise, the
  piecewise-far-field model in the matched-filter domain.
* ``antenna-exact``: every antenna pair (i, j) gets its exact spherical-wave
  static phase exp(-j*2*pi/lambda*(r_Ti + r_Rj)) and its own bistatic Doppler,
  then samples are regrouped into subarray snapshots. This quantifies what the
  piecewise model throws away.

Flat snapshot memory order is ((i_r*M) + i_t)*L + l: receive element
outermost, pulse innermost, matching the Kronecker product a_r (x) a_t (x) d.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    SPEED_OF_LIGHT,
    ArrayConfig,
    PulseConfig,
    TargetState,
    bistatic_doppler,
    ranges,
)


class DopplerAliasError(ValueError):
    """Normalized Doppler outside the principal interval [-pi, pi)."""


@dataclass(frozen=True)
class ChannelGain:
    """Per-pair complex gains beta_mn and their prior variances varsigma_mn.

    ``amp`` keeps sqrt(P_T*G_T*G_R)*alpha_RCS so per-antenna gains can be
    rebuilt in antenna-exact mode; it is optional for hand-built gains.
    """

    beta: np.ndarray       # (k_t, k_r) complex
    varsigma: np.ndarray   # (k_t, k_r) positive
    amp: complex | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=complex))
        object.__setattr__(self, "varsigma", np.asarray(self.varsigma, dtype=float))
        if self.beta.shape != self.varsigma.shape:
            raise ValueError("beta and varsigma shapes differ")


@dataclass(frozen=True)
class NoiseModel:
    """Circular complex noise, variance sigma per sample, seeded per pair."""

    sigma: float
    rng_seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    def pair_rng(self, m: int, n: int) -> np.random.Generator:
        # independent, reproducible stream per subarray pair
        return np.random.default_rng([self.rng_seed, m, n])


@dataclass(frozen=True)
class SubarraySnapshot:
    """Matched-filter-domain observation of one T-R subarray pair."""

    m: int
    n: int
    m_sub: int
    n_pulses: int
    data: np.ndarray  # complex, length m_sub**2 * n_pulses

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        object.__setattr__(self, "data", data)
        expected = self.m_sub * self.m_sub * self.n_pulses
        if data.shape != (expected,):
            raise ValueError(f"snapshot length {data.shape} != M^2*L = {expected}")
        if not np.all(np.isfinite(data)):
            raise ValueError("snapshot contains non-finite entries")

    def cube(self) -> np.ndarray:
        """(i_r, i_t, l) view of the flat data."""
        return self.data.reshape(self.m_sub, self.m_sub, self.n_pulses)


def steering_tx(theta: float, m_sub: int) -> np.ndarray:
    """[1, e^{j*theta}, ..., e^{j*(M-1)*theta}] for the electrical angle theta."""
    return np.exp(1j * theta * np.arange(m_sub))


def steering_rx(phi: float, m_sub: int) -> np.ndarray:
    return np.exp(1j * phi * np.arange(m_sub))


def doppler_vec(f: float, pri: float, n_pulses: int) -> np.ndarray:
    """[1, e^{-j*2*pi*f*T}, ..., e^{-j*2*pi*f*(L-1)*T}]."""
    return np.exp(-2j * np.pi * f * pri * np.arange(n_pulses))


def pair_model(cfg: ArrayConfig, pulse: PulseConfig, target: TargetState,
               m: int, n: int) -> np.ndarray:
    """Noiseless unit-gain model vector a_r (x) a_t (x) d for pair (m, n)."""
    from .geometry import subarray_angles

    ang = subarray_angles(cfg, target.p0)
    f_mn = bistatic_doppler(cfg, target, m, n)
    f_norm = 2.0 * np.pi * pulse.pri * f_mn
    if abs(f_norm) >= np.pi:
        raise DopplerAliasError(
            f"normalized Doppler outside principal interval: {f_norm:.3f} rad"
        )
    a_r = steering_rx(ang.phi[n], cfg.m_sub)
    a_t = steering_tx(ang.theta[m], cfg.m_sub)
    d = doppler_vec(f_mn, pulse.pri, pulse.n_pulses)
    return (a_r[:, None, None] * a_t[None, :, None] * d[None, None, :]).ravel()


def draw_gains(cfg: ArrayConfig, target: TargetState, pt_w: float, g_tx: float,
               g_rx: float, sigma_s2: float, rng: np.random.Generator | None = None,
               ) -> ChannelGain:
    """Radar-equation gains with a Swerling-I amplitude drawn once per CPI.

    With rng=None the nominal amplitude alpha = sqrt(sigma_s2) is used
    (deterministic; what the CRB is conditioned on).
    """
    if rng is None:
        alpha = complex(np.sqrt(sigma_s2))
    else:
        alpha = (rng.normal() + 1j * rng.normal()) * np.sqrt(sigma_s2 / 2.0)
    amp = np.sqrt(pt_w * g_tx * g_rx)
    beta = np.empty((cfg.k_t, cfg.k_r), dtype=complex)
    varsigma = np.empty((cfg.k_t, cfg.k_r))
    for m in range(cfg.k_t):
        for n in range(cfg.k_r):
            r_t, r_r = ranges(cfg, target.p0, m, n)
            beta[m, n] = amp * alpha / (r_t * r_r)
            varsigma[m, n] = pt_w * g_tx * g_rx * sigma_s2 / (r_t * r_r) ** 2
    return ChannelGain(beta=beta, varsigma=varsigma, amp=amp * alpha)


def snr_of(gain: ChannelGain, noise: NoiseModel) -> float:
    """Per-sample receive SNR: 10*log10(mean |beta_mn|^2 / sigma)."""
    power = float(np.mean(np.abs(gain.beta) ** 2))
    if power == 0.0:
        raise ValueError("all channel gains are zero")
    return 10.0 * np.log10(power / noise.sigma)


def set_snr(gain: ChannelGain, snr_db: float, rng_seed: int = 0) -> NoiseModel:
    """Solve for the noise variance that realizes the requested per-sample SNR."""
    power = float(np.mean(np.abs(gain.beta) ** 2))
    if power == 0.0:
        raise ValueError("all channel gains are zero")
    return NoiseModel(sigma=power / 10.0 ** (snr_db / 10.0), rng_seed=rng_seed)


def _noise_vector(noise: NoiseModel, m: int, n: int, size: int) -> np.ndarray:
    rng = noise.pair_rng(m, n)
    scale = np.sqrt(noise.sigma / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def _antenna_exact_pair(cfg: ArrayConfig, pulse: PulseConfig, target: TargetState,
                        gain: ChannelGain, m: int, n: int) -> np.ndarray:
    """Exact per-antenna synthesis for pair (m, n), regrouped, noiseless."""
    if gain.amp is None:
        raise ValueError("antenna-exact mode needs ChannelGain.amp")
    lam = cfg.wavelength
    t_l = pulse.slow_times()
    msub = cfg.m_sub
    p0, v0 = target.p0, target.v0
    out = np.empty((msub, msub, pulse.n_pulses), dtype=complex)
    for jr in range(msub):
        p_j = cfg.rx_antenna(n * msub + jr)
        r_j = np.linalg.norm(p_j - p0)
        e_j = (p_j - p0) / r_j
        for it in range(msub):
            p_i = cfg.tx_antenna(m * msub + it)
            r_i = np.linalg.norm(p_i - p0)
            e_i = (p_i - p0) / r_i
            f_ij = -(e_i + e_j) @ v0 / lam
            beta_ij = gain.amp / (r_i * r_j)
            static = np.exp(-2j * np.pi * (r_i + r_j) / lam)
            out[jr, it, :] = beta_ij * static * np.exp(-2j * np.pi * f_ij * t_l)
    return out.ravel()


def synthesize_pair(cfg: ArrayConfig, pulse: PulseConfig, target: TargetState,
                    gain: ChannelGain, noise: NoiseModel, m: int, n: int,
                    mode: str = "subarray-exact") -> SubarraySnapshot:
    """One noisy snapshot for the (m, n) subarray pair."""
    if mode == "subarray-exact":
        clean = gain.beta[m, n] * pair_model(cfg, pulse, target, m, n)
    elif mode == "antenna-exact":
        # run the alias guard of the piecewise model on the same scenario
        pair_model(cfg, pulse, target, m, n)
        clean = _antenna_exact_pair(cfg, pulse, target, gain, m, n)
    else:
        raise ValueError(f"unknown synthesis mode {mode!r}")
    data = clean + _noise_vector(noise, m, n, clean.size)
    return SubarraySnapshot(m=m, n=n, m_sub=cfg.m_sub,
                            n_pulses=pulse.n_pulses, data=data)


def synthesize_all(cfg: ArrayConfig, pulse: PulseConfig, target: TargetState,
                   gain: ChannelGain, noise: NoiseModel,
                   mode: str = "subarray-exact") -> dict[tuple[int, int], SubarraySnapshot]:
    """Snapshots for every T-R subarray pair, keyed by (m, n)."""
    return {
        (m, n): synthesize_pair(cfg, pulse, target, gain, noise, m, n, mode)
        for m, n in cfg.pair_indices()
    }


def noisy_delays(cfg: ArrayConfig, target: TargetState, delay_std: float,
                 rng: np.random.Generator) -> dict[tuple[int, int], float]:
    """Matched-filter delay estimates: true bistatic delay plus Gaussian error."""
    from .geometry import bistatic_delay

    out = {}
    for m, n in cfg.pair_indices():
        tau = bistatic_delay(cfg, target.p0, m, n)
        if delay_std > 0:
            tau += rng.normal(0.0, delay_std)
        out[(m, n)] = tau
    return out
