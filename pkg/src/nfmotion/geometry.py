"""Array layout, subarray partition, and Cartesian-to-angle/Doppler/delay maps.

Coordinate frame: both uniform linear arrays lie on the x-axis, separated by
``d0``. Transmit antenna i (0-based) sits at (d0/2 + i*d_spacing, 0); receive
antenna j at (-d0/2 - j*d_spacing, 0). Each array is split into contiguous
subarrays of ``m_sub`` antennas whose first antenna is the reference, so the
m-th transmit subarray reference is (d0/2 + m*m_sub*d_spacing, 0) and the n-th
receive subarray reference is (-d0/2 - n*m_sub*d_spacing, 0). The target lives
in the half plane y > 0.

Unit vectors returned by :func:`unit_vectors` point from the target toward the
array (``(p_array - p0)/r``); callers that need the opposite orientation negate
at the call site.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s


class GeometryError(ValueError):
    """Degenerate geometric input (target in the array plane, zero range)."""


@dataclass(frozen=True)
class ArrayConfig:
    """Transmit/receive XL-ULA geometry and subarray partition."""

    n_tx: int
    n_rx: int
    m_sub: int
    wavelength: float
    d_spacing: float | None = None  # defaults to wavelength/2
    d0: float = 1.0

    def __post_init__(self):
        if self.n_tx % self.m_sub or self.n_rx % self.m_sub:
            raise ValueError(
                f"antenna counts ({self.n_tx}, {self.n_rx}) must be divisible "
                f"by the subarray size {self.m_sub}"
            )
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        if self.d_spacing is None:
            object.__setattr__(self, "d_spacing", self.wavelength / 2.0)
        if self.d_spacing <= 0:
            raise ValueError("d_spacing must be positive")

    @classmethod
    def from_carrier(cls, fc: float, n_tx: int, n_rx: int, m_sub: int,
                     d0: float = 1.0, d_spacing: float | None = None) -> "ArrayConfig":
        return cls(n_tx=n_tx, n_rx=n_rx, m_sub=m_sub,
                   wavelength=SPEED_OF_LIGHT / fc, d_spacing=d_spacing, d0=d0)

    @property
    def k_t(self) -> int:
        return self.n_tx // self.m_sub

    @property
    def k_r(self) -> int:
        return self.n_rx // self.m_sub

    def tx_antenna(self, i: int) -> np.ndarray:
        return np.array([self.d0 / 2 + i * self.d_spacing, 0.0])

    def rx_antenna(self, j: int) -> np.ndarray:
        return np.array([-self.d0 / 2 - j * self.d_spacing, 0.0])

    def tx_subarray_ref(self, m: int) -> np.ndarray:
        """Reference (first) antenna position of transmit subarray m, 0-based."""
        return self.tx_antenna(m * self.m_sub)

    def rx_subarray_ref(self, n: int) -> np.ndarray:
        return self.rx_antenna(n * self.m_sub)

    def pair_indices(self) -> list[tuple[int, int]]:
        return [(m, n) for m in range(self.k_t) for n in range(self.k_r)]


@dataclass(frozen=True)
class TargetState:
    """True initial location (m) and velocity (m/s) of the point target."""

    p0: np.ndarray
    v0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        object.__setattr__(self, "v0", np.asarray(self.v0, dtype=float))
        if self.p0.shape != (2,) or self.v0.shape != (2,):
            raise ValueError("p0 and v0 must be 2-vectors")
        if self.p0[1] <= 0:
            raise GeometryError("target must lie in the half plane y > 0")


@dataclass(frozen=True)
class PulseConfig:
    """Slow-time sampling: L pulses at interval T within one CPI."""

    pri: float
    n_pulses: int
    fc: float
    bandwidth: float = 200e6

    def __post_init__(self):
        if self.pri <= 0:
            raise ValueError("pri must be positive")
        if self.n_pulses < 2:
            raise ValueError("need at least 2 pulses")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.fc

    def slow_times(self) -> np.ndarray:
        return self.pri * np.arange(self.n_pulses)


@dataclass(frozen=True)
class SubarrayAngles:
    """Physical (tilde) and electrical angles for every subarray.

    Electrical angles are the per-element phase advances of the spherical
    wave along each array's own element ordering. The transmit array extends
    toward +x, giving theta = +(2*pi*d/lambda) sin(theta_tilde); the receive
    array extends toward -x, so its element-to-element phase gradient flips:
    phi = -(2*pi*d/lambda) sin(phi_tilde). The flipped sign is what makes the
    subarray steering model agree with the exact per-antenna phases.
    """

    theta_tilde: np.ndarray  # (k_t,) DoD, radians
    phi_tilde: np.ndarray    # (k_r,) DoA, radians
    theta: np.ndarray        # (k_t,) electrical
    phi: np.ndarray          # (k_r,) electrical (sign-flipped, see above)


def electrical_scale(cfg: ArrayConfig) -> float:
    """chi = 2*pi*d/lambda, the physical-to-electrical angle scale."""
    return 2.0 * np.pi * cfg.d_spacing / cfg.wavelength


def subarray_angles(cfg: ArrayConfig, p0: np.ndarray) -> SubarrayAngles:
    """DoD/DoA of every subarray reference antenna toward the target at p0."""
    p0 = np.asarray(p0, dtype=float)
    if p0[1] == 0.0:
        raise GeometryError("target in array plane")
    chi = electrical_scale(cfg)
    tx = np.array([cfg.tx_subarray_ref(m) for m in range(cfg.k_t)])
    rx = np.array([cfg.rx_subarray_ref(n) for n in range(cfg.k_r)])
    theta_tilde = np.arctan((p0[0] - tx[:, 0]) / (p0[1] - tx[:, 1]))
    phi_tilde = np.arctan((p0[0] - rx[:, 0]) / (p0[1] - rx[:, 1]))
    return SubarrayAngles(
        theta_tilde=theta_tilde,
        phi_tilde=phi_tilde,
        theta=chi * np.sin(theta_tilde),
        phi=-chi * np.sin(phi_tilde),
    )


def ranges(cfg: ArrayConfig, p0: np.ndarray, m: int, n: int) -> tuple[float, float]:
    """(r_t, r_r): distances from target to the (m, n) subarray references."""
    p0 = np.asarray(p0, dtype=float)
    r_t = float(np.linalg.norm(cfg.tx_subarray_ref(m) - p0))
    r_r = float(np.linalg.norm(cfg.rx_subarray_ref(n) - p0))
    if r_t == 0.0 or r_r == 0.0:
        raise GeometryError("zero range between target and subarray reference")
    return r_t, r_r


def unit_vectors(cfg: ArrayConfig, p0: np.ndarray, m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors from the target to the (m, n) subarray references."""
    p0 = np.asarray(p0, dtype=float)
    r_t, r_r = ranges(cfg, p0, m, n)
    e_t = (cfg.tx_subarray_ref(m) - p0) / r_t
    e_r = (cfg.rx_subarray_ref(n) - p0) / r_r
    return e_t, e_r


def bistatic_doppler(cfg: ArrayConfig, target: TargetState, m: int, n: int) -> float:
    """Bistatic Doppler shift (Hz) of the (m, n) subarray pair.

    f_mn = -(1/lambda) * [e_t . v0 + e_r . v0] with target-to-array unit
    vectors; the matching slow-time phase rotation is exp(-j*2*pi*f_mn*l*T).
    """
    e_t, e_r = unit_vectors(cfg, target.p0, m, n)
    return float(-(e_t + e_r) @ target.v0 / cfg.wavelength)


def bistatic_delay(cfg: ArrayConfig, p0: np.ndarray, m: int, n: int) -> float:
    """Round-trip propagation delay (s) via the (m, n) subarray references."""
    r_t, r_r = ranges(cfg, p0, m, n)
    return (r_t + r_r) / SPEED_OF_LIGHT


def rayleigh_distance(cfg: ArrayConfig) -> float:
    """Near/far-field boundary of the full arrays: min over the two apertures."""
    d2 = cfg.d_spacing ** 2
    r_t = 2.0 * (cfg.n_tx - 1) ** 2 * d2 / cfg.wavelength
    r_r = 2.0 * (cfg.n_rx - 1) ** 2 * d2 / cfg.wavelength
    return min(r_t, r_r)


def subarray_rayleigh(cfg: ArrayConfig) -> float:
    """Rayleigh distance of a single M-antenna subarray."""
    return 2.0 * (cfg.m_sub - 1) ** 2 * cfg.d_spacing ** 2 / cfg.wavelength


def check_near_field(cfg: ArrayConfig, target: TargetState) -> bool:
    """Warn (not fail) when the target sits beyond the full-array Rayleigh distance.

    Returns True when the near-field operating assumption holds.
    """
    r = rayleigh_distance(cfg)
    worst = 0.0
    for m in range(cfg.k_t):
        for n in range(cfg.k_r):
            r_t, r_r = ranges(cfg, target.p0, m, n)
            worst = max(worst, r_t, r_r)
    if worst >= r:
        warnings.warn(
            f"target range {worst:.1f} m is beyond the Rayleigh distance "
            f"{r:.1f} m; the scenario is not in the near-field regime",
            stacklevel=2,
        )
        return False
    return True
