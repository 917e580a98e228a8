"""Cramer-Rao bounds for joint location/velocity estimation.

The Fisher information is first assembled in the intermediate coordinates
rho = [theta_1..theta_Kt, phi_1..phi_Kr, f_11..f_KtKr, Re(beta), Im(beta)]
where every (m, n, l) term contributes a 5x5 block, then mapped to
eta = [p0, v0, Re(beta), Im(beta)] through the geometry Jacobian Psi and the
chain rule F_eta = Psi^T F_rho Psi.

Two derivative conventions are available for the per-sample model columns:

* ``independent`` (default): rho components are independent coordinates, so
  d(mu)/d(theta_m) touches only the transmit steering factor, etc. This is
  the form the finite-difference oracle validates.
* ``verbatim``: the printed closed forms, which carry velocity-coupled
  tan(angle) terms. Kept for the discrepancy report
  (:func:`fim_verbatim_discrepancy`), not used by the bounds.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import (
    ArrayConfig,
    PulseConfig,
    TargetState,
    electrical_scale,
    ranges,
    subarray_angles,
)
from .wavefield import ChannelGain, steering_rx, steering_tx


@dataclass(frozen=True)
class RhoIndex:
    """Column layout of the intermediate parameter vector."""

    k_t: int
    k_r: int

    @property
    def n_pairs(self) -> int:
        return self.k_t * self.k_r

    @property
    def dim(self) -> int:
        return self.k_t + self.k_r + 3 * self.n_pairs

    def theta(self, m: int) -> int:
        return m

    def phi(self, n: int) -> int:
        return self.k_t + n

    def f(self, m: int, n: int) -> int:
        return self.k_t + self.k_r + m * self.k_r + n

    def beta_re(self, m: int, n: int) -> int:
        return self.k_t + self.k_r + self.n_pairs + m * self.k_r + n

    def beta_im(self, m: int, n: int) -> int:
        return self.k_t + self.k_r + 2 * self.n_pairs + m * self.k_r + n


@dataclass(frozen=True)
class FisherReport:
    f_rho: np.ndarray
    psi: np.ndarray
    f_eta: np.ndarray
    crb_p: float          # m^2, summed p0 diagonal of F_eta^-1
    crb_v: float          # (m/s)^2
    well_posed: bool      # False when a pseudo-inverse was needed


def _pair_columns(cfg: ArrayConfig, ang, m: int, n: int):
    """Spatial vectors for pair (m, n): model, theta-weighted, phi-weighted."""
    a_t = steering_tx(ang.theta[m], cfg.m_sub)
    a_r = steering_rx(ang.phi[n], cfg.m_sub)
    c = np.arange(cfg.m_sub)
    s0 = (a_r[:, None] * a_t[None, :]).ravel()
    s_theta = (a_r[:, None] * (c * a_t)[None, :]).ravel()
    s_phi = ((c * a_r)[:, None] * a_t[None, :]).ravel()
    return s0, s_theta, s_phi


def fim_rho(cfg: ArrayConfig, pulse: PulseConfig, target: TargetState,
            gains: ChannelGain, sigma: float,
            derivatives: str = "independent") -> np.ndarray:
    """Fisher information in the intermediate coordinates.

    F = (2/sigma) * sum_{m,n,l} Re{ D^H D } with D the per-sample derivative
    matrix. In the independent convention the pulse phase cancels inside each
    Gram block, so the slow-time sum reduces to the moments (L, sum t_l,
    sum t_l^2); the verbatim convention keeps an explicit pulse loop.
    """
    if derivatives not in ("independent", "verbatim"):
        raise ValueError(f"unknown derivative convention {derivatives!r}")
    idx = RhoIndex(cfg.k_t, cfg.k_r)
    fim = np.zeros((idx.dim, idx.dim))
    t_l = pulse.slow_times()
    lam = cfg.wavelength
    ang = subarray_angles(cfg, target.p0)
    from .geometry import bistatic_doppler

    for m in range(cfg.k_t):
        for n in range(cfg.k_r):
            beta = complex(gains.beta[m, n])
            s0, s_th, s_ph = _pair_columns(cfg, ang, m, n)
            cols = [idx.theta(m), idx.phi(n), idx.f(m, n),
                    idx.beta_re(m, n), idx.beta_im(m, n)]
            if derivatives == "independent":
                base = np.column_stack([
                    1j * beta * s_th,      # d/dtheta_m
                    1j * beta * s_ph,      # d/dphi_n
                    beta * s0,             # d/df before the -j*2*pi*t_l factor
                    s0,                    # d/dRe(beta)
                    1j * s0,               # d/dIm(beta)
                ])
                gram_c = base.conj().T @ base
                gram0 = np.real(gram_c)
                moments = (len(t_l), float(t_l.sum()), float((t_l ** 2).sum()))
                block = np.empty((5, 5))
                # column 2 (Doppler) carries -j*2*pi*t_l; others are t_l-free,
                # and the common pulse phase cancels inside the Gram
                for a in range(5):
                    for b in range(5):
                        ta, tb = a == 2, b == 2
                        if ta and tb:
                            block[a, b] = (2 * np.pi) ** 2 * moments[2] * gram0[a, b]
                        elif ta:
                            block[a, b] = moments[1] * np.real(2j * np.pi * gram_c[a, b])
                        elif tb:
                            block[a, b] = moments[1] * np.real(-2j * np.pi * gram_c[a, b])
                        else:
                            block[a, b] = moments[0] * gram0[a, b]
            else:
                f_mn = bistatic_doppler(cfg, target, m, n)
                v_x, v_y = target.v0
                coup_t = np.tan(ang.theta_tilde[m]) * v_x - v_y
                coup_p = np.tan(ang.phi_tilde[n]) * v_x - v_y
                den_t = v_y - np.tan(ang.theta_tilde[m]) * v_x
                den_p = v_y - np.tan(ang.phi_tilde[n]) * v_x
                block = np.zeros((5, 5))
                for tl in t_l:
                    ph = np.exp(-2j * np.pi * f_mn * tl)
                    d_th = 1j * beta * ph * (s_th + (2 * np.pi * tl / lam) * coup_t * s0)
                    d_ph = 1j * beta * ph * (s_ph + (2 * np.pi * tl / lam) * coup_p * s0)
                    d_f = 1j * beta * ph * (
                        lam * s_ph / den_p - 2 * np.pi * tl * s0 + lam * s_th / den_t
                    )
                    d = np.column_stack([d_th, d_ph, d_f, ph * s0, 1j * ph * s0])
                    block += np.real(d.conj().T @ d)
            fim[np.ix_(cols, cols)] += (2.0 / sigma) * block
    return 0.5 * (fim + fim.T)


def jacobian_psi(cfg: ArrayConfig, target: TargetState) -> np.ndarray:
    """Jacobian d(rho)/d(eta), eta = [x0, y0, vx, vy, Re(beta), Im(beta)].

    Upward unit vectors ehat = (p0 - p_ref)/r give sin(angle) = ehat.e_x,
    so d(theta_m)/dp0 = chi*(e_x - gamma*ehat)/r and the Doppler rows follow
    from f = (1/lambda) * v0.(ehat_t + ehat_r).
    """
    idx = RhoIndex(cfg.k_t, cfg.k_r)
    dim_eta = 4 + 2 * idx.n_pairs
    psi = np.zeros((idx.dim, dim_eta))
    chi = electrical_scale(cfg)
    lam = cfg.wavelength
    e_x = np.array([1.0, 0.0])
    p0, v0 = target.p0, target.v0

    def grad_gamma(ref):
        diff = p0 - ref
        r = np.linalg.norm(diff)
        ehat = diff / r
        return (e_x - ehat[0] * ehat) / r, ehat, r

    for m in range(cfg.k_t):
        w, _, _ = grad_gamma(cfg.tx_subarray_ref(m))
        psi[idx.theta(m), 0:2] = chi * w
    for n in range(cfg.k_r):
        # receive element axis runs toward -x: electrical sign flips
        w, _, _ = grad_gamma(cfg.rx_subarray_ref(n))
        psi[idx.phi(n), 0:2] = -chi * w
    for m in range(cfg.k_t):
        _, ehat_t, r_t = grad_gamma(cfg.tx_subarray_ref(m))
        for n in range(cfg.k_r):
            _, ehat_r, r_r = grad_gamma(cfg.rx_subarray_ref(n))
            dp = ((v0 - ehat_t * (ehat_t @ v0)) / r_t
                  + (v0 - ehat_r * (ehat_r @ v0)) / r_r) / lam
            psi[idx.f(m, n), 0:2] = dp
            psi[idx.f(m, n), 2:4] = (ehat_t + ehat_r) / lam
            psi[idx.beta_re(m, n), 4 + m * cfg.k_r + n] = 1.0
            psi[idx.beta_im(m, n), 4 + idx.n_pairs + m * cfg.k_r + n] = 1.0
    return psi


def crb_eta(f_rho: np.ndarray, psi: np.ndarray) -> FisherReport:
    """Chain-rule transport and extraction of the location/velocity bounds."""
    f_eta = psi.T @ f_rho @ psi
    f_eta = 0.5 * (f_eta + f_eta.T)
    well_posed = True
    try:
        cond = np.linalg.cond(f_eta)
        if not np.isfinite(cond) or cond > 1e14:
            raise np.linalg.LinAlgError
        inv = np.linalg.inv(f_eta)
    except np.linalg.LinAlgError:
        warnings.warn("F_eta is rank deficient; using pseudo-inverse",
                      stacklevel=2)
        inv = np.linalg.pinv(f_eta)
        well_posed = False
    crb_p = float(inv[0, 0] + inv[1, 1])
    crb_v = float(inv[2, 2] + inv[3, 3])
    return FisherReport(f_rho=f_rho, psi=psi, f_eta=f_eta,
                        crb_p=crb_p, crb_v=crb_v, well_posed=well_posed)


def location_velocity_bounds(cfg: ArrayConfig, pulse: PulseConfig,
                             target: TargetState, gains: ChannelGain,
                             sigma: float) -> FisherReport:
    """One-call CRB for a scenario."""
    f_rho = fim_rho(cfg, pulse, target, gains, sigma)
    return crb_eta(f_rho, jacobian_psi(cfg, target))


def bounds_db(report: FisherReport) -> tuple[float, float]:
    """(location, velocity) root bounds in dB (10*log10 of m and m/s)."""
    return (10.0 * np.log10(np.sqrt(report.crb_p)),
            10.0 * np.log10(np.sqrt(report.crb_v)))


def fim_verbatim_discrepancy(cfg: ArrayConfig, pulse: PulseConfig,
                             target: TargetState, gains: ChannelGain,
                             sigma: float) -> dict[str, float]:
    """Max relative deviation of the printed derivative forms from the
    independent-coordinate FIM, per block family. Diagnostic only."""
    idx = RhoIndex(cfg.k_t, cfg.k_r)
    f_ind = fim_rho(cfg, pulse, target, gains, sigma, "independent")
    f_ver = fim_rho(cfg, pulse, target, gains, sigma, "verbatim")
    scale = np.abs(f_ind).max()
    blocks = {
        "theta": range(0, cfg.k_t),
        "phi": range(cfg.k_t, cfg.k_t + cfg.k_r),
        "f": range(cfg.k_t + cfg.k_r, cfg.k_t + cfg.k_r + idx.n_pairs),
    }
    out = {}
    for name, rows in blocks.items():
        rows = list(rows)
        diff = np.abs(f_ver[rows, :] - f_ind[rows, :]).max()
        out[name] = float(diff / scale)
    return out
