"""Message passing from subarray posteriors to target location and velocity.

Stage 2 of the estimator. Per-variable VM messages are formed by
natural-parameter arithmetic on the per-pair posteriors. Location and velocity
then come out in one of two modes:

* system-level (centralized): Newton ascent on the summed circular
  log-likelihoods f_p(p0) (angles) and f_v(v0) (Dopplers), covariance from the
  negated inverse Hessian at the fixed point;
* subarray-level (distributed): per-pair / per-configuration closed forms,
  Laplace covariances, fused by the Gaussian product rule.

Unit-vector convention inside this module: ehat = (p - p_array)/r points from
the array toward the target, so sin(angle) = ehat . e_x and the Doppler
constraint reads f_tilde = zeta * v0 . u with u = ehat_t + ehat_r. That u
equals doppler_sign * (geometry.unit_vectors sum) with doppler_sign = -1,
fixed once by the synthetic round trip.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .circular import VonMisesParam, vm_divide
from .geometry import SPEED_OF_LIGHT, ArrayConfig, PulseConfig, electrical_scale
from .subarray_vbi import SubarrayPosterior, VbiPriors

DOPPLER_SIGN_DEFAULT = -1.0


class FusionError(RuntimeError):
    pass


@dataclass(frozen=True)
class AngularMessageSet:
    """Messages from the angle/Doppler variable nodes toward the geometry factors."""

    theta: list[VonMisesParam]                       # k_t entries
    phi: list[VonMisesParam]                         # k_r entries
    doppler: dict[tuple[int, int], VonMisesParam]    # per pair, over f_tilde


@dataclass(frozen=True)
class GaussianEstimate2D:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if mean.shape != (2,) or cov.shape != (2, 2):
            raise ValueError("mean must be a 2-vector and cov a 2x2 matrix")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("non-finite Gaussian estimate")
        if not np.allclose(cov, cov.T, atol=1e-9 * max(1.0, float(np.abs(cov).max()))):
            raise ValueError("covariance must be symmetric")
        if np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ValueError("covariance must be positive definite")


@dataclass(frozen=True)
class AscentOptions:
    max_iters: int = 200
    tol: float = 1e-9
    backtrack_max: int = 40


COND_MAX_DEFAULT = 1e5  # bistatic direction vectors differ by ~baseline/range


@dataclass(frozen=True)
class PairConfigSet:
    """Two-pair configurations used by distributed velocity estimation.

    The condition gate only rejects configurations whose 2x2 direction matrix
    is effectively singular; near-collinear geometry is the normal operating
    point here (direction diversity ~ array baseline / target range) and is
    handled by the covariance fusion, not by discarding configurations.
    """

    omega: list[tuple[tuple[int, int], tuple[int, int]]]
    cond_max: float = COND_MAX_DEFAULT

    @classmethod
    def adjacent(cls, k_t: int, k_r: int,
                 cond_max: float = COND_MAX_DEFAULT) -> "PairConfigSet":
        """All index-adjacent configurations {(m,n),(m,n+1)} and {(m,n),(m+1,n)}."""
        omega = []
        for m in range(k_t):
            for n in range(k_r):
                if n + 1 < k_r:
                    omega.append(((m, n), (m, n + 1)))
                if m + 1 < k_t:
                    omega.append(((m, n), (m + 1, n)))
        return cls(omega=omega, cond_max=cond_max)

    @classmethod
    def full(cls, k_t: int, k_r: int,
             cond_max: float = COND_MAX_DEFAULT) -> "PairConfigSet":
        pairs = [(m, n) for m in range(k_t) for n in range(k_r)]
        omega = [
            (a, b) for i, a in enumerate(pairs) for b in pairs[i + 1:]
        ]
        return cls(omega=omega, cond_max=cond_max)


def _spd(mat: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Symmetrize and clamp eigenvalues so the result is safely SPD."""
    sym = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(sym)
    return (v * np.maximum(w, floor)) @ v.T


def build_messages(posteriors: dict[tuple[int, int], SubarrayPosterior],
                   k_t: int, k_r: int,
                   priors: VbiPriors | None = None) -> AngularMessageSet:
    """Variable-to-factor messages by natural-parameter accumulation.

    A theta_m message multiplies the K_r per-pair posteriors of theta_m and
    divides the prior out of each, then reinstates it once (exact factor-graph
    bookkeeping; a no-op under the default uniform priors). Pairs flagged
    non-converged are skipped with a warning.
    """
    priors = priors or VbiPriors()
    usable = {}
    for key, post in posteriors.items():
        if post.converged:
            usable[key] = post
        else:
            warnings.warn(f"pair {key} not converged; excluded from messages",
                          stacklevel=2)
    theta_msgs = []
    for m in range(k_t):
        eta = 0j
        count = 0
        for n in range(k_r):
            post = usable.get((m, n))
            if post is not None:
                eta += post.eta_theta.eta - priors.eta_theta
                count += 1
        theta_msgs.append(VonMisesParam(eta + priors.eta_theta) if count
                          else VonMisesParam.uniform())
    phi_msgs = []
    for n in range(k_r):
        eta = 0j
        count = 0
        for m in range(k_t):
            post = usable.get((m, n))
            if post is not None:
                eta += post.eta_phi.eta - priors.eta_phi
                count += 1
        phi_msgs.append(VonMisesParam(eta + priors.eta_phi) if count
                        else VonMisesParam.uniform())
    doppler = {
        key: vm_divide(post.eta_f, VonMisesParam(priors.eta_f))
        for key, post in usable.items()
    }
    return AngularMessageSet(theta=theta_msgs, phi=phi_msgs, doppler=doppler)


def profile_info_ratio(domain: int) -> float:
    """Profile-to-conditional Fisher information ratio for a unit-modulus
    exponential over indices 0..K-1 with an unknown complex amplitude:
    sum (k - kbar)^2 / sum k^2 = (K+1) / (2*(2K-1))."""
    if domain < 2:
        raise ValueError("domain must be >= 2")
    return (domain + 1.0) / (2.0 * (2.0 * domain - 1.0))


def calibrate_messages(msgs: AngularMessageSet, m_sub: int,
                       n_pulses: int) -> AngularMessageSet:
    """Rescale message concentrations from conditional to profile information.

    The coordinate-ascent curvatures are computed with the complex gain held
    at its posterior mean, which overstates angle/Doppler information by the
    amplitude-profiling ratio (measured ~1.9x in standard deviation). Scaling
    every concentration of one variable type by a common factor leaves all
    fused means unchanged and makes the reported covariances calibrated.
    """
    r_ang = profile_info_ratio(m_sub)
    r_dop = profile_info_ratio(n_pulses)
    scale = lambda p, r: VonMisesParam(p.eta * r)
    return AngularMessageSet(
        theta=[scale(p, r_ang) for p in msgs.theta],
        phi=[scale(p, r_ang) for p in msgs.phi],
        doppler={k: scale(p, r_dop) for k, p in msgs.doppler.items()},
    )


# ---------------------------------------------------------------------------
# location

def _angle_terms(msgs: AngularMessageSet, cfg: ArrayConfig):
    """(kappa, mu, reference position, electrical sign) per informative angle
    message; the receive array's element axis flips the electrical sign."""
    terms = []
    for m, msg in enumerate(msgs.theta):
        if msg.kappa > 0:
            terms.append((msg.kappa, msg.mu, cfg.tx_subarray_ref(m), +1.0))
    for n, msg in enumerate(msgs.phi):
        if msg.kappa > 0:
            terms.append((msg.kappa, msg.mu, cfg.rx_subarray_ref(n), -1.0))
    return terms


def _location_objective(p: np.ndarray, terms, chi: float):
    """f_p, gradient and Hessian of the summed angular VM log-densities.

    Each term is kappa*cos(sign*chi*gamma - mu) with gamma(p) = ehat . e_x,
    ehat = (p - p_ref)/r. Exact derivatives:
        dgamma/dp = (e_x - gamma*ehat)/r
        d2gamma/dp2 = (3*gamma*ehat ehat' - ehat e_x' - e_x ehat' - gamma*I)/r^2
    """
    e_x = np.array([1.0, 0.0])
    val = 0.0
    grad = np.zeros(2)
    hess = np.zeros((2, 2))
    for kappa, mu, ref, sign in terms:
        diff = p - ref
        r = np.linalg.norm(diff)
        ehat = diff / r
        gamma = ehat[0]
        w = (e_x - gamma * ehat) / r
        d2g = (3.0 * gamma * np.outer(ehat, ehat)
               - np.outer(ehat, e_x) - np.outer(e_x, ehat)
               - gamma * np.eye(2)) / r ** 2
        sc = sign * chi
        res = sc * gamma - mu
        val += kappa * np.cos(res)
        s, c = np.sin(res), np.cos(res)
        grad += -kappa * sc * s * w
        hess += -kappa * sc * sc * c * np.outer(w, w) - kappa * sc * s * d2g
    return val, grad, hess


def _newton_ascent(fun, x0: np.ndarray, opts: AscentOptions, what: str):
    """Maximize fun (value, grad, hess) from x0; Newton direction with a
    backtracking ascent check, gradient fallback when the Hessian is not
    negative definite."""
    x = np.asarray(x0, dtype=float).copy()
    val, grad, hess = fun(x)
    for _ in range(opts.max_iters):
        try:
            direction = -np.linalg.solve(hess, grad)
            if direction @ grad <= 0:  # not an ascent direction
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            scale = max(abs(np.linalg.eigvalsh(hess)).max(), 1e-12)
            direction = grad / scale
        step = 1.0
        for _ in range(opts.backtrack_max):
            x_new = x + step * direction
            val_new, grad_new, hess_new = fun(x_new)
            if val_new >= val:
                break
            step *= 0.5
        else:
            break  # no ascent possible: converged to numerical precision
        moved = np.linalg.norm(x_new - x)
        x, val, grad, hess = x_new, val_new, grad_new, hess_new
        if moved < opts.tol:
            break
    else:
        raise FusionError(f"{what}: ascent did not converge "
                          f"(last iterate {x}, |grad|={np.linalg.norm(grad):.3e})")
    return x, val, grad, hess


def centralized_location(msgs: AngularMessageSet, cfg: ArrayConfig,
                         init: np.ndarray,
                         opts: AscentOptions | None = None) -> GaussianEstimate2D:
    """System-level location: ascend the joint angular objective from init."""
    opts = opts or AscentOptions()
    chi = electrical_scale(cfg)
    terms = _angle_terms(msgs, cfg)
    if len(terms) < 2:
        raise FusionError("need at least 2 informative angle messages")
    fun = lambda p: _location_objective(p, terms, chi)
    x, _, _, hess = _newton_ascent(fun, init, opts, "centralized_location")
    w = np.linalg.eigvalsh(0.5 * (hess + hess.T))
    if np.any(w >= 0):
        raise FusionError("centralized_location: not a local maximum")
    cond = abs(w).max() / abs(w).min()
    if cond > 1e12:
        raise FusionError(
            f"centralized_location: Hessian ill-conditioned (cond={cond:.2e}); "
            "a single subarray pair cannot fix range from angles alone"
        )
    return GaussianEstimate2D(mean=x, cov=_spd(np.linalg.inv(-hess)))


def _reconstruct_ehat(mu: float, chi: float, sign: float = 1.0) -> np.ndarray:
    """Upward unit vector from sin(angle) = sign*mu/chi; errors outside [-1, 1]."""
    s = sign * mu / chi
    if abs(s) > 1.0:
        raise FusionError(
            f"electrical angle outside grating-free range (sin={s:.4f})"
        )
    return np.array([s, np.sqrt(1.0 - s * s)])


def distributed_location(msgs: AngularMessageSet, cfg: ArrayConfig,
                         tau_hat: dict[tuple[int, int], float],
                         tau_std: float = 0.0,
                         consistency_tol: float = 1e-2,
                         ) -> tuple[dict[tuple[int, int], GaussianEstimate2D],
                                    GaussianEstimate2D]:
    """Per-pair closed-form locations from (angles, bistatic delay), then a
    Gaussian-product fusion.

    Per pair: the two angle messages give upward unit vectors, the bistatic
    range c*tau splits across the two legs through the shared target height,
    and the mean is p_ref + d*ehat. The covariance is first-order propagation
    of the closed form itself: sine variances 1/(chi^2 * kappa) from the two
    angle messages plus the delay variance tau_std^2, mapped through the
    split/direction sensitivities.

    Every pair in row m reuses the same theta_m message (and likewise per
    column), so the per-pair angle information is divided by the reuse count:
    the downstream Gaussian product then accumulates each message's
    information exactly once instead of K_r (or K_t) times, which would
    otherwise overweight the correlated angle evidence against the
    independent delay evidence.
    """
    chi = electrical_scale(cfg)
    reuse_theta = {m: 0 for m in range(cfg.k_t)}
    reuse_phi = {n: 0 for n in range(cfg.k_r)}
    for (m, n) in tau_hat:
        if msgs.theta[m].kappa > 0 and msgs.phi[n].kappa > 0:
            reuse_theta[m] += 1
            reuse_phi[n] += 1
    per_pair: dict[tuple[int, int], GaussianEstimate2D] = {}
    for (m, n), tau in tau_hat.items():
        th = msgs.theta[m]
        ph = msgs.phi[n]
        if th.kappa <= 0 or ph.kappa <= 0:
            continue
        e_t = _reconstruct_ehat(th.mu, chi, +1.0)
        e_r = _reconstruct_ehat(ph.mu, chi, -1.0)
        sin_t, cos_t = e_t
        sin_r, cos_r = e_r
        r_bist = SPEED_OF_LIGHT * tau
        csum = cos_t + cos_r
        d_r = r_bist * cos_t / csum
        d_t = r_bist * cos_r / csum
        p_rx = cfg.rx_subarray_ref(n) + d_r * e_r
        p_tx = cfg.tx_subarray_ref(m) + d_t * e_t
        scale = max(r_bist, 1.0)
        if np.linalg.norm(p_rx - p_tx) > consistency_tol * scale:
            warnings.warn(
                f"pair ({m},{n}): angle/delay reconstruction mismatch "
                f"{np.linalg.norm(p_rx - p_tx):.3e} m", stacklevel=2)
        mean = p_rx
        # sensitivities of p_rx to (sin theta, sin phi, tau)
        e_r_perp = np.array([cos_r, -sin_r])
        dm_dst = r_bist * (-sin_t / cos_t) * cos_r / csum ** 2 * e_r
        dm_dsr = (r_bist * cos_t * (sin_r / cos_r) / csum ** 2) * e_r \
            + (d_r / cos_r) * e_r_perp
        dm_dtau = SPEED_OF_LIGHT * cos_t / csum * e_r
        var_st = reuse_theta[m] / (chi * chi * th.kappa)
        var_sr = reuse_phi[n] / (chi * chi * ph.kappa)
        cov = (var_st * np.outer(dm_dst, dm_dst)
               + var_sr * np.outer(dm_dsr, dm_dsr)
               + tau_std ** 2 * np.outer(dm_dtau, dm_dtau))
        per_pair[(m, n)] = GaussianEstimate2D(mean=mean, cov=_spd(cov))
    if not per_pair:
        raise FusionError("no usable pairs for distributed location")
    fused = gaussian_product(list(per_pair.values()))
    return per_pair, fused


def gaussian_product(estimates: list[GaussianEstimate2D]) -> GaussianEstimate2D:
    """Information-form product of Gaussians.

    The mean comes from the exact information solve; the eigenvalue clamp is
    applied only to the reported covariance (clamping before the solve would
    corrupt the mean whenever a fused covariance legitimately dips to the
    floor, e.g. in noiseless runs).
    """
    info = np.zeros((2, 2))
    vec = np.zeros(2)
    for est in estimates:
        prec = np.linalg.inv(est.cov)
        info += prec
        vec += prec @ est.mean
    mean = np.linalg.solve(info, vec)
    return GaussianEstimate2D(mean=mean, cov=_spd(np.linalg.inv(info)))


# ---------------------------------------------------------------------------
# velocity

def doppler_directions(msgs: AngularMessageSet, cfg: ArrayConfig, p0_hat: np.ndarray,
                       doppler_sign: float = DOPPLER_SIGN_DEFAULT,
                       ) -> dict[tuple[int, int], np.ndarray]:
    """u_mn vectors such that f_tilde_mn = zeta * v0 . u_mn at the message means."""
    p0_hat = np.asarray(p0_hat, dtype=float)
    out = {}
    for (m, n) in msgs.doppler:
        d_t = p0_hat - cfg.tx_subarray_ref(m)
        d_r = p0_hat - cfg.rx_subarray_ref(n)
        u = d_t / np.linalg.norm(d_t) + d_r / np.linalg.norm(d_r)
        out[(m, n)] = -doppler_sign * u  # sign=-1 keeps the array->target sum
    return out


def _doppler_scale(cfg: ArrayConfig, pulse: PulseConfig) -> float:
    """zeta = 2*pi*T/lambda, normalized-Doppler per unit radial speed."""
    return 2.0 * np.pi * pulse.pri / cfg.wavelength


def _velocity_objective(v: np.ndarray, terms, zeta: float):
    val = 0.0
    grad = np.zeros(2)
    hess = np.zeros((2, 2))
    for kappa, mu, u in terms:
        res = zeta * (v @ u) - mu
        val += kappa * np.cos(res)
        grad += -kappa * zeta * np.sin(res) * u
        hess += -kappa * zeta * zeta * np.cos(res) * np.outer(u, u)
    return val, grad, hess


def centralized_velocity(msgs: AngularMessageSet, cfg: ArrayConfig,
                         pulse: PulseConfig, p0_hat: np.ndarray,
                         init: np.ndarray | None = None,
                         opts: AscentOptions | None = None,
                         doppler_sign: float = DOPPLER_SIGN_DEFAULT,
                         ) -> GaussianEstimate2D:
    """System-level velocity: ascend the summed Doppler VM log-likelihoods."""
    opts = opts or AscentOptions()
    zeta = _doppler_scale(cfg, pulse)
    dirs = doppler_directions(msgs, cfg, p0_hat, doppler_sign)
    terms = []
    mats = np.zeros((2, 2))
    rows, rhs, wts = [], [], []
    for key, msg in msgs.doppler.items():
        if msg.kappa <= 0:
            continue
        u = dirs[key]
        terms.append((msg.kappa, msg.mu, u))
        mats += msg.kappa * np.outer(u, u)
        rows.append(u)
        rhs.append(msg.mu / zeta)
        wts.append(msg.kappa)
    if len(terms) < 2:
        raise FusionError("need at least 2 Doppler messages")
    w = np.linalg.eigvalsh(mats)
    if w.min() <= 1e-9 * w.max():
        raise FusionError("velocity unobservable: all direction vectors collinear")
    if init is None:
        # weighted least squares on the unwrapped phase constraints
        a = np.array(rows) * np.sqrt(np.array(wts))[:, None]
        b = np.array(rhs) * np.sqrt(np.array(wts))
        init = np.linalg.lstsq(a, b, rcond=None)[0]
    fun = lambda v: _velocity_objective(v, terms, zeta)
    x, _, _, hess = _newton_ascent(fun, init, opts, "centralized_velocity")
    if np.any(np.linalg.eigvalsh(0.5 * (hess + hess.T)) >= 0):
        raise FusionError("centralized_velocity: not a local maximum")
    return GaussianEstimate2D(mean=x, cov=_spd(np.linalg.inv(-hess)))


def distributed_velocity(msgs: AngularMessageSet, cfg: ArrayConfig,
                         pulse: PulseConfig, p0_hat: np.ndarray,
                         pairs: PairConfigSet | None = None,
                         doppler_sign: float = DOPPLER_SIGN_DEFAULT,
                         ) -> tuple[dict, GaussianEstimate2D]:
    """Two-pair closed-form velocities fused by the Gaussian product rule.

    A pair's Doppler message appears in several configurations; its
    information is divided by that multiplicity so the fused product counts
    every message once (same bookkeeping as the distributed location).
    """
    pairs = pairs or PairConfigSet.adjacent(cfg.k_t, cfg.k_r)
    zeta = _doppler_scale(cfg, pulse)
    dirs = doppler_directions(msgs, cfg, p0_hat, doppler_sign)

    def usable(key):
        msg = msgs.doppler.get(key)
        return msg is not None and msg.kappa > 0

    reuse: dict[tuple[int, int], int] = {}
    for (a, b) in pairs.omega:
        if usable(a) and usable(b):
            reuse[a] = reuse.get(a, 0) + 1
            reuse[b] = reuse.get(b, 0) + 1
    per_config: dict = {}
    for omega in pairs.omega:
        (a, b) = omega
        if not (usable(a) and usable(b)):
            continue
        msg_a, msg_b = msgs.doppler[a], msgs.doppler[b]
        e_mat = np.column_stack([dirs[a], dirs[b]])
        if np.linalg.det(e_mat) == 0 or np.linalg.cond(e_mat) > pairs.cond_max:
            warnings.warn(f"configuration {omega} skipped: ill-conditioned "
                          "direction matrix", stacklevel=2)
            continue
        mu_vec = np.array([msg_a.mu, msg_b.mu])
        mean = np.linalg.solve(e_mat.T, mu_vec / zeta)
        info = zeta ** 2 * (
            msg_a.kappa / reuse[a] * np.outer(dirs[a], dirs[a])
            + msg_b.kappa / reuse[b] * np.outer(dirs[b], dirs[b]))
        per_config[omega] = GaussianEstimate2D(mean=mean,
                                               cov=_spd(np.linalg.inv(_spd(info))))
    if not per_config:
        raise FusionError("no usable pair configurations for velocity")
    fused = gaussian_product(list(per_config.values()))
    return per_config, fused
