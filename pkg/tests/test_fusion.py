import numpy as np
import pytest

from nfmotion.circular import VonMisesParam
from nfmotion.fusion import (
    AngularMessageSet,
    FusionError,
    GaussianEstimate2D,
    PairConfigSet,
    build_messages,
    calibrate_messages,
    centralized_location,
    centralized_velocity,
    distributed_location,
    distributed_velocity,
    doppler_directions,
    gaussian_product,
    profile_info_ratio,
)
from nfmotion.geometry import (
    ArrayConfig,
    PulseConfig,
    TargetState,
    bistatic_delay,
    bistatic_doppler,
    subarray_angles,
)
from nfmotion.subarray_vbi import SubarrayPosterior, VbiPriors
from oracles import fd_gradient, fd_hessian


def make_posterior(theta, phi, f, kappa=1e5, converged=True, beta=1.0 + 0j):
    return SubarrayPosterior(
        eta_theta=VonMisesParam.from_polar(kappa, theta),
        eta_phi=VonMisesParam.from_polar(kappa, phi),
        eta_f=VonMisesParam.from_polar(kappa, f),
        beta_mean=beta, beta_var=1e-3, sigma_hat=1.0, varsigma_hat=1.0,
        converged=converged,
    )


def exact_messages(cfg, pulse, target, kappa=1e8):
    """Messages whose means sit exactly at the true angles/Dopplers."""
    ang = subarray_angles(cfg, target.p0)
    theta = [VonMisesParam.from_polar(kappa, ang.theta[m])
             for m in range(cfg.k_t)]
    phi = [VonMisesParam.from_polar(kappa, ang.phi[n]) for n in range(cfg.k_r)]
    doppler = {}
    for m, n in cfg.pair_indices():
        f_tilde = 2 * np.pi * pulse.pri * bistatic_doppler(cfg, target, m, n)
        doppler[(m, n)] = VonMisesParam.from_polar(kappa, f_tilde)
    return AngularMessageSet(theta=theta, phi=phi, doppler=doppler)


@pytest.fixture
def small_setup():
    cfg = ArrayConfig.from_carrier(28e9, 32, 32, 8, d0=1.0)
    pulse = PulseConfig(pri=1e-5, n_pulses=64, fc=28e9)
    target = TargetState(p0=(6.0, 9.0), v0=(8.0, -3.0))
    return cfg, pulse, target


# --- message construction ---

def test_build_messages_single_pair_row():
    post = make_posterior(0.4, -0.3, 0.1, kappa=7.0)
    msgs = build_messages({(0, 0): post}, k_t=1, k_r=1)
    assert msgs.theta[0].eta == pytest.approx(post.eta_theta.eta)
    assert msgs.phi[0].eta == pytest.approx(post.eta_phi.eta)
    assert msgs.doppler[(0, 0)].eta == pytest.approx(post.eta_f.eta)


def test_build_messages_accumulates_row():
    a = make_posterior(0.4, -0.3, 0.1, kappa=3.0)
    b = make_posterior(0.4, 0.2, 0.15, kappa=3.0)
    msgs = build_messages({(0, 0): a, (0, 1): b}, k_t=1, k_r=2)
    assert msgs.theta[0].eta == pytest.approx(a.eta_theta.eta + b.eta_theta.eta)
    # identical posteriors double the natural parameter
    msgs2 = build_messages({(0, 0): a, (0, 1): a}, k_t=1, k_r=2)
    assert msgs2.theta[0].eta == pytest.approx(2 * a.eta_theta.eta)


def test_build_messages_informative_prior_bookkeeping():
    prior = VbiPriors(eta_theta=0.5 + 0j)
    a = make_posterior(0.4, -0.3, 0.1, kappa=3.0)
    b = make_posterior(0.41, 0.2, 0.15, kappa=3.0)
    msgs = build_messages({(0, 0): a, (0, 1): b}, k_t=1, k_r=2, priors=prior)
    expected = (a.eta_theta.eta - 0.5) + (b.eta_theta.eta - 0.5) + 0.5
    assert msgs.theta[0].eta == pytest.approx(expected)


def test_build_messages_skips_nonconverged():
    good = make_posterior(0.4, -0.3, 0.1, kappa=3.0)
    bad = make_posterior(2.0, 2.0, 2.0, kappa=50.0, converged=False)
    with pytest.warns(UserWarning, match="not converged"):
        msgs = build_messages({(0, 0): good, (0, 1): bad}, k_t=1, k_r=2)
    assert msgs.theta[0].eta == pytest.approx(good.eta_theta.eta)
    assert (0, 1) not in msgs.doppler


def test_calibrate_messages_scales_concentrations_only():
    post = make_posterior(0.4, -0.3, 0.1, kappa=100.0)
    msgs = build_messages({(0, 0): post}, k_t=1, k_r=1)
    cal = calibrate_messages(msgs, m_sub=16, n_pulses=100)
    r_ang = profile_info_ratio(16)
    r_dop = profile_info_ratio(100)
    assert cal.theta[0].mu == pytest.approx(msgs.theta[0].mu)
    assert cal.theta[0].kappa == pytest.approx(100.0 * r_ang)
    assert cal.doppler[(0, 0)].kappa == pytest.approx(100.0 * r_dop)
    assert 0 < r_ang < 1 and 0 < r_dop < 1


# --- Gaussian estimates and products ---

def test_gaussian_estimate_validation():
    with pytest.raises(ValueError):
        GaussianEstimate2D(mean=np.zeros(2), cov=np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(ValueError):
        GaussianEstimate2D(mean=np.zeros(2), cov=np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_gaussian_product_identities():
    c = np.array([[0.5, 0.1], [0.1, 0.3]])
    a = GaussianEstimate2D(mean=np.array([1.0, 2.0]), cov=c)
    b = GaussianEstimate2D(mean=np.array([3.0, -2.0]), cov=c)
    fused = gaussian_product([a, b])
    assert fused.mean == pytest.approx((a.mean + b.mean) / 2)
    assert fused.cov == pytest.approx(c / 2, rel=1e-9)


def test_gaussian_product_order_invariance():
    rng = np.random.default_rng(2)
    ests = []
    for _ in range(6):
        root = rng.normal(size=(2, 2))
        ests.append(GaussianEstimate2D(mean=rng.normal(size=2),
                                       cov=root @ root.T + 0.1 * np.eye(2)))
    f1 = gaussian_product(ests)
    f2 = gaussian_product(ests[::-1])
    assert np.max(np.abs(f1.mean - f2.mean)) < 1e-10
    assert np.max(np.abs(f1.cov - f2.cov)) < 1e-10


# --- centralized location ---

def test_centralized_location_recovers_truth(small_setup):
    cfg, pulse, target = small_setup
    msgs = exact_messages(cfg, pulse, target, kappa=1e6)
    est = centralized_location(msgs, cfg, init=target.p0 + np.array([0.3, -0.4]))
    assert np.linalg.norm(est.mean - target.p0) < 1e-3
    assert np.all(np.linalg.eigvalsh(est.cov) > 0)


def test_centralized_location_gradient_hessian_match_fd(small_setup):
    cfg, pulse, target = small_setup
    from nfmotion.fusion import _angle_terms, _location_objective
    from nfmotion.geometry import electrical_scale

    msgs = exact_messages(cfg, pulse, target, kappa=50.0)
    terms = _angle_terms(msgs, cfg)
    chi = electrical_scale(cfg)
    p = target.p0 + np.array([0.5, -0.7])
    val, grad, hess = _location_objective(p, terms, chi)
    f = lambda q: _location_objective(q, terms, chi)[0]
    assert grad == pytest.approx(fd_gradient(f, p), rel=1e-6, abs=1e-8)
    assert hess == pytest.approx(fd_hessian(f, p), rel=1e-4, abs=1e-6)


def test_centralized_location_symmetric_scenario():
    cfg = ArrayConfig.from_carrier(28e9, 32, 32, 8, d0=1.0)
    pulse = PulseConfig(pri=1e-5, n_pulses=16, fc=28e9)
    target = TargetState(p0=(0.0, 9.0), v0=(0.0, 0.0))
    msgs = exact_messages(cfg, pulse, target, kappa=1e5)
    est = centralized_location(msgs, cfg, init=np.array([0.2, 8.5]))
    assert abs(est.mean[0]) < 3 * np.sqrt(est.cov[0, 0])


def test_centralized_location_single_pair_ill_conditioned():
    # one T-R pair with coincident references: the theta/phi rays coincide,
    # so the range direction is exactly unobservable from angles
    cfg = ArrayConfig.from_carrier(28e9, 8, 8, 8, d0=0.0)
    pulse = PulseConfig(pri=1e-5, n_pulses=8, fc=28e9)
    target = TargetState(p0=(2.0, 40.0), v0=(0.0, 0.0))
    msgs = exact_messages(cfg, pulse, target, kappa=1e4)
    with pytest.raises(FusionError, match="ill-conditioned|local maximum"):
        centralized_location(msgs, cfg, init=target.p0 + np.array([0.0, 5.0]))


def test_centralized_location_needs_messages(small_setup):
    cfg, pulse, target = small_setup
    empty = AngularMessageSet(
        theta=[VonMisesParam.uniform()] * cfg.k_t,
        phi=[VonMisesParam.uniform()] * cfg.k_r, doppler={})
    with pytest.raises(FusionError, match="at least 2"):
        centralized_location(empty, cfg, init=target.p0)


# --- distributed location ---

def test_distributed_location_exact_inputs(small_setup):
    cfg, pulse, target = small_setup
    msgs = exact_messages(cfg, pulse, target, kappa=1e9)
    tau = {key: bistatic_delay(cfg, target.p0, *key)
           for key in cfg.pair_indices()}
    per_pair, fused = distributed_location(msgs, cfg, tau)
    for est in per_pair.values():
        assert np.linalg.norm(est.mean - target.p0) < 1e-9
    assert np.linalg.norm(fused.mean - target.p0) < 1e-9


def test_distributed_location_two_sided_consistency(small_setup):
    # reconstruction from the receive side must equal the transmit side for
    # exact inputs: checked implicitly by the absence of a mismatch warning
    import warnings as w

    cfg, pulse, target = small_setup
    msgs = exact_messages(cfg, pulse, target, kappa=1e9)
    tau = {key: bistatic_delay(cfg, target.p0, *key)
           for key in cfg.pair_indices()}
    with w.catch_warnings():
        w.simplefilter("error")
        distributed_location(msgs, cfg, tau, consistency_tol=1e-6)


def test_distributed_location_delay_perturbation(small_setup):
    # +1/(2B) delay error moves the per-pair mean by ~c/(4B) along the
    # receive leg, the exact split following the closed form
    cfg, pulse, target = small_setup
    msgs = exact_messages(cfg, pulse, target, kappa=1e9)
    key = (0, 0)
    tau0 = bistatic_delay(cfg, target.p0, *key)
    bandwidth = 200e6
    per0, _ = distributed_location(msgs, cfg, {key: tau0})
    per1, _ = distributed_location(msgs, cfg, {key: tau0 + 1 / (2 * bandwidth)})
    shift = np.linalg.norm(per1[key].mean - per0[key].mean)
    ang = subarray_angles(cfg, target.p0)
    cos_t = np.cos(ang.theta_tilde[0])
    cos_r = np.cos(ang.phi_tilde[0])
    from nfmotion.geometry import SPEED_OF_LIGHT

    expected = SPEED_OF_LIGHT / (2 * bandwidth) * cos_t / (cos_t + cos_r)
    assert shift == pytest.approx(expected, rel=1e-6)
    assert expected == pytest.approx(0.375, abs=0.02)


def test_distributed_location_invalid_sine():
    # at half-wavelength spacing every wrapped mean maps to a valid sine, so
    # the grating guard is exercised with a sub-half-wavelength array
    lam = 299792458.0 / 28e9
    cfg = ArrayConfig(n_tx=32, n_rx=32, m_sub=8, wavelength=lam,
                      d_spacing=0.3 * lam, d0=1.0)
    pulse = PulseConfig(pri=1e-5, n_pulses=16, fc=28e9)
    target = TargetState(p0=(6.0, 9.0), v0=(0.0, 0.0))
    msgs = exact_messages(cfg, pulse, target, kappa=1e9)
    broken = AngularMessageSet(
        theta=[VonMisesParam.from_polar(1e9, 2.5)] * cfg.k_t,  # sin > 1
        phi=msgs.phi, doppler=msgs.doppler)
    tau = {(0, 0): bistatic_delay(cfg, target.p0, 0, 0)}
    with pytest.raises(FusionError, match="grating-free"):
        distributed_location(broken, cfg, tau)


def test_distributed_location_delay_variance_inflates_covariance(small_setup):
    cfg, pulse, target = small_setup
    msgs = exact_messages(cfg, pulse, target, kappa=1e7)
    tau = {(0, 0): bistatic_delay(cfg, target.p0, 0, 0)}
    per0, _ = distributed_location(msgs, cfg, tau, tau_std=0.0)
    per1, _ = distributed_location(msgs, cfg, tau, tau_std=1e-9)
    assert np.trace(per1[(0, 0)].cov) > np.trace(per0[(0, 0)].cov)


# --- velocity ---

def test_doppler_directions_match_synthesis_sign(small_setup):
    # f_tilde = zeta * v0 . u must reproduce the synthesized Doppler exactly
    cfg, pulse, target = small_setup
    msgs = exact_messages(cfg, pulse, target)
    dirs = doppler_directions(msgs, cfg, target.p0)
    zeta = 2 * np.pi * pulse.pri / cfg.wavelength
    for key, u in dirs.items():
        f_tilde = 2 * np.pi * pulse.pri * bistatic_doppler(cfg, target, *key)
        assert zeta * (target.v0 @ u) == pytest.approx(f_tilde, rel=1e-12)


def test_centralized_velocity_recovers_truth(small_setup):
    cfg, pulse, target = small_setup
    msgs = exact_messages(cfg, pulse, target, kappa=1e8)
    est = centralized_velocity(msgs, cfg, pulse, target.p0)
    assert np.linalg.norm(est.mean - target.v0) < 1e-3


def test_centralized_velocity_zero_velocity(small_setup):
    cfg, pulse, _ = small_setup
    target = TargetState(p0=(6.0, 9.0), v0=(0.0, 0.0))
    msgs = exact_messages(cfg, pulse, target, kappa=1e8)
    est = centralized_velocity(msgs, cfg, pulse, target.p0)
    assert np.linalg.norm(est.mean) < 1e-6


def test_centralized_velocity_kappa_scaling(small_setup):
    # scaling all concentrations leaves the mean, scales covariance inversely
    cfg, pulse, target = small_setup
    msgs = exact_messages(cfg, pulse, target, kappa=1e5)
    est1 = centralized_velocity(msgs, cfg, pulse, target.p0)
    scaled = AngularMessageSet(
        theta=msgs.theta, phi=msgs.phi,
        doppler={k: VonMisesParam(4.0 * p.eta) for k, p in msgs.doppler.items()})
    est4 = centralized_velocity(scaled, cfg, pulse, target.p0)
    assert est4.mean == pytest.approx(est1.mean, abs=1e-9)
    assert est4.cov == pytest.approx(est1.cov / 4.0, rel=1e-6)


def test_centralized_velocity_collinear_errors():
    cfg = ArrayConfig.from_carrier(28e9, 8, 8, 8, d0=1.0)
    pulse = PulseConfig(pri=1e-5, n_pulses=8, fc=28e9)
    target = TargetState(p0=(0.0, 10.0), v0=(1.0, 1.0))
    msgs = exact_messages(cfg, pulse, target)
    only = {(0, 0): msgs.doppler[(0, 0)]}
    solo = AngularMessageSet(theta=msgs.theta, phi=msgs.phi, doppler=only)
    with pytest.raises(FusionError, match="at least 2|collinear"):
        centralized_velocity(solo, cfg, pulse, target.p0)


def test_distributed_velocity_diagonal_example(small_setup):
    # u_a = (2, 0), u_b = (0, 2): the closed form inverts the diagonal system
    cfg, pulse, target = small_setup
    zeta = 2 * np.pi * pulse.pri / cfg.wavelength
    v_true = np.array([3.0, -4.0])
    msgs = AngularMessageSet(
        theta=[VonMisesParam.uniform()] * cfg.k_t,
        phi=[VonMisesParam.uniform()] * cfg.k_r,
        doppler={(0, 0): VonMisesParam.from_polar(1e6, zeta * 2 * v_true[0]),
                 (0, 1): VonMisesParam.from_polar(1e6, zeta * 2 * v_true[1])})
    import nfmotion.fusion as fusion_mod

    orig = fusion_mod.doppler_directions
    fusion_mod.doppler_directions = lambda *a, **k: {
        (0, 0): np.array([2.0, 0.0]), (0, 1): np.array([0.0, 2.0])}
    try:
        pairs = PairConfigSet(omega=[((0, 0), (0, 1))])
        per_cfg, fused = distributed_velocity(msgs, cfg, pulse, target.p0,
                                              pairs=pairs)
    finally:
        fusion_mod.doppler_directions = orig
    assert fused.mean == pytest.approx(v_true, rel=1e-9)


def test_distributed_velocity_recovers_truth(small_setup):
    cfg, pulse, target = small_setup
    msgs = exact_messages(cfg, pulse, target, kappa=1e8)
    per_cfg, fused = distributed_velocity(msgs, cfg, pulse, target.p0)
    assert np.linalg.norm(fused.mean - target.v0) < 1e-3
    for est in per_cfg.values():
        assert np.all(np.linalg.eigvalsh(est.cov) > 0)


def test_distributed_velocity_wrapped_doppler():
    # normalized Doppler near +/-pi: the circle handles the wrap, and the
    # recovered radial speed matches within 1%
    cfg = ArrayConfig.from_carrier(28e9, 32, 32, 8, d0=1.0)
    pri = 1e-5
    # pick a radial speed that puts f_tilde at pi - 0.01
    target_dir = np.array([6.0, 9.0]) / np.linalg.norm([6.0, 9.0])
    zeta = 2 * np.pi * pri / cfg.wavelength
    speed = (np.pi - 0.01) / (zeta * 2.0)  # |u| ~ 2 toward the arrays
    pulse = PulseConfig(pri=pri, n_pulses=64, fc=28e9)
    target = TargetState(p0=(6.0, 9.0), v0=tuple(speed * target_dir))
    f_check = 2 * np.pi * pri * bistatic_doppler(cfg, target, 0, 0)
    assert abs(f_check) > 2.9  # near the wrap
    msgs = exact_messages(cfg, pulse, target, kappa=1e8)
    _, fused = distributed_velocity(msgs, cfg, pulse, target.p0)
    speed_err = abs(np.linalg.norm(fused.mean) - np.linalg.norm(target.v0))
    assert speed_err / np.linalg.norm(target.v0) < 0.01


def test_pair_config_sets():
    adj = PairConfigSet.adjacent(2, 2)
    assert (((0, 0), (0, 1))) in adj.omega
    assert (((0, 0), (1, 0))) in adj.omega
    full = PairConfigSet.full(2, 2)
    assert len(full.omega) == 6  # C(4, 2)


def test_centralized_location_kappa_scaling(small_setup):
    # common concentration scale: same fixed point, inversely scaled covariance
    cfg, pulse, target = small_setup
    msgs = exact_messages(cfg, pulse, target, kappa=1e5)
    est1 = centralized_location(msgs, cfg, init=target.p0 + np.array([0.2, -0.3]))
    scaled = AngularMessageSet(
        theta=[VonMisesParam(4.0 * p.eta) for p in msgs.theta],
        phi=[VonMisesParam(4.0 * p.eta) for p in msgs.phi],
        doppler=msgs.doppler)
    est4 = centralized_location(scaled, cfg, init=target.p0 + np.array([0.2, -0.3]))
    assert est4.mean == pytest.approx(est1.mean, abs=1e-9)
    assert est4.cov == pytest.approx(est1.cov / 4.0, rel=1e-6)
