import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nfmotion.geometry import (
    SPEED_OF_LIGHT,
    ArrayConfig,
    GeometryError,
    PulseConfig,
    TargetState,
    bistatic_delay,
    bistatic_doppler,
    check_near_field,
    rayleigh_distance,
    subarray_angles,
    subarray_rayleigh,
    unit_vectors,
)


def table2_cfg():
    return ArrayConfig.from_carrier(28e9, n_tx=256, n_rx=256, m_sub=32, d0=1.0)


def test_antenna_and_subarray_positions():
    cfg = ArrayConfig.from_carrier(28e9, 64, 64, 16, d0=1.0)
    d = cfg.d_spacing
    assert cfg.tx_antenna(0) == pytest.approx([0.5, 0.0])
    assert cfg.rx_antenna(0) == pytest.approx([-0.5, 0.0])
    assert cfg.tx_antenna(5) == pytest.approx([0.5 + 5 * d, 0.0])
    assert cfg.tx_subarray_ref(2) == pytest.approx([0.5 + 32 * d, 0.0])
    assert cfg.rx_subarray_ref(1) == pytest.approx([-0.5 - 16 * d, 0.0])
    assert cfg.k_t == cfg.k_r == 4


def test_subarray_size_must_divide():
    with pytest.raises(ValueError, match="divisible"):
        ArrayConfig.from_carrier(28e9, 60, 64, 16)


def test_target_must_be_in_front():
    with pytest.raises(GeometryError):
        TargetState(p0=(1.0, -2.0), v0=(0.0, 0.0))
    with pytest.raises(GeometryError):
        TargetState(p0=(1.0, 0.0), v0=(0.0, 0.0))


def test_pulse_config_validation():
    with pytest.raises(ValueError):
        PulseConfig(pri=0.0, n_pulses=10, fc=28e9)
    with pytest.raises(ValueError):
        PulseConfig(pri=1e-5, n_pulses=1, fc=28e9)


def test_mirror_symmetry_of_angles():
    # target on the y-axis, transmit subarray m and receive subarray n at
    # mirrored positions: DoD = -DoA
    cfg = ArrayConfig.from_carrier(28e9, 64, 64, 16, d0=1.0)
    ang = subarray_angles(cfg, np.array([0.0, 10.0]))
    for m in range(cfg.k_t):
        assert ang.theta_tilde[m] == pytest.approx(-ang.phi_tilde[m], abs=1e-15)
        # electrical angles coincide: the receive element axis is mirrored too
        assert ang.theta[m] == pytest.approx(ang.phi[m], abs=1e-15)


def test_first_dod_matches_arctan_formula():
    # p0 = (15, 20.7), Table-II-like geometry, first transmit subarray at D0/2
    cfg = table2_cfg()
    ang = subarray_angles(cfg, np.array([15.0, 20.7]))
    expected = np.arctan((15.0 - 0.5) / 20.7)
    assert ang.theta_tilde[0] == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.6113, abs=5e-4)
    chi = 2 * np.pi * cfg.d_spacing / cfg.wavelength
    assert ang.theta[0] == pytest.approx(chi * np.sin(expected), rel=1e-12)


def test_broadside_target_gives_zero_dod():
    cfg = ArrayConfig.from_carrier(28e9, 64, 64, 16, d0=1.0)
    ref = cfg.tx_subarray_ref(2)
    ang = subarray_angles(cfg, np.array([ref[0], 7.5]))
    assert ang.theta_tilde[2] == 0.0
    assert ang.theta[2] == 0.0


def test_angles_error_in_array_plane():
    cfg = ArrayConfig.from_carrier(28e9, 64, 64, 16)
    with pytest.raises(GeometryError, match="array plane"):
        subarray_angles(cfg, np.array([3.0, 0.0]))


def test_electrical_angle_bounded_by_pi():
    cfg = ArrayConfig.from_carrier(28e9, 64, 64, 16)
    for x in np.linspace(-200.0, 200.0, 41):
        ang = subarray_angles(cfg, np.array([x, 5.0]))
        assert np.all(np.abs(ang.theta) <= np.pi + 1e-12)
        assert np.all(np.abs(ang.theta_tilde) < np.pi / 2)


def test_stationary_target_zero_doppler():
    cfg = ArrayConfig.from_carrier(28e9, 64, 64, 16)
    tgt = TargetState(p0=(8.0, 11.0), v0=(0.0, 0.0))
    for m, n in cfg.pair_indices():
        assert bistatic_doppler(cfg, tgt, m, n) == 0.0


def test_tangential_velocity_zero_doppler():
    # mirrored pair about x = 0 and a y-axis target: e_t + e_r points along y,
    # so a purely horizontal velocity projects to zero
    cfg = ArrayConfig.from_carrier(28e9, 64, 64, 16, d0=1.0)
    tgt = TargetState(p0=(0.0, 12.0), v0=(5.0, 0.0))
    e_t, e_r = unit_vectors(cfg, tgt.p0, 0, 0)
    assert (e_t + e_r)[0] == pytest.approx(0.0, abs=1e-15)
    assert bistatic_doppler(cfg, tgt, 0, 0) == pytest.approx(0.0, abs=1e-12)


def _fd_doppler(cfg, tgt, m, n, h=1e-6):
    """-(1/lambda) d/dt of the range sum, ranges evolving by the projection
    convention that defines the Doppler sign (receding-time parameterization)."""
    def range_sum(t):
        p = tgt.p0 - t * tgt.v0
        return (np.linalg.norm(cfg.tx_subarray_ref(m) - p)
                + np.linalg.norm(cfg.rx_subarray_ref(n) - p))
    return -(range_sum(h) - range_sum(-h)) / (2 * h) / cfg.wavelength


def test_doppler_finite_difference_roundtrip_table2():
    cfg = table2_cfg()
    tgt = TargetState(p0=(15.0, 20.7), v0=(10.0, 10.2))
    f = bistatic_doppler(cfg, tgt, 0, 0)
    fd = _fd_doppler(cfg, tgt, 0, 0)
    assert f == pytest.approx(fd, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(
    x=st.floats(-30, 30), y=st.floats(2, 60),
    vx=st.floats(-40, 40), vy=st.floats(-40, 40),
    m=st.integers(0, 3), n=st.integers(0, 3),
)
def test_doppler_finite_difference_roundtrip_property(x, y, vx, vy, m, n):
    cfg = ArrayConfig.from_carrier(28e9, 64, 64, 16, d0=1.0)
    tgt = TargetState(p0=(x, y), v0=(vx, vy))
    f = bistatic_doppler(cfg, tgt, m, n)
    fd = _fd_doppler(cfg, tgt, m, n)
    assert f == pytest.approx(fd, rel=1e-6, abs=1e-6)


def test_delay_direct_norms():
    cfg = table2_cfg()
    p0 = np.array([15.0, 20.7])
    r_t = np.linalg.norm(np.array([0.5, 0.0]) - p0)
    r_r = np.linalg.norm(np.array([-0.5, 0.0]) - p0)
    tau = bistatic_delay(cfg, p0, 0, 0)
    assert tau == pytest.approx((r_t + r_r) / SPEED_OF_LIGHT, rel=1e-12)
    assert tau > 0


def test_delay_symmetry_and_scaling():
    cfg = ArrayConfig.from_carrier(28e9, 64, 64, 16, d0=1.0)
    # mirrored pair, y-axis target: both legs equal
    p0 = np.array([0.0, 9.0])
    tau = bistatic_delay(cfg, p0, 0, 0)
    r_t = np.linalg.norm(cfg.tx_subarray_ref(0) - p0)
    assert r_t == pytest.approx(SPEED_OF_LIGHT * tau / 2, rel=1e-12)


def test_unit_vectors_normalized_and_oriented():
    cfg = ArrayConfig.from_carrier(28e9, 64, 64, 16, d0=1.0)
    e_t, e_r = unit_vectors(cfg, np.array([0.0, 10.0]), 0, 0)
    assert np.linalg.norm(e_t) == pytest.approx(1.0, abs=1e-15)
    assert np.linalg.norm(e_r) == pytest.approx(1.0, abs=1e-15)
    # target->array convention: downward y component
    assert e_t[1] < 0 and e_r[1] < 0
    # mirrored pair, y-axis target: mirror images in x
    assert e_t[0] == pytest.approx(-e_r[0], abs=1e-15)
    # straight-below case
    e_t2, _ = unit_vectors(ArrayConfig.from_carrier(28e9, 16, 16, 16, d0=0.0),
                           np.array([0.0, 10.0]), 0, 0)
    assert e_t2 == pytest.approx([0.0, -1.0], abs=1e-12)


def test_rayleigh_distances():
    cfg = table2_cfg()
    lam = cfg.wavelength
    assert rayleigh_distance(cfg) == pytest.approx(255 ** 2 * lam / 2, rel=1e-12)
    assert rayleigh_distance(cfg) == pytest.approx(348.1, abs=0.3)
    assert subarray_rayleigh(cfg) == pytest.approx(31 ** 2 * lam / 2, rel=1e-12)
    assert subarray_rayleigh(cfg) == pytest.approx(5.15, abs=0.01)
    # equal array sizes: both branches agree, min is either
    r_t = 2 * (cfg.n_tx - 1) ** 2 * cfg.d_spacing ** 2 / lam
    assert rayleigh_distance(cfg) == pytest.approx(r_t, rel=1e-12)


def test_rayleigh_monotonicity():
    base = ArrayConfig.from_carrier(28e9, 64, 64, 16)
    bigger = ArrayConfig.from_carrier(28e9, 128, 128, 16)
    assert rayleigh_distance(bigger) > rayleigh_distance(base)
    longer_wavelength = ArrayConfig(n_tx=64, n_rx=64, m_sub=16,
                                    wavelength=2 * base.wavelength,
                                    d_spacing=base.d_spacing)
    assert rayleigh_distance(longer_wavelength) < rayleigh_distance(base)


def test_near_field_diagnostic_warns():
    cfg = ArrayConfig.from_carrier(28e9, 64, 64, 16, d0=1.0)
    near = TargetState(p0=(8.0, 11.0), v0=(0.0, 0.0))
    assert check_near_field(cfg, near)
    far = TargetState(p0=(8.0, 100.0), v0=(0.0, 0.0))
    with pytest.warns(UserWarning, match="Rayleigh"):
        assert not check_near_field(cfg, far)


def test_delay_scales_with_geometry():
    # doubling every length in the scene doubles the round-trip delay
    lam = SPEED_OF_LIGHT / 28e9
    small = ArrayConfig(n_tx=32, n_rx=32, m_sub=8, wavelength=lam,
                        d_spacing=lam / 2, d0=1.0)
    big = ArrayConfig(n_tx=32, n_rx=32, m_sub=8, wavelength=lam,
                      d_spacing=lam, d0=2.0)
    p0 = np.array([4.0, 7.0])
    assert bistatic_delay(big, 2 * p0, 1, 2) == pytest.approx(
        2 * bistatic_delay(small, p0, 1, 2), rel=1e-12)
