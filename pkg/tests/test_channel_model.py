"""Tests for geometry layout, channel synthesis and imperfect CSI."""

import math

import numpy as np
import pytest

import channel_model
from channel_model import (ConfigError, GeometryError, SystemConfig, antenna_gain, build_geometry,
                           corrupt_csi, dbm_to_watt, sample_channels, watt_to_dbm)


# --------------------- UNITS AND CONFIG --------------------- #


def test_dbm_to_watt_reference_points():
    """30 dBm -> 1 W, -80 dBm -> 1e-11 W, None -> no cap."""
    assert dbm_to_watt(30) == pytest.approx(1.0, rel=1e-12)
    assert dbm_to_watt(-80) == pytest.approx(1e-11, rel=1e-12)
    assert dbm_to_watt(None) == math.inf


def test_dbm_watt_roundtrip():
    """watt_to_dbm(dbm_to_watt(x)) == x to 1e-12 relative."""
    for p_dbm in (-90.0, -74.0, -10.0, 0.5, 30.0):
        assert watt_to_dbm(dbm_to_watt(p_dbm)) == pytest.approx(p_dbm, rel=1e-12)


def test_zero_watt_is_minus_inf_dbm():
    assert watt_to_dbm(0.0) == -math.inf


def test_default_config_values():
    """Defaults: lambda 0.05 m, half-wavelength spacing, kappa 2.5, K = 3 dB."""
    cfg = SystemConfig()
    assert cfg.wavelength == 0.05
    assert cfg.spacing == pytest.approx(0.025)
    assert cfg.pathloss_exp == 2.5
    assert cfg.rician_K == pytest.approx(10**0.3)
    assert cfg.sigma_d2 == pytest.approx(1e-11)


def test_from_dict_converts_dbm():
    """P_max_dbm / sigma_d2_dbm become watts."""
    cfg = SystemConfig.from_dict({"P_max_dbm": 20, "sigma_d2_dbm": -90, "L": 9})
    assert cfg.P_max == pytest.approx(0.1)
    assert cfg.sigma_d2 == pytest.approx(1e-12)
    assert cfg.L == 9


def test_from_dict_spacing_follows_wavelength():
    cfg = SystemConfig.from_dict({"wavelength": 0.1})
    assert cfg.spacing == pytest.approx(0.05)


def test_from_dict_unknown_field():
    """Unknown keys -> ConfigError naming the key."""
    with pytest.raises(ConfigError, match="bogus"):
        SystemConfig.from_dict({"bogus": 1})


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError, match="M"):
        SystemConfig(M=0)
    with pytest.raises(ConfigError, match="pathloss_exp"):
        SystemConfig(pathloss_exp=1.5)
    with pytest.raises(ConfigError, match="P_max"):
        SystemConfig(P_max=0.0)


def test_config_to_dict_roundtrip():
    cfg = SystemConfig(M=2, L=9, first_rx=(0.0, 0.3, 5.0))
    assert SystemConfig.from_dict(cfg.to_dict()) == cfg


# --------------------- GEOMETRY --------------------- #


def test_tx_to_first_element_range(geometry):
    """tx [0,0,5] -> IOS [0.5,0,5]: r = 0.5 m."""
    assert geometry.r_lm[0, 0] == pytest.approx(0.5, rel=1e-12)


def test_tx_to_rx_range(geometry):
    """tx [0,0,5] -> rx [0,0.1,5]: r = 0.1 m."""
    assert geometry.r_mn[0, 0] == pytest.approx(0.1, rel=1e-12)


def test_first_element_to_destination_range(geometry):
    """IOS [0.5,0,5] -> destination [20,-10,1.5]: r ~ 22.192 m."""
    assert geometry.r_ld[0] == pytest.approx(math.sqrt(19.5**2 + 10**2 + 3.5**2), rel=1e-12)
    assert geometry.r_ld[0] == pytest.approx(22.192, abs=1e-3)


def test_range_symmetry(geometry):
    np.testing.assert_array_equal(geometry.r_mn, geometry.r_nm.T)


def test_angle_domains(geometry):
    """Elevations in [0, pi/2], azimuths in [0, 2pi)."""
    for theta in (geometry.theta_lm, geometry.theta_mn, geometry.theta_nm, geometry.theta_ln):
        assert np.all(theta >= 0.0) and np.all(theta <= math.pi / 2)
    for phi in (geometry.phi_lm, geometry.phi_mn, geometry.phi_nm, geometry.phi_ln):
        assert np.all(phi >= 0.0) and np.all(phi < 2 * math.pi)


def test_planar_ios_for_square_count(geometry):
    """L=16 -> 4x4 grid in the y-z plane."""
    ios = geometry.ios_positions
    assert np.all(ios[:, 0] == 0.5)
    assert len(np.unique(ios[:, 1])) == 4
    assert len(np.unique(ios[:, 2])) == 4


def test_linear_ios_for_non_square_count():
    geo = build_geometry(SystemConfig(L=5))
    assert np.all(geo.ios_positions[:, 2] == 5.0)
    np.testing.assert_allclose(np.diff(geo.ios_positions[:, 1]), 0.025)


def test_coincident_positions_rejected():
    """rx on top of tx -> GeometryError."""
    with pytest.raises(GeometryError):
        build_geometry(SystemConfig(first_rx=(0.0, 0.0, 5.0)))


def test_geometry_is_deterministic(system):
    a, b = build_geometry(system), build_geometry(system)
    np.testing.assert_array_equal(a.r_lm, b.r_lm)
    np.testing.assert_array_equal(a.phi_ln, b.phi_ln)


# --------------------- ANTENNA GAIN --------------------- #


def test_gain_at_boresight():
    """theta=0 -> G0 for any exponent."""
    for q in (0.0, 1.0, 2.0, 5.0):
        assert antenna_gain(0.0, 1.3, q, 1.0) == pytest.approx(1.0)


def test_gain_isotropic():
    """q=0 -> 1 everywhere."""
    theta = np.linspace(0.0, math.pi / 2, 7)
    np.testing.assert_allclose(antenna_gain(theta, 0.0, 0.0, 1.0), 1.0)


def test_gain_null_at_endfire():
    """theta=pi/2, q=2 -> 0."""
    assert antenna_gain(math.pi / 2, 0.0, 2.0, 1.0) == pytest.approx(0.0, abs=1e-30)


# --------------------- CHANNELS --------------------- #


def test_ti_magnitude_first_entry(channels):
    """|H_ti[0,0]| = 0.05 / (4 pi 0.5) ~ 7.9577e-3."""
    assert abs(channels.H_ti[0, 0]) == pytest.approx(0.05 / (4 * math.pi * 0.5), rel=1e-12)
    assert abs(channels.H_ti[0, 0]) == pytest.approx(7.9577e-3, rel=1e-4)


def test_free_space_links_match_geometry(channels, geometry):
    """|H_ti| = lambda/(4 pi r) and arg = -2 pi r / lambda; same for H_ir."""
    lam = 0.05
    for H, r in ((channels.H_ti, geometry.r_lm), (channels.H_ir, geometry.r_ln)):
        np.testing.assert_allclose(np.abs(H), lam / (4 * math.pi * r), rtol=1e-12)
        np.testing.assert_allclose(H / np.abs(H), np.exp(-2j * math.pi * r / lam), atol=1e-9)


def test_dimensions(channels):
    assert channels.H_ti.shape == (16, 4)
    assert channels.H_tr.shape == (4, 1)
    assert channels.h_id.shape == (16,)
    assert channels.H_ir.shape == (16, 1)
    assert channels.dimensions == (16, 4, 1)


def test_same_seed_bit_identical(system, geometry):
    a = sample_channels(geometry, system, seed=11)
    b = sample_channels(geometry, system, seed=11)
    for name in ("H_ti", "H_tr", "h_id", "H_ir"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))


def test_seed_changes_only_rician_links(system, geometry):
    """A new seed redraws H_tr and h_id; H_ti and H_ir stay put."""
    a = sample_channels(geometry, system, seed=1)
    b = sample_channels(geometry, system, seed=2)
    np.testing.assert_array_equal(a.H_ti, b.H_ti)
    np.testing.assert_array_equal(a.H_ir, b.H_ir)
    assert not np.array_equal(a.H_tr, b.H_tr)
    assert not np.array_equal(a.h_id, b.h_id)


def test_line_of_sight_limit_phase(geometry):
    """K = inf -> arg(H_tr) = -2 pi r_mn / lambda exactly."""
    cfg = SystemConfig(rician_K=math.inf)
    ch = sample_channels(build_geometry(cfg), cfg, seed=3)
    expected = np.exp(-2j * math.pi * geometry.r_mn / cfg.wavelength)
    np.testing.assert_allclose(ch.H_tr / np.abs(ch.H_tr), expected, atol=1e-9)


def test_rician_amplitude_decay(geometry):
    """K = inf -> |h_id| = lambda / (4 pi r^(kappa/2))."""
    cfg = SystemConfig(rician_K=math.inf)
    ch = sample_channels(build_geometry(cfg), cfg, seed=3)
    np.testing.assert_allclose(np.abs(ch.h_id), 0.05 / (4 * math.pi * geometry.r_ld**1.25), rtol=1e-12)


def test_nlos_draws_unit_variance():
    """Mean power of 10^5 draws within 3% of 1, mean near 0."""
    draws = channel_model._cn(np.random.default_rng(0), (100_000,))
    assert np.mean(np.abs(draws) ** 2) == pytest.approx(1.0, rel=0.03)
    assert abs(np.mean(draws)) < 0.02


def test_sample_dimension_mismatch(system, geometry):
    with pytest.raises(ValueError, match="dimension mismatch"):
        sample_channels(geometry, system.replace(L=9), seed=0)


# --------------------- IMPERFECT CSI --------------------- #


def test_perfect_csi_returns_input(channels):
    """eta = 1 -> exactly the input."""
    assert corrupt_csi(channels, 1.0, seed=5) is channels


def test_imperfect_csi_keeps_free_space_links(channels):
    est = corrupt_csi(channels, 0.95, seed=5)
    assert est.H_ti is channels.H_ti
    assert est.H_ir is channels.H_ir
    assert not np.array_equal(est.H_tr, channels.H_tr)
    assert not np.array_equal(est.h_id, channels.h_id)


def test_imperfect_csi_is_seeded(channels):
    a = corrupt_csi(channels, 0.95, seed=5)
    b = corrupt_csi(channels, 0.95, seed=5)
    np.testing.assert_array_equal(a.h_id, b.h_id)


def test_zero_eta_drops_nominal_channel(channels, system, geometry):
    """eta = 0 -> a fresh draw that does not depend on the nominal NLoS part."""
    other = sample_channels(geometry, system, seed=99)
    a = corrupt_csi(channels, 0.0, seed=5)
    b = corrupt_csi(other, 0.0, seed=5)
    np.testing.assert_allclose(a.h_id, b.h_id, rtol=1e-12)


def test_eta_out_of_range(channels):
    with pytest.raises(ConfigError):
        corrupt_csi(channels, 1.5, seed=0)
