"""
Geometry and channel synthesis for the IOS-assisted full-duplex MISO link.

- Transmit and receive antennas: uniform linear arrays along +y
- IOS: uniform planar array in the y-z plane (linear along +y when L is not
  a perfect square)
- H_ti, H_ir: free-space line of sight, amplitude lambda*sqrt(G)/(4*pi*r)
- H_tr, h_id: Rician mixtures with r**(kappa/2) amplitude decay
- All randomness comes from an explicit seed (numpy default_rng)

Powers are watts everywhere inside; dBm only appears at the config boundary.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

import defaults

log = logging.getLogger(__name__)

_MIN_RANGE = 1e-12
_TWO_PI = 2.0 * np.pi


class ConfigError(ValueError):
    """Invalid system, optimizer or scenario configuration."""


class GeometryError(ValueError):
    """Two nodes of the layout share a position."""


# --------------------- UNITS --------------------- #


def dbm_to_watt(p_dbm):
    """Convert dBm to watts. ``None`` maps to +inf (no constraint)."""
    if p_dbm is None:
        return math.inf
    return 10.0 ** (float(p_dbm) / 10.0) / 1000.0


def watt_to_dbm(p_watt):
    """Convert watts to dBm; zero power maps to -inf."""
    p_watt = float(p_watt)
    if p_watt <= 0.0:
        return -math.inf
    return 10.0 * math.log10(p_watt * 1000.0)


# --------------------- CONFIGURATION --------------------- #


_DBM_FIELDS = {
    "sigma_d2_dbm": "sigma_d2",
    "sigma_r2_dbm": "sigma_r2",
    "P_max_dbm": "P_max",
}


@dataclass(frozen=True)
class SystemConfig:
    """Physical parameters of one simulated deployment."""

    M: int = defaults.NUM_TX
    N: int = defaults.NUM_RX
    L: int = defaults.NUM_ELEMENTS
    wavelength: float = defaults.WAVELENGTH
    spacing: float = defaults.SPACING
    rician_K: float = defaults.RICIAN_K
    pathloss_exp: float = defaults.PATHLOSS_EXP
    sigma_d2: float = defaults.SIGMA_D2
    sigma_r2: float = defaults.SIGMA_R2
    P_max: float = defaults.P_MAX
    gain_exponent_tx: float = defaults.GAIN_EXPONENT_TX
    gain_exponent_rx: float = defaults.GAIN_EXPONENT_RX
    gain_peak: float = defaults.GAIN_PEAK
    first_tx: tuple = defaults.FIRST_TX
    first_rx: tuple = defaults.FIRST_RX
    first_ios: tuple = defaults.FIRST_IOS
    destination: tuple = defaults.DESTINATION
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("M", "N", "L"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not self.wavelength > 0:
            raise ConfigError(f"wavelength must be > 0, got {self.wavelength!r}")
        if not self.spacing > 0:
            raise ConfigError(f"spacing must be > 0, got {self.spacing!r}")
        if not self.rician_K >= 0:
            raise ConfigError(f"rician_K must be >= 0, got {self.rician_K!r}")
        if not self.pathloss_exp >= 2:
            raise ConfigError(f"pathloss_exp must be >= 2, got {self.pathloss_exp!r}")
        for name in ("sigma_d2", "sigma_r2", "P_max", "gain_peak"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)!r}")
        for name in ("gain_exponent_tx", "gain_exponent_rx"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)!r}")
        for name in ("first_tx", "first_rx", "first_ios", "destination"):
            point = tuple(float(v) for v in getattr(self, name))
            if len(point) != 3:
                raise ConfigError(f"{name} must have 3 coordinates, got {len(point)}")
            object.__setattr__(self, name, point)

    @classmethod
    def from_dict(cls, data):
        """Build a config from a JSON ``system`` block.

        Args:
            data: Mapping of field names to values. ``sigma_d2_dbm``,
                ``sigma_r2_dbm`` and ``P_max_dbm`` are accepted in place of
                their watt counterparts.

        Returns:
            SystemConfig
        """
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key in _DBM_FIELDS:
                kwargs[_DBM_FIELDS[key]] = dbm_to_watt(value)
            elif key in known:
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown system field '{key}'")
        # spacing follows the wavelength unless given explicitly
        if "wavelength" in kwargs and "spacing" not in kwargs:
            kwargs["spacing"] = kwargs["wavelength"] / 2
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        out = dataclasses.asdict(self)
        for name in ("first_tx", "first_rx", "first_ios", "destination"):
            out[name] = list(out[name])
        return out

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# --------------------- GEOMETRY --------------------- #


@dataclass(frozen=True, eq=False)
class Geometry:
    """Node positions plus ranges and (elevation, azimuth) pairs per link.

    Angles are measured in a local spherical frame centered at the first
    index of each pair, with elevation taken from the +x boresight shared by
    the arrays and the IOS normal.
    """

    tx_positions: np.ndarray
    rx_positions: np.ndarray
    ios_positions: np.ndarray
    dest_position: np.ndarray
    r_lm: np.ndarray
    theta_lm: np.ndarray
    phi_lm: np.ndarray
    r_mn: np.ndarray
    theta_mn: np.ndarray
    phi_mn: np.ndarray
    r_nm: np.ndarray
    theta_nm: np.ndarray
    phi_nm: np.ndarray
    r_ln: np.ndarray
    theta_ln: np.ndarray
    phi_ln: np.ndarray
    r_ld: np.ndarray

    @property
    def dimensions(self):
        return len(self.ios_positions), len(self.tx_positions), len(self.rx_positions)


def _linear_array(first, count, spacing):
    offsets = np.arange(count)[:, None] * spacing * np.array([0.0, 1.0, 0.0])
    return np.asarray(first, dtype=float)[None, :] + offsets


def _ios_array(first, count, spacing):
    side = math.isqrt(count)
    if side * side != count:
        return _linear_array(first, count, spacing)
    idx = np.arange(count)
    rows, cols = idx // side, idx % side
    offsets = (cols[:, None] * np.array([0.0, 1.0, 0.0])
               + rows[:, None] * np.array([0.0, 0.0, 1.0])) * spacing
    return np.asarray(first, dtype=float)[None, :] + offsets


def _spherical(origins, targets):
    """Range, elevation and azimuth of every target seen from every origin."""
    delta = targets[None, :, :] - origins[:, None, :]
    r = np.linalg.norm(delta, axis=-1)
    if np.any(r < _MIN_RANGE):
        raise GeometryError("coincident positions in layout (zero range)")
    theta = np.arccos(np.clip(np.abs(delta[..., 0]) / r, 0.0, 1.0))
    phi = np.mod(np.arctan2(delta[..., 2], delta[..., 1]), _TWO_PI)
    phi[phi >= _TWO_PI] = 0.0
    return r, theta, phi


def build_geometry(config):
    """Lay out antennas, IOS elements and destination, then compute all links."""
    tx = _linear_array(config.first_tx, config.M, config.spacing)
    rx = _linear_array(config.first_rx, config.N, config.spacing)
    ios = _ios_array(config.first_ios, config.L, config.spacing)
    dest = np.asarray(config.destination, dtype=float)

    r_lm, theta_lm, phi_lm = _spherical(ios, tx)
    r_mn, theta_mn, phi_mn = _spherical(tx, rx)
    r_nm, theta_nm, phi_nm = _spherical(rx, tx)
    r_ln, theta_ln, phi_ln = _spherical(ios, rx)
    r_ld, _, _ = _spherical(ios, dest[None, :])

    log.debug("Geometry: M=%d N=%d L=%d, min IOS range %.4f m",
              config.M, config.N, config.L, r_lm.min())
    return Geometry(
        tx_positions=tx, rx_positions=rx, ios_positions=ios, dest_position=dest,
        r_lm=r_lm, theta_lm=theta_lm, phi_lm=phi_lm,
        r_mn=r_mn, theta_mn=theta_mn, phi_mn=phi_mn,
        r_nm=r_nm, theta_nm=theta_nm, phi_nm=phi_nm,
        r_ln=r_ln, theta_ln=theta_ln, phi_ln=phi_ln,
        r_ld=r_ld[:, 0],
    )


def antenna_gain(theta, phi, exponent, peak):
    """Elevation-only pattern G0*cos(theta)**q; phi is accepted and ignored."""
    del phi
    return peak * np.cos(theta) ** exponent


# --------------------- CHANNELS --------------------- #


@dataclass(frozen=True, eq=False)
class ChannelSet:
    """The four link matrices, plus the Rician statistics they were drawn from.

    ``tr_mean``/``id_mean`` hold the deterministic LoS parts and
    ``tr_std``/``id_std`` the per-entry NLoS amplitudes, so that fresh
    draws with the same statistics can be produced for imperfect CSI.
    """

    H_ti: np.ndarray  # L x M
    H_tr: np.ndarray  # M x N
    h_id: np.ndarray  # L
    H_ir: np.ndarray  # L x N
    tr_mean: np.ndarray = field(default=None, repr=False)
    tr_std: np.ndarray = field(default=None, repr=False)
    id_mean: np.ndarray = field(default=None, repr=False)
    id_std: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        L, M = self.H_ti.shape
        N = self.H_ir.shape[1]
        if self.H_tr.shape != (M, N) or self.h_id.shape != (L,) or self.H_ir.shape != (L, N):
            raise ValueError(
                f"dimension mismatch: H_ti {self.H_ti.shape}, H_tr {self.H_tr.shape}, "
                f"h_id {self.h_id.shape}, H_ir {self.H_ir.shape}"
            )

    @property
    def dimensions(self):
        """(L, M, N)"""
        return self.H_ti.shape[0], self.H_ti.shape[1], self.H_ir.shape[1]


def _rician_weights(K):
    if math.isinf(K):
        return 1.0, 0.0
    return math.sqrt(K / (K + 1.0)), math.sqrt(1.0 / (K + 1.0))


def _cn(rng, shape):
    """Zero-mean, unit-variance circularly symmetric complex Gaussian."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def sample_channels(geometry, config, seed=None):
    """Synthesize H_ti, H_tr, h_id and H_ir.

    H_ti and H_ir depend on the geometry only; ``seed`` (defaulting to
    ``config.rng_seed``) drives the NLoS draws of H_tr, then h_id.
    """
    L, M, N = geometry.dimensions
    if (L, M, N) != (config.L, config.M, config.N):
        raise ValueError(
            f"dimension mismatch: geometry (L,M,N)={(L, M, N)}, "
            f"config {(config.L, config.M, config.N)}"
        )
    lam = config.wavelength
    kappa = config.pathloss_exp
    g_peak = config.gain_peak
    q_t, q_r = config.gain_exponent_tx, config.gain_exponent_rx

    def free_space(r, gain):
        return lam * np.sqrt(gain) / (4 * np.pi * r) * np.exp(-2j * np.pi * r / lam)

    H_ti = free_space(geometry.r_lm, antenna_gain(geometry.theta_lm, geometry.phi_lm, q_t, g_peak))
    H_ir = free_space(geometry.r_ln, antenna_gain(geometry.theta_ln, geometry.phi_ln, q_r, g_peak))

    w_los, w_nlos = _rician_weights(config.rician_K)
    gain_tr = (antenna_gain(geometry.theta_mn, geometry.phi_mn, q_t, g_peak)
               * antenna_gain(geometry.theta_nm, geometry.phi_nm, q_r, g_peak).T)
    amp_tr = lam * np.sqrt(gain_tr) / (4 * np.pi * geometry.r_mn ** (kappa / 2))
    amp_id = lam / (4 * np.pi * geometry.r_ld ** (kappa / 2))

    tr_mean = amp_tr * w_los * np.exp(-2j * np.pi * geometry.r_mn / lam)
    id_mean = amp_id * w_los * np.exp(-2j * np.pi * geometry.r_ld / lam)
    tr_std = amp_tr * w_nlos
    id_std = amp_id * w_nlos

    rng = np.random.default_rng(config.rng_seed if seed is None else seed)
    H_tr = tr_mean + tr_std * _cn(rng, (M, N))
    h_id = id_mean + id_std * _cn(rng, (L,))

    return ChannelSet(H_ti=H_ti, H_tr=H_tr, h_id=h_id, H_ir=H_ir,
                      tr_mean=tr_mean, tr_std=tr_std, id_mean=id_mean, id_std=id_std)


def corrupt_csi(channels, eta, seed):
    """Imperfect CSI: sqrt(eta)*h + sqrt(1-eta)*dh for H_tr and h_id.

    The error terms are fresh draws with the nominal channels' Rician
    statistics; H_ti and H_ir are returned unchanged.
    """
    if not 0.0 <= eta <= 1.0:
        raise ConfigError(f"eta must lie in [0, 1], got {eta!r}")
    if eta == 1.0:
        return channels
    if channels.tr_mean is None or channels.id_mean is None:
        raise ValueError("channel statistics unavailable; build the set with sample_channels")
    rng = np.random.default_rng(seed)
    M, N = channels.H_tr.shape
    L = channels.h_id.shape[0]
    delta_tr = channels.tr_mean + channels.tr_std * _cn(rng, (M, N))
    delta_id = channels.id_mean + channels.id_std * _cn(rng, (L,))
    keep, fresh = math.sqrt(eta), math.sqrt(1.0 - eta)
    return dataclasses.replace(
        channels,
        H_tr=keep * channels.H_tr + fresh * delta_tr,
        h_id=keep * channels.h_id + fresh * delta_id,
    )
