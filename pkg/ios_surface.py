"""Surface coefficient sets (energy splitting / mode switching) and link metrics."""

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

_TWO_PI = 2.0 * np.pi
AMPLITUDE_TOL = 1e-9


class InvalidCoefficientsError(ValueError):
    """Coefficient set violates the surface constraints."""


def wrap_phase(phase):
    """Canonicalize phases into [0, 2*pi)."""
    wrapped = np.mod(np.asarray(phase, dtype=float), _TWO_PI)
    wrapped[wrapped >= _TWO_PI] = 0.0
    return wrapped


def _vector(name, value):
    arr = np.atleast_1d(np.asarray(value, dtype=float)).copy()
    if arr.ndim != 1:
        raise InvalidCoefficientsError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


# --------------------- ENERGY SPLITTING --------------------- #


@dataclass(frozen=True, eq=False)
class ESCoefficients:
    """Energy-splitting surface: every element reflects and refracts.

    Theta = diag(a * exp(j*alpha)), Phi = diag(b * exp(j*beta)) with
    a**2 + b**2 <= 1 element-wise.
    """

    a: np.ndarray
    alpha: np.ndarray
    b: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        a, b = _vector("a", self.a), _vector("b", self.b)
        alpha, beta = _vector("alpha", self.alpha), _vector("beta", self.beta)
        if not (a.shape == b.shape == alpha.shape == beta.shape):
            raise InvalidCoefficientsError("a, alpha, b, beta must share one length")
        if np.any(a < -AMPLITUDE_TOL) or np.any(b < -AMPLITUDE_TOL):
            raise InvalidCoefficientsError("amplitudes must be nonnegative")
        if np.any(a**2 + b**2 > 1.0 + AMPLITUDE_TOL):
            worst = int(np.argmax(a**2 + b**2))
            raise InvalidCoefficientsError(
                f"element {worst}: a^2 + b^2 = {a[worst]**2 + b[worst]**2:.12g} exceeds 1"
            )
        object.__setattr__(self, "a", np.clip(a, 0.0, 1.0))
        object.__setattr__(self, "b", np.clip(b, 0.0, 1.0))
        object.__setattr__(self, "alpha", wrap_phase(alpha))
        object.__setattr__(self, "beta", wrap_phase(beta))

    @classmethod
    def from_complex(cls, reflection, refraction):
        """Build from complex per-element coefficients, rescaling round-off overshoot."""
        reflection = np.asarray(reflection, dtype=complex)
        refraction = np.asarray(refraction, dtype=complex)
        a, b = np.abs(reflection), np.abs(refraction)
        total = np.sqrt(a**2 + b**2)
        scale = np.where(total > 1.0, 1.0 / np.maximum(total, 1.0), 1.0)
        return cls(a=a * scale, alpha=np.angle(reflection), b=b * scale, beta=np.angle(refraction))

    @classmethod
    def uniform(cls, L, amplitude=1 / np.sqrt(2), beta=None):
        """Equal split on every element; zero phases unless ``beta`` is given."""
        beta = np.zeros(L) if beta is None else beta
        return cls(a=np.full(L, amplitude), alpha=np.zeros(L), b=np.full(L, amplitude), beta=beta)

    @property
    def L(self):
        return self.a.shape[0]

    @property
    def reflection(self):
        return self.a * np.exp(1j * self.alpha)

    @property
    def refraction(self):
        return self.b * np.exp(1j * self.beta)

    def to_dict(self):
        return {"kind": "ES", "a": self.a.tolist(), "alpha": self.alpha.tolist(),
                "b": self.b.tolist(), "beta": self.beta.tolist()}


# --------------------- MODE SWITCHING --------------------- #


@dataclass(frozen=True, eq=False)
class MSCoefficients:
    """Mode-switching surface: each element either reflects (1) or refracts (0).

    Theta = A * diag(exp(j*alpha)), Phi = (I - A) * diag(exp(j*beta)).
    """

    mode: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        mode = np.atleast_1d(np.asarray(self.mode))
        if mode.ndim != 1 or not np.all((mode == 0) | (mode == 1)):
            raise InvalidCoefficientsError("mode must be a vector of 0/1 flags")
        alpha, beta = _vector("alpha", self.alpha), _vector("beta", self.beta)
        if not (mode.shape == alpha.shape == beta.shape):
            raise InvalidCoefficientsError("mode, alpha, beta must share one length")
        object.__setattr__(self, "mode", mode.astype(np.int8))
        object.__setattr__(self, "alpha", wrap_phase(alpha))
        object.__setattr__(self, "beta", wrap_phase(beta))

    @property
    def L(self):
        return self.mode.shape[0]

    @property
    def a(self):
        return self.mode.astype(float)

    @property
    def b(self):
        return 1.0 - self.mode.astype(float)

    @property
    def reflection(self):
        return self.a * np.exp(1j * self.alpha)

    @property
    def refraction(self):
        return self.b * np.exp(1j * self.beta)

    def to_dict(self):
        return {"kind": "MS", "mode": self.mode.tolist(), "alpha": self.alpha.tolist(),
                "beta": self.beta.tolist()}


def coefficients_from_dict(data):
    """Inverse of ``to_dict`` for either surface kind."""
    kind = data.get("kind")
    if kind == "ES":
        return ESCoefficients(a=data["a"], alpha=data["alpha"], b=data["b"], beta=data["beta"])
    if kind == "MS":
        return MSCoefficients(mode=data["mode"], alpha=data["alpha"], beta=data["beta"])
    raise InvalidCoefficientsError(f"unknown coefficient kind {kind!r}")


def quantize_phases(coeffs, bits):
    """Snap every phase to the nearest of 2**bits uniform levels."""
    if bits < 1:
        raise ValueError(f"bits must be >= 1, got {bits}")
    levels = 2**bits
    step = _TWO_PI / levels

    def snap(phase):
        return np.mod(np.rint(phase / step), levels) * step

    return dataclasses.replace(coeffs, alpha=snap(coeffs.alpha), beta=snap(coeffs.beta))


# --------------------- EFFECTIVE CHANNELS AND METRICS --------------------- #


@dataclass(frozen=True, eq=False)
class EffectiveChannels:
    h_d: np.ndarray  # M, destination channel h_id^H Phi H_ti
    H_r: np.ndarray  # N x M, SI channel H_tr^H + H_ir^H Theta H_ti


def effective_channels(channels, coeffs):
    """Combine the link matrices with a surface state.

    Args:
        channels: ChannelSet with H_ti (L x M), H_tr (M x N), h_id (L), H_ir (L x N)
        coeffs: ESCoefficients or MSCoefficients of length L

    Returns:
        EffectiveChannels
    """
    L = channels.H_ti.shape[0]
    if coeffs.L != L:
        raise InvalidCoefficientsError(f"coefficients have {coeffs.L} elements, surface has {L}")
    h_d = (channels.h_id.conj() * coeffs.refraction) @ channels.H_ti
    H_r = channels.H_tr.conj().T + channels.H_ir.conj().T @ (coeffs.reflection[:, None] * channels.H_ti)
    return EffectiveChannels(h_d=h_d, H_r=H_r)


def data_rate(eff, w, sigma_d2):
    """log2(1 + |h_d w|^2 / sigma_d2) in bps/Hz."""
    return float(np.log2(1.0 + np.abs(eff.h_d @ w) ** 2 / sigma_d2))


def si_power(eff, w):
    """Frobenius norm of H_r w w^H H_r^H (equals ||H_r w||^2)."""
    v = eff.H_r @ w
    return float(np.linalg.norm(np.outer(v, v.conj()), "fro"))
