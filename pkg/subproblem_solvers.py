"""
Convex subproblems of the alternating optimizer.

- Beamforming steps: SCA on |h_d w|^2 (rate side) or with a linearized rate
  floor (SI side)
- ES phase steps: joint (alpha, beta) with a**2 + b**2 <= 1 per element
- MS phase steps: unit modulus relaxed to <= 1, then projected
- MS mode selection: lifted SDR, Gaussian randomization, brute-force oracle

Every step re-evaluates the true objective and constraints of its output and
keeps the previous iterate when the candidate does not improve, so callers
always see monotone progress.
"""

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

import conic_backend as cb
import defaults
from ios_surface import ESCoefficients, MSCoefficients, effective_channels

log = logging.getLogger(__name__)

# Relative tightening of linearized side constraints in phase steps, so the
# solver's round-off lands on the feasible side of the true constraint.
SIDE_MARGIN = 1e-6
_BLENDS = (0.5, 0.1)
_TINY = 1e-300


class LiftConsistencyError(RuntimeError):
    """Lifted SDR data disagrees with direct binary evaluation."""


class EnumerationLimitError(ValueError):
    """Brute-force enumeration requested beyond its size limit."""


@dataclass(frozen=True, eq=False)
class StepResult:
    """Outcome of one block update.

    ``objective`` is the true objective of the block (|h_d w|^2 for rate
    steps, SI power for SI steps) at ``value``; ``surrogate`` is the convex
    model's value there. For SI steps the objective is exact, and
    ``constraint_surrogate`` / ``constraint_value`` carry the linearized and
    true rate-floor left sides.
    """

    value: object
    surrogate: float
    objective: float
    status: str
    accepted: bool = True
    guarded: bool = False
    constraint_surrogate: float = math.nan
    constraint_value: float = math.nan


# --------------------- SHARED ALGEBRA --------------------- #


def hadamard_lift(X, Y):
    """Matrix Z with Tr(diag(v)^H X diag(v) Y) = v^H Z v, i.e. X * Y^T."""
    return np.asarray(X) * np.asarray(Y).T


def quadratic_value(Xi, x):
    return float(np.real(np.vdot(x, Xi @ x)))


def linearized_gain(Xi, x, x_tilde):
    """First-order lower bound of x^H Xi x around x_tilde (Xi Hermitian PSD)."""
    return float(2.0 * np.real(np.vdot(x, Xi @ x_tilde)) - quadratic_value(Xi, x_tilde))


def rate_surrogate(h_d, w, w_tilde):
    """2 Re{w^H h^H h w~} - |h w~|^2, tight at w = w~."""
    s = h_d @ w_tilde
    return float(2.0 * np.real(np.conj(h_d @ w) * s) - abs(s) ** 2)


def aligned_refraction_phases(channels, w):
    """Refraction phases that co-phase every term conj(h_id,l) * (H_ti w)_l."""
    u = channels.H_ti @ w
    return np.angle(channels.h_id) - np.angle(u)


def reference_beam(channels):
    """Leading right singular vector of diag(conj(h_id)) H_ti."""
    Q = channels.h_id.conj()[:, None] * channels.H_ti
    _, _, vh = np.linalg.svd(Q)
    return vh[0].conj()


@dataclass(frozen=True, eq=False)
class _SurfaceTerms:
    """Quadratic data of |h_d w|^2 in the refraction vector and of the SI
    power in the reflection vector, for a fixed beamformer w."""

    u: np.ndarray  # H_ti w
    e: np.ndarray  # H_tr^H w
    Xi1: np.ndarray
    Xi2: np.ndarray
    G: np.ndarray  # N x L, SI = ||e + G alpha||^2
    z2: np.ndarray
    d2: float


def _surface_terms(channels, w, refract_mask=None, reflect_mask=None):
    u = channels.H_ti @ w
    e = channels.H_tr.conj().T @ w
    h = channels.h_id if refract_mask is None else channels.h_id * refract_mask
    H_ir = channels.H_ir if reflect_mask is None else channels.H_ir * reflect_mask[:, None]
    Y = np.outer(u, u.conj())
    Xi1 = hadamard_lift(np.outer(h, h.conj()), Y)
    Xi2 = hadamard_lift(H_ir @ H_ir.conj().T, Y)
    G = H_ir.conj().T * u[None, :]
    z2 = u * (H_ir @ e).conj()
    return _SurfaceTerms(u=u, e=e, Xi1=Xi1, Xi2=Xi2, G=G, z2=z2, d2=float(np.real(np.vdot(e, e))))


def _si_of(terms, alpha):
    r = terms.e + terms.G @ alpha
    return float(np.real(np.vdot(r, r)))


def _si_ceiling(channels, w):
    """Upper bound on the SI power of ``w`` over every surface with |coefficients| <= 1."""
    spread = np.linalg.norm(channels.H_tr) + np.linalg.norm(channels.H_ir) * np.linalg.norm(channels.H_ti)
    return float(np.real(np.vdot(w, w))) * spread**2


def _negligible(si, ceiling):
    return si <= defaults.SI_NEGLIGIBLE * ceiling


def _usable(sol):
    return sol.x is not None and sol.status != cb.INFEASIBLE


def _pad(block, n, start):
    out = np.zeros((block.shape[0], n))
    out[:, start:start + block.shape[1]] = block
    return out


def _first(candidates, check):
    for cand in candidates:
        if check(cand):
            return cand
    return None


# --------------------- BEAMFORMING --------------------- #


def beamforming_step_rate(eff, w_prev, P_max, P_th):
    """One SCA step on max |h_d w|^2 s.t. ||w||^2 <= P_max, ||H_r w||^2 <= P_th.

    Args:
        eff: EffectiveChannels for the current surface
        w_prev: feasible expansion point
        P_max: transmit power budget (W)
        P_th: SI cap (W), ``math.inf`` drops the constraint

    Returns:
        StepResult with the new beamformer
    """
    h = eff.h_d
    prev_gain = abs(h @ w_prev) ** 2
    h_norm2 = float(np.real(np.vdot(h, h)))
    if h_norm2 == 0.0:
        return StepResult(w_prev, 0.0, 0.0, cb.OPTIMAL, accepted=False)

    s = h @ w_prev
    guarded = abs(s) ** 2 <= 1e-24 * h_norm2 * P_max
    if guarded:
        log.info("Beamforming expansion point has zero gain, restarting from the MRT direction")
        s = math.sqrt(h_norm2 * P_max)
    c = h.conj() * s
    M = h.shape[0]
    root = math.sqrt(P_max)
    cons = [cb.QuadraticConstraint.norm(np.eye(2 * M), 1.0, name="power")]
    if math.isfinite(P_th):
        cons.append(cb.QuadraticConstraint.norm(cb.embed_matrix(eff.H_r) * root, P_th, name="si"))
    sol = cb.solve_qcqp(cb.ConicProblem(cb.embed_vector(c) * root, "maximize", cons,
                                        name="beamforming_rate"))
    if not _usable(sol):
        return StepResult(w_prev, rate_surrogate(h, w_prev, w_prev), prev_gain, sol.status, accepted=False)

    w = root * cb.unembed_vector(sol.x)
    power = float(np.real(np.vdot(w, w)))
    si = float(np.linalg.norm(eff.H_r @ w) ** 2)
    factor = 1.0
    if power > P_max:
        factor = min(factor, math.sqrt(P_max / power))
    if si > P_th:
        factor = min(factor, math.sqrt(P_th / si))
    w = w * factor
    gain = abs(h @ w) ** 2
    surrogate = float(2.0 * np.real(np.vdot(w, c)) - abs(s) ** 2)
    if gain < prev_gain:
        log.debug("Beamforming rate step rejected (%.6e < %.6e)", gain, prev_gain)
        return StepResult(w_prev, rate_surrogate(h, w_prev, w_prev), prev_gain, sol.status,
                          accepted=False, guarded=guarded)
    return StepResult(w, surrogate, gain, sol.status, guarded=guarded)


def beamforming_step_si(eff, w_prev, P_max, R_th, sigma_d2):
    """One SCA step on min ||H_r w||^2 s.t. ||w||^2 <= P_max and a linearized
    rate floor 2 Re{w^H h^H h w~} >= |h w~|^2 + (2**R_th - 1) sigma_d2."""
    h, H_r = eff.h_d, eff.H_r
    floor = (2.0**R_th - 1.0) * sigma_d2
    si_prev = float(np.linalg.norm(H_r @ w_prev) ** 2)
    gain_prev = abs(h @ w_prev) ** 2
    if floor <= 0.0:
        w = np.zeros_like(w_prev)
        return StepResult(w, 0.0, 0.0, cb.OPTIMAL, constraint_surrogate=0.0, constraint_value=0.0)
    if si_prev == 0.0:
        return StepResult(w_prev, 0.0, 0.0, cb.OPTIMAL, accepted=False,
                          constraint_surrogate=gain_prev, constraint_value=gain_prev)
    if _negligible(si_prev, P_max * float(np.linalg.norm(H_r) ** 2)):
        log.debug("SI %.3e W is numerically zero, beamformer kept", si_prev)
        return StepResult(w_prev, si_prev, si_prev, cb.OPTIMAL, accepted=False,
                          constraint_surrogate=gain_prev, constraint_value=gain_prev)

    h_norm2 = float(np.real(np.vdot(h, h)))
    if h_norm2 * P_max < floor:
        log.warning("Rate floor %.3e W unreachable at P_max (best gain %.3e W)", floor, h_norm2 * P_max)
        return StepResult(w_prev, si_prev, si_prev, cb.INFEASIBLE, accepted=False)
    w_tilde, guarded = w_prev, False
    if abs(h @ w_prev) ** 2 <= 1e-24 * h_norm2 * P_max:
        log.info("SI beamforming expansion point has zero gain, restarting from minimum-power MRT")
        w_tilde, guarded = h.conj() * math.sqrt(floor) / h_norm2, True
    s = h @ w_tilde
    c = h.conj() * s

    M = h.shape[0]
    n = 2 * M + 1
    root = math.sqrt(P_max)
    t_scale = max(si_prev, _TINY)
    epigraph = np.zeros(n)
    epigraph[-1] = -1.0
    cons = [
        cb.QuadraticConstraint(F=_pad(cb.embed_matrix(H_r) * root / math.sqrt(t_scale), n, 0),
                               g=np.zeros(2 * H_r.shape[0]), q=epigraph, bound=0.0, name="si_epigraph"),
        cb.QuadraticConstraint.norm(_pad(np.eye(2 * M), n, 0), 1.0, name="power"),
        cb.QuadraticConstraint.linear(np.append(-2.0 * root * cb.embed_vector(c), 0.0),
                                      -(abs(s) ** 2 + floor), name="rate_floor"),
    ]
    objective = np.zeros(n)
    objective[-1] = 1.0
    sol = cb.solve_qcqp(cb.ConicProblem(objective, "minimize", cons, name="beamforming_si"))
    if not _usable(sol):
        return StepResult(w_prev, si_prev, si_prev, sol.status, accepted=False, guarded=guarded,
                          constraint_value=gain_prev)

    w = root * cb.unembed_vector(sol.x[:2 * M])
    gain = abs(h @ w) ** 2
    if 0.0 < gain < floor:
        w = w * math.sqrt(floor / gain) * (1.0 + 1e-12)
        gain = abs(h @ w) ** 2
    si = float(np.linalg.norm(H_r @ w) ** 2)
    power = float(np.real(np.vdot(w, w)))
    linearized = float(2.0 * np.real(np.vdot(w, c)) - abs(s) ** 2)
    if gain < floor or power > P_max * (1.0 + 1e-12) or si > si_prev:
        log.debug("Beamforming SI step rejected (si %.6e vs %.6e)", si, si_prev)
        return StepResult(w_prev, si_prev, si_prev, sol.status, accepted=False, guarded=guarded,
                          constraint_surrogate=gain_prev, constraint_value=gain_prev)
    return StepResult(w, si, si, sol.status, guarded=guarded,
                      constraint_surrogate=linearized, constraint_value=gain)


# --------------------- ENERGY-SPLITTING PHASES --------------------- #


def _es_groups(L):
    idx = np.arange(L)
    return np.stack([idx, L + idx, 2 * L + idx, 3 * L + idx], axis=1)


def _expansion_refraction(terms, prev_refraction, channels, w):
    """Refraction expansion point and whether the zero-expansion guard fired."""
    c = terms.Xi1 @ prev_refraction
    if np.linalg.norm(c) > 1e-30 * max(np.linalg.norm(terms.Xi1), _TINY):
        return prev_refraction, False
    log.info("Refraction expansion point gives zero gain, restarting from aligned phases")
    return np.exp(1j * aligned_refraction_phases(channels, w)), True


def _blend_es(prev, cand, s):
    return ESCoefficients.from_complex(prev.reflection + s * (cand.reflection - prev.reflection),
                                       prev.refraction + s * (cand.refraction - prev.refraction))


def es_phase_step_rate(channels, w, es_prev, P_th):
    """Update (alpha, beta) of an ES surface to raise |h_d w|^2 under the SI cap."""
    L = es_prev.L
    terms = _surface_terms(channels, w)
    prev_gain = quadratic_value(terms.Xi1, es_prev.refraction)
    if not np.any(terms.Xi1):
        return StepResult(es_prev, 0.0, 0.0, cb.OPTIMAL, accepted=False)
    beta_t, guarded = _expansion_refraction(terms, es_prev.refraction, channels, w)
    c = terms.Xi1 @ beta_t

    n = 4 * L
    objective = np.zeros(n)
    objective[2 * L:] = cb.embed_vector(c)
    cons = [cb.ElementNormConstraint(_es_groups(L), 1.0, name="split")]
    if math.isfinite(P_th):
        cons.append(cb.QuadraticConstraint.norm(_pad(cb.embed_matrix(terms.G), n, 0),
                                                P_th * (1.0 - SIDE_MARGIN),
                                                g=cb.embed_vector(terms.e), name="si"))
    sol = cb.solve_qcqp(cb.ConicProblem(objective, "maximize", cons, name="es_phase_rate"))
    if not _usable(sol):
        return StepResult(es_prev, prev_gain, prev_gain, sol.status, accepted=False, guarded=guarded)

    cand = ESCoefficients.from_complex(cb.unembed_vector(sol.x[:2 * L]),
                                       cb.unembed_vector(sol.x[2 * L:]))

    def ok(coeffs):
        return (quadratic_value(terms.Xi1, coeffs.refraction) >= prev_gain
                and _si_of(terms, coeffs.reflection) <= P_th)

    chosen = _first([cand] + [_blend_es(es_prev, cand, s) for s in _BLENDS], ok)
    if chosen is None:
        log.debug("ES rate phase step rejected")
        return StepResult(es_prev, prev_gain, prev_gain, sol.status, accepted=False, guarded=guarded)
    gain = quadratic_value(terms.Xi1, chosen.refraction)
    return StepResult(chosen, linearized_gain(terms.Xi1, chosen.refraction, beta_t), gain,
                      sol.status, guarded=guarded)


def es_phase_step_si(channels, w, es_prev, R_th, sigma_d2):
    """Update (alpha, beta) of an ES surface to lower SI under a linearized rate floor."""
    L = es_prev.L
    terms = _surface_terms(channels, w)
    floor = (2.0**R_th - 1.0) * sigma_d2
    si_prev = _si_of(terms, es_prev.reflection)
    gain_prev = quadratic_value(terms.Xi1, es_prev.refraction)
    if si_prev == 0.0 or _negligible(si_prev, _si_ceiling(channels, w)):
        return StepResult(es_prev, si_prev, si_prev, cb.OPTIMAL, accepted=False,
                          constraint_surrogate=gain_prev, constraint_value=gain_prev)

    n = 4 * L + 1
    epigraph = np.zeros(n)
    epigraph[-1] = -1.0
    t_scale = si_prev
    cons = [
        cb.ElementNormConstraint(_es_groups(L), 1.0, name="split"),
        cb.QuadraticConstraint(F=_pad(cb.embed_matrix(terms.G), n, 0) / math.sqrt(t_scale),
                               g=cb.embed_vector(terms.e) / math.sqrt(t_scale),
                               q=epigraph, bound=0.0, name="si_epigraph"),
    ]
    beta_t, guarded = es_prev.refraction, False
    if floor > 0.0:
        beta_t, guarded = _expansion_refraction(terms, es_prev.refraction, channels, w)
        c = terms.Xi1 @ beta_t
        q = np.zeros(n)
        q[2 * L:4 * L] = -2.0 * cb.embed_vector(c)
        rhs = quadratic_value(terms.Xi1, beta_t) + floor * (1.0 + SIDE_MARGIN)
        cons.append(cb.QuadraticConstraint.linear(q, -rhs, name="rate_floor"))
    objective = np.zeros(n)
    objective[-1] = 1.0
    sol = cb.solve_qcqp(cb.ConicProblem(objective, "minimize", cons, name="es_phase_si"))
    if not _usable(sol):
        return StepResult(es_prev, si_prev, si_prev, sol.status, accepted=False, guarded=guarded,
                          constraint_value=gain_prev)

    cand = ESCoefficients.from_complex(cb.unembed_vector(sol.x[:2 * L]),
                                       cb.unembed_vector(sol.x[2 * L:4 * L]))

    def ok(coeffs):
        return (_si_of(terms, coeffs.reflection) <= si_prev
                and quadratic_value(terms.Xi1, coeffs.refraction) >= floor)

    chosen = _first([cand] + [_blend_es(es_prev, cand, s) for s in _BLENDS], ok)
    if chosen is None:
        log.debug("ES SI phase step rejected")
        return StepResult(es_prev, si_prev, si_prev, sol.status, accepted=False, guarded=guarded,
                          constraint_surrogate=linearized_gain(terms.Xi1, es_prev.refraction, beta_t),
                          constraint_value=gain_prev)
    si = _si_of(terms, chosen.reflection)
    return StepResult(chosen, si, si, sol.status, guarded=guarded,
                      constraint_surrogate=linearized_gain(terms.Xi1, chosen.refraction, beta_t),
                      constraint_value=quadratic_value(terms.Xi1, chosen.refraction))


# --------------------- MODE-SWITCHING PHASES --------------------- #


def _ms_groups(L, start):
    idx = np.arange(L)
    return np.stack([start + idx, start + L + idx], axis=1)


def _project_unit(z, prev_phase):
    """Phase extraction onto the unit circle; near-zero entries keep their old phase."""
    return np.where(np.abs(z) > 1e-9, np.angle(z), prev_phase)


@dataclass(frozen=True, eq=False)
class _RelaxedMS:
    alpha: np.ndarray
    beta: np.ndarray
    status: str


def _solve_ms(L, objective, sense, cons, name):
    cons = [cb.ElementNormConstraint(_ms_groups(L, 0), 1.0, name="reflect_modulus"),
            cb.ElementNormConstraint(_ms_groups(L, 2 * L), 1.0, name="refract_modulus")] + cons
    sol = cb.solve_qcqp(cb.ConicProblem(objective, sense, cons, name=name))
    if not _usable(sol):
        return None, sol.status
    return _RelaxedMS(alpha=cb.unembed_vector(sol.x[:2 * L]),
                      beta=cb.unembed_vector(sol.x[2 * L:4 * L]), status=sol.status), sol.status


def ms_phase_step_rate(channels, w, ms_prev, P_th):
    """Update MS phases to raise |h_d w|^2 with the mode vector held fixed.

    Only beta enters the objective and only alpha the SI cap, so the two
    projected blocks are accepted independently.
    """
    L = ms_prev.L
    terms = _surface_terms(channels, w, refract_mask=ms_prev.b, reflect_mask=ms_prev.a)
    beta_prev = np.exp(1j * ms_prev.beta)
    prev_gain = quadratic_value(terms.Xi1, beta_prev)
    if not np.any(terms.Xi1):
        return StepResult(ms_prev, 0.0, 0.0, cb.OPTIMAL, accepted=False)
    beta_t, guarded = _expansion_refraction(terms, beta_prev, channels, w)
    c = terms.Xi1 @ beta_t

    n = 4 * L
    objective = np.zeros(n)
    objective[2 * L:] = cb.embed_vector(c)
    cons = []
    if math.isfinite(P_th):
        cons.append(cb.QuadraticConstraint.norm(_pad(cb.embed_matrix(terms.G), n, 0),
                                                P_th * (1.0 - SIDE_MARGIN),
                                                g=cb.embed_vector(terms.e), name="si"))
    relaxed, status = _solve_ms(L, objective, "maximize", cons, "ms_phase_rate")
    if relaxed is None:
        return StepResult(ms_prev, prev_gain, prev_gain, status, accepted=False, guarded=guarded)

    beta_new = _project_unit(relaxed.beta, ms_prev.beta)
    alpha_new = _project_unit(relaxed.alpha, ms_prev.alpha)
    gain_new = quadratic_value(terms.Xi1, np.exp(1j * beta_new))
    take_beta = gain_new >= prev_gain
    take_alpha = _si_of(terms, np.exp(1j * alpha_new)) <= P_th
    beta = beta_new if take_beta else ms_prev.beta
    alpha = alpha_new if take_alpha else ms_prev.alpha
    accepted = take_beta or take_alpha
    chosen = MSCoefficients(mode=ms_prev.mode, alpha=alpha, beta=beta)
    gain = quadratic_value(terms.Xi1, np.exp(1j * chosen.beta))
    if not accepted:
        log.debug("MS rate phase step rejected after projection")
    return StepResult(chosen, linearized_gain(terms.Xi1, np.exp(1j * chosen.beta), beta_t), gain,
                      status, accepted=accepted, guarded=guarded)


def ms_phase_step_si(channels, w, ms_prev, R_th, sigma_d2):
    """Update MS phases to lower SI with a linearized rate floor, modes fixed."""
    L = ms_prev.L
    terms = _surface_terms(channels, w, refract_mask=ms_prev.b, reflect_mask=ms_prev.a)
    floor = (2.0**R_th - 1.0) * sigma_d2
    alpha_prev = np.exp(1j * ms_prev.alpha)
    beta_prev = np.exp(1j * ms_prev.beta)
    si_prev = _si_of(terms, alpha_prev)
    gain_prev = quadratic_value(terms.Xi1, beta_prev)
    if si_prev == 0.0 or _negligible(si_prev, _si_ceiling(channels, w)):
        return StepResult(ms_prev, si_prev, si_prev, cb.OPTIMAL, accepted=False,
                          constraint_surrogate=gain_prev, constraint_value=gain_prev)

    n = 4 * L + 1
    epigraph = np.zeros(n)
    epigraph[-1] = -1.0
    cons = [cb.QuadraticConstraint(F=_pad(cb.embed_matrix(terms.G), n, 0) / math.sqrt(si_prev),
                                   g=cb.embed_vector(terms.e) / math.sqrt(si_prev),
                                   q=epigraph, bound=0.0, name="si_epigraph")]
    beta_t, guarded = beta_prev, False
    if floor > 0.0 and np.any(terms.Xi1):
        beta_t, guarded = _expansion_refraction(terms, beta_prev, channels, w)
        q = np.zeros(n)
        q[2 * L:4 * L] = -2.0 * cb.embed_vector(terms.Xi1 @ beta_t)
        rhs = quadratic_value(terms.Xi1, beta_t) + floor * (1.0 + SIDE_MARGIN)
        cons.append(cb.QuadraticConstraint.linear(q, -rhs, name="rate_floor"))
    objective = np.zeros(n)
    objective[-1] = 1.0
    relaxed, status = _solve_ms(L, objective, "minimize", cons, "ms_phase_si")
    if relaxed is None:
        return StepResult(ms_prev, si_prev, si_prev, status, accepted=False, guarded=guarded,
                          constraint_value=gain_prev)

    alpha_new = _project_unit(relaxed.alpha, ms_prev.alpha)
    beta_new = _project_unit(relaxed.beta, ms_prev.beta)
    take_alpha = _si_of(terms, np.exp(1j * alpha_new)) <= si_prev
    take_beta = quadratic_value(terms.Xi1, np.exp(1j * beta_new)) >= floor
    alpha = alpha_new if take_alpha else ms_prev.alpha
    beta = beta_new if take_beta else ms_prev.beta
    accepted = take_alpha or take_beta
    chosen = MSCoefficients(mode=ms_prev.mode, alpha=alpha, beta=beta)
    si = _si_of(terms, np.exp(1j * chosen.alpha))
    refraction = np.exp(1j * chosen.beta)
    return StepResult(chosen, si, si, status, accepted=accepted, guarded=guarded,
                      constraint_surrogate=linearized_gain(terms.Xi1, refraction, beta_t),
                      constraint_value=quadratic_value(terms.Xi1, refraction))


# --------------------- SDR MODE SELECTION --------------------- #


def direct_gain(channels, w, mode, alpha, beta):
    """|h_d w|^2 evaluated through the effective channels."""
    eff = effective_channels(channels, MSCoefficients(mode=mode, alpha=alpha, beta=beta))
    return float(abs(eff.h_d @ w) ** 2)


def direct_si(channels, w, mode, alpha, beta):
    """||H_r w||^2 evaluated through the effective channels."""
    eff = effective_channels(channels, MSCoefficients(mode=mode, alpha=alpha, beta=beta))
    return float(np.linalg.norm(eff.H_r @ w) ** 2)


def lift(a):
    """b = 2a - 1, x = [b; 1], X = x x^T."""
    x = np.append(2.0 * np.asarray(a, dtype=float) - 1.0, 1.0)
    return np.outer(x, x)


@dataclass(frozen=True, eq=False)
class SDRData:
    """Binary quadratic data of the mode-selection problem for fixed w and phases.

    gain(a) = a^T Xi1 a - 2 Re(a^T w1) + d1 and
    si(a) = a^T Xi2 a + 2 Re(a^T w2) + d2, with the bordered lifts
    Xi1p = [[Xi1, h], [h^T, 0]] and Xi2p = [[Xi2, g], [g^T, 0]] so that
    1/4 Tr(Xi1p X) + c1 = gain(a) and 1/4 Tr(Xi2p X) + c2 = si(a).
    """

    U1: np.ndarray
    V1: np.ndarray
    U2: np.ndarray
    V2: np.ndarray
    w1: np.ndarray
    W2: np.ndarray
    w2: np.ndarray
    d1: float
    d2: float
    Xi1: np.ndarray
    Xi2: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    h: np.ndarray
    g: np.ndarray
    Xi1p: np.ndarray
    Xi2p: np.ndarray
    c1: float
    c2: float

    @property
    def L(self):
        return self.Xi1.shape[0]

    def gain(self, a):
        """|h_d w|^2 for one mode vector (L,) or a batch (G, L)."""
        a = np.asarray(a, dtype=float)
        quad = np.einsum("...i,ij,...j->...", a, self.Xi1, a)
        return quad - 2.0 * a @ self.w1.real + self.d1

    def si(self, a):
        a = np.asarray(a, dtype=float)
        quad = np.einsum("...i,ij,...j->...", a, self.Xi2, a)
        return quad + 2.0 * a @ self.w2.real + self.d2

    def lifted_gain(self, X):
        return 0.25 * float(np.sum(self.Xi1p * X)) + self.c1

    def lifted_si(self, X):
        return 0.25 * float(np.sum(self.Xi2p * X)) + self.c2

    def to_dict(self):
        out = {}
        for name, value in self.__dict__.items():
            if isinstance(value, np.ndarray) and np.iscomplexobj(value):
                out[name] = {"re": value.real.tolist(), "im": value.imag.tolist()}
            elif isinstance(value, np.ndarray):
                out[name] = value.tolist()
            else:
                out[name] = value
        return out


def dump_sdr_data(sdr, path):
    with open(path, "w") as f:
        json.dump(sdr.to_dict(), f)


def _bordered(Xi, v):
    L = Xi.shape[0]
    out = np.zeros((L + 1, L + 1))
    out[:L, :L] = Xi
    out[:L, L] = v
    out[L, :L] = v
    return out


def build_sdr_data(channels, w, ms_phases, verify=None, seed=0):
    """Assemble mode-selection data from the current beamformer and MS phases.

    Args:
        channels: ChannelSet
        w: beamformer (M,)
        ms_phases: anything with ``alpha`` and ``beta`` arrays (e.g. MSCoefficients)
        verify: check the lift against direct evaluation on 16 random mode
            vectors; defaults to on when DEBUG logging is enabled
        seed: seed of the verification draws

    Raises:
        LiftConsistencyError: lifted and direct values disagree
    """
    L = channels.H_ti.shape[0]
    alpha, beta = np.asarray(ms_phases.alpha, dtype=float), np.asarray(ms_phases.beta, dtype=float)
    if alpha.shape != (L,) or beta.shape != (L,):
        raise ValueError(f"dimension mismatch: phases {alpha.shape}/{beta.shape}, surface has {L}")
    u = channels.H_ti @ w
    e = channels.H_tr.conj().T @ w
    refr = np.exp(1j * beta) * u
    refl = np.exp(1j * alpha) * u

    U1 = np.outer(channels.h_id, channels.h_id.conj())
    V1 = np.outer(refr, refr.conj())
    r = channels.h_id.conj() * refr
    total = r.sum()
    w1 = r * np.conj(total)
    d1 = float(abs(total) ** 2)

    U2 = channels.H_ir @ channels.H_ir.conj().T
    V2 = np.outer(refl, refl.conj())
    W2 = np.outer(refl, (channels.H_ir @ e).conj())
    w2 = np.diag(W2).copy()
    d2 = float(np.real(np.vdot(e, e)))

    Xi1 = np.real(hadamard_lift(U1, V1))
    Xi2 = np.real(hadamard_lift(U2, V2))
    Xi1, Xi2 = 0.5 * (Xi1 + Xi1.T), 0.5 * (Xi2 + Xi2.T)
    h1, h2 = Xi1.sum(axis=1), Xi2.sum(axis=1)
    h = h1 - 2.0 * w1.real
    g = h2 + 2.0 * w2.real
    c1 = 0.25 * float(Xi1.sum()) - float(w1.real.sum()) + d1
    c2 = 0.25 * float(Xi2.sum()) + float(w2.real.sum()) + d2

    sdr = SDRData(U1=U1, V1=V1, U2=U2, V2=V2, w1=w1, W2=W2, w2=w2, d1=d1, d2=d2,
                  Xi1=Xi1, Xi2=Xi2, h1=h1, h2=h2, h=h, g=g,
                  Xi1p=_bordered(Xi1, h), Xi2p=_bordered(Xi2, g), c1=c1, c2=c2)

    if verify is None:
        verify = log.isEnabledFor(logging.DEBUG)
    if verify:
        verify_lift(sdr, channels, w, alpha, beta,
                    np.random.default_rng(seed).integers(0, 2, size=(16, L)))
    return sdr


def verify_lift(sdr, channels, w, alpha, beta, modes, rtol=1e-9):
    """Compare lifted values against effective-channel evaluation for each mode row."""
    for a in np.atleast_2d(modes):
        X = lift(a)
        pairs = ((sdr.lifted_gain(X), direct_gain(channels, w, a, alpha, beta), "gain"),
                 (sdr.lifted_si(X), direct_si(channels, w, a, alpha, beta), "si"))
        for lifted, direct, what in pairs:
            scale = max(abs(direct), abs(sdr.d1), abs(sdr.d2), _TINY)
            if abs(lifted - direct) > rtol * scale:
                raise LiftConsistencyError(
                    f"{what} lift mismatch at a={a.astype(int).tolist()}: {lifted!r} vs {direct!r}")


@dataclass(frozen=True)
class SideConstraint:
    """Side constraint of mode selection.

    ``si_cap``: SI power <= bound while maximizing |h_d w|^2.
    ``gain_floor``: |h_d w|^2 >= bound while minimizing SI.
    """

    kind: str
    bound: float

    @classmethod
    def si_cap(cls, P_th):
        return cls("si_cap", float(P_th))

    @classmethod
    def gain_floor(cls, R_th, sigma_d2):
        return cls("gain_floor", (2.0**R_th - 1.0) * sigma_d2)

    def violation(self, sdr, modes):
        if self.kind == "si_cap":
            return np.maximum(sdr.si(modes) - self.bound, 0.0)
        return np.maximum(self.bound - sdr.gain(modes), 0.0)

    def objective(self, sdr, modes):
        """Objective values oriented for maximization."""
        return sdr.gain(modes) if self.kind == "si_cap" else -sdr.si(modes)


@dataclass(frozen=True, eq=False)
class ModeSelection:
    mode: np.ndarray
    objective: float  # |h_d w|^2 (si_cap) or SI power (gain_floor)
    feasible: bool
    relaxation_value: float
    status: str


def gaussian_candidates(X, G, rng):
    """Sign vectors of G draws from N(0, X), flipped so the last entry is +1."""
    eigval, eigvec = np.linalg.eigh(0.5 * (X + X.T))
    root = eigvec * np.sqrt(np.clip(eigval, 0.0, None))
    xi = rng.standard_normal((G, X.shape[0])) @ root.T
    signs = np.where(xi >= 0.0, 1.0, -1.0)
    return signs * signs[:, -1:]


def _pick(sdr, constraint, modes, relaxation_value, status):
    """Best feasible row of ``modes`` (lowest index on ties), else least violation."""
    values = constraint.objective(sdr, modes)
    violation = constraint.violation(sdr, modes)
    tol = defaults.FEASIBILITY_TOL * max(abs(constraint.bound), _TINY) if math.isfinite(constraint.bound) else 0.0
    feasible = violation <= tol
    if np.any(feasible):
        idx = int(np.argmax(np.where(feasible, values, -np.inf)))
    else:
        idx = int(np.argmin(violation))
        log.warning("No feasible mode candidate, returning least violation (%.3e)", violation[idx])
    mode = modes[idx].astype(np.int8)
    value = float(values[idx]) if constraint.kind == "si_cap" else float(-values[idx])
    return ModeSelection(mode=mode, objective=value, feasible=bool(feasible[idx]),
                         relaxation_value=relaxation_value, status=status)


def _select_by_sdr(sdr, constraint, G, seed):
    L = sdr.L
    trace = []
    if constraint.kind == "si_cap":
        C, sense, const = 0.25 * sdr.Xi1p, "maximize", sdr.c1
        if math.isfinite(constraint.bound):
            trace.append(cb.TraceConstraint(0.25 * sdr.Xi2p, constraint.bound - sdr.c2, "<=", name="si_cap"))
    else:
        C, sense, const = 0.25 * sdr.Xi2p, "minimize", sdr.c2
        if constraint.bound > 0.0:
            trace.append(cb.TraceConstraint(0.25 * sdr.Xi1p, constraint.bound - sdr.c1, ">=", name="gain_floor"))
    problem = cb.ConicProblem(C, sense, psd=True, diag_value=np.ones(L + 1),
                              trace_constraints=trace, name=f"mode_selection_{constraint.kind}")
    sol = cb.solve_sdp(problem)
    if sol.x is None or sol.status == cb.INFEASIBLE:
        log.warning("Mode-selection SDP returned %s", sol.status)
        return ModeSelection(mode=None, objective=math.nan, feasible=False,
                             relaxation_value=math.nan, status=sol.status)
    signs = gaussian_candidates(sol.x, G, np.random.default_rng(seed))
    modes = (signs[:, :L] + 1.0) / 2.0
    return _pick(sdr, constraint, modes, sol.value + const, sol.status)


def mode_selection_rate(sdr, P_th, G=defaults.RANDOMIZATIONS, seed=0):
    """Mode vector maximizing |h_d w|^2 subject to SI <= P_th (SDR + randomization)."""
    return _select_by_sdr(sdr, SideConstraint.si_cap(P_th), G, seed)


def mode_selection_si(sdr, R_th, sigma_d2, G=defaults.RANDOMIZATIONS, seed=0):
    """Mode vector minimizing SI subject to the rate floor (SDR + randomization)."""
    return _select_by_sdr(sdr, SideConstraint.gain_floor(R_th, sigma_d2), G, seed)


def all_modes(L):
    """Every vector of {0,1}^L in lexicographic order, one per row."""
    return ((np.arange(2**L)[:, None] >> np.arange(L - 1, -1, -1)) & 1).astype(float)


def mode_selection_bruteforce(sdr, constraint, limit=defaults.BRUTEFORCE_LIMIT):
    """Exact mode selection by enumerating all 2**L vectors."""
    if sdr.L > limit:
        raise EnumerationLimitError(f"L={sdr.L} exceeds the enumeration limit {limit}")
    return _pick(sdr, constraint, all_modes(sdr.L), math.nan, cb.OPTIMAL)
