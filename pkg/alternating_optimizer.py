"""
Outer alternating loops for rate maximization and SI minimization.

Each outer iteration updates the beamformer, then the surface phases, then
(MS only) the mode vector, and stops once the relative change of the
objective drops below epsilon. The WO baseline keeps the surface frozen at
an equal split with zero phases and only updates the beamformer.

ES runs follow every iteration with a line search along the last surface
move. A beamformer subproblem reported infeasible ends the run as
infeasible; a run that stalls on a failed solve ends as numerical_failure
instead of converged.
"""

import dataclasses
import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

import conic_backend as cb
import defaults
import subproblem_solvers as sp
from channel_model import ConfigError
from ios_surface import ESCoefficients, MSCoefficients, data_rate, effective_channels, si_power

log = logging.getLogger(__name__)

MAXIMIZE_RATE = "maximize_rate"
MINIMIZE_SI = "minimize_si"
SURFACES = ("ES", "MS", "WO")

CONVERGED = "converged"
MAX_ITERS = "max_iters"
INFEASIBLE = "infeasible"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class OptConfig:
    """Algorithm parameters of one optimization run (powers in watts)."""

    objective: str = MAXIMIZE_RATE
    surface: str = "ES"
    P_th: float = math.inf
    R_th: float = 1.0
    epsilon: float = defaults.EPSILON
    max_outer_iters: int = defaults.MAX_OUTER_ITERS
    G: int = defaults.RANDOMIZATIONS
    seed: int = 0
    P_max: float = defaults.P_MAX
    sigma_d2: float = defaults.SIGMA_D2

    def __post_init__(self):
        if self.objective not in (MAXIMIZE_RATE, MINIMIZE_SI):
            raise ConfigError(f"objective must be '{MAXIMIZE_RATE}' or '{MINIMIZE_SI}', got {self.objective!r}")
        if self.surface not in SURFACES:
            raise ConfigError(f"surface must be one of {SURFACES}, got {self.surface!r}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon!r}")
        if not self.P_th >= 0:
            raise ConfigError(f"P_th must be >= 0, got {self.P_th!r}")
        if not self.R_th >= 0:
            raise ConfigError(f"R_th must be >= 0, got {self.R_th!r}")
        if int(self.max_outer_iters) < 1 or int(self.G) < 1:
            raise ConfigError("max_outer_iters and G must be >= 1")
        if not (self.P_max > 0 and self.sigma_d2 > 0):
            raise ConfigError("P_max and sigma_d2 must be > 0")

    @classmethod
    def for_system(cls, system, **kwargs):
        """OptConfig sharing P_max and sigma_d2 with a SystemConfig."""
        return cls(P_max=system.P_max, sigma_d2=system.sigma_d2, **kwargs)

    @property
    def gain_floor(self):
        return (2.0**self.R_th - 1.0) * self.sigma_d2


@dataclass(eq=False)
class OptResult:
    w: np.ndarray
    coeffs: object
    rate: float
    si: float
    objective_trace: list = field(default_factory=list)
    iters: int = 0
    status: str = MAX_ITERS

    def to_dict(self):
        return {
            "w": {"re": self.w.real.tolist(), "im": self.w.imag.tolist()},
            "coeffs": self.coeffs.to_dict(),
            "rate": self.rate,
            "si": self.si,
            "objective_trace": list(self.objective_trace),
            "iters": self.iters,
            "status": self.status,
        }


@dataclass(frozen=True, eq=False)
class Initialization:
    w: np.ndarray
    coeffs: object
    feasible: bool


# --------------------- INITIALIZATION --------------------- #


def initial_coefficients(surface, channels):
    L = channels.dimensions[0]
    if surface == "WO":
        return ESCoefficients.uniform(L)
    beta = sp.aligned_refraction_phases(channels, sp.reference_beam(channels))
    if surface == "ES":
        return ESCoefficients.uniform(L, beta=beta)
    mode = (np.arange(L) % 2 == 0).astype(np.int8)  # even elements reflect
    return MSCoefficients(mode=mode, alpha=np.zeros(L), beta=beta)


def _null_space_beam(H_r, direction, P_max):
    """Full-power beam along ``direction`` projected onto null(H_r), or None."""
    basis = scipy.linalg.null_space(H_r)
    if basis.shape[1] == 0:
        return None
    p = basis @ (basis.conj().T @ direction)
    norm = np.linalg.norm(p)
    if norm <= 1e-12:
        return None
    return math.sqrt(P_max) * p / norm


def default_init(config, channels):
    """Starting beamformer and surface state.

    ES: a = b = 1/sqrt(2), refraction phases co-phasing the destination
    terms; MS: even elements reflect, odd refract, same phases; WO: frozen
    equal split. The beamformer starts at full-power MRT. For rate
    maximization it is scaled down until the SI cap holds, and a full-power
    MRT projected onto the SI null space replaces it when that gives a
    higher rate. For SI minimization the rate floor is checked.

    Returns:
        Initialization; ``feasible`` is False when no usable start exists
    """
    coeffs = initial_coefficients(config.surface, channels)
    eff = effective_channels(channels, coeffs)
    h = eff.h_d
    h_norm = np.linalg.norm(h)
    direction = h.conj() / h_norm if h_norm > 0 else sp.reference_beam(channels)
    w_full = math.sqrt(config.P_max) * direction

    if config.objective == MINIMIZE_SI:
        feasible = abs(h @ w_full) ** 2 >= config.gain_floor
        if not feasible:
            log.warning("Rate floor %.3g bps/Hz unreachable at P_max with the initial surface", config.R_th)
        return Initialization(w=w_full, coeffs=coeffs, feasible=feasible)

    si_full = si_power(eff, w_full)
    if si_full <= config.P_th:
        return Initialization(w=w_full, coeffs=coeffs, feasible=True)
    w = w_full * math.sqrt(config.P_th / si_full) * (1.0 - 1e-12)
    w_null = _null_space_beam(eff.H_r, direction, config.P_max)
    if w_null is not None and si_power(eff, w_null) <= config.P_th \
            and abs(h @ w_null) >= abs(h @ w):
        w = w_null
    feasible = bool(np.any(w != 0))
    if not feasible:
        log.warning("No nonzero beamformer meets P_th=%.3e W", config.P_th)
    return Initialization(w=w, coeffs=coeffs, feasible=feasible)


# --------------------- OUTER LOOPS --------------------- #


def _converged(old, new, epsilon):
    if new == 0.0:
        return old == 0.0
    return abs(new - old) / abs(new) <= epsilon


def _iteration_seed(seed, iteration):
    return int(np.random.SeedSequence([int(seed), iteration]).generate_state(1)[0])


def _gain(channels, coeffs, w):
    return float(abs(effective_channels(channels, coeffs).h_d @ w) ** 2)


def _si(channels, coeffs, w):
    return si_power(effective_channels(channels, coeffs), w)


def _update_modes(config, channels, w, coeffs, iteration):
    """SDR mode selection; the new modes are kept only if they do not regress."""
    sdr = sp.build_sdr_data(channels, w, coeffs)
    seed = _iteration_seed(config.seed, iteration)
    if config.objective == MAXIMIZE_RATE:
        sel = sp.mode_selection_rate(sdr, config.P_th, config.G, seed)
    else:
        sel = sp.mode_selection_si(sdr, config.R_th, config.sigma_d2, config.G, seed)
    if sel.mode is None or not sel.feasible:
        return coeffs
    candidate = dataclasses.replace(coeffs, mode=sel.mode)
    if config.objective == MAXIMIZE_RATE:
        keep = (_gain(channels, candidate, w) >= _gain(channels, coeffs, w)
                and _si(channels, candidate, w) <= config.P_th)
    else:
        keep = (_si(channels, candidate, w) <= _si(channels, coeffs, w)
                and _gain(channels, candidate, w) >= config.gain_floor)
    if not keep:
        log.debug("Iteration %d: mode update rejected", iteration)
        return coeffs
    return candidate


def _step_failure(beam, phase):
    """Run status forced by the failed steps of one iteration, or None.

    An infeasible beamformer subproblem ends the run. A surface subproblem
    reported infeasible only means its tightened surrogate has no better
    point, so it counts as a plain rejection.
    """
    if not beam.accepted and beam.status == cb.INFEASIBLE:
        return INFEASIBLE
    for step in (beam, phase):
        if step is not None and not step.accepted and step.status not in (cb.OPTIMAL, cb.INFEASIBLE):
            return NUMERICAL_FAILURE
    return None


def _restored(config, eff, w):
    """``w`` rescaled onto the SI cap or the rate floor of ``eff``, or None."""
    if config.objective == MAXIMIZE_RATE:
        si = si_power(eff, w)
        return w if si <= config.P_th else w * math.sqrt(config.P_th / si) * (1.0 - 1e-12)
    gain = abs(eff.h_d @ w) ** 2
    if gain >= config.gain_floor:
        return w
    if gain == 0.0:
        return None
    w = w * math.sqrt(config.gain_floor / gain) * (1.0 + 1e-12)
    return w if float(np.real(np.vdot(w, w))) <= config.P_max else None


def _feasible(config, eff, w):
    if float(np.real(np.vdot(w, w))) > config.P_max * (1.0 + 1e-9):
        return False
    if config.objective == MAXIMIZE_RATE:
        return si_power(eff, w) <= config.P_th
    return abs(eff.h_d @ w) ** 2 >= config.gain_floor


def _es_line_search(config, channels, evaluate, beam_step, w, before, after, value):
    """Push an ES surface further along its last move.

    Each trial surface after + s * (after - before) is projected onto
    a**2 + b**2 <= 1 and gets a freshly solved beamformer; s doubles while
    the objective keeps improving on ``value``.

    Returns:
        (w, coeffs, eff, objective) of the best trial, or None
    """
    d_reflection = after.reflection - before.reflection
    d_refraction = after.refraction - before.refraction
    if not (np.any(d_reflection) or np.any(d_refraction)):
        return None
    sign = 1.0 if config.objective == MAXIMIZE_RATE else -1.0
    best = None
    for step in defaults.EXTRAPOLATION_STEPS:
        coeffs = ESCoefficients.from_complex(after.reflection + step * d_reflection,
                                             after.refraction + step * d_refraction)
        eff = effective_channels(channels, coeffs)
        start = _restored(config, eff, w)
        if start is None:
            break
        w_trial = beam_step(eff, start).value
        if not _feasible(config, eff, w_trial):
            break
        trial = evaluate(eff, w_trial)
        if sign * (trial - (value if best is None else best[3])) <= 0.0:
            break
        best = (w_trial, coeffs, eff, trial)
    if best is not None:
        log.debug("ES line search moved to %.10g", best[3])
    return best


def _run(config, channels, evaluate, beam_step, phase_step):
    init = default_init(config, channels)
    w, coeffs = init.w, init.coeffs
    eff = effective_channels(channels, coeffs)
    value = evaluate(eff, w)
    trace = [value]
    if not init.feasible:
        return OptResult(w=w, coeffs=coeffs, rate=data_rate(eff, w, config.sigma_d2),
                         si=si_power(eff, w), objective_trace=trace, iters=0, status=INFEASIBLE)

    status = MAX_ITERS
    iters = 0
    for iteration in range(1, config.max_outer_iters + 1):
        iters = iteration
        before = coeffs
        beam = beam_step(eff, w)
        w = beam.value
        phase = None
        if config.surface != "WO":
            phase = phase_step(channels, w, coeffs)
            coeffs = phase.value
            if config.surface == "MS":
                coeffs = _update_modes(config, channels, w, coeffs, iteration)
            eff = effective_channels(channels, coeffs)
        failure = _step_failure(beam, phase)
        if failure == INFEASIBLE:
            log.warning("%s/%s iteration %d: beamforming subproblem infeasible",
                        config.objective, config.surface, iteration)
            status = INFEASIBLE
            break
        new = evaluate(eff, w)
        if config.surface == "ES":
            jump = _es_line_search(config, channels, evaluate, beam_step, w, before, coeffs, new)
            if jump is not None:
                w, coeffs, eff, new = jump
        trace.append(new)
        log.debug("%s/%s iteration %d: %.10g", config.objective, config.surface, iteration, new)
        if _converged(value, new, config.epsilon):
            status = failure or CONVERGED
            break
        value = new

    log.info("%s/%s finished: %s after %d iterations", config.objective, config.surface, status, iters)
    return OptResult(w=w, coeffs=coeffs, rate=data_rate(eff, w, config.sigma_d2),
                     si=si_power(eff, w), objective_trace=trace, iters=iters, status=status)


def maximize_rate(config, channels):
    """Maximize the destination rate subject to ||w||^2 <= P_max and SI <= P_th."""
    if config.objective != MAXIMIZE_RATE:
        raise ConfigError(f"maximize_rate needs objective '{MAXIMIZE_RATE}'")
    phase_step = sp.es_phase_step_rate if config.surface == "ES" else sp.ms_phase_step_rate
    return _run(
        config, channels,
        evaluate=functools.partial(data_rate, sigma_d2=config.sigma_d2),
        beam_step=functools.partial(sp.beamforming_step_rate, P_max=config.P_max, P_th=config.P_th),
        phase_step=functools.partial(phase_step, P_th=config.P_th),
    )


def minimize_si(config, channels):
    """Minimize SI power subject to ||w||^2 <= P_max and rate >= R_th."""
    if config.objective != MINIMIZE_SI:
        raise ConfigError(f"minimize_si needs objective '{MINIMIZE_SI}'")
    phase_step = sp.es_phase_step_si if config.surface == "ES" else sp.ms_phase_step_si
    return _run(
        config, channels,
        evaluate=si_power,
        beam_step=functools.partial(sp.beamforming_step_si, P_max=config.P_max,
                                    R_th=config.R_th, sigma_d2=config.sigma_d2),
        phase_step=functools.partial(phase_step, R_th=config.R_th, sigma_d2=config.sigma_d2),
    )


def optimize(config, channels):
    """Dispatch on ``config.objective``."""
    if config.objective == MAXIMIZE_RATE:
        return maximize_rate(config, channels)
    return minimize_si(config, channels)
