"""Tests for initialization and the outer alternating loops."""

import dataclasses
import functools
import math
from unittest.mock import patch

import numpy as np
import pytest

import alternating_optimizer as ao
import conic_backend as cb
import subproblem_solvers as sp
from channel_model import ConfigError, SystemConfig, build_geometry, dbm_to_watt, sample_channels
from ios_surface import ESCoefficients, MSCoefficients, data_rate, effective_channels, si_power


def _make_config(system, **kwargs):
    return ao.OptConfig.for_system(system, **kwargs)


def _monotone(trace, increasing):
    diffs = np.diff(np.asarray(trace))
    scale = max(abs(v) for v in trace)
    return np.all(diffs >= -1e-9 * scale) if increasing else np.all(diffs <= 1e-9 * scale)


# --------------------- CONFIG --------------------- #


def test_config_validation():
    with pytest.raises(ConfigError, match="epsilon"):
        ao.OptConfig(epsilon=0.0)
    with pytest.raises(ConfigError, match="surface"):
        ao.OptConfig(surface="XX")
    with pytest.raises(ConfigError, match="objective"):
        ao.OptConfig(objective="maximize_snr")
    with pytest.raises(ConfigError, match="R_th"):
        ao.OptConfig(R_th=-1.0)


def test_config_defaults():
    """epsilon 1e-5, G = 1000, 100 outer iterations."""
    cfg = ao.OptConfig()
    assert cfg.epsilon == 1e-5
    assert cfg.G == 1000
    assert cfg.max_outer_iters == 100
    assert cfg.P_th == math.inf


def test_gain_floor():
    cfg = ao.OptConfig(objective=ao.MINIMIZE_SI, R_th=2.0, sigma_d2=1e-11)
    assert cfg.gain_floor == pytest.approx(3e-11)


def test_wrong_objective_rejected(system, channels):
    with pytest.raises(ConfigError):
        ao.maximize_rate(_make_config(system, objective=ao.MINIMIZE_SI), channels)
    with pytest.raises(ConfigError):
        ao.minimize_si(_make_config(system), channels)


# --------------------- INITIALIZATION --------------------- #


def test_es_init_single_element(make_channels):
    """L=1 ES -> a = b = 1/sqrt(2)."""
    es = ao.initial_coefficients("ES", make_channels(1, 2, 1))
    assert isinstance(es, ESCoefficients)
    assert es.a[0] == pytest.approx(1 / math.sqrt(2))
    assert es.b[0] == pytest.approx(1 / math.sqrt(2))


def test_ms_init_alternates_modes(make_channels):
    ms = ao.initial_coefficients("MS", make_channels(5, 2, 1))
    assert isinstance(ms, MSCoefficients)
    np.testing.assert_array_equal(ms.mode, [1, 0, 1, 0, 1])
    np.testing.assert_array_equal(ms.alpha, 0.0)


def test_wo_init_zero_phases(make_channels):
    wo = ao.initial_coefficients("WO", make_channels(4, 2, 1))
    np.testing.assert_array_equal(wo.beta, 0.0)
    np.testing.assert_allclose(wo.b, 1 / math.sqrt(2))


def test_init_without_si_cap_is_full_power_mrt(system, channels):
    """P_th = inf -> w0 = sqrt(P_max) h_d^H / ||h_d||."""
    cfg = _make_config(system, surface="ES")
    init = ao.default_init(cfg, channels)
    h = effective_channels(channels, init.coeffs).h_d
    assert init.feasible
    np.testing.assert_allclose(init.w, math.sqrt(system.P_max) * h.conj() / np.linalg.norm(h), rtol=1e-12)


def test_init_meets_si_cap(system, channels):
    cfg = _make_config(system, surface="ES", P_th=dbm_to_watt(-74))
    init = ao.default_init(cfg, channels)
    assert init.feasible
    assert si_power(effective_channels(channels, init.coeffs), init.w) <= cfg.P_th
    assert np.linalg.norm(init.w) ** 2 <= system.P_max * (1 + 1e-12)


def test_init_infeasible_without_null_space():
    """M = N = 1 with P_th = 0: no nonzero beam, flagged infeasible."""
    system = SystemConfig(M=1, N=1, L=4)
    ch = sample_channels(build_geometry(system), system, seed=0)
    cfg = _make_config(system, surface="ES", P_th=0.0)
    init = ao.default_init(cfg, ch)
    assert not init.feasible
    np.testing.assert_array_equal(init.w, 0.0)
    result = ao.maximize_rate(cfg, ch)
    assert result.status == ao.INFEASIBLE
    assert result.iters == 0


def test_converged_rule():
    """Relative change against the new value; 0 -> 0 counts as converged."""
    assert ao._converged(1.0, 1.0 + 1e-6, 1e-5)
    assert not ao._converged(1.0, 1.1, 1e-5)
    assert ao._converged(0.0, 0.0, 1e-5)
    assert not ao._converged(1.0, 0.0, 1e-5)


# --------------------- RATE MAXIMIZATION --------------------- #


def test_wo_without_cap_reaches_mrt_rate(system, channels):
    """WO, P_th = inf -> rate log2(1 + P_max ||h_d||^2 / sigma^2) within 1e-6."""
    cfg = _make_config(system, surface="WO")
    result = ao.maximize_rate(cfg, channels)
    h = effective_channels(channels, ESCoefficients.uniform(system.L)).h_d
    expected = math.log2(1 + system.P_max * np.linalg.norm(h) ** 2 / system.sigma_d2)
    assert result.status == ao.CONVERGED
    assert result.iters <= 2
    assert result.rate == pytest.approx(expected, abs=1e-6)


def test_es_rate_trace_monotone(system, channels):
    """ES, M=4, N=1, L=16 with an SI cap: monotone trace, converged within 50 iterations."""
    cfg = _make_config(system, surface="ES", P_th=dbm_to_watt(-74), max_outer_iters=50)
    result = ao.maximize_rate(cfg, channels)
    assert result.status == ao.CONVERGED
    assert result.iters <= 50
    assert _monotone(result.objective_trace, increasing=True)
    assert result.si <= cfg.P_th * (1 + 1e-7)
    assert np.linalg.norm(result.w) ** 2 <= system.P_max * (1 + 1e-9)
    assert np.all(result.coeffs.a**2 + result.coeffs.b**2 <= 1 + 1e-9)


def test_es_not_worse_than_wo(system, channels):
    P_th = dbm_to_watt(-74)
    es = ao.maximize_rate(_make_config(system, surface="ES", P_th=P_th), channels)
    wo = ao.maximize_rate(_make_config(system, surface="WO", P_th=P_th), channels)
    assert es.rate >= wo.rate - 1e-9


def test_rate_run_deterministic(system, channels):
    cfg = _make_config(system, surface="ES", P_th=dbm_to_watt(-74), max_outer_iters=10)
    a, b = ao.maximize_rate(cfg, channels), ao.maximize_rate(cfg, channels)
    assert a.objective_trace == b.objective_trace
    np.testing.assert_array_equal(a.w, b.w)
    assert a.status == b.status


def test_ms_rate_trace_monotone():
    system = SystemConfig(M=2, N=1, L=4)
    ch = sample_channels(build_geometry(system), system, seed=3)
    cfg = _make_config(system, surface="MS", P_th=dbm_to_watt(-60), G=200, max_outer_iters=15)
    result = ao.maximize_rate(cfg, ch)
    assert result.status in (ao.CONVERGED, ao.MAX_ITERS)
    assert _monotone(result.objective_trace, increasing=True)
    assert isinstance(result.coeffs, MSCoefficients)
    assert result.si <= cfg.P_th * (1 + 1e-7)


def _failing_solver(fail_names, status):
    real = cb.solve_qcqp

    def solve(problem):
        if problem.name in fail_names:
            return cb.ConicSolution(status=status, message="forced")
        return real(problem)

    return solve


def test_infeasible_beamforming_subproblem_ends_run(system, channels):
    cfg = _make_config(system, surface="ES", P_th=dbm_to_watt(-74))
    with patch("conic_backend.solve_qcqp", side_effect=_failing_solver({"beamforming_rate"}, cb.INFEASIBLE)):
        result = ao.maximize_rate(cfg, channels)
    assert result.status == ao.INFEASIBLE
    assert result.iters == 1
    assert len(result.objective_trace) == 1


def test_stall_on_failed_solve_is_not_convergence(system, channels):
    cfg = _make_config(system, surface="WO", P_th=dbm_to_watt(-74))
    with patch("conic_backend.solve_qcqp",
               side_effect=_failing_solver({"beamforming_rate"}, cb.NUMERICAL_FAILURE)):
        result = ao.maximize_rate(cfg, channels)
    assert result.status == ao.NUMERICAL_FAILURE
    assert result.iters == 1
    assert result.objective_trace[1] == result.objective_trace[0]


def test_infeasible_surface_subproblem_is_a_rejection(system, channels):
    """The surface keeps its start; the beamformer alone still converges."""
    cfg = _make_config(system, surface="ES", P_th=dbm_to_watt(-74))
    init = ao.default_init(cfg, channels)
    with patch("conic_backend.solve_qcqp", side_effect=_failing_solver({"es_phase_rate"}, cb.INFEASIBLE)):
        result = ao.maximize_rate(cfg, channels)
    assert result.status == ao.CONVERGED
    np.testing.assert_array_equal(result.coeffs.a, init.coeffs.a)
    np.testing.assert_array_equal(result.coeffs.beta, init.coeffs.beta)


def test_es_line_search_without_move(system, channels):
    cfg = _make_config(system, surface="ES", P_th=dbm_to_watt(-74))
    init = ao.default_init(cfg, channels)
    eff = effective_channels(channels, init.coeffs)
    evaluate = functools.partial(data_rate, sigma_d2=cfg.sigma_d2)
    beam_step = functools.partial(sp.beamforming_step_rate, P_max=cfg.P_max, P_th=cfg.P_th)
    value = evaluate(eff, init.w)
    assert ao._es_line_search(cfg, channels, evaluate, beam_step, init.w, init.coeffs, init.coeffs, value) is None


def test_es_line_search_improves_and_stays_feasible(system, channels):
    """A returned trial beats the alternating update and meets every constraint."""
    cfg = _make_config(system, surface="ES", P_th=dbm_to_watt(-74))
    init = ao.default_init(cfg, channels)
    evaluate = functools.partial(data_rate, sigma_d2=cfg.sigma_d2)
    beam_step = functools.partial(sp.beamforming_step_rate, P_max=cfg.P_max, P_th=cfg.P_th)
    w, coeffs = init.w, init.coeffs
    for _ in range(3):
        before = coeffs
        w = beam_step(effective_channels(channels, coeffs), w).value
        coeffs = sp.es_phase_step_rate(channels, w, coeffs, cfg.P_th).value
        value = evaluate(effective_channels(channels, coeffs), w)
        jump = ao._es_line_search(cfg, channels, evaluate, beam_step, w, before, coeffs, value)
        if jump is None:
            continue
        w_new, es_new, eff_new, rate = jump
        assert rate > value
        assert rate == pytest.approx(data_rate(eff_new, w_new, cfg.sigma_d2))
        assert si_power(eff_new, w_new) <= cfg.P_th
        assert np.linalg.norm(w_new) ** 2 <= cfg.P_max * (1 + 1e-9)
        assert np.all(es_new.a**2 + es_new.b**2 <= 1 + 1e-9)
        w, coeffs = w_new, es_new


def test_result_to_dict(system, channels):
    result = ao.maximize_rate(_make_config(system, surface="WO"), channels)
    data = result.to_dict()
    assert data["status"] == result.status
    assert data["coeffs"]["kind"] == "ES"
    assert len(data["w"]["re"]) == system.M
    assert data["objective_trace"] == result.objective_trace


# --------------------- SI MINIMIZATION --------------------- #


def test_si_zero_rate_floor(system, channels):
    """R_th = 0 -> SI converges to 0 with w = 0."""
    cfg = _make_config(system, objective=ao.MINIMIZE_SI, surface="ES", R_th=0.0)
    result = ao.minimize_si(cfg, channels)
    assert result.status == ao.CONVERGED
    assert result.si == 0.0
    np.testing.assert_array_equal(result.w, 0.0)


def test_si_without_si_paths(system, channels):
    """H_tr = H_ir = 0 -> SI is 0 throughout; one iteration."""
    quiet = dataclasses.replace(channels, H_tr=np.zeros_like(channels.H_tr), H_ir=np.zeros_like(channels.H_ir))
    cfg = _make_config(system, objective=ao.MINIMIZE_SI, surface="ES", R_th=1.0)
    result = ao.minimize_si(cfg, quiet)
    assert result.status == ao.CONVERGED
    assert result.iters == 1
    assert result.si == 0.0


def test_es_si_trace_monotone_and_rate_kept(system, channels):
    cfg = _make_config(system, objective=ao.MINIMIZE_SI, surface="ES", R_th=1.0, max_outer_iters=30)
    result = ao.minimize_si(cfg, channels)
    assert _monotone(result.objective_trace, increasing=False)
    assert result.rate >= 1.0 - 1e-6
    assert result.objective_trace[-1] <= result.objective_trace[0]


def test_unreachable_rate_floor_flagged(system, channels):
    cfg = _make_config(system, objective=ao.MINIMIZE_SI, surface="ES", R_th=60.0)
    result = ao.minimize_si(cfg, channels)
    assert result.status == ao.INFEASIBLE


@pytest.mark.parametrize("surface", ["ES", "MS"])
def test_si_with_more_transmit_than_receive_antennas(surface):
    """M=4, N=2: the SI subproblems run and keep the rate floor."""
    system = SystemConfig(M=4, N=2, L=16)
    ch = sample_channels(build_geometry(system), system, seed=0)
    cfg = _make_config(system, objective=ao.MINIMIZE_SI, surface=surface, R_th=1.0, G=200,
                       max_outer_iters=10)
    result = ao.minimize_si(cfg, ch)
    assert result.status in (ao.CONVERGED, ao.MAX_ITERS)
    assert _monotone(result.objective_trace, increasing=False)
    assert result.rate >= 1.0 - 1e-6
    assert result.si <= result.objective_trace[0]


@pytest.mark.slow
def test_es_si_reduction_factor():
    """ES, M=4, N=2, L=32, R_th=1: final SI at least 10x below the start."""
    system = SystemConfig(M=4, N=2, L=32)
    ch = sample_channels(build_geometry(system), system, seed=0)
    cfg = _make_config(system, objective=ao.MINIMIZE_SI, surface="ES", R_th=1.0)
    result = ao.minimize_si(cfg, ch)
    assert result.objective_trace[-1] * 10 <= result.objective_trace[0]
    assert result.rate >= 1.0 - 1e-6


# --------------------- CONVERGENCE --------------------- #


def _suite_channels(seed):
    system = SystemConfig(M=4, N=1, L=16)
    return system, sample_channels(build_geometry(system), system, seed=seed)


@pytest.mark.slow
@pytest.mark.parametrize("surface", ["ES", "MS"])
def test_rate_converges_within_50_iterations(surface):
    """20 seeds at M=4, N=1, L=16, P_th=-74 dBm: monotone and converged by iteration 50."""
    for seed in range(20):
        system, ch = _suite_channels(seed)
        cfg = _make_config(system, surface=surface, P_th=dbm_to_watt(-74), max_outer_iters=50, seed=seed)
        result = ao.maximize_rate(cfg, ch)
        assert result.status == ao.CONVERGED, f"seed {seed}"
        assert _monotone(result.objective_trace, increasing=True), f"seed {seed}"
        assert result.si <= cfg.P_th * (1 + 1e-7)


@pytest.mark.slow
@pytest.mark.parametrize("surface", ["ES", "MS"])
def test_si_converges_within_50_iterations(surface):
    """20 seeds at M=4, N=1, L=16, R_th=1: monotone, converged by iteration 50, floor kept."""
    for seed in range(20):
        system, ch = _suite_channels(seed)
        cfg = _make_config(system, objective=ao.MINIMIZE_SI, surface=surface, R_th=1.0,
                           max_outer_iters=50, seed=seed)
        result = ao.minimize_si(cfg, ch)
        assert result.status == ao.CONVERGED, f"seed {seed}"
        assert _monotone(result.objective_trace, increasing=False), f"seed {seed}"
        assert result.rate >= 1.0 - 1e-6


# --------------------- TRENDS --------------------- #


def _mean_rate(surface, L, seeds=20, P_th_dbm=-74):
    rates = []
    for seed in range(seeds):
        system = SystemConfig(M=4, N=1, L=L)
        ch = sample_channels(build_geometry(system), system, seed=seed)
        cfg = _make_config(system, surface=surface, P_th=dbm_to_watt(P_th_dbm), seed=seed)
        rates.append(ao.maximize_rate(cfg, ch).rate)
    return float(np.mean(rates))


@pytest.mark.slow
def test_rate_grows_with_elements():
    """Mean ES rate increases along L in {8, 16, 32, 64}; WO stays below half of ES at 64."""
    es = [_mean_rate("ES", L) for L in (8, 16, 32, 64)]
    assert np.all(np.diff(es) > 0)
    assert _mean_rate("WO", 64) < 0.5 * es[-1]


@pytest.mark.slow
def test_ms_rate_grows_with_elements_and_trails_es():
    ms = [_mean_rate("MS", L) for L in (8, 16, 32, 64)]
    es = [_mean_rate("ES", L) for L in (8, 16, 32, 64)]
    assert np.all(np.diff(ms) > 0)
    assert all(e >= m for e, m in zip(es, ms))


@pytest.mark.slow
def test_si_falls_with_elements():
    """ES SI minimization at R_th = 1: mean SI decreases along L; converged runs keep the rate floor."""
    means = []
    for L in (8, 16, 32, 64):
        values = []
        for seed in range(20):
            system = SystemConfig(M=4, N=2, L=L)
            ch = sample_channels(build_geometry(system), system, seed=seed)
            cfg = _make_config(system, objective=ao.MINIMIZE_SI, surface="ES", R_th=1.0, seed=seed)
            result = ao.minimize_si(cfg, ch)
            if result.status == ao.CONVERGED:
                assert result.rate >= 1.0 - 1e-6
            values.append(result.si)
        means.append(np.mean(values))
    assert np.all(np.diff(means) < 0)
