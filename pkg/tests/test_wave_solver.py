# -*- coding: utf-8 -*-
import math

import numpy as np
import pytest
from scipy import integrate

from src.errors import DomainError, FitError
from src.exponents import ProblemParams, strauss_exponent
from src.geometry import LaplaceBeltrami, OuterBoundary, RadialMetric, cone_radius
from src.wave_solver import (
    DT_POLICY,
    SLOW_BLOWUP_FLAG,
    InitialData,
    RadialWaveSolver,
    SolverConfig,
    WaveState,
    bump,
    energy,
    epsilon_sweep,
    measure_lifespan,
    step,
    validate_eps_list,
)

FLAT3 = RadialMetric.flat(3)
STRAUSS = ProblemParams(n=3, q=2.0, c2=1.0)
LINEAR = ProblemParams(n=3, probe=True)


def _free_run(dr, t_end, R0=2.0, r_max=6.0, u0_amp=0.0):
    """线性自由波从 (u0_amp·bump, bump) 推进到 t_end，返回 (solver, u, v, 每步能量)。"""
    config = SolverConfig(dr=dr, t_cap=t_end)
    J = int(round(r_max / dr))
    solver = RadialWaveSolver(FLAT3, LINEAR, config, R1=R0, J=J)
    data = InitialData(epsilon=1.0, R0=R0, u0_amp=u0_amp, u1_amp=1.0)
    u, v = data.sample(solver.r)
    steps = int(math.ceil(t_end / solver.dt_linear))
    dt = t_end / steps
    energies = [energy(WaveState(0.0, u, v, dr), FLAT3, solver.lap)]
    t = 0.0
    for _ in range(steps):
        solver.advance(u, v, t, dt)
        t += dt
        energies.append(energy(WaveState(t, u, v, dr), FLAT3, solver.lap))
    return solver, u, v, np.array(energies)


def _dalembert(r, t, R0):
    """n=3 自由波，u(0)=0, u_t(0)=g：u = (1/2r) ∫_{|r-t|}^{r+t} s g(s) ds。"""
    g = lambda s: float(bump(np.array([s]), R0)[0])
    out = np.empty_like(r)
    for i, x in enumerate(r):
        if x == 0.0:
            out[i] = t * g(t)
            continue
        val, _ = integrate.quad(lambda s: s * g(s), abs(x - t), x + t, epsabs=1e-13, limit=200)
        out[i] = val / (2.0 * x)
    return out


def test_bump_profiles():
    r = np.array([0.0, 0.5, 1.0, 2.0])
    for shape in ("exp", "poly"):
        b = bump(r, 1.0, shape)
        assert b[0] == pytest.approx(1.0)
        assert 0.0 < b[1] < 1.0
        assert b[2] == 0.0 and b[3] == 0.0


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(epsilon=0.0),
        dict(epsilon=-0.1),
        dict(epsilon=0.1, R0=0.0),
        dict(epsilon=0.1, u0_amp=0.0, u1_amp=0.0),
        dict(epsilon=0.1, u0_amp=-1.0),
    ],
)
def test_initial_data_invariants(kwargs):
    with pytest.raises(DomainError):
        InitialData(**kwargs)


def test_out_of_hypothesis_data_allowed_explicitly():
    data = InitialData(epsilon=0.1, u0_amp=-1.0, allow_out_of_hypothesis=True)
    assert data.u0_amp == -1.0


def test_resolved_r1():
    assert InitialData(epsilon=0.1, R0=1.5).resolved(FLAT3).R1 == pytest.approx(1.5)
    long_range = RadialMetric.long_range(3, kappa=0.1, decay_rho=1.0)
    assert InitialData(epsilon=0.1).resolved(long_range).R1 > 1.0
    with pytest.raises(DomainError):
        InitialData(epsilon=0.1, R0=1.0, R1=0.5).resolved(FLAT3)


def test_sign_condition_undamped():
    # mu = 0 时 alpha = -1：条件为 ∫u1 >= ∫u0
    assert InitialData(epsilon=0.1).satisfies_sign_condition(FLAT3, STRAUSS)
    assert not InitialData(epsilon=0.1, u0_amp=2.0).satisfies_sign_condition(FLAT3, STRAUSS)


def test_solver_config_validation():
    with pytest.raises(DomainError):
        SolverConfig(dr=0.0)
    with pytest.raises(DomainError):
        SolverConfig(cfl=1.5)
    with pytest.raises(DomainError):
        SolverConfig(robustness_factor=1.0)
    assert SolverConfig(dr=0.02).refined().dr == pytest.approx(0.01)


def test_zero_state_stays_zero():
    state = WaveState.zeros(200, 0.01)
    for _ in range(20):
        state = step(state, FLAT3, STRAUSS, 0.004)
    assert not np.any(state.u) and not np.any(state.v)
    assert state.t == pytest.approx(0.08)
    assert state.support_edge() == 0.0


def test_step_does_not_mutate_input_and_rejects_large_dt():
    data = InitialData(epsilon=0.5)
    state = WaveState(0.0, *data.sample(np.arange(301) * 0.01), 0.01)
    before = state.u.copy()
    new = step(state, FLAT3, STRAUSS, 0.004)
    assert np.array_equal(state.u, before)
    assert not np.array_equal(new.u, before)
    with pytest.raises(DomainError):
        step(state, FLAT3, STRAUSS, 0.05)


def test_dt_respects_cfl_bound():
    config = SolverConfig(dr=0.01)
    solver = RadialWaveSolver(FLAT3, STRAUSS, config, R1=1.0, J=500)
    assert solver.dt_linear <= config.cfl * config.dr * FLAT3.delta0
    u = np.full(501, 1e4)
    assert solver.dt_for(u, np.zeros(501)) == pytest.approx(config.nonlinear_safety * 1e-2)


def test_free_wave_matches_dalembert_second_order():
    R0, t_end = 2.0, 1.0
    errors = []
    for dr in (0.04, 0.02):
        solver, u, _, _ = _free_run(dr, t_end, R0=R0)
        r = solver.r[solver.r <= 4.0]
        exact = _dalembert(r, t_end, R0)
        errors.append(np.max(np.abs(u[: r.size] - exact)))
    assert errors[1] < 5e-3
    assert errors[0] / errors[1] > 3.0


def test_free_wave_energy_conserved_second_order():
    drift = []
    for dr in (0.04, 0.02):
        *_, energies = _free_run(dr, 1.0, u0_amp=1.0)
        drift.append(np.max(np.abs(energies - energies[0])) / energies[0])
    assert drift[1] < 1e-2
    assert drift[0] / drift[1] > 3.0


def test_linear_run_never_blows_up():
    config = SolverConfig(dr=0.02, t_cap=40.0)
    report = measure_lifespan(InitialData(epsilon=1.0), FLAT3, LINEAR, config)
    assert report.T_num is None
    assert report.reason == "no blow-up before cap"
    assert report.t_end == pytest.approx(40.0)
    assert "finite-speed-violated" not in report.flags
    # 三维自由波振幅按 1/t 衰减
    assert report.sup_norm_end < 1.0


def test_dirichlet_operator_is_dissipative():
    op = LaplaceBeltrami(FLAT3, 0.05, 40, OuterBoundary.DIRICHLET)
    rng = np.random.default_rng(7)
    for _ in range(5):
        u = rng.standard_normal(41)
        assert np.dot(op.w, u * op.apply(u)) < 0
    assert op.spectral_bound() == pytest.approx(12.0 / 0.05 ** 2, rel=1e-12)


def test_window_matches_full_grid():
    config = SolverConfig(dr=0.02, t_cap=6.0)
    report = measure_lifespan(InitialData(epsilon=1.0), FLAT3, LINEAR, config)
    solver = RadialWaveSolver.for_run(FLAT3, LINEAR, config, 1.0)
    u, v = InitialData(epsilon=1.0).sample(solver.r)
    t = 0.0
    while t < config.t_cap * (1 - 1e-14):
        dt = solver.dt_linear
        if t + dt >= config.t_cap - 1e-12 * config.t_cap:
            dt = config.t_cap - t
        solver.advance(u, v, t, dt)
        t += dt
    final = report.final_state
    np.testing.assert_allclose(final.u, u, rtol=0, atol=1e-13)
    np.testing.assert_allclose(final.v, v, rtol=0, atol=1e-13)


def test_small_glassey_data_survives_past_window_edge():
    params = ProblemParams(n=2, p=2.0, c1=1.0)
    config = SolverConfig(dr=0.02, t_cap=20.0)
    report = measure_lifespan(InitialData(epsilon=0.02), RadialMetric.flat(2), params, config)
    assert not report.blew_up
    assert report.t_end == pytest.approx(20.0)
    assert "finite-speed-violated" not in report.flags


def test_glassey_lifespan_depends_on_epsilon():
    params = ProblemParams(n=2, p=2.0, c1=1.0)
    metric = RadialMetric.flat(2)
    config = SolverConfig(dr=0.02, t_cap=100.0)
    large = measure_lifespan(InitialData(epsilon=1.0), metric, params, config)
    small = measure_lifespan(InitialData(epsilon=0.5), metric, params, config)
    assert large.blew_up and small.blew_up
    assert small.T_num > 1.5 * large.T_num
    for report in (large, small):
        assert "finite-speed-violated" not in report.flags


@pytest.mark.parametrize("metric", [FLAT3, RadialMetric.long_range(3, kappa=0.1, decay_rho=1.0)])
def test_finite_speed_of_propagation(metric):
    config = SolverConfig(dr=0.02, t_cap=4.0, support_check_every=1)
    report = measure_lifespan(InitialData(epsilon=0.2), metric, STRAUSS, config)
    assert report.support_excess <= 2.0
    assert "finite-speed-violated" not in report.flags
    state = report.final_state
    R1 = InitialData(epsilon=0.2).resolved(metric).R1
    assert state.support_edge(config.support_rel_tol) <= cone_radius(metric, state.t, R1) + 2 * config.dr


def test_large_data_blowup_is_grid_stable():
    data = InitialData(epsilon=2.0)
    coarse = measure_lifespan(data, FLAT3, STRAUSS, SolverConfig(dr=0.02, t_cap=50.0))
    fine = measure_lifespan(data, FLAT3, STRAUSS, SolverConfig(dr=0.01, t_cap=50.0))
    assert coarse.blew_up and fine.blew_up
    assert fine.reason == "blow-up"
    assert abs(coarse.T_num - fine.T_num) / fine.T_num < 0.01
    assert fine.T_num_high >= fine.T_num
    assert SLOW_BLOWUP_FLAG not in fine.flags


def test_lifespan_monotone_in_epsilon():
    config = SolverConfig(dr=0.02, t_cap=50.0)
    T_small = measure_lifespan(InitialData(epsilon=2.0), FLAT3, STRAUSS, config).T_num
    T_large = measure_lifespan(InitialData(epsilon=4.0), FLAT3, STRAUSS, config).T_num
    assert T_large <= T_small * 1.02


def test_snapshots_land_on_requested_times():
    config = SolverConfig(dr=0.02, t_cap=2.0)
    times = [0.0, 0.5, 1.25, 2.0]
    report = measure_lifespan(InitialData(epsilon=0.1), FLAT3, STRAUSS, config, sample_times=times)
    bundle = report.history
    assert bundle.times == pytest.approx(times, abs=1e-12)
    assert bundle.u.shape == (4, bundle.r.size)
    assert bundle.metadata["epsilon"] == pytest.approx(0.1)
    assert bundle.u[0] == pytest.approx(0.1 * bump(bundle.r, 1.0))


def test_sign_condition_violation_is_flagged():
    config = SolverConfig(dr=0.02, t_cap=1.0)
    report = measure_lifespan(InitialData(epsilon=0.1, u0_amp=2.0), FLAT3, STRAUSS, config)
    assert "sign-condition-violated" in report.flags


def test_eps_list_validation():
    assert validate_eps_list([0.4, 0.1, 0.2, 0.3]) == [0.1, 0.2, 0.3, 0.4]
    with pytest.raises(FitError):
        validate_eps_list([0.4, 0.2, 0.2, 0.1])
    with pytest.raises(FitError):
        validate_eps_list([0.4, 0.2, 0.1])
    with pytest.raises(FitError):
        validate_eps_list([0.4, 0.2, 0.1, 0.0])


def test_sweep_rejects_duplicates_before_running():
    with pytest.raises(FitError):
        epsilon_sweep(InitialData(epsilon=0.1), FLAT3, STRAUSS, SolverConfig(), [0.4, 0.2, 0.2, 0.1])


def test_sweep_records_large_data():
    config = SolverConfig(dr=0.02, t_cap=60.0)
    sweep = epsilon_sweep(InitialData(epsilon=1.0), FLAT3, STRAUSS, config, [1.5, 2.0, 3.0, 4.0], config_hash="abc")
    assert [rec.epsilon for rec in sweep.records] == [1.5, 2.0, 3.0, 4.0]
    assert all(rec.dt_policy == DT_POLICY and rec.config_hash == "abc" for rec in sweep.records)
    assert sweep.prediction.regime.value == "Strauss"
    assert sweep.predicted_slope == pytest.approx(2.0)
    assert sweep.fit.n_points == 4
    assert sweep.slope > 0


def _sweep_slope(params, eps, dr, t_cap):
    n = params.n
    metric = RadialMetric.flat(n)
    sweep = epsilon_sweep(InitialData(epsilon=eps[0]), metric, params, SolverConfig(dr=dr, t_cap=t_cap), eps)
    return sweep


@pytest.mark.slow
def test_strauss_lifespan_sweep():
    sweep = _sweep_slope(STRAUSS, [0.4, 0.28, 0.2, 0.14, 0.1], 1 / 200, 2000.0)
    assert 1.6 <= sweep.slope <= 2.4
    assert not any(SLOW_BLOWUP_FLAG in rec.flags for rec in sweep.records)


@pytest.mark.slow
def test_glassey_lifespan_sweep():
    params = ProblemParams(n=2, p=2.0, c1=1.0)
    sweep = _sweep_slope(params, [0.4, 0.28, 0.2, 0.14, 0.1], 1 / 200, 2000.0)
    assert sweep.predicted_slope == pytest.approx(2.0)
    assert 1.5 <= sweep.slope <= 2.5


@pytest.mark.slow
def test_damped_fujita_lifespan_sweep():
    params = ProblemParams(n=3, mu1=2.0, q=1.5, c2=1.0)
    sweep = _sweep_slope(params, [0.4, 0.28, 0.2, 0.14, 0.1], 1 / 100, 5000.0)
    within = abs(sweep.slope - 1.0) <= 0.25
    flagged = any(SLOW_BLOWUP_FLAG in rec.flags for rec in sweep.records)
    assert within or flagged


@pytest.mark.slow
def test_critical_power_outlives_subcritical():
    config = SolverConfig(dr=0.01, t_cap=2000.0)
    data = InitialData(epsilon=0.4)
    sub = measure_lifespan(data, FLAT3, STRAUSS, config)
    crit = measure_lifespan(data, FLAT3, ProblemParams(n=3, q=strauss_exponent(3), c2=1.0), config)
    assert sub.blew_up
    assert crit.T_num is None or crit.T_num > sub.T_num


def test_blowup_time_self_converges():
    data = InitialData(epsilon=2.0)
    T = [measure_lifespan(data, FLAT3, STRAUSS, SolverConfig(dr=dr, t_cap=50.0)).T_num for dr in (0.02, 0.01, 0.005)]
    coarse_gap, fine_gap = abs(T[0] - T[1]), abs(T[1] - T[2])
    assert fine_gap > 0
    assert math.log2(coarse_gap / fine_gap) >= 1.5
