# -*- coding: utf-8 -*-
import math

import numpy as np
import pytest
from scipy import special

from src.errors import DomainError
from src.geometry import RadialMetric, cone_radius, laplace_beltrami
from src.special_functions import (
    PSI_ONSET,
    bessel_asymptotic_ratio,
    bessel_k,
    bessel_seam_gap,
    bessel_switch_point,
    certify_lambda_family,
    dual_residual,
    lm_exponent,
    log_bessel_k,
    make_test_function,
    psi_decay,
    psi_lm_integral,
    rho_factor,
    solve_eigenfunction,
    t_star,
)


def test_bessel_half_order_closed_form():
    assert bessel_k(0.5, 1.0) == pytest.approx(math.sqrt(math.pi / 2) * math.exp(-1.0), rel=1e-10)
    t = np.array([0.3, 5.0, 40.0, 300.0])
    exact = np.sqrt(math.pi / (2 * t)) * np.exp(-t)
    assert bessel_k(0.5, t) == pytest.approx(exact, rel=1e-10)


def test_bessel_negative_order_is_symmetric():
    assert bessel_k(-1.3, 2.0) == pytest.approx(bessel_k(1.3, 2.0), rel=1e-14)


def test_log_bessel_does_not_underflow():
    assert math.isfinite(log_bessel_k(2.0, 2000.0))
    assert log_bessel_k(0.5, 3.0) == pytest.approx(math.log(bessel_k(0.5, 3.0)), rel=1e-12)


@pytest.mark.parametrize("t", [0.0, -1.0])
def test_bessel_rejects_nonpositive_argument(t):
    with pytest.raises(DomainError):
        bessel_k(1.0, t)


def test_rho_factor_undamped_is_exponential():
    lam = 0.7
    t = np.linspace(0.0, 20.0, 81)
    ratio = rho_factor(t, lam, 0.0, 0.0) / np.exp(-lam * t)
    assert ratio == pytest.approx(np.full_like(t, ratio[0]), rel=1e-10)


def test_rho_factor_rejects_negative_discriminant():
    with pytest.raises(DomainError):
        rho_factor(1.0, 0.5, 3.0, 2.0)


def test_t_star_reaches_asymptotic_regime():
    assert t_star(0.5, 0.0, 0.0) == 1.0
    ts = t_star(0.5, 0.0, -1.0)
    nu = math.sqrt(5.0) / 2
    assert ts > 1.0
    assert abs(bessel_asymptotic_ratio(nu, 0.5 * (1 + ts)) - 1.0) == pytest.approx(0.05, abs=1e-8)


def test_flat_eigenfunction_closed_form():
    lam = 0.5
    res = solve_eigenfunction(RadialMetric.flat(3), lam, 20.0, 0.01)
    x = lam * res.phi.r
    exact = np.ones_like(x)
    exact[1:] = np.sinh(x[1:]) / x[1:]
    assert res.phi.values == pytest.approx(exact, rel=1e-8)
    assert res.bound_holds
    assert res.phi_at(0.5 * res.r_start) == pytest.approx(1.0, abs=1e-12)


def test_eigenfunction_rejects_bad_lambda():
    with pytest.raises(DomainError):
        solve_eigenfunction(RadialMetric.flat(3), 0.0, 10.0)


def test_long_range_family_certified_with_one_c0():
    metric = RadialMetric.long_range(3, kappa=0.1, decay_rho=1.0)
    family = certify_lambda_family(metric, [0.1, 0.2, 0.3, 0.4, 0.5], 20.0, 0.01)
    assert family.lambda0 == pytest.approx(0.5)
    assert family.c0 > 0
    for res in family.results:
        assert family.c0 <= res.fitted_c0
        assert np.all(res.phi.values >= family.c0)
        assert np.all(res.phi.values <= res.envelope / family.c0)


def test_dual_residual_second_order():
    metric = RadialMetric.flat(3)
    tf = make_test_function(metric, 0.5, 0.0, 0.0, 12.0, 0.0025)
    coarse = dual_residual(tf, metric, 0.04, 0.04, 2.0, 1.0)
    fine = dual_residual(tf, metric, 0.02, 0.02, 2.0, 1.0)
    assert 3.5 <= coarse / fine <= 4.5


@pytest.mark.parametrize("n, mu1, m, expected", [(3, 0, 2, 0.0), (3, 2, 2, 2.0), (2, 0, 3, -0.5)])
def test_lm_exponent_values(n, mu1, m, expected):
    assert lm_exponent(n, mu1, m) == pytest.approx(expected)


def test_psi_integral_rejects_small_power():
    metric = RadialMetric.flat(3)
    tf = make_test_function(metric, 0.5, 0.0, 0.0, 5.0)
    with pytest.raises(DomainError):
        psi_lm_integral(tf, metric, 1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        psi_lm_integral(tf, metric, 2.0, 10.0, 1.0)


def _growth_fit(metric, n, mu1, m, lambda1=0.5, R1=1.0):
    start = max(t_star(lambda1, mu1, 0.0), PSI_ONSET / lambda1 - R1)
    r_need = cone_radius(metric, 4.0 * start, R1) + 1.0
    tf = make_test_function(metric, lambda1, mu1, 0.0, r_need, 0.01)
    return psi_decay(tf, metric, m, R1, samples=12)


def test_psi_growth_exponent_flat_strauss_case():
    table = _growth_fit(RadialMetric.flat(3), 3, 0.0, 2.0)
    assert table.fit.slope == pytest.approx(table.predicted, abs=0.1)


@pytest.mark.slow
@pytest.mark.parametrize("n, mu1, m", [(3, 0.0, 2.0), (3, 2.0, 2.0), (2, 0.0, 3.0)])
@pytest.mark.parametrize("profile", ["flat", "long_range"])
def test_psi_growth_exponent_acceptance(n, mu1, m, profile):
    if profile == "flat":
        metric = RadialMetric.flat(n)
    else:
        metric = RadialMetric.long_range(n, kappa=0.1, decay_rho=1.0)
    table = _growth_fit(metric, n, mu1, m)
    assert abs(table.fit.slope - lm_exponent(n, mu1, m)) <= 0.1


@pytest.mark.parametrize("nu", [0.0, 0.5, 1.3, 3.0])
def test_bessel_decreasing_and_log_convex(nu):
    t = np.linspace(0.05, 40.0, 800)
    values = bessel_k(nu, t)
    assert np.all(values > 0)
    assert np.all(np.diff(values) < 0)
    logs = np.log(values)
    assert np.all(logs[2:] - 2 * logs[1:-1] + logs[:-2] >= -1e-12)


def test_bessel_order_zero_asymptote():
    t = 50.0
    expected = 1.0 - 1.0 / (8 * t) + 9.0 / (128 * t * t)
    assert bessel_asymptotic_ratio(0.0, t) == pytest.approx(expected, abs=1e-5)
    assert bessel_k(0.0, t) == pytest.approx(math.sqrt(math.pi / (2 * t)) * math.exp(-t) * expected, rel=1e-5)


@pytest.mark.parametrize("nu", [0.0, 0.5, 1.0, 2.5, 4.0])
def test_bessel_branches_agree_at_switch(nu):
    assert bessel_seam_gap(nu) < 1e-11
    t = bessel_switch_point(nu)
    below = bessel_k(nu, t * (1 - 1e-12))
    above = bessel_k(nu, t)
    assert below == pytest.approx(above, rel=1e-10)


def test_flat_plane_eigenfunction_is_i0():
    lam = 0.5
    res = solve_eigenfunction(RadialMetric.flat(2), lam, 20.0, 0.01)
    assert res.phi.values == pytest.approx(special.i0(lam * res.phi.r), rel=1e-8)


def test_eigenrelation_second_order():
    lam = 0.5
    metric = RadialMetric.flat(2)
    errors = []
    for dr in (0.02, 0.01):
        res = solve_eigenfunction(metric, lam, 10.0, dr)
        out = laplace_beltrami(metric, res.phi)
        gap = out.values[:-1] - lam ** 2 * res.phi.values[:-1]
        errors.append(np.max(np.abs(gap)) / np.max(res.phi.values))
    assert 3.0 <= errors[0] / errors[1] <= 5.0


def test_psi_integral_at_initial_time():
    metric = RadialMetric.flat(3)
    lam = 0.5
    tf = make_test_function(metric, lam, 0.0, 0.0, 5.0)
    rho0 = math.sqrt(math.pi / (2 * lam)) * math.exp(-lam)
    # ∫_0^1 (sinh(λr)/(λr))^2 4π r^2 dr = 4π/λ^2 (sinh(2λ)/(4λ) - 1/2)
    exact = rho0 ** 2 * 4 * math.pi / lam ** 2 * (math.sinh(2 * lam) / (4 * lam) - 0.5)
    assert psi_lm_integral(tf, metric, 2.0, 0.0, 1.0) == pytest.approx(exact, rel=1e-4)


def test_dual_residual_detects_shifted_psi():
    metric = RadialMetric.flat(3)
    tf = make_test_function(metric, 0.5, 2.0, 0.0, 12.0, 0.0025)
    clean = dual_residual(tf, metric, 0.02, 0.02, 2.0, 1.0)
    shifted = dual_residual(tf, metric, 0.02, 0.02, 2.0, 1.0, psi_shift=1.0)
    # 常数平移只在阻尼项留下 μ1/(1+t)^2
    assert clean < 1e-2
    assert shifted == pytest.approx(2.0 / 9.0, abs=clean + 1e-3)
