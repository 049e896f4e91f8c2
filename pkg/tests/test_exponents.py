# -*- coding: utf-8 -*-
"""临界指数、维数平移与区域分类。"""

import math

import pytest

from src.errors import DomainError
from src.exponents import (
    LifespanForm,
    ProblemParams,
    Regime,
    blows_up,
    classify,
    critical_power,
    derive,
    exponent_summary,
    fujita_exponent,
    gamma_fujita,
    glassey_exponent,
    lambda_curve,
    mixed_euclidean_region,
    predicted_lifespan,
    sign_condition,
    strauss_exponent,
    strauss_quadratic,
)


@pytest.mark.parametrize(
    "d, expected",
    [(3, 1 + math.sqrt(2)), (2, (3 + math.sqrt(17)) / 2), (9, (5 + math.sqrt(41)) / 8)],
)
def test_strauss_exponent_values(d, expected):
    assert strauss_exponent(d) == pytest.approx(expected, abs=1e-12)
    assert abs(strauss_quadratic(strauss_exponent(d), d)) < 1e-12


@pytest.mark.parametrize("d, expected", [(2, 3.0), (3, 2.0), (5, 1.5)])
def test_glassey_exponent_values(d, expected):
    assert glassey_exponent(d) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("d, expected", [(1, 3.0), (2, 2.0), (4, 1.5)])
def test_fujita_exponent_values(d, expected):
    assert fujita_exponent(d) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("func, d", [(strauss_exponent, 1.0), (glassey_exponent, 0.5), (fujita_exponent, 0.0)])
def test_exponents_reject_degenerate_dimension(func, d):
    with pytest.raises(DomainError):
        func(d)


def test_gamma_and_lambda_examples():
    assert gamma_fujita(2, 2) == 0
    assert gamma_fujita(1.5, 3) == pytest.approx(0.5)
    assert gamma_fujita(3, 2) == -2
    assert lambda_curve(2, 2, 3) == 2
    assert lambda_curve(3, 2, 3) == 4
    assert lambda_curve(2, 1, 7) == 0


def test_exponents_decrease_towards_one():
    ds = [1.5, 2.0, 3.0, 5.0, 10.0, 100.0]
    qs = [strauss_exponent(d) for d in ds]
    ps = [glassey_exponent(d) for d in ds]
    assert all(a > b for a, b in zip(qs, qs[1:]))
    assert all(a > b for a, b in zip(ps, ps[1:]))
    assert strauss_exponent(1e8) == pytest.approx(1.0, abs=1e-6)
    assert glassey_exponent(1e8) == pytest.approx(1.0, abs=1e-6)


def test_lambda_curve_increases_above_glassey():
    d = 3.0
    q = strauss_exponent(d)
    values = [lambda_curve(glassey_exponent(d) + s, q, d) for s in (0.0, 0.1, 0.5, 1.0)]
    assert all(a < b for a, b in zip(values, values[1:]))


@pytest.mark.parametrize(
    "mu1, mu2, delta, alpha",
    [(2.0, 0.0, 1.0, 0.0), (0.0, 0.0, 1.0, -1.0)],
)
def test_derive_shifts(mu1, mu2, delta, alpha):
    derived = derive(ProblemParams(n=3, mu1=mu1, mu2=mu2, q=2, c2=1))
    assert derived.delta == pytest.approx(delta, abs=1e-12)
    assert derived.alpha == pytest.approx(alpha, abs=1e-12)
    assert derived.d_glassey_strauss == pytest.approx(3 + mu1)
    assert derived.d_fujita == pytest.approx(3 + alpha)


def test_derive_rejects_negative_discriminant():
    with pytest.raises(DomainError):
        derive(ProblemParams(n=3, mu1=3.0, mu2=2.0, q=2, c2=1))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n=1, q=2, c2=1),
        dict(n=3, c2=1),
        dict(n=3, q=1.0, c2=1),
        dict(n=3, c1=1),
        dict(n=3),
        dict(n=3, q=2, c2=-1),
    ],
)
def test_problem_params_invariants(kwargs):
    with pytest.raises(DomainError):
        ProblemParams(**kwargs)


def test_linear_run_needs_explicit_flag():
    params = ProblemParams(n=3, probe=True)
    assert params.c1 + params.c2 == 0


def test_classify_strauss_example():
    result = classify(ProblemParams(n=3, q=2, c2=1))
    strauss = result.find(Regime.STRAUSS)
    assert strauss is not None
    assert strauss.form == LifespanForm.POWER
    assert strauss.exponent == pytest.approx(-2.0, abs=1e-12)
    assert strauss.slope == pytest.approx(2.0)
    assert result.dominant is strauss or result.dominant == strauss


def test_classify_glassey_boundary_is_exponential():
    result = classify(ProblemParams(n=2, p=3, c1=1))
    glassey = result.find(Regime.GLASSEY)
    assert glassey.form == LifespanForm.EXPONENTIAL
    assert glassey.exponent == pytest.approx(-2.0, abs=1e-12)
    assert glassey.asserted


def test_classify_damped_fujita_example():
    result = classify(ProblemParams(n=3, mu1=2.0, q=1.5, c2=1))
    fujita = result.find(Regime.FUJITA)
    assert fujita.form == LifespanForm.POWER
    assert fujita.exponent == pytest.approx(-1.0, abs=1e-12)
    assert sum(p.dominant for p in result.predictions) == 1


def test_classify_mixed_case_and_signs():
    result = classify(ProblemParams(n=3, p=2, q=2, c1=1, c2=1))
    mixed = result.find(Regime.MIXED)
    assert mixed is not None
    assert mixed.exponent == pytest.approx(-2 * 2 * 1 / (4 - 2))
    assert all(p.exponent < 0 for p in result.predictions if p.form == LifespanForm.POWER)


def test_classify_critical_strauss_is_not_asserted():
    q_s = strauss_exponent(3)
    result = classify(ProblemParams(n=3, q=q_s, c2=1))
    crit = result.find(Regime.CRITICAL_STRAUSS)
    assert crit is not None
    assert crit.form == LifespanForm.EXPONENTIAL
    assert not crit.asserted
    assert not blows_up(ProblemParams(n=3, q=q_s, c2=1))


def test_classify_no_prediction_above_thresholds():
    result = classify(ProblemParams(n=3, q=5, c2=1))
    assert [p.regime for p in result.predictions] == [Regime.NO_PREDICTION]
    assert not blows_up(ProblemParams(n=3, q=5, c2=1))


def test_classify_is_deterministic():
    params = ProblemParams(n=3, mu1=0.5, p=1.8, q=1.9, c1=1, c2=2)
    assert classify(params) == classify(params)


def test_undamped_thresholds_match_euclidean():
    summary = exponent_summary(ProblemParams(n=4, q=2, c2=1))
    assert summary["q_S"] == pytest.approx(strauss_exponent(4), abs=1e-12)
    assert summary["p_G"] == pytest.approx(glassey_exponent(4), abs=1e-12)
    # mu = 0 时 alpha = -1，Fujita 维数为 n - 1
    assert summary["q_F"] == pytest.approx(fujita_exponent(3), abs=1e-12)


def test_critical_power_takes_larger_threshold():
    params = ProblemParams(n=3, mu1=2.0, q=1.5, c2=1)
    assert critical_power(params) == pytest.approx(max(fujita_exponent(3), strauss_exponent(5)))


def test_predicted_lifespan_forms():
    power = classify(ProblemParams(n=3, q=2, c2=1)).find(Regime.STRAUSS)
    assert predicted_lifespan(power, 0.1) == pytest.approx(100.0)
    expo = classify(ProblemParams(n=2, p=3, c1=1)).find(Regime.GLASSEY)
    assert predicted_lifespan(expo, 0.5) == pytest.approx(math.exp(4.0))
    assert predicted_lifespan(expo, 1e-200) == math.inf


def test_sign_condition_and_mixed_region():
    assert sign_condition(-1.0, 1.0, 1.0)
    assert not sign_condition(-1.0, 2.0, 1.0)
    assert mixed_euclidean_region(2.0, 2.0, 3)
    assert not mixed_euclidean_region(4.0, 2.0, 3)
    # 阻尼把维数平移到 n + mu1，限制随之收紧
    assert mixed_euclidean_region(2.8, 2.0, 3)
    assert not mixed_euclidean_region(2.8, 2.0, 3 + 2.0)
