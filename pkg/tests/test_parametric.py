import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from incubation.data import ObservationSet, load_wuhan
from incubation.parametric import (
    WUHAN_WEIBULL,
    PatternSearchConfig,
    WeibullParams,
    fit_weibull,
    hooke_jeeves,
    truncated_weibull_cdf,
    truncated_weibull_density,
    truncated_weibull_quantile,
    truncated_weibull_sample,
    weibull_cdf,
    weibull_loglik,
    weibull_pdf,
)


def test_weibull_cdf_values():
    p = WeibullParams(2.0, 0.5)
    assert weibull_cdf(p, 0.0) == 0.0
    assert weibull_cdf(p, -1.0) == 0.0
    assert_allclose(weibull_cdf(p, 2.0), 1 - np.exp(-2.0))
    assert_allclose(weibull_pdf(p, 2.0), 2 * 0.5 * 2.0 * np.exp(-2.0))


def test_weibull_pdf_is_cdf_derivative():
    x = np.linspace(0.5, 15, 30)
    eps = 1e-6
    fd = (weibull_cdf(WUHAN_WEIBULL, x + eps) - weibull_cdf(WUHAN_WEIBULL, x - eps)) / (2 * eps)
    assert_allclose(weibull_pdf(WUHAN_WEIBULL, x), fd, rtol=1e-6)


def test_params_must_be_positive():
    with pytest.raises(ValueError):
        WeibullParams(-1.0, 0.1)
    with pytest.raises(ValueError):
        WeibullParams(1.0, 0.0)


def test_weibull_loglik_by_hand():
    sample = ObservationSet([5, 2], [3, 6])
    p = WeibullParams(1.5, 0.1)
    G = lambda x: 1 - np.exp(-0.1 * x**1.5)
    assert_allclose(weibull_loglik(p, sample), np.log(G(3)) + np.log(G(6) - G(4)))


def test_hooke_jeeves_quadratic():
    res = hooke_jeeves(
        lambda x: -((x[0] - 2) ** 2) - 3 * (x[1] + 1) ** 2,
        PatternSearchConfig(init=(0.0, 0.0)),
    )
    assert res.converged
    assert_allclose(res.x, [2, -1], atol=1e-7)


def test_hooke_jeeves_rosenbrock():
    res = hooke_jeeves(
        lambda x: -((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2),
        PatternSearchConfig(init=(-1.2, 1.0), max_evals=200_000),
    )
    assert_allclose(res.x, [1, 1], atol=1e-3)


def test_hooke_jeeves_respects_budget():
    res = hooke_jeeves(lambda x: -np.sum(x**2), PatternSearchConfig(init=(5.0, 5.0), max_evals=10))
    assert not res.converged
    assert res.evals <= 20


def test_hooke_jeeves_infeasible_start():
    with pytest.raises(ValueError):
        hooke_jeeves(lambda x: -np.inf, PatternSearchConfig(init=(0.0,)))


def test_hooke_jeeves_avoids_infeasible_region():
    # maximum on the boundary of the feasible half-line x >= 1
    res = hooke_jeeves(lambda x: -x[0] if x[0] >= 1 else np.nan, PatternSearchConfig(init=(3.0,)))
    assert_allclose(res.x, [1.0], atol=1e-7)


def test_pattern_search_config_validation():
    with pytest.raises(ValueError):
        PatternSearchConfig(init=(0.0,), shrink_factor=1.5)
    with pytest.raises(ValueError):
        PatternSearchConfig(init=(0.0,), min_step=0)


def test_fit_weibull_recovers_simulated_parameters():
    rng = np.random.default_rng(3)
    true = WeibullParams(2.5, 0.01)
    w = (-np.log(rng.random(3000)) / true.b) ** (1 / true.a)
    e = rng.uniform(1, 20, w.size)
    s = e * rng.random(w.size) + w
    fit = fit_weibull(ObservationSet(e, s, "continuous"))
    assert fit.converged
    assert_allclose(fit.params.a, true.a, rtol=0.1)
    assert_allclose(np.log(fit.params.b), np.log(true.b), rtol=0.1)


def test_fit_weibull_wuhan():
    fit = fit_weibull(load_wuhan())
    assert_allclose([fit.params.a, fit.params.b], [3.03514, 0.002619], rtol=1e-3)
    assert fit.loglik >= weibull_loglik(WUHAN_WEIBULL, load_wuhan())


# -- truncated Weibull ------------------------------------------------------------------


def test_truncated_quantile_endpoints():
    assert truncated_weibull_quantile(WUHAN_WEIBULL, 20, 0.0) == 0.0
    assert_allclose(truncated_weibull_quantile(WUHAN_WEIBULL, 20, 1.0), 20.0)


@given(st.floats(0.001, 0.999))
def test_truncated_quantile_inverts_cdf(u):
    x = truncated_weibull_quantile(WUHAN_WEIBULL, 20, u)
    assert_allclose(truncated_weibull_cdf(WUHAN_WEIBULL, 20, x), u, rtol=1e-10)


def test_truncated_quantile_degenerate():
    with pytest.raises(ValueError):
        truncated_weibull_quantile(WeibullParams(50.0, 1e-300), 1e-3, 0.5)


def test_truncated_density_integrates_to_one():
    x = np.linspace(0, 20, 200_001)
    f = truncated_weibull_density(WUHAN_WEIBULL, 20, x)
    assert_allclose(np.trapezoid(f, x) if hasattr(np, "trapezoid") else np.trapz(f, x), 1.0, rtol=1e-6)
    assert truncated_weibull_density(WUHAN_WEIBULL, 20, 21.0) == 0.0


def test_truncated_sample_ks():
    rng = np.random.default_rng(11)
    w = np.sort(truncated_weibull_sample(WUHAN_WEIBULL, 20, rng, 20_000))
    ecdf = np.arange(1, w.size + 1) / w.size
    assert np.max(np.abs(ecdf - truncated_weibull_cdf(WUHAN_WEIBULL, 20, w))) < 0.015
    assert w.max() <= 20
