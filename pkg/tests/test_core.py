import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from inarmix.core import (
    ComponentParams,
    ComponentSpec,
    Family,
    InnovationModel,
    ParameterError,
    as_count_series,
    binomial_thin,
    conditional_pmf,
    innovation_pmf,
    innovation_sample,
    series_loglik,
    simulate_inar,
    transition_logpmf,
    truncation_point,
)

POIS = Family.POISSON
NB = Family.NEGBIN


def oracle_innov(k, lam, phi):
    """scipy pmf in the mean/dispersion form (independent of the library code)."""
    if phi == 1.0:
        return stats.poisson.pmf(k, lam)
    return stats.nbinom.pmf(k, lam / (phi - 1.0), 1.0 / phi)


def oracle_cond(x_t, x_lag, alpha, lam, phi):
    total = 0.0
    for k in range(min(x_t, x_lag) + 1):
        b = math.comb(x_lag, k) * alpha**k * (1 - alpha) ** (x_lag - k)
        total += b * oracle_innov(x_t - k, lam, phi)
    return total


def oracle_series_prob(x, lag, alpha, lam, phi):
    p = 1.0
    for t, v in enumerate(x):
        p *= oracle_innov(v, lam, phi) if t < lag else oracle_cond(v, x[t - lag], alpha, lam, phi)
    return p


# --------------------------------------------------------------------------- domain types


def test_innovation_model_validation():
    with pytest.raises(ParameterError):
        InnovationModel(POIS, 0.0)
    with pytest.raises(ParameterError):
        InnovationModel(POIS, 1.0, 2.0)
    with pytest.raises(ParameterError):
        InnovationModel(NB, 1.0, 1.0)
    with pytest.raises(ParameterError):
        InnovationModel(NB, 1.0, 0.5)  # under-dispersion is rejected
    m = InnovationModel("nb", 2.0, 3.0)
    assert m.family is NB and m.variance == pytest.approx(6.0)
    assert m.nb_size_prob() == pytest.approx((1.0, 1 / 3))


def test_component_types():
    with pytest.raises(ParameterError):
        ComponentSpec(0)
    with pytest.raises(ParameterError):
        ComponentParams.make(1.2, 1.0)
    assert ComponentSpec(5).label() == "INAR(5*)"
    p = ComponentParams.make(0.2, 7.0)
    assert p.family is POIS and p.stationary_mean() == pytest.approx(8.75)


def test_count_series_validation():
    assert as_count_series([0, 3, 2]).dtype == np.int64
    for bad in ([-1, 2], [1.5], [], [[1, 2]]):
        with pytest.raises(ValueError):
            as_count_series(bad)


# --------------------------------------------------------------------------- thinning


def test_thinning_edges():
    rng = np.random.default_rng(0)
    assert binomial_thin(5, 0.0, rng) == 0
    assert binomial_thin(5, 1.0, rng) == 5
    with pytest.raises(ParameterError):
        binomial_thin(5, 1.5, rng)


def test_thinning_mean_example():
    rng = np.random.default_rng(1)
    draws = binomial_thin(np.full(100_000, 10), 0.3, rng)
    assert abs(draws.mean() - 3.0) < 0.05


@pytest.mark.parametrize("x,alpha", [(10, 0.3), (25, 0.8), (3, 0.5)])
def test_thinning_moments(x, alpha):
    rng = np.random.default_rng(x)
    d = binomial_thin(np.full(200_000, x), alpha, rng).astype(float)
    n = d.size
    m, v = d.mean(), d.var(ddof=1)
    assert abs(m - alpha * x) < 3 * math.sqrt(alpha * (1 - alpha) * x / n)
    m4 = np.mean((d - m) ** 4)
    se_v = math.sqrt((m4 - v**2) / n)
    assert abs(v - alpha * (1 - alpha) * x) < 3 * se_v


# --------------------------------------------------------------------------- innovation pmf


def test_innovation_pmf_examples():
    assert innovation_pmf(InnovationModel(POIS, 1.0), 0) == pytest.approx(math.exp(-1), abs=1e-12)
    assert innovation_pmf(InnovationModel(NB, 2.0, 2.0), 0) == pytest.approx(0.25, abs=1e-12)
    k = np.arange(201)
    assert innovation_pmf(InnovationModel(POIS, 3.0), k).sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("lam,phi", [(0.5, 1.0), (7.0, 1.0), (1.0, 1.25), (4.0, 5.0), (9.0, 1.22)])
def test_innovation_pmf_matches_scipy(lam, phi):
    model = InnovationModel(POIS if phi == 1.0 else NB, lam, phi)
    k = np.arange(60)
    np.testing.assert_allclose(innovation_pmf(model, k), oracle_innov(k, lam, phi), rtol=1e-10, atol=1e-300)


def test_innovation_sample_moments():
    rng = np.random.default_rng(2)
    model = InnovationModel(NB, 3.0, 4.0)
    d = innovation_sample(model, 200_000, rng)
    assert d.mean() == pytest.approx(3.0, abs=0.05)
    assert d.var() == pytest.approx(12.0, rel=0.03)


def test_truncation_point():
    m = InnovationModel(NB, 4.0, 4.0)
    assert truncation_point(m, 0) >= math.ceil(4 + 12 * 4)
    heavy = InnovationModel(NB, 0.1, 4.0)
    assert stats.nbinom.sf(truncation_point(heavy), *heavy.nb_size_prob()) <= 1e-14
    assert truncation_point(m, 500) == 500


# --------------------------------------------------------------------------- conditional pmf


def test_conditional_pmf_examples():
    p2 = ComponentParams.make(0.6, 2.0)
    assert conditional_pmf(4, 0, p2) == pytest.approx(stats.poisson.pmf(4, 2), abs=1e-12)
    assert conditional_pmf(4, 0, p2) == pytest.approx(0.090224, abs=1e-6)
    assert conditional_pmf(4, 3, ComponentParams.make(0.0, 2.0)) == pytest.approx(stats.poisson.pmf(4, 2), abs=1e-12)
    brute = sum(math.comb(2, k) * 0.25 * math.exp(-1) / math.factorial(2 - k) for k in range(3))
    assert conditional_pmf(2, 2, ComponentParams.make(0.5, 1.0)) == pytest.approx(brute, abs=1e-14)


def test_conditional_pmf_normalisation_grid():
    """sum over x_t is 1 within 1e-8 for x_lag <= 30, 11 alphas, lambda <= 10, phi in {1, 2, 4}."""
    worst = 0.0
    for lam, phi, alpha in product([0.1, 1.0, 3.0, 10.0], [1.0, 2.0, 4.0], np.linspace(0, 1, 11)):
        model = InnovationModel(POIS if phi == 1.0 else NB, lam, phi)
        K = 30 + truncation_point(model)
        x_lag, x_t = np.meshgrid(np.arange(31), np.arange(K + 1), indexing="ij")
        tot = np.exp(transition_logpmf(x_lag, x_t, alpha, model)).sum(axis=1)
        worst = max(worst, np.abs(tot - 1).max())
    assert worst < 1e-8


@settings(max_examples=150, deadline=None)
@given(x_t=st.integers(0, 25), x_lag=st.integers(0, 25), alpha=st.floats(0, 1),
       lam=st.floats(0.05, 12), phi=st.sampled_from([1.0, 1.3, 2.0, 6.0]))
def test_conditional_pmf_matches_enumeration(x_t, x_lag, alpha, lam, phi):
    params = ComponentParams.make(alpha, lam, phi)
    assert conditional_pmf(x_t, x_lag, params) == pytest.approx(oracle_cond(x_t, x_lag, alpha, lam, phi),
                                                                rel=1e-9, abs=1e-300)


def test_conditional_pmf_deep_tail_is_finite():
    # linear-domain products underflow here; the log-sum-exp fallback must take over
    model = InnovationModel(POIS, 0.01)
    lp = transition_logpmf(np.array([300]), np.array([0]), 0.999, model)
    expect = 300 * math.log(0.001) - 0.01
    assert np.isfinite(lp[0]) and lp[0] == pytest.approx(expect, rel=1e-9)


# --------------------------------------------------------------------------- likelihood


def test_series_loglik_examples():
    pp = ComponentParams.make(0.5, 1.0)
    assert series_loglik([0, 0, 0], ComponentSpec(1), pp) == pytest.approx(-3.0, abs=1e-12)
    p3 = ComponentParams.make(0.3, 1.0)
    expect = math.log(stats.poisson.pmf(2, 1.0)) + math.log(oracle_cond(1, 2, 0.3, 1.0, 1.0))
    assert series_loglik([2, 1], ComponentSpec(1), p3) == pytest.approx(expect, abs=1e-12)
    x = [3, 0, 5, 2]
    pure = sum(math.log(stats.poisson.pmf(v, 1.0)) for v in x)
    assert series_loglik(x, ComponentSpec(4), p3) == pytest.approx(pure, abs=1e-12)
    assert series_loglik(x, ComponentSpec(9), p3) == pytest.approx(pure, abs=1e-12)


def test_series_loglik_zero_probability():
    # alpha = 1 and Poisson innovations: x_t < x_lag is impossible
    assert series_loglik([5, 1], ComponentSpec(1), ComponentParams.make(1.0, 1.0)) == -np.inf


def test_likelihood_oracle_exhaustive():
    """All series of length <= 5 (values <= 4) on a small parameter set, within 1e-12."""
    settings_ = [(1, 0.3, 1.0, 1.0), (2, 0.7, 2.5, 1.0), (1, 0.5, 1.5, 3.0), (3, 0.2, 0.8, 1.5)]
    worst = 0.0
    for lag, alpha, lam, phi in settings_:
        params = ComponentParams.make(alpha, lam, phi)
        for T in range(1, 6):
            for x in product(range(5), repeat=T):
                if T == 5 and sum(x) % 3:  # thin the largest layer to keep runtime small
                    continue
                got = math.exp(series_loglik(list(x), ComponentSpec(lag), params))
                worst = max(worst, abs(got - oracle_series_prob(x, lag, alpha, lam, phi)))
    assert worst < 1e-12


# --------------------------------------------------------------------------- simulation


def test_simulate_alpha_zero_is_iid_innovations():
    p = ComponentParams.make(0.0, 3.0)
    a = simulate_inar(ComponentSpec(2), p, 40, np.random.default_rng(5))
    b = np.random.default_rng(5).poisson(3.0, size=40)
    np.testing.assert_array_equal(a, b)


def test_simulate_shapes_and_start():
    rng = np.random.default_rng(0)
    x = simulate_inar(ComponentSpec(3), ComponentParams.make(0.9, 2.0), 30, rng, size=(4, 5))
    assert x.shape == (4, 5, 30) and x.min() >= 0
    with pytest.raises(ValueError):
        simulate_inar(ComponentSpec(1), ComponentParams.make(0.5, 1.0), 0, rng)


def test_simulate_stationary_mean():
    rng = np.random.default_rng(11)
    x = simulate_inar(ComponentSpec(1), ComponentParams.make(0.2, 7.0), 50, rng, size=200)
    assert abs(x.mean() - 8.75) < 0.2


def test_simulate_lag_structure_acf():
    rng = np.random.default_rng(3)
    x = simulate_inar(ComponentSpec(4), ComponentParams.make(0.7, 1.0), 4000, rng).astype(float)
    x = x[100:] - x[100:].mean()

    def r(k):
        return (x[k:] @ x[:-k]) / (x @ x)

    assert r(4) == pytest.approx(0.7, abs=0.06)
    assert abs(r(1)) < 0.06 and abs(r(2)) < 0.06


def test_simulation_likelihood_consistency():
    spec = ComponentSpec(2)
    truth = ComponentParams.make(0.5, 2.0, 2.0)
    wins = 0
    for seed in range(100):
        x = simulate_inar(spec, truth, 60, np.random.default_rng(seed))
        ll = series_loglik(x, spec, truth)
        worse = [series_loglik(x, spec, ComponentParams.make(a, 2.0, 2.0)) for a in (0.3, 0.7)]
        wins += ll > max(worse)
    assert wins >= 95
