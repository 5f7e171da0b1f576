import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from statsmodels.tsa.stattools import acf as sm_acf

from conftest import scenario_panel
from inarmix.core import ComponentSpec, Family
from inarmix.selection import (
    ModelGrid,
    SearchFailedError,
    acf_panel,
    bic,
    diagnose,
    dispersion_diagnostic,
    enumerate_models,
    model_search,
    n_free_params,
    select_best,
)
from inarmix.initialization import InitConfig
from inarmix.panel import PanelData

POIS, NB = Family.POISSON, Family.NEGBIN


# --------------------------------------------------------------------------- BIC


def test_bic_examples():
    assert bic(0.0, 1, POIS, 1) == 0.0
    assert 2 * 0.0 - n_free_params(1, POIS) * math.log(math.e) == pytest.approx(-2.0)
    assert n_free_params(2, POIS) == 5 and n_free_params(2, NB) == 7
    diff = bic(-5000.0, 2, POIS, 10_000) - bic(-5000.0, 3, POIS, 10_000)
    assert diff == pytest.approx(3 * math.log(10_000)) and diff == pytest.approx(27.63, abs=0.01)
    with pytest.raises(ValueError):
        bic(0.0, 1, POIS, 0)


def test_bic_e_observations():
    # n_obs must be a count; log(n) = 1 is reached through the formula directly
    rho = n_free_params(1, POIS)
    assert 2 * 0.0 - rho * 1.0 == -2.0


@given(ll=st.floats(-1e6, 0), G=st.integers(1, 10), n=st.integers(2, 10**6))
def test_bic_penalty_monotone(ll, G, n):
    for fam in (POIS, NB):
        assert bic(ll, G + 1, fam, n) < bic(ll, G, fam, n)
    assert bic(ll, G, NB, n) < bic(ll, G, POIS, n)


# --------------------------------------------------------------------------- enumeration


def test_enumerate_examples():
    c = enumerate_models(ModelGrid((1, 7), (2, 2)))
    assert [[s.lag for s in x.specs] for x in c] == [[1, 1], [1, 7]]
    assert c[1].label == "1xINAR(1*) + 1xINAR(7*)"
    assert len(enumerate_models(ModelGrid((5, 10), (2, 3)))) == 4
    full = enumerate_models(ModelGrid((5, 10), (3, 3), "full"))
    assert [x.H for x in full] == [0, 1, 2, 3]
    assert len(enumerate_models(ModelGrid((5, 10), (2, 2), "0"))) == 1


@given(lo=st.integers(1, 5), span=st.integers(0, 4), rule=st.sampled_from(["0", "01", "full"]))
def test_enumerate_size_and_order(lo, span, rule):
    grid = ModelGrid((2, 4), (lo, lo + span), rule)
    cands = enumerate_models(grid)
    assert len(cands) == sum(len(grid.h_values(G)) for G in range(lo, lo + span + 1))
    keys = [(c.G, c.H) for c in cands]
    assert keys == sorted(keys) and len(set(keys)) == len(keys)
    assert all(c.H <= c.G and len(c.specs) == c.G for c in cands)


def test_grid_validation():
    for bad in [dict(lag_pair=(4, 2), g_range=(2, 3)), dict(lag_pair=(0, 2), g_range=(2, 3)),
                dict(lag_pair=(2, 4), g_range=(3, 2)), dict(lag_pair=(2, 4), g_range=(2, 3), h_rule="x")]:
        with pytest.raises(ValueError):
            ModelGrid(**bad)


# --------------------------------------------------------------------------- search


def test_select_best_tie_breaks():
    rows = [{"bic": -10.0, "n_params": 7, "error": None, "structure": "a"},
            {"bic": -10.0, "n_params": 5, "error": None, "structure": "b"},
            {"bic": None, "n_params": 3, "error": "boom", "structure": "c"},
            {"bic": -10.0, "n_params": 5, "error": None, "structure": "d"}]
    assert select_best(rows) == 1
    assert [r["selected"] for r in rows] == [False, True, False, False]
    with pytest.raises(SearchFailedError):
        select_best([{"bic": None, "n_params": 3, "error": "x", "structure": "c"}])


def test_single_candidate_search():
    _, panel, _ = scenario_panel("poisson-easy", 0, n=60)
    res = model_search(panel, ModelGrid((5, 10), (2, 2), "0"), rng=np.random.default_rng(0))
    assert len(res.table) == 1 and res.table[0]["selected"]
    assert res.best.G == 2


def test_failures_are_recorded_and_skipped():
    panel = PanelData.from_array([[0, 1, 2, 1, 0, 2], [3, 4, 3, 5, 4, 4]])
    res = model_search(panel, ModelGrid((1, 2), (1, 3)), InitConfig(match_replicates=2),
                       rng=np.random.default_rng(0))
    errs = [r for r in res.table if r["error"]]
    assert {r["G"] for r in errs} == {3} and res.best.G <= 2
    with pytest.raises(SearchFailedError):
        model_search(panel, ModelGrid((1, 2), (3, 3)), rng=np.random.default_rng(0))


def test_warm_starts_and_determinism():
    _, panel, _ = scenario_panel("nb-very-difficult", 5, n=120)
    grid = ModelGrid((2, 4), (2, 3), family=NB)
    a = model_search(panel, grid, rng=np.random.default_rng(1))
    b = model_search(PanelData(panel.series, panel.ids), grid, rng=np.random.default_rng(1))
    assert [r["start"] for r in a.table] == ["kmeans", "kmeans", "warm:2,0", "warm:2,1"]
    assert a.table == b.table
    assert a.best_candidate.label == "1xINAR(2*) + 1xINAR(4*)"
    for r in a.table:
        assert r["neg2ll_bic"] == pytest.approx(-r["bic"])


def test_poisson_moderate_selects_two_lag5():
    picks = []
    for seed in range(2):
        spec, panel, _ = scenario_panel("poisson-moderate", 50 + seed)
        res = model_search(panel, spec.grid(), rng=np.random.default_rng(seed))
        picks.append((res.best_candidate.G, res.best_candidate.H))
    assert picks.count((2, 0)) >= 1


# --------------------------------------------------------------------------- diagnostics


def test_acf_matches_statsmodels():
    rng = np.random.default_rng(0)
    panel = PanelData.from_array(rng.poisson(3, (10, 40)))
    res = acf_panel(panel, 8)
    for i, x in enumerate(panel.series):
        np.testing.assert_allclose(res.acf[i], sm_acf(x, nlags=8, adjusted=False, fft=False)[1:], atol=1e-12)
    assert np.all(np.abs(res.acf) <= 1)


def test_acf_constant_and_alternating():
    panel = PanelData.from_array([[2] * 10, [0, 1] * 5])
    res = acf_panel(panel, 3)
    assert res.constant.tolist() == [True, False]
    assert np.all(res.acf[0] == 0)
    assert res.acf[1, 0] < 0 < res.acf[1, 1]
    with pytest.raises(ValueError):
        acf_panel(panel, 10)


def test_suggested_lags_nb_panel(nb_very_easy):
    _, panel, _ = nb_very_easy
    assert acf_panel(panel, 12).suggested_lags == (2, 4)


def test_suggested_lags_poisson_panel():
    _, panel, _ = scenario_panel("poisson-moderate", 0)
    assert 5 in acf_panel(panel, 12).suggested_lags


def test_acf_iid_panel_small():
    ok = 0
    for seed in range(20):
        panel = PanelData.from_array(np.random.default_rng(seed).poisson(4, (100, 50)))
        ok += np.all(acf_panel(panel, 10).median_abs <= 2 / math.sqrt(50))
    assert ok >= 18


def test_dispersion_verdicts(nb_very_easy):
    _, nb_panel, _ = nb_very_easy
    _, pois_panel, _ = scenario_panel("poisson-moderate", 0)
    d = dispersion_diagnostic(pois_panel)
    assert d.verdict == "equi" and d.median_ratio < 1.2
    x = pois_panel.series[0]
    assert d.variances[0] == pytest.approx(x.var(ddof=1)) and d.means[0] == pytest.approx(x.mean())
    assert dispersion_diagnostic(nb_panel).verdict == "over"
    flat = dispersion_diagnostic(PanelData.from_array(np.full((4, 6), 2)))
    assert flat.verdict == "equi" and np.all(flat.ratios == 0)
    assert dispersion_diagnostic(pois_panel, threshold=0.5).verdict == "over"


def test_diagnose_report(nb_very_easy):
    _, panel, _ = nb_very_easy
    rep = diagnose(panel, max_lag=100)
    assert rep.acf.lags.size == panel.lengths.min() - 1
    assert rep.suggested_family is NB and rep.dispersion_verdict == "over"
    assert set(rep.acf_by_lag) == set(range(1, 30)) and rep.dispersion_points.shape == (panel.n, 2)
    s = rep.summary()
    assert s["suggested_lags"] == [2, 4] and s["suggested_family"] == "nb"
