import json
import math

import numpy as np
import pytest

from regionstack.evaluation import (
    MetricSet,
    bias_corr,
    loso_evaluate,
    mae,
    pearson_r,
    r_squared,
    region_age_correlations,
    site_count_sweep,
)
from regionstack.exceptions import InvalidInputError
from regionstack.glmnet import TuneGrid
from regionstack.stacking import StackCache, StackConfig

FAST = StackConfig(grid=TuneGrid(n_lambda=8, inner_folds=3))


# --- hand-computable metric examples (exact) ---------------------------------

def test_mae_examples():
    assert mae([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mae([20.0, 40.0], [30.0, 30.0]) == 10.0
    assert mae([120.0, 140.0], [130.0, 130.0]) == 10.0
    with pytest.raises(InvalidInputError):
        mae([1.0], [1.0, 2.0])
    with pytest.raises(InvalidInputError):
        mae([], [])


def test_pearson_examples():
    assert pearson_r([1, 2, 3], [2, 4, 6]) == 1.0
    assert pearson_r([1, 2, 3], [3, 2, 1]) == -1.0
    assert math.isnan(pearson_r([1, 2, 3], [5, 5, 5]))
    with pytest.raises(InvalidInputError):
        pearson_r([1.0], [2.0])


def test_r_squared_examples():
    assert r_squared([1, 2, 3], [1, 2, 3]) == 1.0
    assert r_squared([1, 2, 3], [2, 2, 2]) == 0.0
    # residuals 3 and -3: 1 - 18/2
    assert r_squared([0, 2], [3, -1]) == -8.0
    assert r_squared([0, 2], [2, 0]) == -3.0
    assert math.isnan(r_squared([4, 4, 4], [1, 2, 3]))


def test_bias_examples():
    assert bias_corr([20, 40, 60], [35, 35, 35]) == 1.0
    assert math.isnan(bias_corr([20, 40, 60], [20, 40, 60]))
    y = np.array([20.0, 40.0, 60.0])
    assert bias_corr(y, 2 * y - y.mean()) == -1.0


def test_metric_set_flags():
    m = MetricSet.from_predictions([20, 40, 60], [20, 40, 60])
    assert m.undefined == ("bias",)
    assert m.mae == 0.0 and m.r2 == 1.0 and m.pearson_r == 1.0
    d = m.to_dict()
    assert d["bias"] is None and d["undefined"] == ["bias"]
    json.dumps(d)  # serializable without NaN
    c = MetricSet.from_predictions([20, 40, 60], [35, 35, 35])
    assert c.undefined == ("pearson_r",) and c.bias == 1.0


def test_metric_identities(rng):
    y = rng.uniform(20, 80, 50)
    yhat = y + rng.normal(0, 5, 50)
    n = y.size
    assert r_squared(y, yhat) == pytest.approx(1 - n * np.mean((y - yhat) ** 2) / np.sum((y - y.mean()) ** 2), rel=1e-12)
    assert pearson_r(y, yhat) == pytest.approx(pearson_r(yhat, y), abs=1e-15)
    assert bias_corr(y, yhat) == pearson_r(y, y - yhat)
    assert pearson_r(y, 3 * yhat + 7) == pytest.approx(pearson_r(y, yhat), abs=1e-12)
    assert mae(y + 5, yhat + 5) == pytest.approx(mae(y, yhat), rel=1e-12)
    assert pearson_r(y, yhat) == pytest.approx(np.corrcoef(y, yhat)[0, 1], abs=1e-12)


# --- orchestration -----------------------------------------------------------

def test_loso_rows_and_determinism(small_data):
    tables, parc, _ = small_data
    rep = loso_evaluate(tables, parc, ["GMV_pL1_p", "PredL0_sL1_p"], FAST, seed=1)
    assert len(rep.rows) == 6
    assert {r.test_site for r in rep.rows} == {"site0", "site1", "site2"}
    again = loso_evaluate(list(reversed(tables)), parc, ["GMV_pL1_p", "PredL0_sL1_p"], FAST, seed=1)
    assert rep.to_json() == again.to_json()
    assert rep.to_csv() == again.to_csv()
    doc = json.loads(rep.to_json())
    assert doc["schema_version"] == 1 and doc["seed"] == 1
    summary = {(s["setup"], s["n_train_sites"]): s for s in doc["summary"]}
    maes = [r.metrics.mae for r in rep.rows if r.setup == "GMV_pL1_p"]
    assert summary[("GMV_pL1_p", 2)]["mean_mae"] == pytest.approx(np.mean(maes), rel=1e-15)


def test_loso_two_sites_and_errors(small_data):
    tables, parc, _ = small_data
    rep = loso_evaluate(tables[:2], parc, ["GMV_sL1_s"], FAST, seed=0)
    assert len(rep.rows) == 2
    with pytest.raises(InvalidInputError):
        loso_evaluate(tables[:1], parc, ["GMV_sL1_s"], FAST)
    with pytest.raises(InvalidInputError):
        loso_evaluate([tables[0], tables[0]], parc, ["GMV_sL1_s"], FAST)
    with pytest.raises(InvalidInputError):
        loso_evaluate(tables, parc, ["Nope"], FAST)


def test_sweep_combinations_match_loso(small_data):
    tables, parc, _ = small_data
    cache = StackCache()
    sweep = site_count_sweep(tables, parc, ["PredL0_pL1_p"], FAST, seed=2, cache=cache)
    # 3 sites: per test site C(2,1) + C(2,2) = 3 combinations
    assert len(sweep.rows) == 9
    for r in sweep.rows:
        assert list(r.train_sites) == sorted(r.train_sites)
        assert r.test_site not in r.train_sites
    loso = loso_evaluate(tables, parc, ["PredL0_pL1_p"], FAST, seed=2)
    for r in loso.rows:
        s = sweep.row("PredL0_pL1_p", r.test_site, r.train_sites)
        assert s.metrics.mae == pytest.approx(r.metrics.mae, abs=1e-10)
    with pytest.raises(InvalidInputError):
        site_count_sweep(tables[:2], parc, ["PredL0_pL1_p"], FAST)


def test_region_correlations(small_data):
    tables, parc, _ = small_data
    rep = region_age_correlations(tables, parc, K=3, seed=0, cfg=FAST)
    for s in rep.sites:
        assert rep.corr_l0[s].shape == (parc.n_regions,)
        vals = np.concatenate([rep.corr_l0[s], rep.corr_mean[s]])
        assert np.all(np.abs(vals[~np.isnan(vals)]) <= 1.0)
    summ = rep.summary()
    assert 0.0 <= summ["mean_abs_corr_l0"] <= 1.0 and 0.0 <= summ["mean_abs_corr_mean"] <= 1.0
    assert rep.to_csv().count("\n") == 1 + len(rep.sites) * parc.n_regions
    assert rep.to_json() == region_age_correlations(tables, parc, 3, 0, FAST).to_json()


def test_region_correlation_flags_constant_region():
    from regionstack.data import Parcellation, SubjectTable

    rng = np.random.default_rng(0)
    ages = rng.uniform(20, 80, 12)
    feats = np.column_stack([np.full(12, 5.0), ages + rng.normal(0, 1, 12)])
    t = SubjectTable(np.array([f"s{i}" for i in range(12)]), "a", ages, feats)
    rep = region_age_correlations([t], Parcellation(np.array([0, 1])), K=3, seed=0, cfg=FAST)
    assert math.isnan(rep.corr_mean["a"][0])
    assert rep.summary()["per_site"]["a"]["n_undefined_mean"] == 1
