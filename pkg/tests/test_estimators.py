import numpy as np
import pytest
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from regionstack.data import concat_tables, region_means
from regionstack.estimators import RegionL0Transformer, RegionMeanTransformer, SiteClassifier, StackedAgeRegressor
from regionstack.exceptions import InvalidInputError, ShapeError
from regionstack.glmnet import GlmnetRegressor, TuneGrid
from regionstack.privacy import fit_ovr_logistic
from regionstack.stacking import StackConfig, apply_l0_bank, run_setup, train_l0_bank

FAST = dict(n_lambda=8, inner_folds=3)
FAST_CFG = StackConfig(grid=TuneGrid(n_lambda=8, inner_folds=3))


def _pooled(tables):
    both = concat_tables(tables)
    sites = np.concatenate([np.full(t.n, t.site) for t in tables])
    return both.features, both.ages, sites


def test_params_and_clone(small_data):
    _, parc, _ = small_data
    for est in [RegionMeanTransformer(parc), RegionL0Transformer(parc, **FAST),
                StackedAgeRegressor("GMV_pL1_p", parc, **FAST), SiteClassifier(C=0.5)]:
        c = clone(est)
        assert c.get_params().keys() == est.get_params().keys()
        assert type(c) is type(est)


def test_region_mean_transformer(small_data):
    tables, parc, _ = small_data
    t = tables[0]
    out = RegionMeanTransformer(parc).fit_transform(t.features)
    np.testing.assert_array_equal(out, region_means(t, parc))
    with pytest.raises(ShapeError):
        RegionMeanTransformer(parc).fit(t.features[:, :-1])


def test_region_l0_transformer_matches_functional_core(small_data):
    tables, parc, _ = small_data
    t = tables[0]
    tr = RegionL0Transformer(parc, random_state=4, **FAST)
    oos = tr.fit_transform(t.features, t.ages)
    bank, ref = train_l0_bank(t, parc, 3, 4, FAST_CFG)
    np.testing.assert_array_equal(oos, ref.values)
    np.testing.assert_array_equal(tr.transform(tables[1].features), apply_l0_bank(bank, tables[1]))
    with pytest.raises(InvalidInputError):
        RegionL0Transformer(parc).fit_transform(t.features)


def test_stacked_regressor_matches_run_setup(small_data):
    tables, parc, _ = small_data
    X, y, sites = _pooled(tables[:2])
    test = tables[2]
    for setup in ["GMV_pL1_p", "PredL0_sL1_s", "OOSPred_sL1_p"]:
        est = StackedAgeRegressor(setup, parc, random_state=3, **FAST).fit(X, y, sites)
        pred = est.predict(test.features, ages=test.ages)
        np.testing.assert_allclose(pred, run_setup(setup, tables[:2], test, parc, FAST_CFG, 3), atol=1e-10)


def test_stacked_regressor_errors(small_data):
    tables, parc, _ = small_data
    X, y, sites = _pooled(tables[:2])
    est = StackedAgeRegressor("OOSPred_pL1_p", parc, **FAST).fit(X, y, sites)
    with pytest.raises(InvalidInputError):
        est.predict(tables[2].features)
    with pytest.raises(InvalidInputError):
        StackedAgeRegressor("GMV_pL1_p_ext", parc, **FAST).fit(X, y, sites)
    with pytest.raises(InvalidInputError):
        StackedAgeRegressor("GMV_pL1_p").fit(X, y, sites)


def test_site_classifier_and_pipeline(small_data):
    tables, parc, _ = small_data
    X, _, sites = _pooled(tables)
    clf = SiteClassifier(C=1.0).fit(region_means(X, parc), sites)
    assert clf.classes_.tolist() == ["site0", "site1", "site2"]
    ref = fit_ovr_logistic(region_means(X, parc), sites, 1.0)
    np.testing.assert_array_equal(clf.decision_function(region_means(X, parc)), ref.decision_function(region_means(X, parc)))
    pipe = make_pipeline(RegionMeanTransformer(parc), SiteClassifier(C=1.0)).fit(X, sites)
    np.testing.assert_array_equal(pipe.predict(X), clf.predict(region_means(X, parc)))
    assert 0.0 <= pipe.score(X, sites) <= 1.0


def test_glmnet_regressor_in_pipeline(rng):
    X = rng.normal(size=(60, 4))
    y = X @ np.array([1.0, -2.0, 0.0, 0.5]) + 40
    est = GlmnetRegressor().fit(X, y)
    assert est.score(X, y) > 0.99
    assert clone(est).get_params() == est.get_params()
