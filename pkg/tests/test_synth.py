import dataclasses
import warnings

import numpy as np
import pytest

from regionstack.data import region_means
from regionstack.exceptions import ValidationError
from regionstack.glmnet import TuneGrid
from regionstack.stacking import StackConfig, oos_l0_on_site
from regionstack.synth import SynthConfig, default_benchmark, generate

FAST = StackConfig(grid=TuneGrid(n_lambda=8, inner_folds=3))


def _gen(cfg, seed):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return generate(cfg, seed)


def _region_corr(X, ages):
    return np.array([np.corrcoef(X[:, r], ages)[0, 1] for r in range(X.shape[1])])


def test_noiseless_single_sign_regions_track_age():
    cfg = SynthConfig(n_sites=1, n_per_site=100, age_ranges=((20.0, 80.0),), n_regions=5, voxels_per_region=4,
                      frac_pos=1.0, frac_neg=0.0, frac_null=0.0, noise_sd=0.0, site_offset_sd=0.0)
    tables, parc, _ = _gen(cfg, 0)
    r = _region_corr(region_means(tables[0], parc), tables[0].ages)
    assert np.all(np.abs(r) >= 0.99)


def test_mixed_signs_cancel_in_means_but_not_per_voxel():
    cfg = SynthConfig(n_sites=1, n_per_site=200, age_ranges=((20.0, 80.0),), n_regions=6, voxels_per_region=20,
                      frac_pos=0.5, frac_neg=0.5, frac_null=0.0, loading_sd=0.0, sign_allocation="exact")
    tables, parc, _ = _gen(cfg, 3)
    t = tables[0]
    mean_corr = np.abs(_region_corr(region_means(t, parc), t.ages)).mean()
    l0_corr = np.abs(_region_corr(oos_l0_on_site(t, parc, 3, 0, FAST), t.ages)).mean()
    assert mean_corr < 0.3
    assert l0_corr > 0.8


def test_same_seed_is_bit_identical():
    cfg = SynthConfig(n_sites=2, n_per_site=10, age_ranges=((20.0, 60.0), (30.0, 70.0)), n_regions=3, voxels_per_region=2)
    a, _, ta = _gen(cfg, 5)
    b, _, tb = _gen(cfg, 5)
    for x, y in zip(a, b):
        assert x.features.tobytes() == y.features.tobytes()
        assert x.ages.tobytes() == y.ages.tobytes()
        assert x.subject_ids.tolist() == y.subject_ids.tolist()
    assert ta.loadings.tobytes() == tb.loadings.tobytes()
    c, _, _ = _gen(cfg, 6)
    assert c[0].features.tobytes() != a[0].features.tobytes()


def test_exact_sign_allocation_counts():
    cfg = SynthConfig(n_sites=1, n_per_site=5, age_ranges=((20.0, 80.0),), n_regions=3, voxels_per_region=10,
                      sign_allocation="exact")
    _, parc, truth = _gen(cfg, 0)
    for cols in parc.columns:
        assert sorted(truth.components[cols].tolist()) == [-1] * 4 + [0] * 2 + [1] * 4


def test_iid_signs_do_not_cancel_in_a_single_draw():
    # realized mean loading of an iid draw is nonzero, and its region-mean SNR
    # does not shrink with region size
    cfg = SynthConfig(n_sites=1, n_per_site=200, age_ranges=((20.0, 80.0),), n_regions=6, voxels_per_region=20,
                      frac_pos=0.5, frac_neg=0.5, frac_null=0.0)
    tables, parc, truth = _gen(cfg, 3)
    mean_loading = np.array([truth.loadings[c].mean() for c in parc.columns])
    r = _region_corr(region_means(tables[0], parc), tables[0].ages)
    assert np.corrcoef(np.abs(mean_loading), np.abs(r))[0, 1] > 0.5


def test_default_benchmark_shape():
    cfg = default_benchmark()
    tables, parc, truth = _gen(cfg, 0)
    assert sum(t.n for t in tables) == 1200
    assert parc.n_voxels == 1000 and parc.n_regions == 50
    assert [t.site for t in tables] == ["site0", "site1", "site2", "site3"]
    for t, (lo, hi) in zip(tables, cfg.age_ranges):
        assert lo <= t.ages.min() and t.ages.max() <= hi
    assert cfg.site_offset_sd == 0.5 and cfg.nonlinearity == "none"


def test_ground_truth_structure():
    cfg = SynthConfig(n_sites=2, n_per_site=30, age_ranges=((20.0, 60.0),) * 2, n_regions=4, voxels_per_region=25)
    tables, _, truth = _gen(cfg, 1)
    assert truth.offsets.shape == (2, cfg.n_voxels)
    assert np.all(truth.loadings[truth.components == 0] == 0.0)
    assert np.all((truth.region_scale >= 0.5) & (truth.region_scale <= 1.5))
    d = truth.to_dict()
    assert set(d["offsets"]) == {"site0", "site1"}


def test_offsets_are_constant_within_site():
    cfg = SynthConfig(n_sites=2, n_per_site=40, age_ranges=((20.0, 60.0),) * 2, n_regions=3, voxels_per_region=4,
                      noise_sd=0.0)
    tables, parc, truth = _gen(cfg, 2)
    from regionstack.synth import region_signal

    for s, t in enumerate(tables):
        signal = region_signal(cfg, truth.region_scale, t.ages)[:, parc.region_of] * truth.loadings
        residual = t.features - cfg.baseline - signal
        np.testing.assert_allclose(residual, np.broadcast_to(truth.offsets[s], residual.shape), atol=1e-10)


def test_low_noise_signal_is_recoverable():
    cfg = SynthConfig(n_sites=1, n_per_site=120, age_ranges=((20.0, 80.0),), n_regions=4, voxels_per_region=6,
                      frac_pos=1.0, frac_neg=0.0, frac_null=0.0, noise_sd=0.01, site_offset_sd=0.0)
    tables, parc, _ = _gen(cfg, 4)
    r = _region_corr(oos_l0_on_site(tables[0], parc, 3, 0, FAST), tables[0].ages)
    assert np.all(r >= 0.98)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_offsets_do_not_correlate_with_age(seed):
    # matched age ranges; staggered ranges make site itself an age proxy
    cfg = dataclasses.replace(default_benchmark(), age_ranges=((18.0, 88.0),) * 4)
    tables, _, truth = _gen(cfg, seed)
    ages = np.concatenate([t.ages for t in tables])
    U = np.concatenate([np.tile(truth.offsets[s], (t.n, 1)) for s, t in enumerate(tables)])
    assert np.all(np.abs(_region_corr(U, ages)) < 0.1)


def test_quadratic_signal():
    cfg = SynthConfig(n_sites=1, n_per_site=3, age_ranges=((20.0, 80.0),), n_regions=1, voxels_per_region=1,
                      nonlinearity="quadratic", quadratic_coef=0.25, region_signal_scale=2.0)
    from regionstack.synth import region_signal

    g = region_signal(cfg, [1.0], [50.0, 70.0, 30.0])[:, 0]
    np.testing.assert_allclose(g, 2.0 * np.array([0.0, 1.25, -0.75]), rtol=1e-15)


@pytest.mark.parametrize("kw", [
    {"frac_pos": 0.5, "frac_neg": 0.5, "frac_null": 0.1},
    {"noise_sd": -1.0},
    {"n_sites": 2},
    {"age_ranges": ((50.0, 40.0),) * 4},
    {"nonlinearity": "cubic"},
    {"n_regions": 0},
    {"sign_allocation": "balanced"},
])
def test_invalid_configs(kw):
    with pytest.raises(ValidationError):
        SynthConfig(**kw)


def test_config_dict_roundtrip():
    cfg = default_benchmark()
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValidationError):
        SynthConfig.from_dict({"n_sitez": 3})
