import warnings

import numpy as np
import pytest

from regionstack.data import (
    Parcellation,
    SubjectTable,
    concat_tables,
    kfold_split,
    load_features,
    load_parcellation,
    region_means,
    region_view,
    sort_by_site,
    write_features,
    write_parcellation,
)
from regionstack.exceptions import InvalidInputError, ParseError, ValidationError


def _table(n=4, p=4, site="A", seed=0):
    rng = np.random.default_rng(seed)
    ids = np.array([f"{site}{i}" for i in range(n)])
    return SubjectTable(ids, site, rng.uniform(20, 80, n), rng.uniform(0, 1, (n, p)))


def test_table_validation():
    with pytest.raises(InvalidInputError):
        SubjectTable(np.array(["a", "a"]), "s", np.array([20.0, 30.0]), np.ones((2, 1)))
    with pytest.raises(InvalidInputError):
        SubjectTable(np.array(["a", "b"]), "s", np.array([20.0, -1.0]), np.ones((2, 1)))
    with pytest.raises(InvalidInputError):
        SubjectTable(np.array(["a", "b"]), "s", np.array([20.0, 30.0]), np.array([[1.0], [np.nan]]))
    with pytest.raises(InvalidInputError):
        SubjectTable(np.array(["a", "b"]), "s", np.array([20.0]), np.ones((2, 1)))


def test_negative_features_warn():
    with pytest.warns(UserWarning, match="negative"):
        SubjectTable(np.array(["a"]), "s", np.array([20.0]), np.array([[-1.0]]))


def test_table_is_read_only():
    t = _table()
    with pytest.raises(ValueError):
        t.features[0, 0] = 5.0


def test_site_properties_and_concat():
    a, b = _table(site="A"), _table(site="B", seed=1)
    both = concat_tables([a, b])
    assert both.n == 8 and both.site_labels == ["A", "B"]
    with pytest.raises(InvalidInputError):
        _ = both.site
    assert [t.site for t in sort_by_site([b, a])] == ["A", "B"]
    with pytest.raises(InvalidInputError):
        sort_by_site([a, _table(site="A", seed=2)])


def test_parcellation_examples():
    p = Parcellation(np.array([0, 0, 1, 1]))
    assert p.n_regions == 2 and p.n_voxels == 4
    with pytest.raises(ValidationError):
        Parcellation(np.array([0, 2, 2]))
    with pytest.raises(ValidationError):
        Parcellation(np.array([0.0, 1.0]))
    dense, ids = Parcellation.from_sparse_ids([7, 3, 7, 9])
    assert dense.region_of.tolist() == [1, 0, 1, 2] and ids.tolist() == [3, 7, 9]


def test_region_view_examples():
    p = Parcellation(np.array([0, 0, 1, 1]))
    t = SubjectTable(np.array(["x"]), "s", np.array([30.0]), np.array([[1.0, 3.0, 10.0, 20.0]]))
    assert region_view(t, p, 0).tolist() == [[1.0, 3.0]]
    assert region_view(t, p, 1).tolist() == [[10.0, 20.0]]
    with pytest.raises(IndexError):
        region_view(t, p, 2)
    single = Parcellation(np.array([0, 1, 1, 1]))
    assert region_view(t, single, 0).shape == (1, 1)
    assert region_means(t, p).tolist() == [[2.0, 15.0]]


def test_region_views_partition_columns():
    p = Parcellation(np.array([2, 0, 1, 0, 2, 1, 1]))
    cols = np.sort(np.concatenate(p.columns))
    assert cols.tolist() == list(range(7))
    assert all(np.all(np.diff(c) > 0) for c in p.columns)


def test_region_means_identical_voxels():
    p = Parcellation(np.array([0, 0, 0]))
    t = SubjectTable(np.array(["x"]), "s", np.array([30.0]), np.full((1, 3), 0.1))
    assert region_means(t, p)[0, 0] == pytest.approx(0.1, rel=1e-15)


def test_kfold_examples():
    ages = np.arange(20.0, 26.0)
    f = kfold_split(ages, 3, seed=4)
    assert np.bincount(f.fold_of).tolist() == [2, 2, 2]
    np.testing.assert_array_equal(f.fold_of, kfold_split(ages, 3, seed=4).fold_of)
    tertile = np.arange(6) // 2
    for k in range(3):
        # six subjects cannot fill 3 folds x 3 tertiles; each fold holds distinct tertiles
        assert len(set(tertile[f.fold_of == k])) == 2
    f9 = kfold_split(np.arange(9.0), 3, seed=4)
    for k in range(3):
        assert sorted((np.arange(9) // 3)[f9.fold_of == k].tolist()) == [0, 1, 2]


def test_kfold_errors():
    with pytest.raises(InvalidInputError):
        kfold_split(np.arange(2.0), 3, 0)
    with pytest.raises(InvalidInputError):
        kfold_split(np.arange(5.0), 1, 0)


def test_fold_rows_partition():
    f = kfold_split(np.random.default_rng(0).uniform(20, 80, 31), 3, 1)
    rows = np.concatenate([f.test_rows(k) for k in range(3)])
    assert sorted(rows.tolist()) == list(range(31))
    for k in range(3):
        assert np.intersect1d(f.test_rows(k), f.train_rows(k)).size == 0


def test_features_roundtrip(tmp_path):
    t = _table(n=2, p=4)
    path = tmp_path / "f.csv"
    write_features(path, t)
    back = load_features(path)
    assert back.n == 2 and back.n_features == 4
    np.testing.assert_array_equal(back.features, t.features)
    np.testing.assert_array_equal(back.ages, t.ages)
    assert back.subject_ids.tolist() == t.subject_ids.tolist()
    raw = path.read_bytes()
    assert raw.startswith(b"subject_id,site,age,v0,v1,v2,v3\n") and b"\r" not in raw


def test_features_parse_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("subject_id,site,age,v0\na,s,abc,1.0\n")
    with pytest.raises(ParseError, match="row 2.*age"):
        load_features(path)
    path.write_text("subject_id,site,age,v0\na,s,20,x\n")
    with pytest.raises(ParseError, match="v0"):
        load_features(path)
    path.write_text("subject_id,site,age,v0\na,s,20,1\na,s,30,2\n")
    with pytest.raises(ParseError, match="duplicate"):
        load_features(path)
    path.write_text("id,site,age,v0\n")
    with pytest.raises(ParseError):
        load_features(path)
    path.write_text("subject_id,site,age,v0,v2\na,s,20,1,2\n")
    with pytest.raises(ParseError, match="v1"):
        load_features(path)


def test_parcellation_roundtrip_and_errors(tmp_path):
    path = tmp_path / "p.csv"
    p = Parcellation(np.array([0, 0, 1, 1]))
    write_parcellation(path, p)
    assert load_parcellation(path).region_of.tolist() == [0, 0, 1, 1]
    path.write_text("voxel_index,region_id\n0,0\n1,0\n3,1\n")
    with pytest.raises(ValidationError):
        load_parcellation(path)
    path.write_text("voxel_index,region_id\n0,0\n1,2\n")
    with pytest.raises(ValidationError):
        load_parcellation(path)
    path.write_text("voxel_index,region_id\n0,0\n0,1\n")
    with pytest.raises(ValidationError):
        load_parcellation(path)


def test_subset_keeps_rows():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        t = _table(n=5)
        s = t.subset([4, 0])
    assert s.subject_ids.tolist() == ["A4", "A0"]
