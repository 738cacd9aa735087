"""Two-level region-wise stacking: level-0 banks, level-1 models, setups.

Level 0 fits one tuned elastic net per region on that region's voxels and
produces K-fold out-of-fold (OOS) regional age predictions; level 1 fits a
tuned elastic net on the R regional predictions. :func:`run_setup` executes
any of the train/test fusion setups listed in :data:`SETUPS`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .data import (
    FoldAssignment,
    Parcellation,
    SubjectTable,
    concat_tables,
    kfold_split,
    region_means,
    sort_by_site,
)
from .exceptions import InvalidInputError, ShapeError
from .glmnet import (
    DEFAULT_MAX_SWEEPS,
    DEFAULT_TOL,
    LinearModel,
    TuneGrid,
    intercept_only,
    predict,
    tune_fit,
)

logger = logging.getLogger(__name__)

POOLED = "pooled"

# stream tags for seed derivation
_L0, _L1, _EXT = 0, 1, 2


def stream_seed(seed: int, *keys: int) -> int:
    """Independent integer seed for the stream identified by ``keys``."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


@dataclass(frozen=True)
class SetupSpec:
    name: str
    l0_kind: str  # "mean" | "model" | "oos_on_test"
    l0_scope: str  # "per_site" | "pooled"
    l1_scope: str  # "per_site" | "pooled"
    ext: bool = False


SETUPS = {
    s.name: s
    for s in (
        SetupSpec("GMV_sL1_s", "mean", "per_site", "per_site"),
        SetupSpec("PredL0_sL1_s", "model", "per_site", "per_site"),
        SetupSpec("OOSPred_sL1_s", "oos_on_test", "per_site", "per_site"),
        SetupSpec("GMV_pL1_p", "mean", "pooled", "pooled"),
        SetupSpec("PredL0_sL1_p", "model", "per_site", "pooled"),
        SetupSpec("OOSPred_sL1_p", "oos_on_test", "per_site", "pooled"),
        SetupSpec("PredL0_pL1_p", "model", "pooled", "pooled"),
        SetupSpec("OOSPred_pL1_p", "oos_on_test", "pooled", "pooled"),
        SetupSpec("GMV_pL1_p_ext", "mean", "pooled", "pooled", ext=True),
    )
}
SETUP_NAMES = tuple(SETUPS)


def get_setup(setup) -> SetupSpec:
    if isinstance(setup, SetupSpec):
        return setup
    try:
        return SETUPS[setup]
    except KeyError:
        raise InvalidInputError(f"unknown setup {setup!r}; expected one of {', '.join(SETUP_NAMES)}") from None


@dataclass(frozen=True)
class StackConfig:
    k_l0: int = 3
    grid: TuneGrid = TuneGrid()
    n_jobs: int = 1
    tol: float = DEFAULT_TOL
    max_sweeps: int = DEFAULT_MAX_SWEEPS


@dataclass(frozen=True, eq=False)
class L0Bank:
    region_models: tuple
    provenance: str
    parcellation: Parcellation

    def __post_init__(self):
        if len(self.region_models) != self.parcellation.n_regions:
            raise InvalidInputError("one model per region required")
        for m, size in zip(self.region_models, self.parcellation.sizes):
            if m.n_features_in != size:
                raise InvalidInputError("region model width does not match its region")


@dataclass(frozen=True, eq=False)
class OOSMatrix:
    """Out-of-fold regional predictions with the row sets that produced them.

    ``fold_train_rows[f]`` are the rows every region's fold-``f`` model was
    fit on; ``fold_test_rows[f]`` the rows it predicted. ``fallback[r, f]``
    marks fits that degenerated to the training-age mean.
    """

    values: np.ndarray
    fold_assignment: FoldAssignment
    fold_train_rows: tuple
    fold_test_rows: tuple
    fallback: np.ndarray = field(repr=False)

    def verify_integrity(self) -> None:
        """Raise AssertionError if any entry came from a model that saw its row."""
        n = self.values.shape[0]
        covered = np.zeros(n, dtype=int)
        for tr, te in zip(self.fold_train_rows, self.fold_test_rows):
            if np.intersect1d(tr, te).size:
                raise AssertionError("an OOS fold model was trained on rows it predicted")
            covered[te] += 1
        if not np.all(covered == 1):
            raise AssertionError("every row must be predicted by exactly one fold model")
        if not np.all(np.isfinite(self.values)):
            raise AssertionError("non-finite OOS predictions")


def _fit_tuned(X, y, cfg: StackConfig, seed: int) -> LinearModel:
    """Tuned fit that shrinks the inner folds for tiny samples."""
    n = X.shape[0]
    if n < 2:
        return intercept_only(X.shape[1], float(np.mean(y)))
    grid = cfg.grid.with_folds(max(2, min(n, cfg.grid.inner_folds)))
    return tune_fit(X, y, grid, seed, tol=cfg.tol, max_sweeps=cfg.max_sweeps)


def _train_region(Xr, ages, folds: FoldAssignment, cfg: StackConfig, seed: int, r: int, refit: bool):
    K = folds.n_folds
    col = np.empty(ages.shape[0])
    flags = np.zeros(K + 1, dtype=bool)
    for f in range(K):
        tr, te = folds.train_rows(f), folds.test_rows(f)
        m = _fit_tuned(Xr[tr], ages[tr], cfg, stream_seed(seed, _L0, r, f))
        col[te] = predict(m, Xr[te])
        flags[f] = m.degenerate
    final = None
    if refit:
        final = _fit_tuned(Xr, ages, cfg, stream_seed(seed, _L0, r, K))
        flags[K] = final.degenerate
    return col, final, flags


def train_l0_bank(table: SubjectTable, parcellation: Parcellation, K: int = 3, seed: int = 0,
                  cfg: StackConfig | None = None, *, refit: bool = True, provenance: str | None = None):
    """Fit the per-region level-0 models of one training table.

    Returns ``(bank, oos)``; ``bank`` is ``None`` when ``refit`` is False.
    """
    cfg = cfg or StackConfig(k_l0=K)
    if table.n_features != parcellation.n_voxels:
        raise ShapeError(f"table has {table.n_features} voxels, parcellation {parcellation.n_voxels}")
    if table.n < K:
        raise InvalidInputError(f"{table.n} subjects cannot be split into {K} level-0 folds")
    folds = kfold_split(table.ages, K, seed)
    feats, ages = table.features, table.ages
    jobs = (delayed(_train_region)(feats[:, cols], ages, folds, cfg, seed, r, refit)
            for r, cols in enumerate(parcellation.columns))
    if cfg.n_jobs == 1:
        results = [fn(*a, **kw) for fn, a, kw in jobs]
    else:
        results = Parallel(n_jobs=cfg.n_jobs)(jobs)
    values = np.column_stack([c for c, _, _ in results])
    fallback = np.vstack([fl for _, _, fl in results])
    if fallback.any():
        logger.info("%d level-0 fits fell back to the training-age mean", int(fallback.sum()))
    oos = OOSMatrix(
        values=values,
        fold_assignment=folds,
        fold_train_rows=tuple(folds.train_rows(f) for f in range(K)),
        fold_test_rows=tuple(folds.test_rows(f) for f in range(K)),
        fallback=fallback,
    )
    bank = None
    if refit:
        label = provenance if provenance is not None else "+".join(table.site_labels)
        bank = L0Bank(tuple(m for _, m, _ in results), label, parcellation)
    return bank, oos


def oos_l0_on_site(table: SubjectTable, parcellation: Parcellation, K: int = 3, seed: int = 0,
                   cfg: StackConfig | None = None) -> np.ndarray:
    """K-fold OOS regional predictions computed inside a single site."""
    _, oos = train_l0_bank(table, parcellation, K, seed, cfg, refit=False)
    return oos.values


def apply_l0_bank(bank: L0Bank, table_or_features) -> np.ndarray:
    feats = table_or_features.features if isinstance(table_or_features, SubjectTable) else np.asarray(table_or_features, dtype=float)
    if feats.ndim != 2 or feats.shape[1] != bank.parcellation.n_voxels:
        raise ShapeError(f"expected {bank.parcellation.n_voxels} voxel columns, got {feats.shape}")
    return np.column_stack([predict(m, feats[:, cols])
                            for m, cols in zip(bank.region_models, bank.parcellation.columns)])


def average_banks(preds) -> np.ndarray:
    """Element-wise mean of equally shaped prediction matrices.

    Values are sorted across the list before summing so the result does not
    depend on list order.
    """
    preds = [np.asarray(p, dtype=float) for p in preds]
    if not preds:
        raise InvalidInputError("need at least one prediction matrix")
    if len({p.shape for p in preds}) != 1:
        raise ShapeError("prediction matrices differ in shape")
    if len(preds) == 1:
        return preds[0].copy()
    stacked = np.sort(np.stack(preds), axis=0)
    return stacked.sum(axis=0) / len(preds)


def train_l1(l0_features, ages, seed: int = 0, cfg: StackConfig | None = None) -> LinearModel:
    cfg = cfg or StackConfig()
    X = np.asarray(l0_features, dtype=float)
    return _fit_tuned(X, np.asarray(ages, dtype=float), cfg, stream_seed(seed, _L1))


class StackCache:
    """Memo of level-0 banks and level-1 fits keyed by training-site labels.

    Valid only within one experiment where a site label identifies one table.
    """

    def __init__(self):
        self.banks = {}
        self.l1 = {}

    def bank(self, tables, parcellation, cfg, seed):
        key = tuple(t.site for t in tables)
        if key not in self.banks:
            pooled = concat_tables(tables)
            label = key[0] if len(key) == 1 else POOLED
            self.banks[key] = train_l0_bank(pooled, parcellation, cfg.k_l0, seed, cfg, provenance=label)
        return self.banks[key]


@dataclass(frozen=True, eq=False)
class StackedModel:
    """Fitted setup: level-0 operator(s) plus level-1 model(s).

    ``l1`` pairs a site label (or ``"pooled"``) with each level-1 model;
    per-site outputs are averaged at prediction time. ``l1_row_ids`` holds
    the subject ids each level-1 model was trained on.
    """

    setup: SetupSpec
    parcellation: Parcellation
    banks: tuple  # ((label, L0Bank), ...); empty for mean-based setups
    l1: tuple  # ((label, LinearModel), ...)
    k_l0: int
    seed: int
    cfg: StackConfig = StackConfig()
    l1_row_ids: tuple = field(default=(), repr=False)

    def level0_features(self, table: SubjectTable, cache: StackCache | None = None) -> list:
        """Level-1 input matrix for every level-1 model, in ``l1`` order."""
        s = self.setup
        if s.l0_kind == "mean":
            X = region_means(table, self.parcellation)
            return [X] * len(self.l1)
        if s.l0_kind == "oos_on_test":
            if table.n < self.k_l0:
                raise InvalidInputError(f"test table of {table.n} subjects cannot fill {self.k_l0} folds")
            if cache is not None:
                X = cache.bank([table], self.parcellation, self.cfg, self.seed)[1].values
            else:
                X = oos_l0_on_site(table, self.parcellation, self.k_l0, self.seed, self.cfg)
            return [X] * len(self.l1)
        mats = {label: apply_l0_bank(bank, table) for label, bank in self.banks}
        if s.l1_scope == "per_site":
            return [mats[label] for label, _ in self.l1]
        return [average_banks([mats[label] for label, _ in self.banks])]

    def predict(self, table: SubjectTable, cache: StackCache | None = None) -> np.ndarray:
        feats = self.level0_features(table, cache)
        outs = [predict(m, X) for (_, m), X in zip(self.l1, feats)]
        return average_banks([o[:, None] for o in outs])[:, 0]


def _l1_training(setup: SetupSpec, tables, parcellation, cfg, seed, cache, gmv_route):
    """Level-1 training sets as [(label, X, ages, ids)]."""
    if setup.l0_kind == "mean":
        if setup.l1_scope == "per_site":
            return [(t.site, region_means(t, parcellation), t.ages, t.subject_ids) for t in tables]
        if gmv_route == "per_site":
            X = np.vstack([region_means(t, parcellation) for t in tables])
        elif gmv_route == "pooled":
            X = region_means(concat_tables(tables), parcellation)
        else:
            raise InvalidInputError(f"unknown gmv_route {gmv_route!r}")
        pooled = concat_tables(tables)
        return [(POOLED, X, pooled.ages, pooled.subject_ids)]
    if setup.l0_scope == "pooled":
        _, oos = cache.bank(tables, parcellation, cfg, seed)
        pooled = concat_tables(tables)
        return [(POOLED, oos.values, pooled.ages, pooled.subject_ids)]
    per_site = [(t, cache.bank([t], parcellation, cfg, seed)[1]) for t in tables]
    if setup.l1_scope == "per_site":
        return [(t.site, o.values, t.ages, t.subject_ids) for t, o in per_site]
    return [(POOLED,
             np.vstack([o.values for _, o in per_site]),
             np.concatenate([t.ages for t, _ in per_site]),
             np.concatenate([t.subject_ids for t, _ in per_site]))]


def fit_stacked(setup, train_tables, parcellation: Parcellation, cfg: StackConfig | None = None,
                seed: int = 0, cache: StackCache | None = None, gmv_route: str = "pooled") -> StackedModel:
    """Train a non-transductive setup on one or more single-site tables."""
    setup = get_setup(setup)
    if setup.ext:
        raise InvalidInputError(f"{setup.name} needs the test table at training time; use run_setup")
    cfg = cfg or StackConfig()
    cache = cache if cache is not None else StackCache()
    tables = sort_by_site(train_tables)
    if not tables:
        raise InvalidInputError("need at least one training table")

    l1_sets = _l1_training(setup, tables, parcellation, cfg, seed, cache, gmv_route)
    l1 = []
    for label, X, ages, _ in l1_sets:
        key = (setup.l0_kind == "mean", setup.l0_scope, setup.l1_scope, tuple(t.site for t in tables), label, gmv_route)
        if key not in cache.l1:
            cache.l1[key] = train_l1(X, ages, seed, cfg)
        l1.append((label, cache.l1[key]))

    banks = ()
    if setup.l0_kind == "model":
        if setup.l0_scope == "pooled":
            banks = ((POOLED, cache.bank(tables, parcellation, cfg, seed)[0]),)
        else:
            banks = tuple((t.site, cache.bank([t], parcellation, cfg, seed)[0]) for t in tables)
    return StackedModel(setup, parcellation, banks, tuple(l1), cfg.k_l0, seed, cfg,
                        tuple(ids for _, _, _, ids in l1_sets))


def _run_ext(tables, test: SubjectTable, parcellation, cfg, seed):
    K = cfg.k_l0
    if test.n < K:
        raise InvalidInputError(f"test table of {test.n} subjects cannot fill {K} folds")
    base_X = np.vstack([region_means(t, parcellation) for t in tables])
    base_y = np.concatenate([t.ages for t in tables])
    base_ids = np.concatenate([t.subject_ids for t in tables])
    test_X = region_means(test, parcellation)
    folds = kfold_split(test.ages, K, stream_seed(seed, _EXT))
    out = np.empty(test.n)
    row_ids = []
    for f in range(K):
        tr, te = folds.train_rows(f), folds.test_rows(f)
        model = train_l1(np.vstack([base_X, test_X[tr]]), np.concatenate([base_y, test.ages[tr]]), seed, cfg)
        out[te] = predict(model, test_X[te])
        row_ids.append((np.concatenate([base_ids, test.subject_ids[tr]]), test.subject_ids[te]))
    return out, row_ids


def run_setup(setup, train_tables, test_table: SubjectTable, parcellation: Parcellation,
              cfg: StackConfig | None = None, seed: int = 0, *, cache: StackCache | None = None,
              gmv_route: str = "pooled", return_provenance: bool = False):
    """Train ``setup`` on ``train_tables`` and predict every ``test_table`` subject.

    With ``return_provenance`` the result is ``(predictions, provenance)``
    where provenance lists, per level-1 model, the training subject ids and
    (for the fold-rotated ext setup) the subjects it predicted.
    """
    setup = get_setup(setup)
    cfg = cfg or StackConfig()
    tables = sort_by_site(train_tables)
    if not tables:
        raise InvalidInputError("need at least one training table")
    test_site = test_table.site
    if test_site in {t.site for t in tables}:
        raise InvalidInputError(f"test site {test_site!r} also appears in the training tables")
    if setup.ext:
        preds, rows = _run_ext(tables, test_table, parcellation, cfg, seed)
        prov = [{"train_ids": tr, "predicted_ids": te} for tr, te in rows]
    else:
        cache = cache if cache is not None else StackCache()
        model = fit_stacked(setup, tables, parcellation, cfg, seed, cache, gmv_route)
        preds = model.predict(test_table, cache)
        prov = [{"train_ids": ids, "predicted_ids": test_table.subject_ids} for ids in model.l1_row_ids]
    if return_provenance:
        return preds, prov
    return preds
