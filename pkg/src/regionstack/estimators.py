"""scikit-learn style wrappers around the region-wise pipeline.

Voxel matrices go in as ``X``; site labels, when needed, are passed to
``fit`` separately so the estimators compose with standard tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix, check_target
from .data import Parcellation, SubjectTable, region_means
from .exceptions import InvalidInputError, ShapeError
from .glmnet import TuneGrid
from .privacy import fit_ovr_logistic
from .stacking import StackCache, StackConfig, apply_l0_bank, fit_stacked, get_setup, train_l0_bank


def _tables_from_arrays(X, y, sites):
    X = check_matrix(X)
    y = check_target(y, X.shape[0])
    sites = np.asarray(sites).astype(str)
    if sites.shape != (X.shape[0],):
        raise ShapeError("need one site label per row")
    ids = np.array([f"row{i}" for i in range(X.shape[0])])
    return [SubjectTable(ids[sites == s], s, y[sites == s], X[sites == s]) for s in np.unique(sites)]


def _table(X, ages=None):
    X = check_matrix(X)
    ages = np.full(X.shape[0], 1.0) if ages is None else check_target(ages, X.shape[0])
    ids = np.array([f"row{i}" for i in range(X.shape[0])])
    return SubjectTable(ids, "query", ages, X)


def _stack_config(est) -> StackConfig:
    grid = TuneGrid(tuple(est.alphas), est.n_lambda, est.lambda_min_ratio, est.inner_folds)
    return StackConfig(k_l0=est.k_l0, grid=grid, n_jobs=est.n_jobs)


class RegionMeanTransformer(TransformerMixin, BaseEstimator):
    """Average the voxels of every region."""

    def __init__(self, parcellation: Parcellation | None = None):
        self.parcellation = parcellation

    def fit(self, X, y=None):
        X = check_matrix(X)
        if self.parcellation is None or X.shape[1] != self.parcellation.n_voxels:
            raise ShapeError("parcellation is missing or does not match X")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        return region_means(check_matrix(X), self.parcellation)


class RegionL0Transformer(TransformerMixin, BaseEstimator):
    """Per-region level-0 elastic nets mapping voxels to regional age estimates.

    ``fit_transform`` returns the K-fold out-of-fold matrix, so the output
    can train a downstream model without leakage; ``transform`` applies the
    models refit on all rows.
    """

    def __init__(self, parcellation: Parcellation | None = None, k_l0=3, alphas=(0.0, 0.25, 0.5, 0.75, 1.0),
                 n_lambda=20, lambda_min_ratio=1e-3, inner_folds=5, random_state=0, n_jobs=1):
        self.parcellation = parcellation
        self.k_l0 = k_l0
        self.alphas = alphas
        self.n_lambda = n_lambda
        self.lambda_min_ratio = lambda_min_ratio
        self.inner_folds = inner_folds
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _fit(self, X, y):
        if self.parcellation is None:
            raise InvalidInputError("parcellation is required")
        table = _table(X, y)
        self.bank_, oos = train_l0_bank(table, self.parcellation, self.k_l0, self.random_state, _stack_config(self))
        self.n_features_in_ = table.n_features
        return oos.values

    def fit(self, X, y):
        self._fit(X, y)
        return self

    def fit_transform(self, X, y=None, **fit_params):
        if y is None:
            raise InvalidInputError("ages are required to fit level-0 models")
        return self._fit(X, y)

    def transform(self, X):
        check_is_fitted(self, "bank_")
        return apply_l0_bank(self.bank_, check_matrix(X))


class StackedAgeRegressor(RegressorMixin, BaseEstimator):
    """Two-level stacked age regressor for any non-transductive setup.

    ``fit(X, y, sites)`` treats each distinct site label as one training
    table. OOSPred setups need the query ages at prediction time because
    they compute level-0 features inside the query set; pass them through
    ``predict(X, ages=...)``.
    """

    def __init__(self, setup="OOSPred_sL1_p", parcellation: Parcellation | None = None, k_l0=3,
                 alphas=(0.0, 0.25, 0.5, 0.75, 1.0), n_lambda=20, lambda_min_ratio=1e-3, inner_folds=5,
                 random_state=0, n_jobs=1):
        self.setup = setup
        self.parcellation = parcellation
        self.k_l0 = k_l0
        self.alphas = alphas
        self.n_lambda = n_lambda
        self.lambda_min_ratio = lambda_min_ratio
        self.inner_folds = inner_folds
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y, sites=None):
        if self.parcellation is None:
            raise InvalidInputError("parcellation is required")
        X = check_matrix(X)
        if sites is None:
            sites = np.full(X.shape[0], "site0")
        tables = _tables_from_arrays(X, y, sites)
        self.model_ = fit_stacked(get_setup(self.setup), tables, self.parcellation, _stack_config(self),
                                  self.random_state, StackCache())
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, ages=None):
        check_is_fitted(self, "model_")
        if self.model_.setup.l0_kind == "oos_on_test" and ages is None:
            raise InvalidInputError(f"{self.model_.setup.name} needs the query ages at prediction time")
        return self.model_.predict(_table(X, ages))


class SiteClassifier(ClassifierMixin, BaseEstimator):
    """One-vs-rest L2 logistic regression on standardized features."""

    def __init__(self, C=1.0):
        self.C = C

    def fit(self, X, y):
        X = check_matrix(X)
        self.model_ = fit_ovr_logistic(X, y, self.C)
        self.classes_ = np.asarray(self.model_.classes)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.decision_function(check_matrix(X))

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(check_matrix(X)).astype(str)
