"""Elastic-net regression by cyclic coordinate descent.

The penalized objective, on standardized features ``Z`` and centered target,
is

    (1 / 2n) * ||yc - Z b||^2 + lambda * (alpha * ||b||_1 + (1 - alpha) / 2 * ||b||^2)

Features with near-zero variance are dropped before standardization, and
the intercept is the training mean of ``y``. :func:`tune_fit` selects
``(alpha, lambda)`` by inner K-fold cross-validation over a fixed grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import _cd
from ._validation import check_matrix, check_target
from .exceptions import EmptyFeatureError, InvalidInputError, ShapeError

ALPHA_FLOOR = 1e-3
TIE_TOL = 1e-12
DEFAULT_TOL = 1e-7
DEFAULT_MAX_SWEEPS = 1000


@dataclass(frozen=True, eq=False)
class StandardizerParams:
    kept_mask: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    y_mean: float

    @property
    def n_features_in(self) -> int:
        return int(self.kept_mask.shape[0])

    @property
    def n_kept(self) -> int:
        return int(self.means.shape[0])


@dataclass(frozen=True)
class HyperParams:
    alpha: float
    lambda_: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidInputError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.lambda_ >= 0.0:
            raise InvalidInputError(f"lambda must be nonnegative, got {self.lambda_}")


@dataclass(frozen=True)
class TuneGrid:
    alphas: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    n_lambda: int = 20
    lambda_min_ratio: float = 1e-3
    inner_folds: int = 5

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        object.__setattr__(self, "alphas", alphas)
        if not alphas:
            raise InvalidInputError("alphas must be nonempty")
        if any(not 0.0 <= a <= 1.0 for a in alphas):
            raise InvalidInputError("alphas must lie in [0, 1]")
        if list(alphas) != sorted(alphas):
            raise InvalidInputError("alphas must be sorted ascending")
        if self.n_lambda < 2:
            raise InvalidInputError("n_lambda must be at least 2")
        if not 0.0 < self.lambda_min_ratio < 1.0:
            raise InvalidInputError("lambda_min_ratio must lie in (0, 1)")
        if self.inner_folds < 1:
            raise InvalidInputError("inner_folds must be positive")

    def with_folds(self, k: int) -> "TuneGrid":
        return TuneGrid(self.alphas, self.n_lambda, self.lambda_min_ratio, k)


@dataclass(frozen=True, eq=False)
class LinearModel:
    """A fitted elastic-net regressor together with its preprocessing state.

    ``coefficients`` live on the standardized scale of the kept features;
    features removed by the NZV mask contribute nothing to predictions.
    """

    standardizer: StandardizerParams
    coefficients: np.ndarray
    intercept: float
    hyper: HyperParams
    objective_value: float
    converged: bool = True
    n_sweeps: int = 0
    degenerate: bool = False
    objective_trace: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_features_in(self) -> int:
        return self.standardizer.n_features_in

    def predict(self, X) -> np.ndarray:
        return predict(self, X)

    def original_scale(self):
        """Return (coef, intercept) such that ``X @ coef + intercept`` predicts."""
        std = self.standardizer
        coef = np.zeros(std.n_features_in)
        if std.n_kept:
            coef[std.kept_mask] = self.coefficients / std.sds
        intercept = self.intercept - float(coef[std.kept_mask] @ std.means) if std.n_kept else self.intercept
        return coef, intercept

    def to_dict(self) -> dict:
        std = self.standardizer
        return {
            "kept_mask": [bool(b) for b in std.kept_mask],
            "means": std.means.tolist(),
            "sds": std.sds.tolist(),
            "y_mean": float(std.y_mean),
            "coefficients": self.coefficients.tolist(),
            "intercept": float(self.intercept),
            "alpha": float(self.hyper.alpha),
            "lambda": float(self.hyper.lambda_),
            "objective_value": float(self.objective_value),
            "converged": bool(self.converged),
            "n_sweeps": int(self.n_sweeps),
            "degenerate": bool(self.degenerate),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        std = StandardizerParams(
            kept_mask=np.asarray(d["kept_mask"], dtype=bool),
            means=np.asarray(d["means"], dtype=float),
            sds=np.asarray(d["sds"], dtype=float),
            y_mean=float(d["y_mean"]),
        )
        return cls(
            standardizer=std,
            coefficients=np.asarray(d["coefficients"], dtype=float),
            intercept=float(d["intercept"]),
            hyper=HyperParams(float(d["alpha"]), float(d["lambda"])),
            objective_value=float(d["objective_value"]),
            converged=bool(d.get("converged", True)),
            n_sweeps=int(d.get("n_sweeps", 0)),
            degenerate=bool(d.get("degenerate", False)),
        )


def nzv_mask(X) -> np.ndarray:
    """Boolean mask of columns whose variance exceeds ``1e-10 * (1 + mean^2)``."""
    X = check_matrix(X)
    if X.shape[0] < 2:
        raise InvalidInputError("near-zero-variance filtering needs at least 2 rows")
    mean = X.mean(axis=0)
    var = X.var(axis=0)
    return var > 1e-10 * (1.0 + mean * mean)


def standardize_fit(X, mask, y) -> StandardizerParams:
    X = check_matrix(X)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (X.shape[1],):
        raise ShapeError(f"mask length {mask.shape} does not match {X.shape[1]} columns")
    y = check_target(y, X.shape[0])
    if not mask.any():
        raise EmptyFeatureError("no features kept after near-zero-variance filtering")
    kept = X[:, mask]
    means = kept.mean(axis=0)
    sds = kept.std(axis=0)
    if np.any(sds <= 0):
        raise InvalidInputError("selected columns must have positive variance")
    return StandardizerParams(mask.copy(), means, sds, float(y.mean()))


def standardize_apply(X, params: StandardizerParams) -> np.ndarray:
    X = check_matrix(X, allow_empty_rows=True)
    if X.shape[1] != params.n_features_in:
        raise ShapeError(f"expected {params.n_features_in} columns, got {X.shape[1]}")
    return (X[:, params.kept_mask] - params.means) / params.sds


def soft_threshold(z: float, gamma: float) -> float:
    if gamma < 0:
        raise InvalidInputError("gamma must be nonnegative")
    return float(np.sign(z) * max(abs(z) - gamma, 0.0))


def lambda_max(Z, y_centered, alpha: float) -> float:
    Z = np.asarray(Z, dtype=float)
    n = Z.shape[0]
    return float(np.max(np.abs(Z.T @ y_centered)) / (n * max(alpha, ALPHA_FLOOR))) if Z.size else 0.0


def lambda_grid(Z, y_centered, alpha: float, n_lambda: int, lambda_min_ratio: float):
    """Log-spaced decreasing lambda path from the smallest all-zero lambda.

    Returns ``(grid, degenerate)``; ``degenerate`` is True when the centered
    target is orthogonal to every feature (e.g. constant ``y``), in which case
    the grid is the single value 0.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError("alpha must lie in [0, 1]")
    if n_lambda < 2:
        raise InvalidInputError("n_lambda must be at least 2")
    lmax = lambda_max(Z, np.asarray(y_centered, dtype=float), alpha)
    if lmax <= 0.0:
        return np.zeros(1), True
    grid = np.geomspace(lmax, lmax * lambda_min_ratio, n_lambda)
    grid[0] = lmax
    return grid, False


class _Problem:
    """Standardized least-squares problem in covariance form."""

    def __init__(self, X, y):
        n = X.shape[0]
        self.y_mean = float(y.mean())
        self.null = False
        if n < 2:
            self.mask = np.zeros(X.shape[1], dtype=bool)
            self.std = StandardizerParams(self.mask, np.zeros(0), np.zeros(0), self.y_mean)
            self.null = True
            return
        self.mask = nzv_mask(X)
        if not self.mask.any():
            self.std = StandardizerParams(self.mask, np.zeros(0), np.zeros(0), self.y_mean)
            self.null = True
            return
        self.std = standardize_fit(X, self.mask, y)
        self.Z = standardize_apply(X, self.std)
        self.yc = y - self.y_mean
        self.gram = (self.Z.T @ self.Z) / n
        self.corr = (self.Z.T @ self.yc) / n
        self.yy = float(self.yc @ self.yc) / n
        if not np.any(np.abs(self.corr) > 0.0):
            self.null = True

    def null_model(self, hyper: HyperParams) -> LinearModel:
        yy = getattr(self, "yy", 0.0)
        return LinearModel(
            standardizer=self.std,
            coefficients=np.zeros(self.std.n_kept),
            intercept=self.y_mean,
            hyper=hyper,
            objective_value=0.5 * yy,
            degenerate=True,
        )

    def model(self, beta, hyper, converged, n_sweeps, trace=None) -> LinearModel:
        obj = _cd.objective(self.gram, self.corr, self.yy, beta, hyper.lambda_, hyper.alpha)
        return LinearModel(
            standardizer=self.std,
            coefficients=beta,
            intercept=self.y_mean,
            hyper=hyper,
            objective_value=float(obj),
            converged=bool(converged),
            n_sweeps=int(n_sweeps),
            objective_trace=trace,
        )


def intercept_only(n_features: int, y_mean: float, hyper: HyperParams | None = None) -> LinearModel:
    """Constant model predicting ``y_mean`` for inputs of width ``n_features``."""
    std = StandardizerParams(np.zeros(n_features, dtype=bool), np.zeros(0), np.zeros(0), float(y_mean))
    return LinearModel(std, np.zeros(0), float(y_mean), hyper or HyperParams(1.0, 0.0), 0.0, degenerate=True)


def _check_xy(X, y):
    X = check_matrix(X)
    y = check_target(y, X.shape[0])
    if X.shape[0] < 2:
        raise InvalidInputError("need at least 2 samples")
    return X, y


def fit_elastic_net(
    X,
    y,
    hyper: HyperParams,
    warm_start=None,
    *,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    trace: bool = False,
) -> LinearModel:
    """Fit at a single ``(alpha, lambda)``.

    An empty feature set after NZV filtering or a constant target yields the
    intercept-only model rather than an error. ``warm_start`` is a coefficient
    vector over the kept features. With ``trace=True`` the objective after
    every sweep is stored on the model.
    """
    X, y = _check_xy(X, y)
    prob = _Problem(X, y)
    if prob.null:
        return prob.null_model(hyper)
    beta = np.zeros(prob.std.n_kept)
    if warm_start is not None:
        warm_start = np.asarray(warm_start, dtype=float)
        if warm_start.shape != beta.shape:
            raise ShapeError(f"warm start has shape {warm_start.shape}, expected {beta.shape}")
        beta[:] = warm_start
    buf = np.zeros(max_sweeps if trace else 0)
    n_sweeps, ok = _cd.cd_solve(prob.gram, prob.corr, prob.yy, beta, hyper.lambda_, hyper.alpha, tol, max_sweeps, buf)
    return prob.model(beta, hyper, ok, n_sweeps, buf[:n_sweeps].copy() if trace else None)


def predict(model: LinearModel, X) -> np.ndarray:
    X = check_matrix(X, allow_empty_rows=True)
    if X.shape[1] != model.n_features_in:
        raise ShapeError(f"model expects {model.n_features_in} features, got {X.shape[1]}")
    if model.standardizer.n_kept == 0:
        return np.full(X.shape[0], model.intercept)
    return model.intercept + standardize_apply(X, model.standardizer) @ model.coefficients


def kkt_violation(model: LinearModel, X, y) -> float:
    """Largest violation of the elastic-net optimality conditions on (X, y).

    For active coordinates the stationarity equation must hold; for zero
    coordinates the subgradient bound ``|g_j| <= lambda * alpha`` must.
    """
    X, y = _check_xy(X, y)
    std = model.standardizer
    if std.n_kept == 0:
        return 0.0
    Z = standardize_apply(X, std)
    n = X.shape[0]
    beta = model.coefficients
    r = (y - std.y_mean) - Z @ beta
    lam, alpha = model.hyper.lambda_, model.hyper.alpha
    g = Z.T @ r / n - lam * (1.0 - alpha) * beta
    active = beta != 0
    viol = np.zeros_like(beta)
    viol[active] = np.abs(g[active] - lam * alpha * np.sign(beta[active]))
    viol[~active] = np.maximum(np.abs(g[~active]) - lam * alpha, 0.0)
    return float(viol.max()) if viol.size else 0.0


def select_hyper(mse, paths, alphas) -> tuple:
    """Index ``(alpha, lambda)`` of the lowest CV error.

    Errors within ``TIE_TOL`` of the minimum tie; ties go to the larger
    lambda, then the larger alpha.
    """
    mse = np.asarray(mse, dtype=float)
    best = mse.min()
    a_best, l_best = -1, -1
    for a in range(mse.shape[0]):
        for li in range(mse.shape[1]):
            if mse[a, li] - best > TIE_TOL:
                continue
            if a_best < 0:
                a_best, l_best = a, li
                continue
            lam, cur = paths[a][li], paths[a_best][l_best]
            if lam > cur or (lam == cur and alphas[a] > alphas[a_best]):
                a_best, l_best = a, li
    return a_best, l_best


def tune_fit(
    X,
    y,
    grid: TuneGrid = TuneGrid(),
    seed: int = 0,
    *,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
) -> LinearModel:
    """Grid-search ``(alpha, lambda)`` by inner CV, then refit on all rows.

    Inner folds are age-stratified (:func:`regionstack.data.kfold_split` on
    ``y``). The pair with the lowest mean fold MSE wins; ties within 1e-12
    go to the larger lambda, then the larger alpha.
    """
    from .data import kfold_split

    X, y = _check_xy(X, y)
    n = X.shape[0]
    k = grid.inner_folds
    if k < 2 or n < k:
        raise InvalidInputError(f"{n} samples cannot be split into {k} inner folds")

    full = _Problem(X, y)
    if full.null:
        return full.null_model(HyperParams(grid.alphas[-1], 0.0))

    paths = []
    for alpha in grid.alphas:
        lambdas, degenerate = lambda_grid(full.Z, full.yc, alpha, grid.n_lambda, grid.lambda_min_ratio)
        paths.append(lambdas)

    fold_of = kfold_split(y, k, seed).fold_of
    mse = np.zeros((len(grid.alphas), grid.n_lambda))
    for f in range(k):
        tr = fold_of != f
        va = ~tr
        sub = _Problem(X[tr], y[tr])
        yv = y[va]
        Zv = None if sub.null else standardize_apply(X[va], sub.std)
        for a, alpha in enumerate(grid.alphas):
            if sub.null:
                pred = np.full((yv.shape[0], grid.n_lambda), sub.y_mean)
            else:
                coefs, _, _ = _cd.cd_path(sub.gram, sub.corr, sub.yy, paths[a], alpha, tol, max_sweeps)
                pred = sub.y_mean + Zv @ coefs.T
            mse[a] += np.mean((yv[:, None] - pred) ** 2, axis=0)
    mse /= k

    a_best, l_best = select_hyper(mse, paths, grid.alphas)
    alpha = grid.alphas[a_best]
    lambdas = paths[a_best][: l_best + 1]
    coefs, sweeps, conv = _cd.cd_path(full.gram, full.corr, full.yy, lambdas, alpha, tol, max_sweeps)
    hyper = HyperParams(alpha, float(lambdas[-1]))
    return full.model(coefs[-1].copy(), hyper, conv[-1], sweeps[-1])


class GlmnetRegressor(RegressorMixin, BaseEstimator):
    """Elastic-net regressor with built-in grid search over (alpha, lambda).

    Parameters
    ----------
    alphas : tuple of float
        L1 mixing values to search, ascending in [0, 1].
    n_lambda : int
        Length of each log-spaced lambda path.
    lambda_min_ratio : float
        Smallest lambda as a fraction of the path's lambda_max.
    inner_folds : int
        Number of age-stratified inner CV folds.
    random_state : int
        Seed for the inner fold assignment.

    Attributes
    ----------
    model_ : LinearModel
    coef_ : ndarray of shape (n_features,)
        Coefficients on the original feature scale; dropped features are 0.
    intercept_ : float
    alpha_, lambda_ : float
        The selected hyperparameters.
    """

    def __init__(self, alphas=(0.0, 0.25, 0.5, 0.75, 1.0), n_lambda=20, lambda_min_ratio=1e-3,
                 inner_folds=5, random_state=0, tol=DEFAULT_TOL, max_sweeps=DEFAULT_MAX_SWEEPS):
        self.alphas = alphas
        self.n_lambda = n_lambda
        self.lambda_min_ratio = lambda_min_ratio
        self.inner_folds = inner_folds
        self.random_state = random_state
        self.tol = tol
        self.max_sweeps = max_sweeps

    def fit(self, X, y):
        grid = TuneGrid(tuple(self.alphas), self.n_lambda, self.lambda_min_ratio, self.inner_folds)
        self.model_ = tune_fit(X, y, grid, self.random_state, tol=self.tol, max_sweeps=self.max_sweeps)
        self.coef_, self.intercept_ = self.model_.original_scale()
        self.alpha_ = self.model_.hyper.alpha
        self.lambda_ = self.model_.hyper.lambda_
        self.n_features_in_ = self.model_.n_features_in
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return predict(self.model_, X)
