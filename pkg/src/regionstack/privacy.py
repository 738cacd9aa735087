"""Site-identifiability probe: which dataset did a subject come from?

An L2-regularized one-vs-rest logistic classifier is tuned by nested,
site-stratified cross-validation on either regional mean features or each
site's own out-of-fold level-0 predictions, and scored by balanced accuracy.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.model_selection import StratifiedKFold

from .data import Parcellation, region_means, sort_by_site
from .exceptions import InvalidInputError
from .stacking import StackCache, StackConfig, stream_seed

SCHEMA_VERSION = 1
FEATURE_SPACES = ("region_mean", "l0_oos")
DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0)
GRAD_TOL = 1e-6
MAX_ITER = 200

_OUTER, _INNER = 10, 11


def _logistic_terms(w, b, X, t, C):
    """Objective, gradient and Hessian of mean log-loss + |w|^2 / (2 C n)."""
    n = X.shape[0]
    z = X @ w + b
    # log(1 + exp(-t z)) with t in {-1, +1}
    loss = np.logaddexp(0.0, -t * z)
    obj = loss.mean() + (w @ w) / (2.0 * C * n)
    p = expit(t * z)
    g_z = -t * (1.0 - p) / n
    grad = np.concatenate([X.T @ g_z + w / (C * n), [g_z.sum()]])
    h = p * (1.0 - p) / n
    Xa = np.column_stack([X, np.ones(n)])
    H = (Xa * h[:, None]).T @ Xa
    H[:-1, :-1] += np.eye(X.shape[1]) / (C * n)
    return obj, grad, H


def _fit_binary(X, t, C, tol=GRAD_TOL, max_iter=MAX_ITER):
    """Newton's method with backtracking; returns (w, b, iterations, converged)."""
    p = X.shape[1]
    theta = np.zeros(p + 1)
    obj, grad, H = _logistic_terms(theta[:-1], theta[-1], X, t, C)
    for it in range(max_iter):
        if np.max(np.abs(grad)) < tol:
            return theta[:-1], theta[-1], it, True
        step = np.linalg.solve(H + 1e-12 * np.eye(p + 1), grad)
        slope = grad @ step
        s = 1.0
        while True:
            cand = theta - s * step
            new_obj, new_grad, new_H = _logistic_terms(cand[:-1], cand[-1], X, t, C)
            if new_obj <= obj - 1e-4 * s * slope or s < 1e-10:
                break
            s *= 0.5
        theta, obj, grad, H = cand, new_obj, new_grad, new_H
    return theta[:-1], theta[-1], max_iter, bool(np.max(np.abs(grad)) < tol)


@dataclass(frozen=True, eq=False)
class OvrLogisticModel:
    classes: tuple
    weights: np.ndarray  # n_classes x p, on standardized features
    intercepts: np.ndarray
    C: float
    means: np.ndarray
    sds: np.ndarray
    converged: bool = True

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.means.shape[0]:
            raise InvalidInputError(f"expected {self.means.shape[0]} feature columns, got {X.shape}")
        Z = (X - self.means) / self.sds
        return Z @ self.weights.T + self.intercepts

    def predict(self, X) -> np.ndarray:
        # classes are sorted, so argmax's first-max rule picks the smallest label on ties
        scores = self.decision_function(X)
        return np.asarray(self.classes, dtype=object)[np.argmax(scores, axis=1)]


def fit_ovr_logistic(X, labels, C: float, seed: int = 0) -> OvrLogisticModel:
    """One-vs-rest L2 logistic regression on standardized features.

    The fit is deterministic; ``seed`` is accepted for interface symmetry.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels).astype(str)
    if X.ndim != 2 or X.shape[0] != labels.shape[0]:
        raise InvalidInputError("X must be 2-D with one label per row")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("X contains non-finite values")
    if not C > 0:
        raise InvalidInputError(f"C must be positive, got {C}")
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size < 2:
        raise InvalidInputError("need at least two classes")
    if counts.min() < 2:
        raise InvalidInputError("every class needs at least two samples")
    means = X.mean(axis=0)
    sds = X.std(axis=0)
    sds[sds == 0] = 1.0
    Z = (X - means) / sds
    W, b, ok = [], [], True
    for c in classes:
        w, icpt, _, conv = _fit_binary(Z, np.where(labels == c, 1.0, -1.0), float(C))
        W.append(w)
        b.append(icpt)
        ok &= conv
    return OvrLogisticModel(tuple(classes.tolist()), np.array(W), np.array(b), float(C), means, sds, ok)


def confusion_matrix(true_labels, pred_labels, classes) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    M = np.zeros((len(classes), len(classes)), dtype=int)
    for t, p in zip(np.asarray(true_labels).astype(str), np.asarray(pred_labels).astype(str)):
        M[index[t], index[p]] += 1
    return M


def balanced_accuracy(true_labels, pred_labels, classes=None) -> float:
    """Mean per-class recall over ``classes`` (default: classes present in ``true_labels``)."""
    t = np.asarray(true_labels).astype(str)
    p = np.asarray(pred_labels).astype(str)
    if t.shape != p.shape or t.ndim != 1:
        raise InvalidInputError("label arrays must be 1-D and of equal length")
    if t.size == 0:
        raise InvalidInputError("no labels")
    classes = np.unique(t) if classes is None else np.asarray(classes).astype(str)
    recalls = []
    for c in classes:
        mask = t == c
        if not mask.any():
            raise InvalidInputError(f"class {c!r} has no true samples")
        recalls.append(np.mean(p[mask] == c))
    return float(np.mean(recalls))


def balanced_accuracy_from_confusion(M) -> float:
    M = np.asarray(M, dtype=float)
    rows = M.sum(axis=1)
    if np.any(rows == 0):
        raise InvalidInputError("a class has no true samples")
    return float(np.mean(np.diag(M) / rows))


@dataclass
class PrivacyReport:
    feature_space: str
    classes: tuple
    confusion: np.ndarray
    balanced_accuracy: float
    chosen_C: list
    inner_scores: list  # per outer fold: {C: mean inner balanced accuracy}
    seed: int
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "privacy",
            "feature_space": self.feature_space,
            "seed": self.seed,
            "classes": list(self.classes),
            "balanced_accuracy": self.balanced_accuracy,
            "chance_level": 1.0 / len(self.classes),
            "confusion": self.confusion.tolist(),
            "chosen_C": self.chosen_C,
            "inner_scores": [{repr(c): s for c, s in d.items()} for d in self.inner_scores],
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        buf.write("seed,true\\pred," + ",".join(self.classes) + "\n")
        for c, row in zip(self.classes, self.confusion):
            buf.write(f"{self.seed},{c}," + ",".join(str(int(v)) for v in row) + "\n")
        return buf.getvalue()


def site_features(tables, parcellation: Parcellation, feature_space: str, seed: int = 0,
                  cfg: StackConfig | None = None, cache: StackCache | None = None):
    """Pooled feature matrix and site labels; l0_oos uses each site's own OOS matrix."""
    if feature_space not in FEATURE_SPACES:
        raise InvalidInputError(f"feature_space must be one of {FEATURE_SPACES}, got {feature_space!r}")
    tables = sort_by_site(tables)
    for t in tables:
        if t.n_features != parcellation.n_voxels:
            raise InvalidInputError(f"site {t.site} has {t.n_features} voxels, parcellation {parcellation.n_voxels}")
    if feature_space == "region_mean":
        mats = [region_means(t, parcellation) for t in tables]
    else:
        cfg = cfg or StackConfig()
        cache = cache if cache is not None else StackCache()
        mats = [cache.bank([t], parcellation, cfg, seed)[1].values for t in tables]
    labels = np.concatenate([np.full(t.n, t.site, dtype=object) for t in tables]).astype(str)
    return np.vstack(mats), labels


def _select_C(X, y, grid_C, K_inner, seed):
    skf = StratifiedKFold(n_splits=K_inner, shuffle=True, random_state=seed % (2**32))
    splits = list(skf.split(X, y))
    scores = {}
    for C in grid_C:
        accs = []
        for tr, te in splits:
            m = fit_ovr_logistic(X[tr], y[tr], C)
            accs.append(balanced_accuracy(y[te], m.predict(X[te])))
        scores[C] = float(np.mean(accs))
    best = max(scores.values())
    # ties go to the strongest regularization (smallest C)
    chosen = min(C for C, s in scores.items() if s >= best - 1e-12)
    return chosen, scores


def privacy_probe(tables, parcellation: Parcellation, feature_space: str = "region_mean",
                  grid_C=DEFAULT_C_GRID, K_outer: int = 5, K_inner: int = 5, seed: int = 0,
                  cfg: StackConfig | None = None, cache: StackCache | None = None) -> PrivacyReport:
    """Nested, site-stratified cross-validated dataset-of-origin classification."""
    tables = sort_by_site(tables)
    if len(tables) < 2:
        raise InvalidInputError("need at least two sites")
    for t in tables:
        if t.n < K_outer:
            raise InvalidInputError(f"site {t.site} has {t.n} subjects, fewer than {K_outer} outer folds")
    grid_C = tuple(float(c) for c in grid_C)
    if not grid_C or min(grid_C) <= 0:
        raise InvalidInputError("grid_C must be nonempty and positive")
    X, y = site_features(tables, parcellation, feature_space, seed, cfg, cache)
    classes = tuple(t.site for t in tables)

    outer = StratifiedKFold(n_splits=K_outer, shuffle=True, random_state=stream_seed(seed, _OUTER) % (2**32))
    M = np.zeros((len(classes), len(classes)), dtype=int)
    chosen, inner_scores = [], []
    for f, (tr, te) in enumerate(outer.split(X, y)):
        C, scores = _select_C(X[tr], y[tr], grid_C, K_inner, stream_seed(seed, _INNER, f))
        model = fit_ovr_logistic(X[tr], y[tr], C)
        M += confusion_matrix(y[te], model.predict(X[te]), classes)
        chosen.append(C)
        inner_scores.append(scores)
    return PrivacyReport(feature_space, classes, M, balanced_accuracy_from_confusion(M),
                         chosen, inner_scores, seed)
