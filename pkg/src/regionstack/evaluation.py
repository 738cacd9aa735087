"""Metrics, leave-one-site-out evaluation, site-count sweeps and region analysis.

Undefined metrics (zero-variance inputs) are NaN in memory and ``null`` in
serialized reports, and each one is named in the ``undefined`` field.
"""

from __future__ import annotations

import io
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_paired
from .data import Parcellation, region_means, sort_by_site
from .exceptions import InvalidInputError
from .stacking import StackCache, StackConfig, get_setup, run_setup

SCHEMA_VERSION = 1
METRICS = ("mae", "pearson_r", "r2", "bias")


def mae(y, yhat) -> float:
    y, yhat = check_paired(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def pearson_r(a, b) -> float:
    """Sample Pearson correlation; NaN if either input has zero variance."""
    a, b = check_paired(a, b, min_len=2)
    da = a - a.mean()
    db = b - b.mean()
    saa = float(da @ da)
    sbb = float(db @ db)
    if saa == 0.0 or sbb == 0.0:
        return math.nan
    r = float(da @ db) / math.sqrt(saa * sbb)
    return min(1.0, max(-1.0, r))


def r_squared(y, yhat) -> float:
    """Coefficient of determination (may be negative); NaN for constant ``y``."""
    y, yhat = check_paired(y, yhat, min_len=2)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return math.nan
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def bias_corr(y, yhat) -> float:
    """Correlation of true age with the error ``y - yhat``."""
    y, yhat = check_paired(y, yhat, min_len=2)
    return pearson_r(y, y - yhat)


@dataclass(frozen=True)
class MetricSet:
    mae: float
    pearson_r: float
    r2: float
    bias: float
    n: int
    undefined: tuple = ()

    @classmethod
    def from_predictions(cls, y, yhat) -> "MetricSet":
        y, yhat = check_paired(y, yhat, min_len=2)
        values = {"mae": mae(y, yhat), "pearson_r": pearson_r(y, yhat),
                  "r2": r_squared(y, yhat), "bias": bias_corr(y, yhat)}
        undefined = tuple(k for k in METRICS if math.isnan(values[k]))
        return cls(n=int(y.shape[0]), undefined=undefined, **values)

    def to_dict(self) -> dict:
        d = {k: _json_float(getattr(self, k)) for k in METRICS}
        d["n"] = self.n
        d["undefined"] = list(self.undefined)
        return d


def _json_float(x):
    return None if x is None or math.isnan(x) else float(x)


@dataclass(frozen=True)
class EvalRow:
    setup: str
    test_site: str
    train_sites: tuple
    metrics: MetricSet

    @property
    def key(self):
        return (self.setup, self.test_site, self.train_sites)


@dataclass
class EvalReport:
    """Per-(setup, test site, training-site combination) metrics."""

    kind: str
    seed: int
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def row(self, setup, test_site, train_sites=None) -> EvalRow:
        for r in self.rows:
            if r.setup == setup and r.test_site == test_site and (train_sites is None or r.train_sites == tuple(train_sites)):
                return r
        raise KeyError((setup, test_site, train_sites))

    def sorted_rows(self) -> list:
        return sorted(self.rows, key=lambda r: (r.setup, r.test_site, len(r.train_sites), r.train_sites))

    def summary(self) -> list:
        """Unweighted means over rows per (setup, number of training sites).

        Undefined values are excluded from the mean and counted.
        """
        groups = {}
        for r in self.rows:
            groups.setdefault((r.setup, len(r.train_sites)), []).append(r.metrics)
        out = []
        for (setup, k), ms in sorted(groups.items()):
            entry = {"setup": setup, "n_train_sites": k, "n_rows": len(ms)}
            for name in METRICS:
                vals = [getattr(m, name) for m in ms if not math.isnan(getattr(m, name))]
                entry[f"mean_{name}"] = float(np.mean(vals)) if vals else None
                entry[f"n_undefined_{name}"] = len(ms) - len(vals)
            out.append(entry)
        return out

    def mean_metric(self, setup, metric="mae", n_train_sites=None) -> float:
        if n_train_sites is None:
            n_train_sites = max(len(r.train_sites) for r in self.rows if r.setup == setup)
        for entry in self.summary():
            if entry["setup"] == setup and entry["n_train_sites"] == n_train_sites:
                v = entry[f"mean_{metric}"]
                return math.nan if v is None else v
        raise KeyError((setup, n_train_sites))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "seed": self.seed,
            "meta": self.meta,
            "rows": [
                {"setup": r.setup, "test_site": r.test_site, "train_sites": list(r.train_sites), **r.metrics.to_dict()}
                for r in self.sorted_rows()
            ],
            "summary": self.summary(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("seed,setup,test_site,train_sites,n,mae,pearson_r,r2,bias,undefined\n")
        for r in self.sorted_rows():
            m = r.metrics
            vals = ["" if math.isnan(getattr(m, k)) else repr(float(getattr(m, k))) for k in METRICS]
            buf.write(",".join([str(self.seed), r.setup, r.test_site, "+".join(r.train_sites), str(m.n), *vals, "+".join(m.undefined)]) + "\n")
        return buf.getvalue()


def _check_hygiene(setup, provenance, test_table):
    """Test-site subjects may enter level-1 training only where the setup says so."""
    test_ids = set(test_table.subject_ids.tolist())
    for entry in provenance:
        used = test_ids.intersection(entry["train_ids"].tolist())
        if not used:
            continue
        if not get_setup(setup).ext:
            raise AssertionError(f"{setup}: test-site rows leaked into level-1 training")
        if used.intersection(entry["predicted_ids"].tolist()):
            raise AssertionError(f"{setup}: a subject was predicted by a model trained on it")


def _evaluate_cell(setup, train, test, parcellation, cfg, seed, cache) -> EvalRow:
    preds, prov = run_setup(setup, train, test, parcellation, cfg, seed, cache=cache, return_provenance=True)
    if preds.shape != (test.n,) or not np.all(np.isfinite(preds)):
        raise AssertionError(f"{setup}: expected {test.n} finite predictions")
    _check_hygiene(setup, prov, test)
    return EvalRow(get_setup(setup).name, test.site, tuple(t.site for t in train),
                   MetricSet.from_predictions(test.ages, preds))


def _prepare(tables, setups, min_sites):
    tables = list(tables)
    if len(tables) < min_sites:
        raise InvalidInputError(f"need at least {min_sites} sites, got {len(tables)}")
    tables = sort_by_site(tables)
    setups = [get_setup(s).name for s in setups]
    if not setups:
        raise InvalidInputError("no setups requested")
    return tables, setups


def loso_evaluate(tables, parcellation: Parcellation, setups, cfg: StackConfig | None = None,
                  seed: int = 0, *, cache: StackCache | None = None) -> EvalReport:
    """Hold out each site in turn and train every setup on all the others."""
    tables, setups = _prepare(tables, setups, 2)
    cfg = cfg or StackConfig()
    cache = cache if cache is not None else StackCache()
    report = EvalReport("loso", seed)
    for i, test in enumerate(tables):
        train = tables[:i] + tables[i + 1:]
        for setup in setups:
            report.rows.append(_evaluate_cell(setup, train, test, parcellation, cfg, seed, cache))
    return report


def site_count_sweep(tables, parcellation: Parcellation, setups, cfg: StackConfig | None = None,
                     seed: int = 0, *, cache: StackCache | None = None, sizes=None) -> EvalReport:
    """Evaluate every subset of 1..S-1 training sites against each held-out site."""
    tables, setups = _prepare(tables, setups, 3)
    cfg = cfg or StackConfig()
    cache = cache if cache is not None else StackCache()
    sizes = sizes or range(1, len(tables))
    report = EvalReport("sweep", seed)
    for i, test in enumerate(tables):
        others = tables[:i] + tables[i + 1:]
        for k in sizes:
            for combo in itertools.combinations(others, k):
                for setup in setups:
                    report.rows.append(_evaluate_cell(setup, list(combo), test, parcellation, cfg, seed, cache))
    return report


@dataclass
class RegionCorrReport:
    """Per-site, per-region correlations of age with OOS L0 predictions and region means."""

    sites: list
    corr_l0: dict  # site -> array over regions
    corr_mean: dict
    seed: int
    meta: dict = field(default_factory=dict)

    def mean_abs(self, kind: str, site=None) -> float:
        src = self.corr_l0 if kind == "l0" else self.corr_mean
        vals = np.concatenate([src[s] for s in ([site] if site else self.sites)])
        vals = np.abs(vals[~np.isnan(vals)])
        return float(vals.mean()) if vals.size else math.nan

    def summary(self) -> dict:
        per_site = {
            s: {"mean_abs_corr_l0": _json_float(self.mean_abs("l0", s)),
                "mean_abs_corr_mean": _json_float(self.mean_abs("mean", s)),
                "n_undefined_l0": int(np.isnan(self.corr_l0[s]).sum()),
                "n_undefined_mean": int(np.isnan(self.corr_mean[s]).sum())}
            for s in self.sites
        }
        return {
            "per_site": per_site,
            "mean_abs_corr_l0": _json_float(self.mean_abs("l0")),
            "mean_abs_corr_mean": _json_float(self.mean_abs("mean")),
        }

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "regions",
            "seed": self.seed,
            "meta": self.meta,
            "summary": self.summary(),
            "regions": {
                s: {"corr_l0_age": [_json_float(v) for v in self.corr_l0[s]],
                    "corr_mean_age": [_json_float(v) for v in self.corr_mean[s]]}
                for s in self.sites
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("seed,site,region,corr_l0_age,corr_mean_age\n")
        for s in self.sites:
            for r, (a, b) in enumerate(zip(self.corr_l0[s], self.corr_mean[s])):
                fa = "" if math.isnan(a) else repr(float(a))
                fb = "" if math.isnan(b) else repr(float(b))
                buf.write(f"{self.seed},{s},{r},{fa},{fb}\n")
        return buf.getvalue()


def region_age_correlations(tables, parcellation: Parcellation, K: int = 3, seed: int = 0,
                            cfg: StackConfig | None = None, *, cache: StackCache | None = None) -> RegionCorrReport:
    """Within each dataset, correlate age with every region's OOS L0 prediction and mean."""
    tables = sort_by_site(tables)
    cfg = cfg or StackConfig(k_l0=K)
    if cfg.k_l0 != K:
        raise InvalidInputError("K disagrees with cfg.k_l0")
    cache = cache if cache is not None else StackCache()
    corr_l0, corr_mean = {}, {}
    for t in tables:
        if t.n < K:
            raise InvalidInputError(f"site {t.site} has {t.n} subjects, fewer than {K} folds")
        oos = cache.bank([t], parcellation, cfg, seed)[1].values
        means = region_means(t, parcellation)
        corr_l0[t.site] = np.array([pearson_r(t.ages, oos[:, r]) for r in range(parcellation.n_regions)])
        corr_mean[t.site] = np.array([pearson_r(t.ages, means[:, r]) for r in range(parcellation.n_regions)])
    return RegionCorrReport([t.site for t in tables], corr_l0, corr_mean, seed)
