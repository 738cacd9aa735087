"""Subject tables, parcellations, region views and fold assignment."""

from __future__ import annotations

import csv
import hashlib
import io
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .exceptions import InvalidInputError, ParseError, ValidationError

FEATURE_PREFIX = "v"


@dataclass(frozen=True, eq=False)
class SubjectTable:
    """Subjects x voxel features with ages and per-row site labels."""

    subject_ids: np.ndarray
    sites: np.ndarray
    ages: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.subject_ids, dtype=str)
        sites = np.asarray(self.sites, dtype=str)
        ages = np.asarray(self.ages, dtype=float)
        feats = np.asarray(self.features, dtype=float)
        if sites.ndim == 0:
            sites = np.full(ids.shape[0], str(sites))
        n = ids.shape[0]
        if feats.ndim != 2 or feats.shape[0] != n or ages.shape != (n,) or sites.shape != (n,):
            raise InvalidInputError(
                f"inconsistent table shapes: ids {ids.shape}, sites {sites.shape}, "
                f"ages {ages.shape}, features {feats.shape}"
            )
        if len(set(ids.tolist())) != n:
            raise InvalidInputError("duplicate subject ids")
        if not np.all(np.isfinite(ages)) or np.any(ages <= 0):
            raise InvalidInputError("ages must be finite and positive")
        if not np.all(np.isfinite(feats)):
            raise InvalidInputError("features contain non-finite values")
        if np.any(feats < 0):
            warnings.warn("negative feature values found; volumes are expected to be nonnegative", stacklevel=3)
        for arr in (ids, sites, ages, feats):
            arr.setflags(write=False)
        object.__setattr__(self, "subject_ids", ids)
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "features", feats)

    @property
    def n(self) -> int:
        return int(self.ages.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def site(self) -> str:
        labels = self.site_labels
        if len(labels) != 1:
            raise InvalidInputError(f"table mixes {len(labels)} sites")
        return labels[0]

    @property
    def site_labels(self) -> list:
        return sorted(set(self.sites.tolist()))

    def subset(self, rows) -> "SubjectTable":
        rows = np.asarray(rows)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return SubjectTable(self.subject_ids[rows], self.sites[rows], self.ages[rows], self.features[rows])


def concat_tables(tables) -> SubjectTable:
    """Row-concatenate tables in the given order."""
    tables = list(tables)
    if not tables:
        raise InvalidInputError("no tables to concatenate")
    widths = {t.n_features for t in tables}
    if len(widths) != 1:
        raise InvalidInputError(f"feature widths differ across tables: {sorted(widths)}")
    if len(tables) == 1:
        return tables[0]
    with warnings.catch_warnings():
        # members were already checked on construction
        warnings.simplefilter("ignore")
        return SubjectTable(
            np.concatenate([t.subject_ids for t in tables]),
            np.concatenate([t.sites for t in tables]),
            np.concatenate([t.ages for t in tables]),
            np.vstack([t.features for t in tables]),
        )


def sort_by_site(tables) -> list:
    tables = list(tables)
    labels = [t.site for t in tables]
    if len(set(labels)) != len(labels):
        raise InvalidInputError(f"duplicate site labels: {labels}")
    return [t for _, t in sorted(zip(labels, tables), key=lambda p: p[0])]


@dataclass(frozen=True, eq=False)
class Parcellation:
    """Total, dense voxel -> region map."""

    region_of: np.ndarray

    def __post_init__(self):
        region_of = np.asarray(self.region_of)
        if region_of.ndim != 1 or region_of.size == 0:
            raise ValidationError("parcellation must be a nonempty 1-D map")
        if not np.issubdtype(region_of.dtype, np.integer):
            raise ValidationError("region ids must be integers")
        region_of = region_of.astype(np.int64)
        if region_of.min() < 0:
            raise ValidationError("region ids must be nonnegative")
        present = np.unique(region_of)
        if present.size != region_of.max() + 1:
            missing = sorted(set(range(int(region_of.max()) + 1)) - set(present.tolist()))
            raise ValidationError(f"region ids must be dense 0..R-1; empty regions {missing[:10]}")
        region_of.setflags(write=False)
        object.__setattr__(self, "region_of", region_of)

    @property
    def n_voxels(self) -> int:
        return int(self.region_of.shape[0])

    @property
    def n_regions(self) -> int:
        return int(self.region_of.max()) + 1

    @cached_property
    def columns(self) -> list:
        """Ascending voxel indices of every region."""
        order = np.argsort(self.region_of, kind="stable")
        bounds = np.cumsum(np.bincount(self.region_of, minlength=self.n_regions))[:-1]
        return np.split(order, bounds)

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.region_of, minlength=self.n_regions)

    def checksum(self) -> str:
        return hashlib.sha256(self.region_of.astype("<i8").tobytes()).hexdigest()

    @classmethod
    def uniform(cls, n_regions: int, voxels_per_region: int) -> "Parcellation":
        return cls(np.repeat(np.arange(n_regions), voxels_per_region))

    @classmethod
    def from_sparse_ids(cls, region_ids):
        """Remap arbitrary integer ids to dense 0..R-1 (ascending id order)."""
        uniq, dense = np.unique(np.asarray(region_ids), return_inverse=True)
        return cls(dense.astype(np.int64)), uniq


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    fold_of: np.ndarray
    n_folds: int

    def test_rows(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == f)

    def train_rows(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != f)


def _check_width(table: SubjectTable, parcellation: Parcellation):
    if table.n_features != parcellation.n_voxels:
        raise InvalidInputError(
            f"table has {table.n_features} voxels but parcellation covers {parcellation.n_voxels}"
        )


def region_view(table: SubjectTable, parcellation: Parcellation, r: int) -> np.ndarray:
    """Read-only n x m_r block of region ``r``'s voxels, ascending voxel order."""
    if not 0 <= r < parcellation.n_regions:
        raise IndexError(f"region {r} out of range [0, {parcellation.n_regions})")
    _check_width(table, parcellation)
    view = table.features[:, parcellation.columns[r]]
    view.setflags(write=False)
    return view


def region_means(table_or_features, parcellation: Parcellation) -> np.ndarray:
    feats = table_or_features.features if isinstance(table_or_features, SubjectTable) else np.asarray(table_or_features, dtype=float)
    if feats.shape[1] != parcellation.n_voxels:
        raise InvalidInputError(f"{feats.shape[1]} voxels vs parcellation of {parcellation.n_voxels}")
    order = np.concatenate(parcellation.columns)
    starts = np.concatenate([[0], np.cumsum(parcellation.sizes)[:-1]])
    sums = np.add.reduceat(feats[:, order], starts, axis=1)
    return sums / parcellation.sizes


def kfold_split(ages, K: int, seed) -> FoldAssignment:
    """Age-stratified, seeded K-fold assignment.

    Subjects are ranked by age and cut into K quantile strata; each stratum
    is shuffled and dealt round-robin onto the folds, continuing the deal
    across strata so overall fold sizes also differ by at most one.
    """
    ages = np.asarray(ages, dtype=float)
    n = ages.shape[0]
    if K < 2:
        raise InvalidInputError("need at least 2 folds")
    if n < K:
        raise InvalidInputError(f"{n} samples cannot fill {K} folds")
    rng = np.random.default_rng(seed)
    rank_order = np.argsort(ages, kind="stable")
    stratum = (np.arange(n) * K) // n
    dealt = []
    for s in range(K):
        members = rank_order[stratum == s]
        dealt.append(rng.permutation(members))
    order = np.concatenate(dealt)
    labels = rng.permutation(K)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[order] = labels[np.arange(n) % K]
    return FoldAssignment(fold_of, K)


# --- CSV I/O -----------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def features_csv(table: SubjectTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subject_id", "site", "age"] + [f"{FEATURE_PREFIX}{j}" for j in range(table.n_features)])
    for i in range(table.n):
        w.writerow([table.subject_ids[i], table.sites[i], _fmt(table.ages[i])]
                   + [_fmt(v) for v in table.features[i]])
    return buf.getvalue()


def write_features(path, table: SubjectTable) -> None:
    Path(path).write_text(features_csv(table), encoding="utf-8")


def _parse_float(cell: str, row: int, col: str, path) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"{path}: row {row}, column {col!r}: not a number: {cell!r}") from None
    if not np.isfinite(value):
        raise ParseError(f"{path}: row {row}, column {col!r}: non-finite value {cell!r}")
    return value


def load_features(path) -> SubjectTable:
    """Read a features CSV (``subject_id,site,age,v0,...``).

    Row numbers in error messages are 1-based file lines.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if header[:3] != ["subject_id", "site", "age"]:
            raise ParseError(f"{path}: header must start with subject_id,site,age; got {header[:3]}")
        voxel_cols = header[3:]
        expected = [f"{FEATURE_PREFIX}{j}" for j in range(len(voxel_cols))]
        if voxel_cols != expected:
            bad = next(i for i, (a, b) in enumerate(zip(voxel_cols, expected)) if a != b)
            raise ParseError(f"{path}: header column {bad + 3} is {voxel_cols[bad]!r}, expected {expected[bad]!r}")
        if not voxel_cols:
            raise ParseError(f"{path}: no voxel columns")
        ids, sites, ages, rows = [], [], [], []
        seen = set()
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ParseError(f"{path}: row {line_no} has {len(rec)} cells, expected {len(header)}")
            sid = rec[0]
            if sid in seen:
                raise ParseError(f"{path}: row {line_no}: duplicate subject_id {sid!r}")
            seen.add(sid)
            ids.append(sid)
            sites.append(rec[1])
            ages.append(_parse_float(rec[2], line_no, "age", path))
            rows.append([_parse_float(c, line_no, header[j + 3], path) for j, c in enumerate(rec[3:])])
    if not rows:
        raise ParseError(f"{path}: no subject rows")
    try:
        return SubjectTable(np.array(ids), np.array(sites), np.array(ages), np.array(rows))
    except InvalidInputError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def parcellation_csv(parcellation: Parcellation) -> str:
    lines = ["voxel_index,region_id"] + [f"{v},{int(r)}" for v, r in enumerate(parcellation.region_of)]
    return "\n".join(lines) + "\n"


def write_parcellation(path, parcellation: Parcellation) -> None:
    Path(path).write_text(parcellation_csv(parcellation), encoding="utf-8")


def load_parcellation(path) -> Parcellation:
    path = Path(path)
    pairs = {}
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["voxel_index", "region_id"]:
            raise ParseError(f"{path}: header must be voxel_index,region_id; got {header}")
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 2:
                raise ParseError(f"{path}: row {line_no} has {len(rec)} cells, expected 2")
            try:
                v, r = int(rec[0]), int(rec[1])
            except ValueError:
                raise ParseError(f"{path}: row {line_no}: non-integer entry {rec}") from None
            if v in pairs:
                raise ValidationError(f"{path}: voxel {v} assigned twice (row {line_no})")
            pairs[v] = r
    if not pairs:
        raise ValidationError(f"{path}: no voxels")
    n = max(pairs) + 1
    missing = [v for v in range(n) if v not in pairs]
    if missing or min(pairs) < 0:
        raise ValidationError(f"{path}: voxel indices must cover 0..{n - 1}; missing {missing[:10]}")
    return Parcellation(np.array([pairs[v] for v in range(n)], dtype=np.int64))
