"""Seeded multi-site generator with region-structured age signal.

Voxel ``v`` of region ``r`` for subject ``i`` at site ``s``::

    x = baseline + w_v * g_r(age_i) + u_{s,v} + noise_sd * eps
    g_r(age) = region_signal_scale * c_r * (t + q * t^2),  t = (age - 50) / 20

Loadings ``w_v`` come from a three-way sign mixture (positive-mean,
negative-mean, exactly zero), so averaging a region can cancel its signal
while a per-voxel model still recovers it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .data import Parcellation, SubjectTable
from .exceptions import ValidationError

NONLINEARITIES = ("none", "quadratic")
SIGN_ALLOCATIONS = ("iid", "exact")


@dataclass(frozen=True)
class SynthConfig:
    n_sites: int = 4
    n_per_site: int = 300
    age_ranges: tuple = ((18.0, 88.0), (20.0, 86.0), (18.0, 85.0), (30.0, 85.0))
    n_regions: int = 50
    voxels_per_region: int = 20
    frac_pos: float = 0.4
    frac_neg: float = 0.4
    frac_null: float = 0.2
    loading_mean: float = 1.0
    loading_sd: float = 0.3
    noise_sd: float = 1.0
    site_offset_sd: float = 0.5
    region_signal_scale: float = 2.0
    nonlinearity: str = "none"
    quadratic_coef: float = 0.25
    baseline: float = 100.0
    # "iid": each voxel's sign drawn independently; "exact": per-region counts
    # round(frac * voxels_per_region), shuffled within the region
    sign_allocation: str = "iid"

    def __post_init__(self):
        ranges = tuple((float(lo), float(hi)) for lo, hi in self.age_ranges)
        object.__setattr__(self, "age_ranges", ranges)
        if self.n_sites < 1 or self.n_per_site < 1:
            raise ValidationError("n_sites and n_per_site must be positive")
        if len(ranges) != self.n_sites:
            raise ValidationError(f"{len(ranges)} age ranges for {self.n_sites} sites")
        if any(not 0 < lo < hi for lo, hi in ranges):
            raise ValidationError("every age range needs 0 < lo < hi")
        if self.n_regions < 1 or self.voxels_per_region < 1:
            raise ValidationError("n_regions and voxels_per_region must be positive")
        fracs = (self.frac_pos, self.frac_neg, self.frac_null)
        if any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-12:
            raise ValidationError(f"loading fractions must be nonnegative and sum to 1, got {fracs}")
        if min(self.loading_sd, self.noise_sd, self.site_offset_sd) < 0:
            raise ValidationError("standard deviations must be nonnegative")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValidationError(f"nonlinearity must be one of {NONLINEARITIES}")
        if self.sign_allocation not in SIGN_ALLOCATIONS:
            raise ValidationError(f"sign_allocation must be one of {SIGN_ALLOCATIONS}")

    @property
    def n_voxels(self) -> int:
        return self.n_regions * self.voxels_per_region

    def site_labels(self) -> list:
        return [f"site{s}" for s in range(self.n_sites)]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["age_ranges"] = [list(r) for r in self.age_ranges]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown synth config keys: {sorted(unknown)}")
        d = dict(d)
        if "age_ranges" in d:
            d["age_ranges"] = tuple(tuple(r) for r in d["age_ranges"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    site_labels: tuple
    components: np.ndarray  # per voxel: 1 positive, -1 negative, 0 null
    loadings: np.ndarray
    region_scale: np.ndarray
    offsets: np.ndarray  # n_sites x P

    def to_dict(self) -> dict:
        return {
            "site_labels": list(self.site_labels),
            "components": self.components.tolist(),
            "loadings": self.loadings.tolist(),
            "region_scale": self.region_scale.tolist(),
            "offsets": {s: self.offsets[i].tolist() for i, s in enumerate(self.site_labels)},
        }


def default_benchmark() -> SynthConfig:
    return SynthConfig()


def region_signal(config: SynthConfig, region_scale, ages) -> np.ndarray:
    """g_r(age) for every subject (rows) and region (columns)."""
    t = (np.asarray(ages, dtype=float) - 50.0) / 20.0
    if config.nonlinearity == "quadratic":
        t = t + config.quadratic_coef * t * t
    return config.region_signal_scale * t[:, None] * np.asarray(region_scale)[None, :]


def _draw_signs(config: SynthConfig, rng) -> np.ndarray:
    fracs = [config.frac_pos, config.frac_neg, config.frac_null]
    if config.sign_allocation == "iid":
        return np.array([1, -1, 0])[rng.choice(3, size=config.n_voxels, p=fracs)]
    V = config.voxels_per_region
    n_pos = int(round(config.frac_pos * V))
    n_neg = min(int(round(config.frac_neg * V)), V - n_pos)
    block = np.array([1] * n_pos + [-1] * n_neg + [0] * (V - n_pos - n_neg))
    return np.concatenate([rng.permutation(block) for _ in range(config.n_regions)])


def generate(config: SynthConfig, seed: int):
    """Return ``(tables, parcellation, truth)``; one table per site."""
    ss = np.random.SeedSequence(int(seed))
    g_truth, *g_sites = [np.random.default_rng(s) for s in ss.spawn(1 + config.n_sites)]

    P = config.n_voxels
    parcellation = Parcellation.uniform(config.n_regions, config.voxels_per_region)
    components = _draw_signs(config, g_truth)
    loadings = components * config.loading_mean + (components != 0) * g_truth.normal(0.0, config.loading_sd, P)
    region_scale = g_truth.uniform(0.5, 1.5, config.n_regions)
    offsets = g_truth.normal(0.0, config.site_offset_sd, (config.n_sites, P))

    labels = config.site_labels()
    tables = []
    for s, rng in enumerate(g_sites):
        lo, hi = config.age_ranges[s]
        ages = rng.uniform(lo, hi, config.n_per_site)
        signal = region_signal(config, region_scale, ages)[:, parcellation.region_of]
        noise = rng.normal(0.0, 1.0, (config.n_per_site, P))
        feats = config.baseline + signal * loadings + offsets[s] + config.noise_sd * noise
        ids = [f"{labels[s]}_{i:04d}" for i in range(config.n_per_site)]
        tables.append(SubjectTable(np.array(ids), labels[s], ages, feats))
    truth = GroundTruth(tuple(labels), components, loadings, region_scale, offsets)
    return tables, parcellation, truth
