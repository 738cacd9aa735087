"""Experiment configuration: TOML (or JSON) files resolved against disk.

See ``docs/config.md`` for the grammar. Paths are relative to the config
file's directory. Input files are identified in outputs by their SHA-256
digest and base name only, so reports do not depend on where the data live.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .glmnet import TuneGrid
from .privacy import DEFAULT_C_GRID
from .stacking import SETUP_NAMES, StackConfig, get_setup
from .synth import SynthConfig
from .exceptions import InvalidInputError


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration (exit code 2)."""


_SECTIONS = {
    "seed": None,
    "data": {"manifest", "parcellation", "features"},
    "stacking": {"setups", "k_l0", "inner_folds", "alphas", "n_lambda", "lambda_min_ratio", "tol", "max_sweeps"},
    "privacy": {"feature_space", "grid_C", "k_outer", "k_inner"},
    "output": {"dir", "save_models"},
    "synth": {f.name for f in dataclasses.fields(SynthConfig)},
}


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def digest_of(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    raw = path.read_bytes()
    try:
        if path.suffix.lower() == ".json":
            doc = json.loads(raw.decode())
        else:
            doc = tomllib.loads(raw.decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a table")
    for key, value in doc.items():
        if key not in _SECTIONS:
            raise ConfigError(f"{path}: unknown key {key!r}")
        allowed = _SECTIONS[key]
        if allowed is None:
            continue
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: [{key}] must be a table")
        unknown = set(value) - allowed
        if unknown:
            raise ConfigError(f"{path}: unknown keys in [{key}]: {sorted(unknown)}")
    return doc


@dataclass
class ExperimentConfig:
    parcellation: Path
    features: dict  # site label -> Path
    seed: int
    setups: tuple = SETUP_NAMES
    stack: StackConfig = StackConfig()
    feature_space: str = "region_mean"
    grid_C: tuple = DEFAULT_C_GRID
    k_outer: int = 5
    k_inner: int = 5
    out_dir: Path | None = None
    save_models: bool = False
    inputs: dict = field(default_factory=dict)  # file name -> sha256

    def digest(self) -> str:
        """Hash of every setting that affects results, with inputs by content."""
        return digest_of({
            "inputs": self.inputs,
            "sites": sorted(self.features),
            "seed": self.seed,
            "setups": list(self.setups),
            "k_l0": self.stack.k_l0,
            "grid": dataclasses.asdict(self.stack.grid),
            "tol": self.stack.tol,
            "max_sweeps": self.stack.max_sweeps,
            "feature_space": self.feature_space,
            "grid_C": list(self.grid_C),
            "k_outer": self.k_outer,
            "k_inner": self.k_inner,
        })


def _int(value, name, minimum):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return value


def _inputs_from_manifest(path: Path):
    if not path.is_file():
        raise ConfigError(f"manifest not found: {path}")
    try:
        man = json.loads(path.read_text())
        files = man["files"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: not a synth manifest ({exc})") from exc
    base = path.parent
    parc = base / files["parcellation"]["name"]
    feats = {site: base / entry["name"] for site, entry in sorted(files["features"].items())}
    expected = {files["parcellation"]["name"]: files["parcellation"]["sha256"]}
    expected.update({e["name"]: e["sha256"] for e in files["features"].values()})
    return parc, feats, expected


def load_experiment(path, seed: int, out_dir=None, jobs: int = 1) -> ExperimentConfig:
    """Read and validate an experiment config; ``seed`` must agree with any seed in the file."""
    path = Path(path)
    doc = read_config_file(path)
    base = path.parent
    if "seed" in doc and doc["seed"] != seed:
        raise ConfigError(f"--seed {seed} disagrees with seed = {doc['seed']} in {path}")

    data = doc.get("data", {})
    expected = {}
    if "manifest" in data:
        if "parcellation" in data or "features" in data:
            raise ConfigError("[data] takes either manifest or parcellation + features, not both")
        parc, feats, expected = _inputs_from_manifest(base / data["manifest"])
    else:
        if "parcellation" not in data or "features" not in data:
            raise ConfigError("[data] needs parcellation and features (or a manifest)")
        if not isinstance(data["features"], dict) or not data["features"]:
            raise ConfigError("[data].features must map site labels to CSV paths")
        parc = base / data["parcellation"]
        feats = {str(site): base / p for site, p in sorted(data["features"].items())}
    for p in [parc, *feats.values()]:
        if not p.is_file():
            raise ConfigError(f"input file not found: {p}")
    names = [parc.name, *(p.name for p in feats.values())]
    if len(set(names)) != len(names):
        raise ConfigError("input files must have distinct base names")
    inputs = {p.name: file_digest(p) for p in [parc, *feats.values()]}
    for name, digest in expected.items():
        if inputs.get(name) != digest:
            raise ConfigError(f"{name} does not match the digest recorded in the manifest")

    st = doc.get("stacking", {})
    setups = st.get("setups", ["all"])
    if isinstance(setups, str):
        setups = [setups]
    if list(setups) == ["all"]:
        setups = list(SETUP_NAMES)
    try:
        setups = tuple(get_setup(s).name for s in setups)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from exc
    if not setups or len(set(setups)) != len(setups):
        raise ConfigError("setups must be a nonempty list without repeats")
    try:
        grid = TuneGrid(
            alphas=tuple(float(a) for a in st.get("alphas", TuneGrid.alphas)),
            n_lambda=_int(st.get("n_lambda", 20), "n_lambda", 1),
            lambda_min_ratio=float(st.get("lambda_min_ratio", 1e-3)),
            inner_folds=_int(st.get("inner_folds", 5), "inner_folds", 2),
        )
    except (InvalidInputError, TypeError) as exc:
        raise ConfigError(f"[stacking]: {exc}") from exc
    stack = StackConfig(
        k_l0=_int(st.get("k_l0", 3), "k_l0", 2),
        grid=grid,
        n_jobs=_int(jobs, "--jobs", 1) if jobs != -1 else -1,
        tol=float(st.get("tol", StackConfig.tol)),
        max_sweeps=_int(st.get("max_sweeps", StackConfig.max_sweeps), "max_sweeps", 1),
    )

    pv = doc.get("privacy", {})
    grid_C = tuple(float(c) for c in pv.get("grid_C", DEFAULT_C_GRID))
    if not grid_C or min(grid_C) <= 0:
        raise ConfigError("grid_C must be a nonempty list of positive numbers")

    out = doc.get("output", {})
    if out_dir is None and "dir" in out:
        out_dir = base / out["dir"]
    return ExperimentConfig(
        parcellation=parc,
        features=feats,
        seed=seed,
        setups=setups,
        stack=stack,
        feature_space=str(pv.get("feature_space", "region_mean")),
        grid_C=grid_C,
        k_outer=_int(pv.get("k_outer", 5), "k_outer", 2),
        k_inner=_int(pv.get("k_inner", 5), "k_inner", 2),
        out_dir=Path(out_dir) if out_dir is not None else None,
        save_models=bool(out.get("save_models", False)),
        inputs=inputs,
    )


def load_synth_config(path) -> SynthConfig:
    doc = read_config_file(path)
    extra = set(doc) - {"synth", "seed"}
    if extra:
        raise ConfigError(f"a synth config takes only [synth] (and seed), found {sorted(extra)}")
    try:
        return SynthConfig.from_dict(doc.get("synth", {}))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[synth]: {exc}") from exc
