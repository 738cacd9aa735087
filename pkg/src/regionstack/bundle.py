"""JSON model bundles for fitted stacked models.

A bundle stores every level-0 and level-1 model, the tuning settings needed
to rebuild test-site OOS features, the parcellation checksum, and a smoke
set of predictions that loading must reproduce.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from . import __version__
from .data import Parcellation, SubjectTable
from .exceptions import ValidationError
from .glmnet import LinearModel, TuneGrid
from .stacking import L0Bank, StackConfig, StackedModel, get_setup

BUNDLE_VERSION = 1
SMOKE_TOL = 1e-10


def bundle_dict(model: StackedModel, smoke_table: SubjectTable, config_digest: str = "") -> dict:
    smoke = model.predict(smoke_table)
    cfg = model.cfg
    return {
        "bundle_version": BUNDLE_VERSION,
        "tool_version": __version__,
        "setup": model.setup.name,
        "parcellation_checksum": model.parcellation.checksum(),
        "config_digest": config_digest,
        "seed": model.seed,
        "stack_config": {
            "k_l0": cfg.k_l0,
            "grid": dataclasses.asdict(cfg.grid),
            "tol": cfg.tol,
            "max_sweeps": cfg.max_sweeps,
        },
        "banks": [{"label": label, "models": [m.to_dict() for m in bank.region_models]}
                  for label, bank in model.banks],
        "l1": [{"label": label, "model": m.to_dict()} for label, m in model.l1],
        "smoke": {
            "site": smoke_table.site,
            "subject_ids": smoke_table.subject_ids.tolist(),
            "predictions": smoke.tolist(),
        },
    }


def bundle_json(model: StackedModel, smoke_table: SubjectTable, config_digest: str = "") -> str:
    if model.setup.ext:
        raise ValidationError(f"{model.setup.name} is transductive and cannot be bundled")
    return json.dumps(bundle_dict(model, smoke_table, config_digest), sort_keys=True, indent=1) + "\n"


def save_bundle(path, model: StackedModel, smoke_table: SubjectTable, config_digest: str = "") -> None:
    with open(path, "w") as fh:
        fh.write(bundle_json(model, smoke_table, config_digest))


def load_bundle(path, parcellation: Parcellation) -> tuple:
    """Return ``(StackedModel, bundle dict)``; the parcellation must match the checksum."""
    with open(path) as fh:
        d = json.load(fh)
    if d.get("bundle_version") != BUNDLE_VERSION:
        raise ValidationError(f"unsupported bundle version {d.get('bundle_version')!r}")
    if d["parcellation_checksum"] != parcellation.checksum():
        raise ValidationError("bundle was fitted on a different parcellation")
    sc = d["stack_config"]
    g = sc["grid"]
    cfg = StackConfig(
        k_l0=int(sc["k_l0"]),
        grid=TuneGrid(tuple(g["alphas"]), int(g["n_lambda"]), float(g["lambda_min_ratio"]), int(g["inner_folds"])),
        tol=float(sc["tol"]),
        max_sweeps=int(sc["max_sweeps"]),
    )
    banks = tuple(
        (b["label"], L0Bank(tuple(LinearModel.from_dict(m) for m in b["models"]), b["label"], parcellation))
        for b in d["banks"]
    )
    l1 = tuple((e["label"], LinearModel.from_dict(e["model"])) for e in d["l1"])
    model = StackedModel(get_setup(d["setup"]), parcellation, banks, l1, cfg.k_l0, int(d["seed"]), cfg)
    return model, d


def verify_smoke(model: StackedModel, bundle: dict, table: SubjectTable, tol: float = SMOKE_TOL) -> float:
    """Max deviation from the stored smoke predictions; raises above ``tol``."""
    smoke = bundle["smoke"]
    if table.subject_ids.tolist() != smoke["subject_ids"]:
        raise ValidationError("smoke table does not match the stored subject ids")
    dev = float(np.max(np.abs(model.predict(table) - np.asarray(smoke["predictions"]))))
    if dev > tol:
        raise ValidationError(f"bundle predictions deviate by {dev:g} > {tol:g}")
    return dev
