"""Command-line entry point: ``regionstack {synth,run,sweep,privacy,regions}``.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime error.
All outputs of a command are written at the end; if writing fails midway,
files written so far are removed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import warnings
from pathlib import Path

from . import __version__
from .bundle import bundle_json
from .config import ConfigError, ExperimentConfig, digest_of, load_experiment, load_synth_config, read_config_file
from .data import features_csv, load_features, load_parcellation, parcellation_csv, sort_by_site
from .evaluation import loso_evaluate, region_age_correlations, site_count_sweep
from .exceptions import ParseError, ValidationError
from .privacy import privacy_probe
from .stacking import StackCache, fit_stacked
from .synth import default_benchmark, generate

logger = logging.getLogger("regionstack")

SCHEMA_VERSION = 1
FEATURE_SPACE_ALIASES = {"gmv": "region_mean", "region_mean": "region_mean", "l0": "l0_oos", "l0_oos": "l0_oos"}


class UsageError(Exception):
    pass


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_outputs(out_dir: Path, files: dict) -> None:
    """Write ``{name: text}`` into ``out_dir``; on failure remove what was written."""
    created_dir = not out_dir.exists()
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            path = out_dir / name
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
            written.append(path)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        if created_dir and out_dir.exists():
            for sub in sorted(out_dir.rglob("*"), reverse=True):
                if sub.is_dir() and not any(sub.iterdir()):
                    sub.rmdir()
            if not any(out_dir.iterdir()):
                out_dir.rmdir()
        raise


def _manifest(kind, seed, config_digest, inputs, files, extra=None) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "tool_version": __version__,
        "seed": seed,
        "config_digest": config_digest,
        "inputs": inputs,
        "outputs": {name: _sha(text.encode()) for name, text in sorted(files.items())},
    }
    if extra:
        doc.update(extra)
    return _dumps(doc)


def _out_dir(args, exp: ExperimentConfig | None = None) -> Path:
    out = args.out if args.out is not None else (exp.out_dir if exp is not None else None)
    if out is None:
        raise UsageError("no output directory: pass --out or set [output] dir")
    return Path(out)


def _load_tables(exp: ExperimentConfig):
    parc = load_parcellation(exp.parcellation)
    tables = []
    for site, path in exp.features.items():
        t = load_features(path)
        if t.site_labels != [site]:
            raise ValidationError(f"{path.name}: expected only site {site!r}, found {t.site_labels}")
        tables.append(t)
    return sort_by_site(tables), parc


def _meta(exp: ExperimentConfig, **extra) -> dict:
    meta = {"config_digest": exp.digest(), "inputs": exp.inputs, "k_l0": exp.stack.k_l0}
    meta.update(extra)
    return meta


def cmd_synth(args) -> int:
    if args.config is not None and args.preset is not None:
        raise UsageError("pass either --config or --preset, not both")
    if args.config is None and args.preset is None:
        raise UsageError("synth needs --config PATH or --preset default")
    if args.config is not None:
        doc_seed = read_config_file(args.config).get("seed")
        if doc_seed is not None and doc_seed != args.seed:
            raise ConfigError(f"--seed {args.seed} disagrees with seed = {doc_seed} in {args.config}")
        cfg = load_synth_config(args.config)
    else:
        cfg = default_benchmark()
    out = _out_dir(args)
    tables, parc, truth = generate(cfg, args.seed)
    files = {"parcellation.csv": parcellation_csv(parc)}
    for t in tables:
        files[f"{t.site}.csv"] = features_csv(t)
    files["ground_truth.json"] = _dumps({"schema_version": SCHEMA_VERSION, "seed": args.seed, **truth.to_dict()})
    config_dict = cfg.to_dict()
    listing = {
        "parcellation": {"name": "parcellation.csv", "sha256": _sha(files["parcellation.csv"].encode())},
        "features": {t.site: {"name": f"{t.site}.csv", "sha256": _sha(files[f"{t.site}.csv"].encode())}
                     for t in tables},
        "ground_truth": {"name": "ground_truth.json", "sha256": _sha(files["ground_truth.json"].encode())},
    }
    files["manifest.json"] = _dumps({
        "schema_version": SCHEMA_VERSION,
        "kind": "synth",
        "tool_version": __version__,
        "seed": args.seed,
        "config": config_dict,
        "config_digest": digest_of(config_dict),
        "files": listing,
    })
    write_outputs(out, files)
    logger.info("wrote %d files to %s", len(files), out)
    return 0


def _experiment(args) -> ExperimentConfig:
    if args.config is None:
        raise UsageError(f"{args.command} needs --config PATH")
    return load_experiment(args.config, args.seed, args.out, args.jobs)


def cmd_run(args) -> int:
    exp = _experiment(args)
    out = _out_dir(args, exp)
    tables, parc = _load_tables(exp)
    if len(tables) < 2:
        raise ConfigError("leave-one-site-out evaluation needs at least two sites")
    cache = StackCache()
    report = loso_evaluate(tables, parc, exp.setups, exp.stack, exp.seed, cache=cache)
    report.meta = _meta(exp, setups=list(exp.setups))
    files = {"report.json": report.to_json(), "report.csv": report.to_csv()}
    if exp.save_models or args.save_models:
        for i, test in enumerate(tables):
            train = tables[:i] + tables[i + 1:]
            for setup in exp.setups:
                if setup.endswith("_ext"):
                    logger.info("%s is transductive; no bundle written", setup)
                    continue
                model = fit_stacked(setup, train, parc, exp.stack, exp.seed, cache)
                files[f"models/{setup}__test-{test.site}.json"] = bundle_json(model, test, exp.digest())
    files["run_manifest.json"] = _manifest("run", exp.seed, exp.digest(), exp.inputs, files)
    write_outputs(out, files)
    return 0


def cmd_sweep(args) -> int:
    exp = _experiment(args)
    out = _out_dir(args, exp)
    tables, parc = _load_tables(exp)
    if len(tables) < 3:
        raise ConfigError("the site-count sweep needs at least three sites")
    report = site_count_sweep(tables, parc, exp.setups, exp.stack, exp.seed)
    report.meta = _meta(exp, setups=list(exp.setups))
    files = {"sweep.json": report.to_json(), "sweep.csv": report.to_csv()}
    files["sweep_manifest.json"] = _manifest("sweep", exp.seed, exp.digest(), exp.inputs, files)
    write_outputs(out, files)
    return 0


def cmd_privacy(args) -> int:
    exp = _experiment(args)
    out = _out_dir(args, exp)
    space = args.feature_space or exp.feature_space
    if space not in FEATURE_SPACE_ALIASES:
        raise ConfigError(f"unknown feature space {space!r}")
    space = FEATURE_SPACE_ALIASES[space]
    tables, parc = _load_tables(exp)
    if len(tables) < 2:
        raise ConfigError("the privacy probe needs at least two sites")
    report = privacy_probe(tables, parc, space, exp.grid_C, exp.k_outer, exp.k_inner, exp.seed, exp.stack)
    report.meta = _meta(exp, grid_C=list(exp.grid_C), k_outer=exp.k_outer, k_inner=exp.k_inner)
    files = {f"privacy_{space}.json": report.to_json(), f"confusion_{space}.csv": report.confusion_csv()}
    files[f"privacy_{space}_manifest.json"] = _manifest("privacy", exp.seed, exp.digest(), exp.inputs, files)
    write_outputs(out, files)
    return 0


def cmd_regions(args) -> int:
    exp = _experiment(args)
    out = _out_dir(args, exp)
    tables, parc = _load_tables(exp)
    report = region_age_correlations(tables, parc, exp.stack.k_l0, exp.seed, exp.stack)
    report.meta = _meta(exp)
    files = {"regions.json": report.to_json(), "regions.csv": report.to_csv()}
    files["regions_manifest.json"] = _manifest("regions", exp.seed, exp.digest(), exp.inputs, files)
    write_outputs(out, files)
    return 0


COMMANDS = {"synth": cmd_synth, "run": cmd_run, "sweep": cmd_sweep, "privacy": cmd_privacy, "regions": cmd_regions}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config (TOML, or JSON by .json suffix)")
    common.add_argument("--seed", type=int, required=True, help="master seed; required")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers for level-0 fits (-1: all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="regionstack", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("synth", parents=[common], help="write a synthetic multi-site dataset")
    p.add_argument("--preset", choices=["default"], help="use the built-in benchmark configuration")
    p = sub.add_parser("run", parents=[common], help="leave-one-site-out evaluation of setups")
    p.add_argument("--save-models", action="store_true", help="also write JSON model bundles")
    sub.add_parser("sweep", parents=[common], help="evaluate every subset of training sites")
    p = sub.add_parser("privacy", parents=[common], help="site-of-origin classification probe")
    p.add_argument("--feature-space", choices=sorted(FEATURE_SPACE_ALIASES),
                   help="gmv/region_mean or l0/l0_oos (overrides the config)")
    sub.add_parser("regions", parents=[common], help="per-region age correlations within each site")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    if args.jobs == 0 or args.jobs < -1:
        parser.print_usage(sys.stderr)
        print("regionstack: error: --jobs must be positive or -1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"regionstack: error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, ValidationError) as exc:
        print(f"regionstack: input error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure inside a module
        logger.debug("traceback", exc_info=True)
        print(f"regionstack: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
