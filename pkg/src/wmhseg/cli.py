"""Command-line entry point: phantom, train, predict, evaluate, report, matrix.

Every command exits 0 on success. Failures print one JSON object on stderr
and exit 2 for usage/config errors, 1 for runtime errors. Progress logs are
JSON lines on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .core.io import load_dataset, load_labels, load_sample, load_volume, save_labels, \
    save_sample, write_manifest
from .core.nifti import write_nifti
from .core.types import MODALITIES, InputConfig, Sample, TaskKind, TaskSpec
from .data.phantom import generate_phantoms
from .errors import WMHSegError
from .evaluation import burden
from .experiments import TABLES, aggregate, evaluate_cells, run_matrix, write_table
from .inference import ensemble_predict
from .labels import load_region_vocabulary
from .model import load_bundle, save_bundle
from .training import train

log = logging.getLogger("wmhseg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


class JsonLineFormatter(logging.Formatter):
    def format(self, record):
        payload = {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        payload.update(getattr(record, "event", {}) or {})
        return json.dumps(payload, default=str)


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger("wmhseg")
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if verbose else logging.WARNING)
    root.propagate = False


def _common(p, scale=True):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output path")
    if scale:
        p.add_argument("--scale", choices=sorted(config_mod.SCALES))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wmhseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress as JSON lines")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="write synthetic subjects in the dataset layout")
    _common(p)
    p.add_argument("--count", type=int, help="number of training subjects")
    p.add_argument("--test-count", type=int, default=None, help="number of additional test subjects")

    p = sub.add_parser("train", help="train one model")
    _common(p)
    p.add_argument("--data", help="dataset root (default: config data_dir, then $WMH_DATA_DIR, else phantoms)")
    p.add_argument("--split", default="train")
    p.add_argument("--input-config", help="FLAIR_ONLY/T1_ONLY/CONCAT/INTERCHANGEABLE or A-D")
    p.add_argument("--task", choices=[k.value for k in TaskKind])
    p.add_argument("--modalities", help="comma-separated modalities to load, e.g. T1,FLAIR")

    p = sub.add_parser("predict", help="segment one subject")
    _common(p, scale=False)
    p.add_argument("--bundle", action="append", required=True, help="model bundle path (repeat for A+B)")
    p.add_argument("--input-config", required=True)
    p.add_argument("--t1")
    p.add_argument("--flair")
    p.add_argument("--subject-dir", help="subject directory in the dataset layout")
    p.add_argument("--modalities", help="comma-separated modalities to use")
    p.add_argument("--allow-missing-modality", action="store_true")
    p.add_argument("--probs-out", help="also write the 4D class-probability NIfTI here")
    p.add_argument("--window", help="window size, e.g. 32,128,128")
    p.add_argument("--overlap", type=float, default=0.5)

    p = sub.add_parser("evaluate", help="score trained bundles on a dataset split")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--split", default="test")
    p.add_argument("--bundle", action="append", required=True)
    p.add_argument("--input-config", required=True)
    p.add_argument("--task", choices=[k.value for k in TaskKind])
    p.add_argument("--modalities")

    p = sub.add_parser("report", help="region-wise lesion burden")
    _common(p, scale=False)
    p.add_argument("--pred", required=True, help="regional or binary lesion label map")
    p.add_argument("--regions", required=True, help="region label map")
    p.add_argument("--vocab", help="region vocabulary JSON")

    p = sub.add_parser("matrix", help="full training x inference grid for all tasks")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--tasks", default="LESION,REGION,JOINT")
    return parser


def _overrides(args) -> dict:
    o = {"seed": getattr(args, "seed", None), "scale": getattr(args, "scale", None)}
    if getattr(args, "input_config", None):
        o["input_config"] = args.input_config
    if getattr(args, "task", None):
        o["task"] = args.task
    return o


def _modalities(text):
    if not text:
        return None
    mods = [m.strip().upper() for m in text.split(",") if m.strip()]
    bad = [m for m in mods if m not in MODALITIES]
    if bad:
        raise UsageError(f"unknown modalities {bad}")
    return mods


def _restrict(samples, modalities):
    if not modalities:
        return samples
    out = []
    for s in samples:
        kept = {m: v for m, v in s.modalities.items() if m in modalities}
        if not kept:
            raise WMHSegError(f"{s.subject_id}: none of {modalities} present")
        out.append(Sample(s.subject_id, kept, s.lesion, s.regions, s.meta))
    return out


def _dataset(args, cfg, split):
    root = getattr(args, "data", None) or cfg.get("data_dir") or os.environ.get("WMH_DATA_DIR")
    if root:
        samples = load_dataset(root, split)
        if not samples:
            raise WMHSegError(f"no subjects in split {split!r} under {root}")
        return samples
    spec, count, test_count = config_mod.phantom_spec(cfg)
    phantoms = generate_phantoms(spec, count + test_count)
    return phantoms[:count] if split == "train" else phantoms[count:]


def cmd_phantom(args, cfg):
    spec, count, test_count = config_mod.phantom_spec(cfg)
    count = args.count if args.count is not None else count
    test_count = args.test_count if args.test_count is not None else 0
    out = Path(args.out or "phantoms")
    samples = generate_phantoms(spec, count + test_count)
    splits = {}
    for i, s in enumerate(samples):
        save_sample(s, out / s.subject_id)
        splits[s.subject_id] = "train" if i < count else "test"
    write_manifest(out, splits)
    (out / "phantom_spec.json").write_text(spec.to_json() + "\n")
    return {"subjects": len(samples), "out": str(out)}


def cmd_train(args, cfg):
    samples = _restrict(_dataset(args, cfg, args.split), _modalities(args.modalities))
    tc = config_mod.train_config(cfg)
    mc = config_mod.model_config(cfg, tc.input_config, tc.task)
    out = Path(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    bundle, history = train(samples, tc, mc, checkpoint_dir=out / "checkpoints")
    weights, meta = save_bundle(bundle, out / "model")
    history.to_csv(out / "history.csv")
    history.to_json(out / "history.json")
    return {"bundle": str(weights), "final_loss": history.final_loss, "items": history.meta["item_count"]}


def _window(text):
    if not text:
        return None
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise UsageError(f"bad --window {text!r}") from exc


def cmd_predict(args, cfg):
    config = InputConfig.parse(args.input_config)
    if args.subject_dir:
        volumes = dict(load_sample(args.subject_dir).modalities)
    else:
        volumes = {}
        if args.t1:
            volumes["T1"] = load_volume(args.t1)
        if args.flair:
            volumes["FLAIR"] = load_volume(args.flair)
    bundles = [load_bundle(b) for b in args.bundle]
    window = _window(args.window) or tuple(cfg["inference"].get("window") or ()) or None
    labels, probs = ensemble_predict(config, bundles, volumes, modalities=_modalities(args.modalities),
                                     allow_missing_modality=args.allow_missing_modality, window=window,
                                     overlap=args.overlap, return_probs=True)
    out = Path(args.out or "prediction.nii.gz")
    save_labels(labels, out)
    if args.probs_out:
        write_nifti(args.probs_out, np.moveaxis(probs.probs, 0, -1), probs.affine)
    return {"labels": str(out), "classes_present": sorted(int(c) for c in np.unique(labels.labels))}


def cmd_evaluate(args, cfg):
    config = InputConfig.parse(args.input_config)
    task = TaskSpec.of(cfg["task"])
    samples = _restrict(_dataset(args, cfg, args.split), _modalities(args.modalities))
    bundles = [load_bundle(b) for b in args.bundle]
    models = {}
    for b in bundles:
        row = InputConfig.parse(b.provenance.get("input_config", config.value))
        models[row] = b
    if config not in models:
        models[config] = bundles[0]
    window = tuple(cfg["inference"].get("window") or ()) or None
    records = evaluate_cells(task, models, samples, window, cfg["inference"].get("overlap", 0.5))
    out = Path(args.out or "evaluation")
    out.mkdir(parents=True, exist_ok=True)
    (out / "per_subject.json").write_text(json.dumps(records, indent=2) + "\n")
    summary = {}
    for name, (kind, metric) in TABLES.items():
        if kind is not task.kind:
            continue
        cells = aggregate(records, metric, task)
        write_table(out / f"table_{name}.csv", cells, task)
        summary[name] = {f"{r}|{c}": v[:2] for (r, c), v in cells.items()}
    return {"subjects": len(samples), "tables": summary}


def cmd_report(args, cfg):
    vocab = load_region_vocabulary(args.vocab) if args.vocab else load_region_vocabulary()
    regions = load_labels(args.regions)
    pred = load_labels(args.pred)
    report = burden(pred, regions, regions.spacing, vocab, subject_id=Path(args.pred).name)
    out = Path(args.out or "burden")
    out.parent.mkdir(parents=True, exist_ok=True)
    report.to_json(out.with_suffix(".json"))
    report.to_csv(out.with_suffix(".csv"))
    return {"total_lesion_volume_mm3": report.total_lesion_volume_mm3,
            "dropped_volume_mm3": report.dropped_volume_mm3}


def cmd_matrix(args, cfg):
    tasks = [TaskKind(t.strip().upper()) for t in args.tasks.split(",") if t.strip()]
    train_s = _dataset(args, cfg, "train")
    test_s = _dataset(args, cfg, "test")
    if not test_s:
        raise WMHSegError("matrix needs test subjects (phantom test_count or a 'test' split)")
    inf = cfg["inference"]
    written = run_matrix(lambda row, task: config_mod.train_config(cfg, row, task),
                         lambda row, task: config_mod.model_config(cfg, row, task),
                         train_s, test_s, args.out or "matrix",
                         window=tuple(inf.get("window") or ()) or None, overlap=inf.get("overlap", 0.5),
                         tasks=tasks)
    return {name: v["path"] for name, v in written.items()}


COMMANDS = {"phantom": cmd_phantom, "train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate,
            "report": cmd_report, "matrix": cmd_matrix}


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def run(command: str, args: list[str]) -> int:
    return main([command, *args])


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        _setup_logging(args.verbose)
        cfg = config_mod.load_config(args.config, _overrides(args))
    except UsageError as exc:
        return _fail(2, "usage", str(exc))
    except config_mod.ConfigError as exc:
        return _fail(2, "config", str(exc))
    try:
        result = COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        return _fail(2, "usage", str(exc))
    except config_mod.ConfigError as exc:
        return _fail(2, "config", str(exc))
    except (WMHSegError, OSError, ValueError, KeyError) as exc:
        return _fail(1, type(exc).__name__, str(exc))
    sys.stdout.write(json.dumps(result, default=str) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
