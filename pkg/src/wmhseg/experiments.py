"""The training-config x inference-input result grid.

Rows are training input configurations, columns the inputs available at
inference (T1, FLAIR, both). Single-modality rows only have their own
modality plus the fused T1 & FLAIR column, which combines the T1-trained and
the FLAIR-trained model and is shared by both rows. CONCAT rows only have the
T1 & FLAIR column. Joint (regional-lesion) models exist for CONCAT and
INTERCHANGEABLE only.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Mapping, Sequence

from .core.types import FLAIR, T1, InputConfig, Sample, TaskKind, TaskSpec
from .evaluation import dice, evaluate_joint, mean_dice_regions, mean_sd
from .inference import ensemble_predict
from .labels import merge_to_binary
from .model import ModelBundle, save_bundle
from .training import train

log = logging.getLogger(__name__)

BOTH = "T1 & FLAIR"
COLUMNS = (T1, FLAIR, BOTH)
COLUMN_MODALITIES = {T1: (T1,), FLAIR: (FLAIR,), BOTH: (T1, FLAIR)}
ROW_NAMES = {
    InputConfig.FLAIR_ONLY: "FLAIR",
    InputConfig.T1_ONLY: "T1",
    InputConfig.CONCAT: "T1 and FLAIR",
    InputConfig.INTERCHANGEABLE: "T1 or FLAIR",
}

_SINGLE_TASK_CELLS = {
    InputConfig.FLAIR_ONLY: (FLAIR, BOTH),
    InputConfig.T1_ONLY: (T1, BOTH),
    InputConfig.CONCAT: (BOTH,),
    InputConfig.INTERCHANGEABLE: (T1, FLAIR, BOTH),
}
_JOINT_CELLS = {
    InputConfig.CONCAT: (BOTH,),
    InputConfig.INTERCHANGEABLE: (T1, FLAIR, BOTH),
}

# table name -> (task trained, metric reported)
TABLES = {
    "lesion": (TaskKind.LESION, "lesion_dice"),
    "regions": (TaskKind.REGION, "region_dice"),
    "joint_lesion": (TaskKind.JOINT, "lesion_dice"),
    "joint_regions": (TaskKind.JOINT, "region_dice"),
}


def table_cells(task) -> dict[InputConfig, tuple[str, ...]]:
    """Non-empty cells of the result table for ``task``."""
    kind = TaskSpec.of(task).kind
    return dict(_JOINT_CELLS if kind is TaskKind.JOINT else _SINGLE_TASK_CELLS)


def score(task, pred, sample: Sample) -> dict:
    kind = TaskSpec.of(task).kind
    if kind is TaskKind.LESION:
        return {"lesion_dice": dice(merge_to_binary(pred), sample.lesion)}
    if kind is TaskKind.REGION:
        return {"region_dice": mean_dice_regions(pred, sample.regions).mean}
    out = evaluate_joint(pred, sample.lesion, sample.regions)
    return {"lesion_dice": out["lesion_dice"], "region_dice": out["region_dice"]}


def _bundles_for(row: InputConfig, column: str, models: Mapping[InputConfig, ModelBundle]):
    if row in (InputConfig.FLAIR_ONLY, InputConfig.T1_ONLY) and column == BOTH:
        return [models[InputConfig.T1_ONLY], models[InputConfig.FLAIR_ONLY]]
    return models[row]


def evaluate_cells(task, models: Mapping[InputConfig, ModelBundle], samples: Sequence[Sample],
                   window=None, overlap: float = 0.5) -> list[dict]:
    """Per-subject scores for every non-empty cell whose models are available."""
    records = []
    for row, columns in table_cells(task).items():
        for column in columns:
            if row not in models or (column == BOTH and row in (InputConfig.FLAIR_ONLY, InputConfig.T1_ONLY)
                                     and not {InputConfig.FLAIR_ONLY, InputConfig.T1_ONLY} <= set(models)):
                continue
            for s in samples:
                pred = ensemble_predict(row, _bundles_for(row, column, models), s.modalities,
                                        modalities=COLUMN_MODALITIES[column], window=window, overlap=overlap)
                records.append({"subject": s.subject_id, "training": row.value, "inference": column,
                                **score(task, pred, s)})
    return records


def aggregate(records: Sequence[dict], metric: str, task) -> dict[tuple[str, str], tuple[float, float, int]]:
    """``(training, inference) -> (mean, sd, n)`` over subjects."""
    out = {}
    for row, columns in table_cells(task).items():
        for column in columns:
            vals = [r[metric] for r in records if r["training"] == row.value and r["inference"] == column]
            if vals:
                m, sd = mean_sd(vals)
                out[(row.value, column)] = (m, sd, len(vals))
    return out


def write_table(path, cells: Mapping[tuple[str, str], tuple[float, float, int]], task) -> None:
    """CSV in the published layout: one row per training config, '-' for cells left blank."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Training / Inference", *COLUMNS])
        for row in table_cells(task):
            line = [ROW_NAMES[row]]
            for column in COLUMNS:
                cell = cells.get((row.value, column))
                line.append("-" if cell is None else f"{cell[0]:.2f} ± {cell[1]:.2f}")
            w.writerow(line)


def run_matrix(cfg_train, cfg_model, train_samples: Sequence[Sample], test_samples: Sequence[Sample], out_dir,
               window=None, overlap: float = 0.5, tasks=(TaskKind.LESION, TaskKind.REGION, TaskKind.JOINT)) -> dict:
    """Train every model the tables need, score the test subjects, write CSV/JSON results.

    ``cfg_train(input_config, task)`` and ``cfg_model(input_config, task)``
    build the per-cell TrainConfig and ModelConfig.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    records_by_task = {}
    for kind in tasks:
        task = TaskSpec(kind)
        models = {}
        for row in table_cells(task):
            tc = cfg_train(row, task)
            bundle, history = train(train_samples, tc, cfg_model(row, task))
            stem = out_dir / "models" / f"{kind.value.lower()}_{row.value.lower()}"
            save_bundle(bundle, stem)
            history.to_csv(stem.with_suffix(".history.csv"))
            history.to_json(stem.with_suffix(".history.json"))
            log.info("trained", extra={"event": {"task": kind.value, "config": row.value,
                                                 "final_loss": history.final_loss}})
            models[row] = bundle
        records_by_task[kind] = evaluate_cells(task, models, test_samples, window, overlap)
    for name, (kind, metric) in TABLES.items():
        if kind not in records_by_task:
            continue
        cells = aggregate(records_by_task[kind], metric, kind)
        path = out_dir / f"table_{name}.csv"
        write_table(path, cells, kind)
        written[name] = {"path": str(path), "cells": {f"{r}|{c}": v for (r, c), v in cells.items()}}
    (out_dir / "per_subject.json").write_text(json.dumps(
        {k.value: v for k, v in records_by_task.items()}, indent=2) + "\n")
    return written
