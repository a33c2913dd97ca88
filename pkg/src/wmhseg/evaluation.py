"""Dice scoring, presence-filtered region scoring and region-wise lesion burden."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core.ops import check_same_grid
from .core.types import LabelMap
from .errors import AlignmentError
from .labels import make_regional, merge_to_binary, regions_present


def _pair(pred, gt):
    if isinstance(pred, LabelMap) and isinstance(gt, LabelMap):
        check_same_grid("prediction", pred, "ground truth", gt)
        return pred.labels, gt.labels
    p = pred.labels if isinstance(pred, LabelMap) else np.asarray(pred)
    g = gt.labels if isinstance(gt, LabelMap) else np.asarray(gt)
    if p.shape != g.shape:
        raise AlignmentError(f"prediction shape {p.shape} differs from ground truth {g.shape}")
    return p, g


def dice(pred, gt) -> float:
    """2|P & G| / (|P| + |G|) for binary masks (nonzero = foreground); 1.0 when both are empty."""
    p, g = _pair(pred, gt)
    p, g = p > 0, g > 0
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / denom


def both_empty(pred, gt) -> bool:
    p, g = _pair(pred, gt)
    return not p.any() and not g.any()


@dataclass
class RegionScores:
    per_class: dict[int, float]
    # None when the ground truth holds no region at all
    mean: float | None

    @property
    def defined(self) -> bool:
        return self.mean is not None


def mean_dice_regions(pred, gt) -> RegionScores:
    """Per-class Dice for the classes present in ``gt`` and their mean."""
    p, g = _pair(pred, gt)
    per_class = {}
    for rid in sorted(regions_present(g)):
        p_k, g_k = p == rid, g == rid
        per_class[rid] = 2.0 * int(np.logical_and(p_k, g_k).sum()) / (int(p_k.sum()) + int(g_k.sum()))
    mean = float(np.mean(list(per_class.values()))) if per_class else None
    return RegionScores(per_class, mean)


def evaluate_joint(pred_regional: LabelMap, gt_lesion: LabelMap, gt_regions: LabelMap) -> dict:
    """Score a regional-lesion prediction separately for lesions and for regions.

    Lesion Dice compares the binary union of all predicted classes with the
    lesion mask; region Dice compares predicted classes with the regional
    ground truth over the regions present in it.
    """
    check_same_grid("prediction", pred_regional, "lesion", gt_lesion)
    check_same_grid("prediction", pred_regional, "regions", gt_regions)
    lesion_pred = merge_to_binary(pred_regional)
    gt_regional = make_regional(gt_lesion, gt_regions)
    regions = mean_dice_regions(pred_regional, gt_regional)
    return {
        "lesion_dice": dice(lesion_pred, gt_lesion),
        "lesion_both_empty": both_empty(lesion_pred, gt_lesion),
        "region_dice": regions.mean,
        "region_defined": regions.defined,
        "region_per_class": regions.per_class,
    }


@dataclass
class RegionBurden:
    region_id: int
    name: str
    lesion_voxels: int
    lesion_volume_mm3: float
    region_volume_mm3: float
    fraction: float


@dataclass
class BurdenReport:
    regions: list[RegionBurden]
    voxel_volume_mm3: float
    total_lesion_voxels: int
    total_lesion_volume_mm3: float
    regional_lesion_volume_mm3: float
    dropped_voxels: int
    dropped_volume_mm3: float
    subject_id: str | None = None
    meta: dict = field(default_factory=dict)

    def by_id(self) -> dict[int, RegionBurden]:
        return {r.region_id: r for r in self.regions}

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["region_id", "name", "lesion_voxels", "lesion_volume_mm3", "region_volume_mm3", "fraction"])
            for r in self.regions:
                w.writerow([r.region_id, r.name, r.lesion_voxels, r.lesion_volume_mm3, r.region_volume_mm3,
                            r.fraction])
            w.writerow(["dropped", "", self.dropped_voxels, self.dropped_volume_mm3, "", ""])
            w.writerow(["total", "", self.total_lesion_voxels, self.total_lesion_volume_mm3, "", ""])


def burden(pred_regional, regions: LabelMap, spacing=None, vocabulary: Mapping[int, str] | None = None,
           subject_id: str | None = None) -> BurdenReport:
    """Lesion volume per white-matter region.

    Lesion voxels are the nonzero voxels of ``pred_regional`` (a regional or
    binary lesion map); each is attributed to its ``regions`` id. Lesion
    voxels outside every region are reported as dropped.
    """
    lesion, reg = _pair(pred_regional, regions)
    if spacing is None:
        spacing = regions.spacing if isinstance(regions, LabelMap) else (1.0, 1.0, 1.0)
    voxel = float(np.prod(spacing))
    names = dict(vocabulary or (regions.vocabulary if isinstance(regions, LabelMap) else {}))
    lesion = lesion > 0
    reg = reg.astype(np.int64)
    top = int(reg.max()) + 1 if reg.size else 1
    region_counts = np.bincount(reg.ravel(), minlength=top)
    lesion_counts = np.bincount(reg[lesion], minlength=top)
    rows = []
    for rid in sorted(regions_present(reg)):
        n = int(lesion_counts[rid])
        rows.append(RegionBurden(rid, names.get(rid, f"region_{rid}"), n, n * voxel,
                                 int(region_counts[rid]) * voxel, n / int(region_counts[rid])))
    total = int(lesion.sum())
    dropped = int(lesion_counts[0])
    return BurdenReport(rows, voxel, total, total * voxel, (total - dropped) * voxel, dropped, dropped * voxel,
                        subject_id)


def mean_sd(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population SD, ignoring None/NaN entries."""
    vals = np.array([v for v in values if v is not None and np.isfinite(v)], dtype=np.float64)
    if vals.size == 0:
        return float("nan"), float("nan")
    return float(vals.mean()), float(vals.std())
