"""Regional-lesion label algebra.

A regional lesion map assigns every lesion voxel the id of the white-matter
region that contains it; lesion voxels outside all regions are dropped (0).
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .core.ops import check_same_grid
from .core.types import NUM_REGIONS, LabelMap
from .errors import DataError


def load_region_vocabulary(path=None) -> dict[int, str]:
    """Read a ``[{"id": .., "name": ..}, ...]`` JSON file; the packaged default when ``path`` is None."""
    if path is None:
        text = resources.files("wmhseg").joinpath("resources/regions.json").read_text()
    else:
        text = Path(path).read_text()
    vocab = {}
    for entry in json.loads(text):
        rid = int(entry["id"])
        if not 1 <= rid <= NUM_REGIONS:
            raise DataError(f"region id {rid} outside 1..{NUM_REGIONS}")
        if rid in vocab:
            raise DataError(f"duplicate region id {rid}")
        vocab[rid] = str(entry["name"])
    return vocab


def _labels(x) -> np.ndarray:
    return x.labels if isinstance(x, LabelMap) else np.asarray(x)


def make_regional(lesion: LabelMap, regions: LabelMap) -> LabelMap:
    """Region id where the lesion mask is 1 and a region exists, 0 elsewhere."""
    check_same_grid("lesion", lesion, "regions", regions)
    les = lesion.labels
    if les.size and les.max() > 1:
        raise DataError("lesion mask must be binary")
    reg = regions.labels
    if reg.size and reg.max() > NUM_REGIONS:
        raise DataError(f"region ids must lie in 1..{NUM_REGIONS}")
    return regions.with_labels(reg * (les > 0))


def merge_to_binary(regional: LabelMap) -> LabelMap:
    """Collapse all regional-lesion classes into one binary lesion mask."""
    return LabelMap((regional.labels > 0).astype(np.uint8), regional.spacing, regional.affine, {1: "lesion"})


def regions_present(regions) -> set[int]:
    ids = np.unique(_labels(regions))
    return {int(i) for i in ids if i != 0}
