"""Volume / label-map file I/O and the on-disk dataset layout.

Dataset layout: one directory per subject holding ``t1.nii.gz``,
``flair.nii.gz`` and optionally ``lesion.nii.gz`` and ``regions.nii.gz``,
plus a ``manifest.json`` at the root listing subjects and their split.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from ..errors import DataError
from .nifti import read_nifti, write_nifti
from .types import FLAIR, T1, LabelMap, Sample, Volume

MODALITY_FILES = {T1: "t1.nii.gz", FLAIR: "flair.nii.gz"}
LESION_FILE = "lesion.nii.gz"
REGIONS_FILE = "regions.nii.gz"
MANIFEST = "manifest.json"


def canonical_transform(affine: np.ndarray, shape) -> tuple[tuple[int, ...], tuple[bool, ...], np.ndarray]:
    """Axis permutation and flips that bring a grid closest to RAS voxel order.

    Returns ``(perm, flips, new_affine)`` such that
    ``np.transpose(data, perm)`` followed by flipping the axes marked in
    ``flips`` yields an array whose affine is ``new_affine`` (positive
    near-diagonal). Oblique grids whose axes are ambiguous are left as is.
    """
    rzs = affine[:3, :3]
    world = np.argmax(np.abs(rzs), axis=0)  # world axis of each voxel axis
    if len(set(world.tolist())) != 3:
        return (0, 1, 2), (False, False, False), affine.copy()
    perm = tuple(int(np.where(world == j)[0][0]) for j in range(3))
    flips = tuple(bool(rzs[j, perm[j]] < 0) for j in range(3))
    # new index -> old index
    index_map = np.zeros((4, 4))
    index_map[3, 3] = 1.0
    for new_axis, old_axis in enumerate(perm):
        if flips[new_axis]:
            index_map[old_axis, new_axis] = -1.0
            index_map[old_axis, 3] = shape[old_axis] - 1
        else:
            index_map[old_axis, new_axis] = 1.0
    return perm, flips, affine @ index_map


def _to_canonical(data: np.ndarray, affine: np.ndarray):
    perm, flips, new_affine = canonical_transform(affine, data.shape)
    out = np.transpose(data, perm)
    for axis, flip in enumerate(flips):
        if flip:
            out = np.flip(out, axis)
    return np.ascontiguousarray(out), new_affine


def _read3d(path):
    path = Path(path)
    try:
        data, affine, _ = read_nifti(path)
    except FileNotFoundError:
        raise
    except (OSError, ValueError, EOFError) as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    if data.ndim == 4 and data.shape[3] == 1:
        data = data[..., 0]
    if data.ndim != 3:
        raise DataError(f"{path}: expected a 3D image, got shape {data.shape}")
    return _to_canonical(data, affine)


def _spacing(affine) -> tuple[float, float, float]:
    return tuple(float(s) for s in np.linalg.norm(affine[:3, :3], axis=0))


def load_volume(path) -> Volume:
    """Read a NIfTI-1 intensity image as a float32 :class:`Volume` in canonical orientation."""
    data, affine = _read3d(path)
    data = data.astype(np.float32, copy=False)
    if not np.all(np.isfinite(data)):
        bad = int(np.count_nonzero(~np.isfinite(data)))
        raise DataError(f"{path}: {bad} NaN/Inf voxel(s)")
    return Volume(data, _spacing(affine), affine)


def load_labels(path, vocabulary=None) -> LabelMap:
    data, affine = _read3d(path)
    if data.dtype.kind == "f":
        if not np.all(np.isfinite(data)):
            raise DataError(f"{path}: NaN/Inf in label map")
        rounded = np.rint(data)
        if np.any(np.abs(data - rounded) > 1e-3):
            raise DataError(f"{path}: label map holds non-integer values")
        data = rounded.astype(np.int64)
    try:
        return LabelMap(data, _spacing(affine), affine, vocabulary or {})
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


def save_volume(volume: Volume, path) -> None:
    write_nifti(path, volume.data.astype(np.float32), volume.affine)


def save_labels(labels: LabelMap, path) -> None:
    write_nifti(path, labels.labels, labels.affine)


def save_sample(sample: Sample, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for modality, volume in sample.modalities.items():
        save_volume(volume, directory / MODALITY_FILES[modality])
    if sample.lesion is not None:
        save_labels(sample.lesion, directory / LESION_FILE)
    if sample.regions is not None:
        save_labels(sample.regions, directory / REGIONS_FILE)
    return directory


def load_sample(directory, subject_id: str | None = None, region_vocabulary=None) -> Sample:
    """Load whatever modalities and labels exist in one subject directory."""
    directory = Path(directory)
    modalities = {m: load_volume(directory / f) for m, f in MODALITY_FILES.items() if (directory / f).exists()}
    if not modalities:
        raise FileNotFoundError(f"{directory}: neither {MODALITY_FILES[T1]} nor {MODALITY_FILES[FLAIR]} present")
    lesion = load_labels(directory / LESION_FILE) if (directory / LESION_FILE).exists() else None
    regions = (load_labels(directory / REGIONS_FILE, region_vocabulary)
               if (directory / REGIONS_FILE).exists() else None)
    return Sample(subject_id or directory.name, modalities, lesion, regions)


def write_manifest(root, subjects: dict[str, str] | list[str], default_split: str = "train") -> Path:
    """Write ``manifest.json``; ``subjects`` maps subject id to split (or is a plain list)."""
    if not isinstance(subjects, dict):
        subjects = {s: default_split for s in subjects}
    entries = [{"id": sid, "split": split} for sid, split in subjects.items()]
    path = Path(root) / MANIFEST
    path.write_text(json.dumps({"subjects": entries}, indent=2) + "\n")
    return path


def read_manifest(root) -> list[dict]:
    root = Path(root)
    path = root / MANIFEST
    if path.exists():
        entries = json.loads(path.read_text())["subjects"]
        return [{"id": str(e["id"]), "split": str(e.get("split", "train"))} for e in entries]
    # No manifest: every subdirectory with images is a training subject.
    return [{"id": p.name, "split": "train"} for p in sorted(root.iterdir())
            if p.is_dir() and any((p / f).exists() for f in MODALITY_FILES.values())]


def load_dataset(root=None, split: str | None = None, region_vocabulary=None) -> list[Sample]:
    """Load every subject listed in the manifest (optionally only one split).

    ``root`` falls back to the ``WMH_DATA_DIR`` environment variable.
    """
    root = root if root is not None else os.environ.get("WMH_DATA_DIR")
    if root is None:
        raise FileNotFoundError("no dataset root given and WMH_DATA_DIR is unset")
    root = Path(root)
    return [load_sample(root / e["id"], e["id"], region_vocabulary)
            for e in read_manifest(root) if split is None or e["split"] == split]
