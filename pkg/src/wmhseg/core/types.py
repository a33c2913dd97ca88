"""Domain types: volumes, label maps, subjects and task/input descriptors."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import DataError

T1 = "T1"
FLAIR = "FLAIR"
MODALITIES = (T1, FLAIR)

NUM_REGIONS = 34


class TaskKind(str, enum.Enum):
    LESION = "LESION"
    REGION = "REGION"
    JOINT = "JOINT"


_NUM_CLASSES = {TaskKind.LESION: 2, TaskKind.REGION: NUM_REGIONS + 1, TaskKind.JOINT: NUM_REGIONS + 1}


@dataclass(frozen=True)
class TaskSpec:
    """What a network predicts. ``num_classes`` follows from ``kind``."""

    kind: TaskKind

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind(self.kind))

    @property
    def num_classes(self) -> int:
        return _NUM_CLASSES[self.kind]

    @classmethod
    def of(cls, kind) -> "TaskSpec":
        if isinstance(kind, TaskSpec):
            return kind
        if isinstance(kind, TaskKind):
            return cls(kind)
        return cls(TaskKind(str(kind).upper()))


class InputConfig(str, enum.Enum):
    """Training input configurations A-D."""

    FLAIR_ONLY = "FLAIR_ONLY"
    T1_ONLY = "T1_ONLY"
    CONCAT = "CONCAT"
    INTERCHANGEABLE = "INTERCHANGEABLE"

    @classmethod
    def parse(cls, value) -> "InputConfig":
        if isinstance(value, InputConfig):
            return value
        text = str(value).upper()
        aliases = {"A": cls.FLAIR_ONLY, "B": cls.T1_ONLY, "C": cls.CONCAT, "D": cls.INTERCHANGEABLE}
        return aliases[text] if text in aliases else cls(text)

    @property
    def required_modalities(self) -> tuple[str, ...]:
        return {
            InputConfig.FLAIR_ONLY: (FLAIR,),
            InputConfig.T1_ONLY: (T1,),
            InputConfig.CONCAT: (T1, FLAIR),
            InputConfig.INTERCHANGEABLE: (T1, FLAIR),
        }[self]

    @property
    def in_channels(self) -> int:
        return 2 if self is InputConfig.CONCAT else 1


def _as_affine(affine) -> np.ndarray:
    affine = np.asarray(affine, dtype=np.float64)
    if affine.shape != (4, 4):
        raise DataError(f"affine must be 4x4, got {affine.shape}")
    if not np.all(np.isfinite(affine)) or abs(np.linalg.det(affine[:3, :3])) < 1e-12:
        raise DataError("affine is not invertible")
    return affine


def _as_spacing(spacing) -> tuple[float, float, float]:
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(s > 0 for s in spacing):
        raise DataError(f"spacing must be three positive numbers, got {spacing}")
    return spacing


def default_affine(spacing) -> np.ndarray:
    return np.diag([*_as_spacing(spacing), 1.0])


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3D intensity grid with voxel spacing (mm) and voxel-to-world affine."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise DataError(f"volume data must be 3D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("volume contains NaN or Inf voxels")
        data = data.copy() if data is self.data else data
        data.flags.writeable = False
        spacing = _as_spacing(self.spacing)
        affine = default_affine(spacing) if self.affine is None else _as_affine(self.affine)
        affine.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", affine)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    def with_data(self, data) -> "Volume":
        return Volume(data, self.spacing, self.affine)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """A 3D non-negative integer grid. ``vocabulary`` maps label id to name (0 excluded)."""

    labels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = None
    vocabulary: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise DataError(f"label map must be 3D, got shape {labels.shape}")
        if labels.dtype.kind == "f":
            if not np.all(np.isfinite(labels)) or np.any(labels != np.round(labels)):
                raise DataError("label map contains non-integer values")
        elif labels.dtype.kind not in "iub":
            raise DataError(f"unsupported label dtype {labels.dtype}")
        if labels.size and labels.min() < 0:
            raise DataError("label map contains negative ids")
        top = int(labels.max()) if labels.size else 0
        dtype = np.uint8 if top < 256 else np.uint16 if top < 65536 else np.uint32
        labels = labels.astype(dtype)  # always a fresh array
        labels.flags.writeable = False
        vocab = {int(k): str(v) for k, v in dict(self.vocabulary).items() if int(k) != 0}
        if vocab:
            unknown = set(np.unique(labels).tolist()) - set(vocab) - {0}
            if unknown:
                raise DataError(f"label ids {sorted(unknown)} are not in the vocabulary")
        spacing = _as_spacing(self.spacing)
        affine = default_affine(spacing) if self.affine is None else _as_affine(self.affine)
        affine.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", affine)
        object.__setattr__(self, "vocabulary", vocab)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape

    @property
    def voxel_volume(self) -> float:
        return float(np.prod(self.spacing))

    def with_labels(self, labels, vocabulary=None) -> "LabelMap":
        return LabelMap(labels, self.spacing, self.affine,
                        self.vocabulary if vocabulary is None else vocabulary)


LESION_VOCABULARY = {1: "lesion"}


@dataclass(frozen=True, eq=False)
class Sample:
    """One subject: 1-2 co-registered modalities plus optional lesion and region labels."""

    subject_id: str
    modalities: Mapping[str, Volume]
    lesion: LabelMap | None = None
    regions: LabelMap | None = None
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        mods = dict(self.modalities)
        if not 1 <= len(mods) <= 2 or not set(mods) <= set(MODALITIES):
            raise DataError(f"{self.subject_id}: modalities must be a non-empty subset of {MODALITIES}, "
                            f"got {sorted(mods)}")
        object.__setattr__(self, "modalities", mods)
        if self.lesion is not None:
            if not set(np.unique(self.lesion.labels).tolist()) <= {0, 1}:
                raise DataError(f"{self.subject_id}: lesion mask must be binary")
            if not self.lesion.vocabulary:
                object.__setattr__(self, "lesion", self.lesion.with_labels(self.lesion.labels, LESION_VOCABULARY))
            elif set(self.lesion.vocabulary) - {1}:
                raise DataError(f"{self.subject_id}: lesion vocabulary must be a subset of {{1}}")

    def grids(self) -> dict[str, Volume | LabelMap]:
        named: dict[str, Volume | LabelMap] = dict(self.modalities)
        if self.lesion is not None:
            named["lesion"] = self.lesion
        if self.regions is not None:
            named["regions"] = self.regions
        return named

    @property
    def reference(self) -> Volume:
        return next(iter(self.modalities.values()))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.reference.shape

    def has(self, *modalities: str) -> bool:
        return all(m in self.modalities for m in modalities)
