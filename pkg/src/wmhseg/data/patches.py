"""Training items per input configuration and foreground-biased patch sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core.ops import prepare_input
from ..core.types import FLAIR, MODALITIES, T1, InputConfig, Sample, TaskKind, TaskSpec
from ..errors import ConfigurationError, ShapeError
from ..labels import make_regional

DEFAULT_PATCH_SIZE = (32, 128, 128)


@dataclass(frozen=True)
class Patch:
    inputs: np.ndarray  # (C, D, H, W) float32
    target: np.ndarray  # (D, H, W) int64
    channel_tags: tuple[str, ...]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    center: tuple[int, int, int] | None = None
    foreground_centered: bool = False

    def __post_init__(self):
        if self.inputs.ndim != 4 or self.inputs.shape[1:] != self.target.shape:
            raise ShapeError(f"patch inputs {self.inputs.shape} do not match target {self.target.shape}")
        if len(self.channel_tags) != self.inputs.shape[0] or self.inputs.shape[0] not in (1, 2):
            raise ShapeError(f"patch has {self.inputs.shape[0]} channels but tags {self.channel_tags}")
        if len(set(self.channel_tags)) != len(self.channel_tags) or not set(self.channel_tags) <= set(MODALITIES):
            raise ShapeError(f"invalid channel tags {self.channel_tags}")


@dataclass(frozen=True)
class TrainingItem:
    """One network input: which subject, which modalities as channels, which target."""

    subject_index: int
    subject_id: str
    channels: tuple[str, ...]
    task: TaskSpec


def resolve_channels(cfg, sample: Sample | None = None) -> tuple[str, ...]:
    """Channel tags for an input config or an explicit modality sequence.

    INTERCHANGEABLE has no fixed channel; it resolves only when ``sample``
    carries exactly one modality.
    """
    if isinstance(cfg, (InputConfig, str)) and str(cfg).upper() not in MODALITIES:
        cfg = InputConfig.parse(cfg)
        if cfg is InputConfig.INTERCHANGEABLE:
            if sample is not None and len(sample.modalities) == 1:
                return tuple(sample.modalities)
            raise ConfigurationError("INTERCHANGEABLE needs an explicit modality per item")
        return cfg.required_modalities
    channels = (cfg,) if isinstance(cfg, str) else tuple(cfg)
    if not 1 <= len(channels) <= 2 or len(set(channels)) != len(channels) or not set(channels) <= set(MODALITIES):
        raise ConfigurationError(f"invalid channel selection {channels}")
    return channels


def _check_targets(sample: Sample, task: TaskSpec) -> None:
    need = {TaskKind.LESION: ("lesion",), TaskKind.REGION: ("regions",), TaskKind.JOINT: ("lesion", "regions")}
    missing = [n for n in need[task.kind] if getattr(sample, n) is None]
    if missing:
        raise ConfigurationError(f"{sample.subject_id}: {task.kind.value} task needs {', '.join(missing)} labels")


def task_target(sample: Sample, task: TaskSpec) -> np.ndarray:
    """Class-id grid the network is supervised with for ``task``."""
    task = TaskSpec.of(task)
    _check_targets(sample, task)
    if task.kind is TaskKind.LESION:
        return sample.lesion.labels.astype(np.int64)
    if task.kind is TaskKind.REGION:
        return sample.regions.labels.astype(np.int64)
    return make_regional(sample.lesion, sample.regions).labels.astype(np.int64)


def build_training_items(samples: Sequence[Sample], cfg, task) -> list[TrainingItem]:
    """Expand subjects into training items for one input configuration.

    Unimodal configs give one single-channel item per subject, CONCAT one
    (T1, FLAIR) item, INTERCHANGEABLE one single-channel item per modality.
    """
    cfg = InputConfig.parse(cfg)
    task = TaskSpec.of(task)
    required = cfg.required_modalities
    missing = [s.subject_id for s in samples if not s.has(*required)]
    if missing:
        raise ConfigurationError(f"{cfg.value} requires {'+'.join(required)}; missing in subjects: "
                                 f"{', '.join(missing)}")
    for s in samples:
        _check_targets(s, task)
    items = []
    for i, s in enumerate(samples):
        if cfg is InputConfig.INTERCHANGEABLE:
            items.extend(TrainingItem(i, s.subject_id, (m,), task) for m in (T1, FLAIR))
        else:
            items.append(TrainingItem(i, s.subject_id, required, task))
    return items


def prepare_sample(sample: Sample) -> Sample:
    """Normalize every modality the way network inputs are normalized."""
    return Sample(sample.subject_id, {m: prepare_input(v) for m, v in sample.modalities.items()},
                  sample.lesion, sample.regions, sample.meta)


def crop(array: np.ndarray, center, size) -> np.ndarray:
    """Window of ``size`` centred at ``center`` over the last three axes, zero-padded outside."""
    spatial = array.shape[-3:]
    out = np.zeros(array.shape[:-3] + tuple(size), dtype=array.dtype)
    src, dst = [], []
    for c, n, s in zip(center, spatial, size):
        start = int(c) - s // 2
        lo, hi = max(start, 0), min(start + s, n)
        if hi <= lo:
            return out
        src.append(slice(lo, hi))
        dst.append(slice(lo - start, hi - start))
    out[(..., *dst)] = array[(..., *src)]
    return out


def sample_patch(s: Sample, task, cfg, size=DEFAULT_PATCH_SIZE, fg_bias: float = 0.5, seed=None,
                 target: np.ndarray | None = None) -> Patch:
    """Crop one patch; with probability ``fg_bias`` the centre is a foreground voxel.

    ``cfg`` is an :class:`InputConfig` or an explicit modality sequence.
    Inputs are cropped from ``s`` as given (pass a :func:`prepare_sample`
    result to get normalized intensities). ``target`` may be supplied to skip
    recomputing :func:`task_target`.
    """
    channels = resolve_channels(cfg, s)
    missing = [m for m in channels if m not in s.modalities]
    if missing:
        raise ConfigurationError(f"{s.subject_id}: required modality {', '.join(missing)} missing")
    if not 0.0 <= fg_bias <= 1.0:
        raise ConfigurationError(f"fg_bias must lie in [0, 1], got {fg_bias}")
    task = TaskSpec.of(task)
    if target is None:
        target = task_target(s, task)
    rng = np.random.default_rng(seed)
    size = tuple(int(n) for n in size)
    shape = target.shape
    want_fg = rng.random() < fg_bias
    fg_centered = False
    if want_fg:
        fg = np.flatnonzero(target)
        if fg.size:
            center = np.unravel_index(fg[rng.integers(fg.size)], shape)
            fg_centered = True
    if not fg_centered:
        center = tuple(int(rng.integers(n)) for n in shape)
    center = tuple(int(c) for c in center)
    inputs = np.stack([crop(s.modalities[m].data, center, size) for m in channels]).astype(np.float32)
    return Patch(inputs, crop(target, center, size).astype(np.int64), channels,
                 s.reference.spacing, center, fg_centered)
