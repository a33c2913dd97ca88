"""Sliding-window prediction, softmax fusion and the per-configuration inference paths.

A and B (single-modality models) and D (modality-interchangeable model)
predict each available modality separately; with two modalities the softmax
outputs are averaged before the voxel-wise argmax. C (concatenated channels)
runs one forward pass on the two-channel input.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch

from .core.ops import AFFINE_TOL, SPACING_TOL, check_same_grid, prepare_input
from .core.types import FLAIR, LESION_VOCABULARY, MODALITIES, T1, InputConfig, LabelMap, TaskKind, Volume
from .errors import ConfigurationError, FusionError, InputError, ShapeError
from .labels import load_region_vocabulary
from .model import ModelBundle, forward

PROB_TOL = 1e-4


@dataclass(frozen=True, eq=False)
class ProbVolume:
    """Per-voxel class probabilities, shape (classes, D, H, W)."""

    probs: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = None
    vocabulary: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float32)
        if probs.ndim != 4 or probs.shape[0] < 2:
            raise ShapeError(f"probabilities must be (classes>=2, D, H, W), got {probs.shape}")
        if not np.all(np.isfinite(probs)) or probs.min() < -PROB_TOL or probs.max() > 1 + PROB_TOL:
            raise ValueError("probabilities must be finite and lie in [0, 1]")
        if np.abs(probs.sum(0) - 1.0).max() > PROB_TOL:
            raise ValueError("class probabilities do not sum to 1 per voxel")
        affine = np.diag([*self.spacing, 1.0]) if self.affine is None else np.asarray(self.affine, float)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "affine", affine)
        object.__setattr__(self, "vocabulary", {int(k): str(v) for k, v in dict(self.vocabulary).items()})

    @property
    def num_classes(self) -> int:
        return self.probs.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.probs.shape[1:]


def class_vocabulary(bundle: ModelBundle) -> dict[int, str]:
    if bundle.task.kind is TaskKind.LESION:
        return dict(LESION_VOCABULARY)
    return load_region_vocabulary()


def window_starts(length: int, window: int, overlap: float) -> list[int]:
    """Evenly spaced window origins covering ``[0, length)`` with at least ``overlap`` overlap."""
    if length <= window:
        return [0]
    step = max(1.0, window * (1.0 - overlap))
    n = math.ceil((length - window) / step) + 1
    return sorted({int(round(s)) for s in np.linspace(0, length - window, n)})


def gaussian_weights(window, sigma_scale: float = 1 / 8) -> np.ndarray:
    """Separable centre-weighted blending map with sigma = window * sigma_scale per axis."""
    out = np.ones((), dtype=np.float64)
    for w in window:
        x = np.arange(w) - (w - 1) / 2.0
        out = np.multiply.outer(out, np.exp(-0.5 * (x / (w * sigma_scale)) ** 2))
    return out / out.max()


def _ordered_inputs(m: ModelBundle, inputs, modalities):
    if isinstance(inputs, Mapping):
        keys = tuple(inputs)
        if m.interchangeable or len(keys) == 1:
            ordered = keys
        else:
            ordered = tuple(t for t in m.channel_tags if t in inputs) + tuple(k for k in keys if k not in m.channel_tags)
        modalities = ordered if modalities is None else tuple(modalities)
        volumes = [inputs[k] for k in modalities]
    else:
        volumes = list(inputs)
    if len(volumes) != m.config.in_channels:
        raise ShapeError(f"model expects {m.config.in_channels} input channel(s) {m.channel_tags}, "
                         f"got {len(volumes)}")
    if modalities is not None and not m.accepts(modalities):
        raise ShapeError(f"model expects channels {m.channel_tags}, got {tuple(modalities)}")
    for a, b in zip(volumes, volumes[1:]):
        check_same_grid("input", a, "input", b)
    return volumes


def predict_volume(m: ModelBundle, inputs, window=None, overlap: float = 0.5, modalities=None,
                   batch_size: int = 4, normalize: bool = True, shuffle_seed=None) -> ProbVolume:
    """Full-volume class probabilities by Gaussian-blended sliding windows.

    ``inputs`` is a sequence of volumes in the model's channel order, or a
    mapping from modality to volume. Volumes smaller than the window are
    zero-padded, predicted and cropped back. ``shuffle_seed`` visits the
    windows in a random order (the blend does not depend on it).
    """
    volumes = _ordered_inputs(m, inputs, modalities)
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    if window is None:
        window = m.provenance.get("patch_size", (32, 128, 128))
    window = tuple(int(w) for w in window)
    m.config.check_patch(window)
    shape = volumes[0].shape
    pads = [(max(0, w - n) // 2, max(0, w - n) - max(0, w - n) // 2) for n, w in zip(shape, window)]
    chans = []
    for v in volumes:
        padded = np.pad(v.data, pads) if any(sum(p) for p in pads) else v.data
        vol = Volume(padded, v.spacing)
        chans.append((prepare_input(vol) if normalize else vol).data)
    x = np.stack(chans).astype(np.float32)
    padded_shape = x.shape[1:]

    starts = list(itertools.product(*[window_starts(n, w, overlap) for n, w in zip(padded_shape, window)]))
    if shuffle_seed is not None:
        starts = [starts[i] for i in np.random.default_rng(shuffle_seed).permutation(len(starts))]
    weights = gaussian_weights(window)
    acc = np.zeros((m.config.num_classes, *padded_shape), dtype=np.float64)
    wsum = np.zeros(padded_shape, dtype=np.float64)
    net = m.network
    was_training = net.training
    net.eval()
    try:
        with torch.no_grad():
            for i in range(0, len(starts), batch_size):
                chunk = starts[i:i + batch_size]
                slices = [tuple(slice(s, s + w) for s, w in zip(st, window)) for st in chunk]
                batch = torch.from_numpy(np.stack([x[(slice(None), *sl)] for sl in slices]))
                probs = torch.softmax(forward(m, batch), dim=1).double().numpy()
                for sl, p in zip(slices, probs):
                    acc[(slice(None), *sl)] += p * weights
                    wsum[sl] += weights
    finally:
        net.train(was_training)
    probs = acc / wsum
    probs /= probs.sum(0, keepdims=True)
    crop = tuple(slice(lo, lo + n) for (lo, _), n in zip(pads, shape))
    ref = volumes[0]
    return ProbVolume(probs[(slice(None), *crop)].astype(np.float32), ref.spacing, ref.affine, class_vocabulary(m))


def fuse_softmax(a: ProbVolume, b: ProbVolume) -> ProbVolume:
    """Voxel-wise mean of two probability volumes on the same grid and class set."""
    if a.probs.shape != b.probs.shape:
        raise FusionError(f"cannot fuse probability volumes of shape {a.probs.shape} and {b.probs.shape}")
    if a.vocabulary != b.vocabulary:
        raise FusionError("probability volumes have different class vocabularies")
    if (not np.allclose(a.spacing, b.spacing, rtol=0, atol=SPACING_TOL)
            or not np.allclose(a.affine, b.affine, rtol=0, atol=AFFINE_TOL)):
        raise FusionError("probability volumes lie on different grids")
    return ProbVolume((a.probs + b.probs) * np.float32(0.5), a.spacing, a.affine, a.vocabulary)


def argmax_labels(p: ProbVolume) -> LabelMap:
    """Most probable class per voxel; ties go to the lowest class index."""
    return LabelMap(np.argmax(p.probs, axis=0), p.spacing, p.affine, p.vocabulary)


def _bundle_map(bundles) -> list[ModelBundle]:
    if isinstance(bundles, ModelBundle):
        return [bundles]
    if isinstance(bundles, Mapping):
        return [b for b in bundles.values() if b is not None]
    return [b for b in bundles if b is not None]


def ensemble_predict(config, bundles, volumes: Mapping[str, Volume], modalities: Sequence[str] | None = None,
                     allow_missing_modality: bool = False, window=None, overlap: float = 0.5,
                     return_probs: bool = False):
    """Label map for one subject following the inference path of ``config``.

    ``modalities`` selects which inputs to use; by default every modality in
    ``volumes`` (C, D) or every modality a supplied bundle was trained on
    (A/B). Requested modalities absent from ``volumes`` are an error unless
    ``allow_missing_modality`` is set, in which case the remaining ones are
    used.
    """
    config = InputConfig.parse(config)
    models = _bundle_map(bundles)
    if not models:
        raise ConfigurationError("no model bundle supplied")
    unimodal = config in (InputConfig.FLAIR_ONLY, InputConfig.T1_ONLY)
    if modalities is None:
        if unimodal:
            modalities = [m for m in MODALITIES if any(b.channel_tags == (m,) for b in models)]
        elif config is InputConfig.CONCAT:
            modalities = [T1, FLAIR]
        else:
            modalities = [m for m in MODALITIES if m in volumes]
    modalities = list(dict.fromkeys(modalities))
    missing = [m for m in modalities if m not in volumes]
    if missing:
        if not allow_missing_modality or config is InputConfig.CONCAT:
            if config is InputConfig.CONCAT:
                raise ConfigurationError(f"CONCAT inference needs {', '.join(missing)}, which is not available; "
                                         "CONCAT models refuse single-channel input")
            raise InputError(f"{config.value} inference needs {', '.join(missing)}, which is not available")
        modalities = [m for m in modalities if m in volumes]
    if not modalities:
        raise InputError(f"{config.value} inference needs at least one modality")

    kw = dict(window=window, overlap=overlap)
    if config is InputConfig.CONCAT:
        if set(modalities) != {T1, FLAIR}:
            raise ConfigurationError("CONCAT models need both T1 and FLAIR; single-channel inference is refused")
        model = _single(models, config)
        if not model.accepts((T1, FLAIR)):
            raise ShapeError(f"bundle channels {model.channel_tags} do not fit CONCAT inputs (T1, FLAIR)")
        probs = predict_volume(model, [volumes[T1], volumes[FLAIR]], modalities=(T1, FLAIR), **kw)
    else:
        preds = []
        for mod in modalities:
            if unimodal:
                match = [b for b in models if b.channel_tags == (mod,)]
                if not match:
                    raise ConfigurationError(f"single-modality fusion needs a {mod}-trained bundle; "
                                             f"got bundles for {[b.channel_tags for b in models]}")
                model = match[0]
            else:
                model = _single(models, config)
                if not model.interchangeable:
                    raise ShapeError(f"INTERCHANGEABLE inference needs a modality-agnostic bundle, "
                                     f"got channels {model.channel_tags}")
            preds.append(predict_volume(model, [volumes[mod]], modalities=(mod,), **kw))
        probs = preds[0]
        for other in preds[1:]:
            probs = fuse_softmax(probs, other)
    labels = argmax_labels(probs)
    return (labels, probs) if return_probs else labels


def _single(models, config) -> ModelBundle:
    if len(models) != 1:
        raise ConfigurationError(f"{config.value} inference uses exactly one bundle, got {len(models)}")
    return models[0]
