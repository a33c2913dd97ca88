"""Intensity normalization and grid alignment checks."""

from __future__ import annotations

import itertools

import numpy as np

from ..errors import AlignmentError
from .types import LabelMap, Sample, Volume

SPACING_TOL = 1e-4
AFFINE_TOL = 1e-4


def normalize(v: Volume, mask: LabelMap | np.ndarray | None = None) -> Volume:
    """Z-score ``v`` using statistics over ``mask`` (all voxels when omitted).

    Voxels outside the mask are set to 0. A volume with zero variance over the
    mask maps to all zeros.
    """
    data = v.data.astype(np.float64)
    if mask is None:
        region = np.ones(data.shape, dtype=bool)
    else:
        region = np.asarray(mask.labels if isinstance(mask, LabelMap) else mask) > 0
        if region.shape != data.shape:
            raise AlignmentError(f"mask shape {region.shape} differs from volume shape {data.shape}")
    values = data[region]
    if values.size == 0:
        return v.with_data(np.zeros_like(v.data))
    mean = values.mean()
    std = values.std()
    if std <= 1e-8 * max(1.0, abs(mean)):
        return v.with_data(np.zeros_like(v.data))
    out = np.where(region, (data - mean) / std, 0.0)
    return v.with_data(out.astype(np.float32))


def foreground_mask(v: Volume) -> np.ndarray:
    return v.data != 0


def prepare_input(v: Volume) -> Volume:
    """Normalization applied to every network input: z-score over nonzero voxels."""
    mask = foreground_mask(v)
    if not mask.any():
        return normalize(v)
    return normalize(v, mask)


def check_same_grid(name_a: str, a, name_b: str, b) -> None:
    if a.shape != b.shape:
        raise AlignmentError(f"{name_a} and {name_b} differ in shape: {a.shape} vs {b.shape}")
    if not np.allclose(a.spacing, b.spacing, rtol=0, atol=SPACING_TOL):
        raise AlignmentError(f"{name_a} and {name_b} differ in spacing: {a.spacing} vs {b.spacing}")
    if not np.allclose(a.affine, b.affine, rtol=0, atol=AFFINE_TOL):
        raise AlignmentError(f"{name_a} and {name_b} differ in affine")


def assert_aligned(s: Sample) -> None:
    """Raise :class:`AlignmentError` unless every grid of ``s`` coincides."""
    grids = s.grids()
    for (na, a), (nb, b) in itertools.combinations(grids.items(), 2):
        check_same_grid(f"{s.subject_id}/{na}", a, f"{s.subject_id}/{nb}", b)
