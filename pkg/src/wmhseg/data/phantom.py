"""Synthetic brain-like phantoms with known lesion and region ground truth.

Anatomy is a set of nested ellipsoids (background, grey matter shell, white
matter core, two ventricles). White matter is split into Voronoi parcels that
play the role of atlas regions, and lesions are ellipsoidal blobs clipped to
the parcelled white matter. Parcel ids, their seed positions relative to the
white-matter ellipsoid and their intensity offsets come from ``atlas_seed``,
which is shared by a cohort, so a region id means the same place in every
subject; each subject only jitters the seeds. Pseudo-FLAIR renders lesions bright, pseudo-T1
renders them dark.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from ..core.types import FLAIR, LESION_VOCABULARY, NUM_REGIONS, T1, LabelMap, Sample, Volume, default_affine
from ..errors import GenerationError

TISSUES = ("csf", "gm", "wm", "lesion")


def _default_contrast():
    return {
        T1: {"csf": 0.25, "gm": 0.6, "wm": 0.85, "lesion": 0.45},
        FLAIR: {"csf": 0.1, "gm": 0.55, "wm": 0.45, "lesion": 1.0},
    }


@dataclass
class PhantomSpec:
    shape: tuple[int, int, int] = (48, 48, 48)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    region_count: int = 8
    lesion_count: tuple[int, int] = (3, 8)
    lesion_radius_mm: tuple[float, float] = (1.5, 4.0)
    contrast: dict = field(default_factory=_default_contrast)
    # Per-region white-matter intensity offset amplitude for pseudo-T1; FLAIR gets half.
    region_contrast: float = 0.06
    # Shared parcellation layout; per-subject seed jitter as a fraction of the WM radii.
    atlas_seed: int = 0
    region_jitter: float = 0.04
    noise_sd: float = 0.02
    bias_amplitude: float = 0.05
    seed: int = 0

    def __post_init__(self):
        self.shape = tuple(int(n) for n in self.shape)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.lesion_count = tuple(int(n) for n in self.lesion_count)
        self.lesion_radius_mm = tuple(float(r) for r in self.lesion_radius_mm)
        self.validate()

    def validate(self) -> None:
        if len(self.shape) != 3 or min(self.shape) < 8:
            raise GenerationError(f"phantom shape must be 3D with every side >= 8, got {self.shape}")
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise GenerationError(f"invalid spacing {self.spacing}")
        if self.region_jitter < 0:
            raise GenerationError("region_jitter must be non-negative")
        if not 0 <= self.region_count <= NUM_REGIONS:
            raise GenerationError(f"region_count must lie in 0..{NUM_REGIONS}")
        lo, hi = self.lesion_count
        if not 0 <= lo <= hi:
            raise GenerationError(f"invalid lesion count range {self.lesion_count}")
        rlo, rhi = self.lesion_radius_mm
        if not 0 < rlo <= rhi:
            raise GenerationError(f"invalid lesion radius range {self.lesion_radius_mm}")
        for modality in (T1, FLAIR):
            table = self.contrast.get(modality, {})
            missing = set(TISSUES) - set(table)
            if missing:
                raise GenerationError(f"{modality} contrast table lacks {sorted(missing)}")
        # Polarity must survive the worst-case region offset.
        if not self.contrast[FLAIR]["lesion"] > self.contrast[FLAIR]["wm"] + self.region_contrast / 2:
            raise GenerationError("pseudo-FLAIR lesions must be brighter than white matter")
        if not self.contrast[T1]["lesion"] < self.contrast[T1]["wm"] - self.region_contrast:
            raise GenerationError("pseudo-T1 lesions must be darker than white matter")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PhantomSpec":
        return cls(**json.loads(text))


def _ellipsoid(grid_mm, center_mm, radii_mm):
    acc = 0.0
    for axis in range(3):
        acc = acc + ((grid_mm[axis] - center_mm[axis]) / radii_mm[axis]) ** 2
    return acc <= 1.0


def _smooth_field(rng, shape, amplitude):
    coarse = rng.uniform(-1.0, 1.0, size=(3, 3, 3))
    coords = np.meshgrid(*[np.linspace(0, 2, n) for n in shape], indexing="ij")
    return 1.0 + amplitude * ndimage.map_coordinates(coarse, coords, order=1)


def _atlas(spec: PhantomSpec):
    """Region ids, seed points in unit-ellipsoid coordinates and intensity offsets."""
    rng = np.random.default_rng([spec.atlas_seed, spec.region_count])
    k = spec.region_count
    ids = np.sort(rng.choice(np.arange(1, NUM_REGIONS + 1), size=k, replace=False))
    # Seeds sit in a shell that avoids the ventricles at the centre.
    seeds = []
    while len(seeds) < k:
        p = rng.uniform(-1.0, 1.0, 3)
        if 0.45 <= np.linalg.norm(p) <= 0.9:
            seeds.append(p)
    return ids, np.array(seeds).reshape(k, 3), rng.uniform(-1.0, 1.0, k)


def generate_phantom(spec: PhantomSpec, subject_id: str | None = None) -> Sample:
    """Render one phantom subject; identical specs give identical samples.

    ``sample.meta`` records the generator's own bookkeeping: the region ids
    used, the number of lesions placed and the lesion voxel count per region.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    shape = spec.shape
    spacing = np.asarray(spec.spacing)
    extent = np.asarray(shape) * spacing
    grid_mm = np.meshgrid(*[(np.arange(n) + 0.5) * s for n, s in zip(shape, spacing)], indexing="ij")
    center = extent / 2 + rng.uniform(-0.02, 0.02, 3) * extent

    brain_r = extent * rng.uniform(0.40, 0.44, 3)
    wm_r = brain_r * rng.uniform(0.72, 0.78, 3)
    brain = _ellipsoid(grid_mm, center, brain_r)
    wm = _ellipsoid(grid_mm, center, wm_r)
    vent_r = wm_r * np.array([0.35, 0.12, 0.2])
    offset = np.array([0.0, 0.18, 0.0]) * wm_r
    ventricles = _ellipsoid(grid_mm, center + offset, vent_r) | _ellipsoid(grid_mm, center - offset, vent_r)
    wm &= ~ventricles
    gm = brain & ~wm & ~ventricles

    wm_idx = np.argwhere(wm)
    k = spec.region_count
    if k > len(wm_idx):
        raise GenerationError(f"cannot carve {k} regions from {len(wm_idx)} white-matter voxels")
    regions = np.zeros(shape, dtype=np.uint8)
    region_ids, unit_seeds, atlas_offsets = _atlas(spec)
    if k:
        unit = unit_seeds + rng.normal(0.0, spec.region_jitter, unit_seeds.shape)
        seeds_mm = center + unit * wm_r
        pts_mm = (wm_idx + 0.5) * spacing
        d2 = ((pts_mm[:, None, :] - seeds_mm[None, :, :]) ** 2).sum(-1)
        regions[tuple(wm_idx.T)] = region_ids[np.argmin(d2, axis=1)]
    region_support = regions > 0

    n_lesions = int(rng.integers(spec.lesion_count[0], spec.lesion_count[1] + 1))
    if n_lesions and not region_support.any():
        raise GenerationError("lesions requested but the phantom has no region-labelled white matter")
    lesion = np.zeros(shape, dtype=bool)
    per_region = {int(r): 0 for r in region_ids}
    support_idx = np.argwhere(region_support)
    placed = attempts = 0
    while placed < n_lesions:
        attempts += 1
        if attempts > 50 * n_lesions + 100:
            raise GenerationError(f"placed only {placed} of {n_lesions} lesions inside the regions")
        c_mm = (support_idx[rng.integers(len(support_idx))] + 0.5) * spacing
        radii = rng.uniform(*spec.lesion_radius_mm) * rng.uniform(0.7, 1.3, 3)
        blob = _ellipsoid(grid_mm, c_mm, radii) & region_support
        if not blob.any():
            continue
        ids, counts = np.unique(regions[blob & ~lesion], return_counts=True)
        for rid, cnt in zip(ids.tolist(), counts.tolist()):
            per_region[rid] += cnt
        lesion |= blob
        placed += 1

    volumes = {}
    region_offsets = dict(zip(region_ids.tolist(), atlas_offsets.tolist()))
    for modality, scale in ((T1, 1.0), (FLAIR, 0.5)):
        table = spec.contrast[modality]
        img = np.zeros(shape, dtype=np.float64)
        img[gm] = table["gm"]
        img[ventricles & brain] = table["csf"]
        img[wm] = table["wm"]
        for rid, off in region_offsets.items():
            img[regions == rid] += scale * spec.region_contrast * off
        img[lesion] = table["lesion"]
        img *= _smooth_field(rng, shape, spec.bias_amplitude)
        img += rng.normal(0.0, spec.noise_sd, shape)
        img[~brain] = 0.0
        volumes[modality] = img.astype(np.float32)

    affine = default_affine(spec.spacing)
    vocab = {int(r): f"wm_region_{int(r):02d}" for r in region_ids}
    return Sample(
        subject_id or f"phantom_{spec.seed}",
        {m: Volume(v, spec.spacing, affine) for m, v in volumes.items()},
        LabelMap(lesion.astype(np.uint8), spec.spacing, affine, LESION_VOCABULARY),
        LabelMap(regions, spec.spacing, affine, vocab),
        meta={"region_ids": [int(r) for r in region_ids], "lesion_count": placed,
              "lesion_voxels_per_region": per_region, "seed": spec.seed},
    )


def generate_phantoms(spec: PhantomSpec, count: int, prefix: str = "phantom") -> list[Sample]:
    """``count`` phantoms whose seeds derive from ``spec.seed``."""
    seeds = np.random.SeedSequence(spec.seed).generate_state(count)
    return [generate_phantom(PhantomSpec(**{**asdict(spec), "seed": int(seed)}), f"{prefix}_{i:03d}")
            for i, seed in enumerate(seeds)]
