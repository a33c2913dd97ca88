"""MRI-specific patch augmentation.

Spatial transforms (rotation, elastic) build one sampling grid that is applied
to every channel with linear interpolation and to the target with
nearest-neighbour lookup. Intensity transforms (bias field, motion ghosting,
multiplicative and additive noise) touch the image channels only.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import ndimage

from .patches import Patch


def _pair(v) -> tuple[float, float]:
    lo, hi = (float(x) for x in v)
    if lo > hi:
        raise ValueError(f"range ({lo}, {hi}) has min > max")
    return lo, hi


@dataclass
class AugmentConfig:
    # Chance that each enabled transform fires on a given patch.
    probability: float = 0.5
    additive_noise: bool = True
    additive_noise_sigma: tuple[float, float] = (0.0, 0.1)  # fraction of channel SD
    multiplicative_noise: bool = True
    multiplicative_noise_sigma: tuple[float, float] = (0.0, 0.05)
    bias_field: bool = True
    bias_field_order: int = 3
    bias_field_amplitude: float = 0.3
    elastic: bool = True
    elastic_control_spacing_mm: float = 16.0
    elastic_max_displacement_mm: float = 4.0
    rotation: bool = True
    rotation_degrees: tuple = ((-15.0, 15.0), (-15.0, 15.0), (-15.0, 15.0))
    motion: bool = True
    motion_ghosts: tuple[int, int] = (1, 2)
    motion_intensity: tuple[float, float] = (0.1, 0.5)
    seed: int = 0

    def __post_init__(self):
        self.additive_noise_sigma = _pair(self.additive_noise_sigma)
        self.multiplicative_noise_sigma = _pair(self.multiplicative_noise_sigma)
        self.rotation_degrees = tuple(_pair(r) for r in self.rotation_degrees)
        self.motion_intensity = _pair(self.motion_intensity)
        lo, hi = _pair(self.motion_ghosts)
        self.motion_ghosts = (int(lo), int(hi))
        if len(self.rotation_degrees) != 3:
            raise ValueError("rotation_degrees needs one range per axis")
        if any(abs(a) > 180 for r in self.rotation_degrees for a in r):
            raise ValueError("rotation angles must lie in [-180, 180]")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        if min(self.additive_noise_sigma[0], self.multiplicative_noise_sigma[0], self.motion_intensity[0]) < 0:
            raise ValueError("noise and ghost magnitudes must be non-negative")
        if self.elastic_max_displacement_mm < 0 or self.bias_field_amplitude < 0 or self.bias_field_order < 0:
            raise ValueError("displacement, bias amplitude and order must be non-negative")
        if self.elastic_control_spacing_mm <= 0 or self.motion_ghosts[0] < 1:
            raise ValueError("control-point spacing must be positive and ghost count >= 1")

    @classmethod
    def disabled(cls, **kw) -> "AugmentConfig":
        off = dict(additive_noise=False, multiplicative_noise=False, bias_field=False,
                   elastic=False, rotation=False, motion=False)
        return cls(**{**off, **kw})

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AugmentConfig":
        return cls(**json.loads(text))


def rotation_matrix(angles_deg) -> np.ndarray:
    """Rotation about voxel axes 0, 1, 2 (applied in that order)."""
    a, b, c = np.deg2rad(angles_deg)
    r0 = np.array([[1, 0, 0], [0, np.cos(a), -np.sin(a)], [0, np.sin(a), np.cos(a)]])
    r1 = np.array([[np.cos(b), 0, np.sin(b)], [0, 1, 0], [-np.sin(b), 0, np.cos(b)]])
    r2 = np.array([[np.cos(c), -np.sin(c), 0], [np.sin(c), np.cos(c), 0], [0, 0, 1]])
    return r2 @ r1 @ r0


def _elastic_field(rng, shape, spacing, cp_spacing_mm, max_mm):
    """Displacement in voxels, shape (3, *shape), cubic-interpolated from a coarse grid."""
    extent = np.asarray(shape) * spacing
    n_cp = np.maximum(2, np.ceil(extent / cp_spacing_mm).astype(int) + 1)
    coords = np.meshgrid(*[np.linspace(0, m - 1, n) for m, n in zip(n_cp, shape)], indexing="ij")
    field = np.empty((3, *shape))
    for axis in range(3):
        coarse = rng.uniform(-max_mm, max_mm, size=tuple(n_cp))
        disp = ndimage.map_coordinates(coarse, coords, order=3, mode="nearest")
        field[axis] = np.clip(disp, -max_mm, max_mm) / spacing[axis]
    return field


def _bias_field(rng, shape, order, amplitude):
    axes = np.meshgrid(*[np.linspace(-1, 1, n) for n in shape], indexing="ij")
    log_field = np.zeros(shape)
    for i in range(order + 1):
        for j in range(order + 1 - i):
            for k in range(order + 1 - i - j):
                log_field += rng.uniform(-amplitude, amplitude) * axes[0] ** i * axes[1] ** j * axes[2] ** k
    return np.exp(log_field)


def _ghosting(img, axis, ghosts, intensity):
    k = np.fft.fftshift(np.fft.fftn(img))
    n = img.shape[axis]
    planes = np.arange(n)
    scale = np.where((planes % ghosts == 0) & (planes != n // 2), 1.0 - intensity, 1.0)
    shape = [1, 1, 1]
    shape[axis] = n
    k = k * scale.reshape(shape)
    return np.real(np.fft.ifftn(np.fft.ifftshift(k)))


def augment(p: Patch, a: AugmentConfig, seed=None) -> Patch:
    """Randomly transformed copy of ``p``; ``seed`` overrides ``a.seed``.

    Output shape equals input shape, and a fixed seed reproduces the output
    bit for bit. The target is only moved by the spatial transforms, never
    re-valued.
    """
    rng = np.random.default_rng(a.seed if seed is None else seed)
    inputs = p.inputs.astype(np.float64)
    target = p.target
    shape = target.shape
    spacing = np.asarray(p.spacing, dtype=np.float64)

    def fires(enabled):
        return enabled and rng.random() < a.probability

    do_rot = fires(a.rotation)
    do_elastic = fires(a.elastic)
    if do_rot or do_elastic:
        grid = np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij"))
        center = (np.asarray(shape) - 1) / 2.0
        coords = grid
        if do_rot:
            angles = [rng.uniform(lo, hi) for lo, hi in a.rotation_degrees]
            # output voxel x samples input at S^-1 R S (x - c) + c, S = spacing
            m = np.diag(1 / spacing) @ rotation_matrix(angles) @ np.diag(spacing)
            rel = (grid - center[:, None, None, None]).reshape(3, -1)
            coords = (m @ rel).reshape(grid.shape) + center[:, None, None, None]
        if do_elastic:
            coords = coords + _elastic_field(rng, shape, spacing, a.elastic_control_spacing_mm,
                                             a.elastic_max_displacement_mm)
        inputs = np.stack([ndimage.map_coordinates(ch, coords, order=1, mode="constant", cval=0.0)
                           for ch in inputs])
        target = ndimage.map_coordinates(target, np.rint(coords), order=0, mode="constant", cval=0)

    for c in range(inputs.shape[0]):
        ch = inputs[c]
        if fires(a.bias_field):
            ch = ch * _bias_field(rng, shape, a.bias_field_order, a.bias_field_amplitude)
        if fires(a.motion):
            axis = int(rng.integers(3))
            ghosts = int(rng.integers(a.motion_ghosts[0], a.motion_ghosts[1] + 1))
            ch = _ghosting(ch, axis, ghosts, rng.uniform(*a.motion_intensity))
        if fires(a.multiplicative_noise):
            ch = ch * (1.0 + rng.normal(0.0, rng.uniform(*a.multiplicative_noise_sigma), shape))
        if fires(a.additive_noise):
            ch = ch + rng.normal(0.0, rng.uniform(*a.additive_noise_sigma) * ch.std(), shape)
        inputs[c] = ch

    return replace(p, inputs=inputs.astype(np.float32), target=np.asarray(target, dtype=np.int64))
