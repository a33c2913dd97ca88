"""Configurable 3D U-Net and the serializable model bundle around it."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .core.types import MODALITIES, TaskSpec
from .errors import ShapeError

NORMS = ("instance", "batch", "none")
NONLINEARITIES = {"leaky_relu": lambda: nn.LeakyReLU(0.01), "relu": nn.ReLU, "elu": nn.ELU, "gelu": nn.GELU}
UPSAMPLING = ("trilinear", "transposed")
# Channel tag of single-channel models trained on either modality.
ANY_MODALITY = "*"


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int
    num_classes: int
    depth: int = 4
    base_filters: int = 16
    norm: str = "instance"
    nonlinearity: str = "leaky_relu"
    # "replicate" keeps constant inputs constant through every conv
    padding_mode: str = "replicate"
    downsample: str = "strided_conv"
    upsample: str = "trilinear"

    def __post_init__(self):
        if self.in_channels not in (1, 2):
            raise ValueError("in_channels must be 1 or 2")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if self.base_filters < 4:
            raise ValueError("base_filters must be >= 4")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"nonlinearity must be one of {sorted(NONLINEARITIES)}")
        if self.padding_mode not in ("zeros", "replicate", "reflect"):
            raise ValueError("padding_mode must be zeros, replicate or reflect")
        if self.downsample != "strided_conv":
            raise ValueError("only strided_conv downsampling is implemented")
        if self.upsample not in UPSAMPLING:
            raise ValueError(f"upsample must be one of {UPSAMPLING}")

    @property
    def divisor(self) -> int:
        """Every spatial patch dimension must be a multiple of this."""
        return 2 ** (self.depth - 1)

    def check_patch(self, spatial) -> None:
        bad = [n for n in spatial if n % self.divisor]
        if bad:
            raise ShapeError(f"spatial dims {tuple(spatial)} must be divisible by {self.divisor} "
                             f"(depth {self.depth})")


def _norm(kind, channels):
    if kind == "instance":
        return nn.InstanceNorm3d(channels, affine=True, eps=1e-5)
    if kind == "batch":
        return nn.BatchNorm3d(channels)
    return nn.Identity()


class ConvBlock(nn.Sequential):
    def __init__(self, cfg: ModelConfig, cin, cout, stride=1):
        super().__init__(
            nn.Conv3d(cin, cout, 3, stride=stride, padding=1, padding_mode=cfg.padding_mode),
            _norm(cfg.norm, cout), NONLINEARITIES[cfg.nonlinearity](),
            nn.Conv3d(cout, cout, 3, padding=1, padding_mode=cfg.padding_mode),
            _norm(cfg.norm, cout), NONLINEARITIES[cfg.nonlinearity](),
        )


class Up(nn.Module):
    def __init__(self, cfg: ModelConfig, cin, cout):
        super().__init__()
        if cfg.upsample == "transposed":
            self.up = nn.ConvTranspose3d(cin, cout, 2, stride=2)
        else:
            self.up = nn.Sequential(nn.Upsample(scale_factor=2, mode="trilinear", align_corners=False),
                                    nn.Conv3d(cin, cout, 1))
        self.block = ConvBlock(cfg, 2 * cout, cout)

    def forward(self, x, skip):
        return self.block(torch.cat([self.up(x), skip], dim=1))


class UNet3D(nn.Module):
    """Encoder-decoder with a skip connection at every stage and channel doubling per level."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        widths = [cfg.base_filters * 2 ** i for i in range(cfg.depth)]
        self.encoders = nn.ModuleList([ConvBlock(cfg, cfg.in_channels, widths[0])])
        for i in range(1, cfg.depth):
            self.encoders.append(ConvBlock(cfg, widths[i - 1], widths[i], stride=2))
        self.decoders = nn.ModuleList([Up(cfg, widths[i], widths[i - 1]) for i in range(cfg.depth - 1, 0, -1)])
        self.head = nn.Conv3d(widths[0], cfg.num_classes, 1)

    def forward(self, x):
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
        x = skips.pop()
        for dec in self.decoders:
            x = dec(x, skips.pop())
        return self.head(x)

    @property
    def first_conv(self) -> nn.Conv3d:
        return self.encoders[0][0]


@dataclass
class ModelBundle:
    """Network plus everything needed to use it correctly at inference time."""

    network: UNet3D
    config: ModelConfig
    channel_tags: tuple[str, ...]
    task: TaskSpec
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.channel_tags = tuple(self.channel_tags)
        self.task = TaskSpec.of(self.task)
        if len(self.channel_tags) != self.config.in_channels:
            raise ShapeError(f"{len(self.channel_tags)} channel tags for a {self.config.in_channels}-channel model")
        if not set(self.channel_tags) <= set(MODALITIES) and self.channel_tags != (ANY_MODALITY,):
            raise ShapeError(f"unknown channel tags {self.channel_tags}")
        if self.config.num_classes != self.task.num_classes:
            raise ShapeError(f"{self.task.kind.value} needs {self.task.num_classes} classes, "
                             f"model has {self.config.num_classes}")

    @property
    def interchangeable(self) -> bool:
        """Single-channel model trained on either modality."""
        return self.channel_tags == (ANY_MODALITY,)

    def accepts(self, modalities) -> bool:
        modalities = tuple(modalities)
        if self.interchangeable:
            return len(modalities) == 1 and modalities[0] in MODALITIES
        return modalities == self.channel_tags

    def parameters_vector(self) -> np.ndarray:
        return torch.cat([p.detach().flatten() for p in self.network.parameters()]).cpu().numpy()

    def sidecar(self) -> dict:
        return {
            "config": asdict(self.config),
            "channel_tags": list(self.channel_tags),
            "task": self.task.kind.value,
            "provenance": self.provenance,
        }


def init_model(c: ModelConfig, seed: int = 0, channel_tags=None, task=None, provenance=None) -> ModelBundle:
    """Deterministically initialized U-Net wrapped in a bundle.

    ``channel_tags`` defaults to ``(ANY_MODALITY,)`` (either modality) for one channel
    and ``("T1", "FLAIR")`` for two; ``task`` defaults from ``num_classes``.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = UNet3D(c)
    if channel_tags is None:
        channel_tags = (ANY_MODALITY,) if c.in_channels == 1 else ("T1", "FLAIR")
    if task is None:
        task = TaskSpec.of("LESION" if c.num_classes == 2 else "REGION")
    return ModelBundle(net, c, tuple(channel_tags), task, dict(provenance or {}, init_seed=seed))


def forward(m: ModelBundle, batch) -> torch.Tensor:
    """Logits of shape (N, num_classes, D, H, W) for a (N, C, D, H, W) batch."""
    x = torch.as_tensor(batch, dtype=torch.float32) if not torch.is_tensor(batch) else batch
    if x.ndim != 5:
        raise ShapeError(f"batch must be 5D (N, C, D, H, W), got shape {tuple(x.shape)}")
    if x.shape[1] != m.config.in_channels:
        raise ShapeError(f"batch has {x.shape[1]} channels, model expects {m.config.in_channels} "
                         f"({', '.join(m.channel_tags)})")
    m.config.check_patch(x.shape[2:])
    x = x.to(next(m.network.parameters()).dtype)
    return m.network(x)


def save_bundle(m: ModelBundle, path) -> tuple[Path, Path]:
    """Write ``<path>.pt`` (state dict) and ``<path>.json`` (config, tags, task, provenance)."""
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".pt", ".json") else path
    stem.parent.mkdir(parents=True, exist_ok=True)
    weights, meta = stem.with_suffix(".pt"), stem.with_suffix(".json")
    torch.save(m.network.state_dict(), weights)
    meta.write_text(json.dumps(m.sidecar(), indent=2, default=str) + "\n")
    return weights, meta


def load_bundle(path, expected_channels=None) -> ModelBundle:
    """Load a bundle; refuse it when ``expected_channels`` disagree with its channel tags."""
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".pt", ".json") else path
    meta = json.loads(stem.with_suffix(".json").read_text())
    cfg = ModelConfig(**meta["config"])
    net = UNet3D(cfg)
    net.load_state_dict(torch.load(stem.with_suffix(".pt"), map_location="cpu", weights_only=True))
    net.eval()
    bundle = ModelBundle(net, cfg, tuple(meta["channel_tags"]), TaskSpec.of(meta["task"]), meta["provenance"])
    if expected_channels is not None and not bundle.accepts(expected_channels):
        raise ShapeError(f"bundle {stem.name} expects channels {bundle.channel_tags}, "
                         f"requested {tuple(expected_channels)}")
    return bundle
