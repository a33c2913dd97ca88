"""Composite CE + soft-Dice loss and the Nesterov-SGD training loop."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .core.types import InputConfig, LabelMap, Sample, TaskKind, TaskSpec
from .data.augment import AugmentConfig, augment
from .data.patches import DEFAULT_PATCH_SIZE, build_training_items, prepare_sample, sample_patch, task_target
from .errors import ConfigurationError, TrainingError
from .labels import make_regional
from .model import ANY_MODALITY, ModelBundle, ModelConfig, forward, init_model, save_bundle

log = logging.getLogger(__name__)

DICE_EPS = 1e-5


def dice_loss(probs: torch.Tensor, target: torch.Tensor, eps: float = DICE_EPS) -> torch.Tensor:
    """1 - mean soft Dice over foreground classes, pooled over batch and voxels.

    ``probs`` is (N, C, ...) softmax output, ``target`` (N, ...) class ids.
    """
    num_classes = probs.shape[1]
    onehot = F.one_hot(target.long(), num_classes).movedim(-1, 1).to(probs.dtype)
    dims = (0, *range(2, probs.ndim))
    inter = (probs * onehot).sum(dims)
    denom = probs.sum(dims) + onehot.sum(dims)
    dice = (2 * inter + eps) / (denom + eps)
    return 1.0 - dice[1:].mean()


def composite_loss(logits: torch.Tensor, target: torch.Tensor, weights=(1.0, 1.0),
                   return_parts: bool = False):
    """``w_ce * CE + w_ds * dice_loss(softmax(logits))``, both terms voxel-averaged."""
    w_ce, w_ds = weights
    target = target.long()
    ce = F.cross_entropy(logits, target)
    ds = dice_loss(torch.softmax(logits, dim=1), target)
    total = w_ce * ce + w_ds * ds
    if return_parts:
        return total, ce, ds
    return total


def make_joint_targets(s: Sample) -> LabelMap:
    """Regional-lesion supervision for JOINT models."""
    if s.lesion is None or s.regions is None:
        raise ConfigurationError(f"{s.subject_id}: JOINT targets need both lesion and region labels")
    return make_regional(s.lesion, s.regions)


@dataclass
class TrainConfig:
    input_config: InputConfig = InputConfig.CONCAT
    task: TaskSpec = field(default_factory=lambda: TaskSpec(TaskKind.LESION))
    lr: float = 0.001
    momentum: float = 0.9
    nesterov: bool = True
    epochs: int = 1000
    batches_per_epoch: int = 250
    batch_size: int = 12
    patch_size: tuple[int, int, int] = DEFAULT_PATCH_SIZE
    loss_weights: tuple[float, float] = (1.0, 1.0)
    fg_bias: float = 0.5
    augment: AugmentConfig | None = field(default_factory=AugmentConfig)
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        self.input_config = InputConfig.parse(self.input_config)
        self.task = TaskSpec.of(self.task)
        self.patch_size = tuple(int(n) for n in self.patch_size)
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)
        if not self.lr >= 0:
            raise ConfigurationError("lr must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.batches_per_epoch < 1:
            raise ConfigurationError("batch_size and batches_per_epoch must be >= 1, epochs >= 0")
        if len(self.loss_weights) != 2 or min(self.loss_weights) < 0 or max(self.loss_weights) == 0:
            raise ConfigurationError("loss weights must be non-negative and not both zero")
        if len(self.patch_size) != 3:
            raise ConfigurationError("patch_size needs three dimensions")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_config"] = self.input_config.value
        d["task"] = self.task.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    ce: list[float] = field(default_factory=list)
    ds: list[float] = field(default_factory=list)
    val_dice: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def epochs_completed(self) -> int:
        return len(self.loss)

    @property
    def final_loss(self) -> float:
        return self.loss[-1] if self.loss else float("nan")

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2, default=str)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "ce", "ds", "val_dice"])
            for i in range(self.epochs_completed):
                val = self.val_dice[i] if i < len(self.val_dice) else ""
                w.writerow([i, self.loss[i], self.ce[i], self.ds[i], val])


def channel_tags_for(cfg: InputConfig) -> tuple[str, ...]:
    return (ANY_MODALITY,) if cfg is InputConfig.INTERCHANGEABLE else cfg.required_modalities


def make_optimizer(params, tc: TrainConfig) -> torch.optim.SGD:
    """SGD with (Nesterov) momentum at the configured learning rate."""
    return torch.optim.SGD(params, lr=tc.lr, momentum=tc.momentum, nesterov=tc.nesterov and tc.momentum > 0)


def _slot_seed(seed, epoch, step, slot):
    return np.random.SeedSequence([seed, epoch, step, slot])


def steps_per_epoch(n_items: int, tc: TrainConfig) -> int:
    return min(tc.batches_per_epoch, math.ceil(n_items / tc.batch_size))


def train(samples: Sequence[Sample], tc: TrainConfig, mc: ModelConfig | None = None,
          validation: Sequence[Sample] = (), lr_schedule: Callable[[int, float], float] | None = None,
          checkpoint_dir=None, bundle: ModelBundle | None = None) -> tuple[ModelBundle, TrainHistory]:
    """Train one model for ``tc.input_config`` / ``tc.task``.

    Each epoch runs ``min(batches_per_epoch, ceil(items / batch_size))``
    Nesterov-SGD steps on augmented, foreground-biased patches. Every patch
    is seeded from ``(seed, epoch, step, slot)``, so the run is reproducible.
    ``lr_schedule(epoch, lr)`` may return a per-epoch learning rate; the
    default keeps it constant. Validation Dice is logged per epoch when
    ``validation`` subjects are given.
    """
    cfg, task = tc.input_config, tc.task
    items = build_training_items(samples, cfg, task)
    if mc is None:
        mc = ModelConfig(cfg.in_channels, task.num_classes)
    if mc.in_channels != cfg.in_channels or mc.num_classes != task.num_classes:
        raise ConfigurationError(f"model config ({mc.in_channels} ch, {mc.num_classes} classes) does not fit "
                                 f"{cfg.value}/{task.kind.value}")
    mc.check_patch(tc.patch_size)
    prepared = [prepare_sample(s) for s in samples]
    targets = [task_target(s, task) for s in samples]

    if bundle is None:
        bundle = init_model(mc, tc.seed, channel_tags_for(cfg), task)
    net = bundle.network
    net.train()
    opt = make_optimizer(net.parameters(), tc)
    n_steps = steps_per_epoch(len(items), tc)
    history = TrainHistory(meta={
        "input_config": cfg.value, "task": task.kind.value, "subjects": len(samples),
        "item_count": len(items), "steps_per_epoch": n_steps, "seed": tc.seed,
    })
    order_rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 0xC0FFEE]))
    t0 = time.perf_counter()

    for epoch in range(tc.epochs):
        lr = tc.lr if lr_schedule is None else float(lr_schedule(epoch, tc.lr))
        for group in opt.param_groups:
            group["lr"] = lr
        perm = order_rng.permutation(len(items))
        sums = np.zeros(3)
        for step in range(n_steps):
            idx = [perm[(step * tc.batch_size + k) % len(items)] for k in range(tc.batch_size)]
            xs, ys = [], []
            for slot, i in enumerate(idx):
                item = items[i]
                ss = _slot_seed(tc.seed, epoch, step, slot)
                patch_seed, aug_seed = ss.spawn(2)
                p = sample_patch(prepared[item.subject_index], task, item.channels, tc.patch_size,
                                 tc.fg_bias, patch_seed, target=targets[item.subject_index])
                if tc.augment is not None:
                    p = augment(p, tc.augment, seed=aug_seed)
                xs.append(p.inputs)
                ys.append(p.target)
            x = torch.from_numpy(np.stack(xs))
            y = torch.from_numpy(np.stack(ys))
            opt.zero_grad(set_to_none=True)
            loss, ce, ds = composite_loss(forward(bundle, x), y, tc.loss_weights, return_parts=True)
            if not torch.isfinite(loss):
                raise TrainingError(f"loss became {loss.item()} at epoch {epoch}, batch {step}")
            loss.backward()
            opt.step()
            sums += (loss.item(), ce.item(), ds.item())
        means = sums / max(n_steps, 1)
        history.loss.append(float(means[0]))
        history.ce.append(float(means[1]))
        history.ds.append(float(means[2]))
        if validation:
            net.eval()
            history.val_dice.append(validation_dice(bundle, validation, tc))
            net.train()
        log.info("epoch", extra={"event": {"epoch": epoch, "loss": history.loss[-1], "lr": lr,
                                           "elapsed_s": round(time.perf_counter() - t0, 2)}})
        if checkpoint_dir is not None and tc.checkpoint_every and (epoch + 1) % tc.checkpoint_every == 0:
            _stamp(bundle, tc, epoch + 1, len(items))
            save_bundle(bundle, Path(checkpoint_dir) / f"epoch_{epoch + 1:04d}")

    net.eval()
    _stamp(bundle, tc, tc.epochs, len(items))
    history.meta["elapsed_s"] = time.perf_counter() - t0
    return bundle, history


def _stamp(bundle: ModelBundle, tc: TrainConfig, epochs: int, n_items: int) -> None:
    bundle.provenance.update({
        "input_config": tc.input_config.value, "seed": tc.seed, "epochs": epochs,
        "patch_size": list(tc.patch_size), "item_count": n_items, "normalization": "zscore_nonzero",
    })


def validation_dice(bundle: ModelBundle, samples: Sequence[Sample], tc: TrainConfig) -> float:
    """Mean held-out Dice: lesion Dice for LESION/JOINT, region mean Dice for REGION."""
    from .evaluation import dice, mean_dice_regions
    from .inference import ensemble_predict
    from .labels import merge_to_binary

    scores = []
    for s in samples:
        pred = ensemble_predict(tc.input_config, bundle, s.modalities, window=tc.patch_size)
        if tc.task.kind is TaskKind.REGION:
            mean = mean_dice_regions(pred, s.regions).mean
            if mean is not None:
                scores.append(mean)
        else:
            scores.append(dice(merge_to_binary(pred), s.lesion))
    return float(np.mean(scores)) if scores else float("nan")
