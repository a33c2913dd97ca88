import math

import numpy as np
import pytest
import torch

from wmhseg.core import FLAIR, T1, InputConfig, TaskKind
from wmhseg.data import AugmentConfig
from wmhseg.errors import ConfigurationError, TrainingError
from wmhseg.model import ModelConfig, init_model, load_bundle
from wmhseg.training import (TrainConfig, TrainHistory, composite_loss, dice_loss, make_optimizer,
                             steps_per_epoch, train)


def _logits(seed, shape=(2, 3, 4, 4, 4), dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(shape, generator=g, dtype=dtype)


def _target(seed, shape=(2, 4, 4, 4), classes=3):
    g = torch.Generator().manual_seed(seed)
    return torch.randint(0, classes, shape, generator=g)


def _np_cross_entropy(logits, target):
    z = logits.numpy()
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    picked = np.take_along_axis(logp, target.numpy()[:, None], axis=1)
    return -picked.mean()


class TestDiceLoss:
    def test_perfect_prediction_is_zero(self):
        t = torch.tensor([[0, 1, 1, 0]])
        probs = torch.nn.functional.one_hot(t, 2).movedim(-1, 1).double()
        assert dice_loss(probs, t).item() == pytest.approx(0.0, abs=1e-9)

    def test_two_voxel_example(self):
        # both voxels lesion, one predicted with certainty, the other missed: Dice 2/3
        t = torch.tensor([[1, 1]])
        probs = torch.tensor([[[0.0, 1.0], [1.0, 0.0]]], dtype=torch.float64)
        assert dice_loss(probs, t).item() == pytest.approx(1 / 3, abs=1e-5)

    def test_fully_wrong_is_one(self):
        t = torch.tensor([[1, 1]])
        probs = torch.tensor([[[1.0, 1.0], [0.0, 0.0]]], dtype=torch.float64)
        assert dice_loss(probs, t).item() == pytest.approx(1.0, abs=1e-5)

    def test_range(self):
        for seed in range(20):
            probs = torch.softmax(_logits(seed), dim=1)
            v = dice_loss(probs, _target(seed)).item()
            assert 0.0 <= v <= 1.0


class TestCompositeLoss:
    def test_dice_weight_zero_is_plain_cross_entropy(self):
        for seed in range(5):
            z, t = _logits(seed), _target(seed)
            got = composite_loss(z, t, (1.0, 0.0)).item()
            assert abs(got - _np_cross_entropy(z, t)) < 1e-7

    def test_weights_combine_linearly(self):
        z, t = _logits(1), _target(1)
        total, ce, ds = composite_loss(z, t, (0.3, 2.0), return_parts=True)
        assert total.item() == pytest.approx(0.3 * ce.item() + 2.0 * ds.item(), abs=1e-12)
        assert ds.item() == pytest.approx(dice_loss(torch.softmax(z, 1), t).item(), abs=1e-12)

    def test_non_negative(self):
        for seed in range(20):
            assert composite_loss(_logits(seed), _target(seed)).item() >= 0

    def test_gradient_wrt_logits_matches_finite_differences(self):
        z, t = _logits(3, (1, 3, 3, 3, 3)).requires_grad_(True), _target(3, (1, 3, 3, 3))
        composite_loss(z, t).backward()
        h = 1e-6
        flat = z.detach().clone().flatten()
        for i in np.random.default_rng(0).choice(flat.numel(), 15, replace=False):
            up, dn = flat.clone(), flat.clone()
            up[i] += h
            dn[i] -= h
            fd = (composite_loss(up.view_as(z), t) - composite_loss(dn.view_as(z), t)).item() / (2 * h)
            assert abs(fd - z.grad.flatten()[i].item()) <= 1e-6 + 1e-4 * abs(fd)


class TestOptimizer:
    def test_plain_sgd_step_is_minus_lr_times_grad(self):
        w = torch.nn.Parameter(torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64))
        opt = make_optimizer([w], TrainConfig(lr=0.1, momentum=0.0, augment=None))
        (w ** 2).sum().backward()
        grad = w.grad.clone()
        before = w.detach().clone()
        opt.step()
        torch.testing.assert_close(w.detach(), before - 0.1 * grad)

    def test_nesterov_momentum_configured(self):
        opt = make_optimizer([torch.nn.Parameter(torch.zeros(1))], TrainConfig(augment=None))
        g = opt.param_groups[0]
        assert g["nesterov"] and g["momentum"] == 0.9 and g["lr"] == 0.001

    def test_steps_per_epoch(self):
        tc = TrainConfig(batch_size=12, batches_per_epoch=250, augment=None)
        assert steps_per_epoch(20, tc) == 2 and steps_per_epoch(10_000, tc) == 250


class TestTrainConfig:
    def test_round_trip(self):
        tc = TrainConfig(input_config="D", task="JOINT", epochs=3, augment=AugmentConfig(probability=0.1))
        back = TrainConfig.from_dict(tc.to_dict())
        assert back == tc and back.input_config is InputConfig.INTERCHANGEABLE

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(lr=-1)
        with pytest.raises(ConfigurationError):
            TrainConfig(loss_weights=(0, 0))
        with pytest.raises(ConfigurationError):
            TrainConfig(momentum=1.0)


def _tc(**kw):
    base = dict(input_config=InputConfig.CONCAT, task=TaskKind.LESION, epochs=2, batches_per_epoch=2,
                batch_size=2, patch_size=(8, 16, 16), lr=0.01, augment=AugmentConfig(probability=0.3,
                                                                                       elastic=False),
                seed=11)
    base.update(kw)
    return TrainConfig(**base)


def _mc(tc):
    return ModelConfig(tc.input_config.in_channels, tc.task.num_classes, depth=2, base_filters=4)


class TestTrain:
    def test_history_and_provenance(self, small_phantoms):
        tc = _tc()
        bundle, hist = train(small_phantoms, tc, _mc(tc))
        assert hist.epochs_completed == 2 and all(math.isfinite(v) for v in hist.loss)
        assert hist.meta["item_count"] == 3 and hist.meta["steps_per_epoch"] == 2
        assert bundle.provenance["epochs"] == 2 and bundle.provenance["input_config"] == "CONCAT"
        assert bundle.channel_tags == (T1, FLAIR)

    def test_interchangeable_doubles_items(self, small_phantoms):
        tc = _tc(input_config=InputConfig.INTERCHANGEABLE, epochs=1)
        bundle, hist = train(small_phantoms, tc, _mc(tc))
        assert hist.meta["item_count"] == 2 * len(small_phantoms) and bundle.interchangeable

    def test_reproducible(self, small_phantoms):
        tc = _tc()
        (a, ha), (b, hb) = train(small_phantoms, tc, _mc(tc)), train(small_phantoms, tc, _mc(tc))
        assert ha.loss == hb.loss
        np.testing.assert_array_equal(a.parameters_vector(), b.parameters_vector())

    def test_zero_learning_rate_keeps_weights(self, small_phantoms):
        tc = _tc(lr=0.0, epochs=1)
        init = init_model(_mc(tc), tc.seed).parameters_vector()
        bundle, _ = train(small_phantoms, tc, _mc(tc))
        # instance-norm affine params and conv weights are all untouched
        np.testing.assert_array_equal(bundle.parameters_vector(), init)

    def test_non_finite_loss_aborts_naming_epoch_and_batch(self, small_phantoms):
        tc = _tc(augment=None)
        bundle = init_model(_mc(tc), tc.seed, (T1, FLAIR), tc.task)
        with torch.no_grad():
            bundle.network.head.bias[0] = float("nan")
        with pytest.raises(TrainingError, match=r"epoch 0, batch 0"):
            train(small_phantoms, tc, _mc(tc), bundle=bundle)

    def test_model_config_must_fit(self, small_phantoms):
        tc = _tc()
        with pytest.raises(ConfigurationError):
            train(small_phantoms, tc, ModelConfig(1, 2, depth=2, base_filters=4))

    def test_checkpoints_and_schedule(self, small_phantoms, tmp_path):
        tc = _tc(epochs=4, checkpoint_every=2)
        seen = []

        def schedule(epoch, lr):
            seen.append(epoch)
            return lr * 0.5 ** epoch

        _, hist = train(small_phantoms, tc, _mc(tc), lr_schedule=schedule, checkpoint_dir=tmp_path)
        assert seen == [0, 1, 2, 3]
        assert sorted(p.name for p in tmp_path.glob("*.pt")) == ["epoch_0002.pt", "epoch_0004.pt"]
        assert load_bundle(tmp_path / "epoch_0002").provenance["epochs"] == 2

    def test_validation_dice_logged(self, small_phantoms):
        tc = _tc(epochs=1)
        _, hist = train(small_phantoms[:2], tc, _mc(tc), validation=small_phantoms[2:])
        assert len(hist.val_dice) == 1 and 0.0 <= hist.val_dice[0] <= 1.0

    def test_joint_task_trains(self, small_phantoms):
        tc = _tc(task=TaskKind.JOINT, epochs=1)
        bundle, hist = train(small_phantoms, tc, _mc(tc))
        assert bundle.config.num_classes == 35 and math.isfinite(hist.final_loss)

    def test_history_files(self, tmp_path):
        h = TrainHistory([1.0, 0.5], [0.6, 0.3], [0.4, 0.2], [0.1, 0.2], {"seed": 0})
        h.to_csv(tmp_path / "h.csv")
        assert (tmp_path / "h.csv").read_text().splitlines()[0] == "epoch,loss,ce,ds,val_dice"
        assert '"seed": 0' in h.to_json(tmp_path / "h.json")


@pytest.mark.slow
def test_desk_flair_lesion_loss_drops():
    from wmhseg import config as config_mod
    from wmhseg.data import generate_phantoms

    cfg = config_mod.load_config(overrides={"scale": "desk"})
    spec, _, _ = config_mod.phantom_spec(cfg)
    tc = config_mod.train_config(cfg, "FLAIR_ONLY", "LESION")
    tc.epochs = 50
    _, hist = train(generate_phantoms(spec, 4), tc, config_mod.model_config(cfg, "FLAIR_ONLY", "LESION"))
    assert hist.final_loss < 0.3 and hist.final_loss < hist.loss[0]
