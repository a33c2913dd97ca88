import json

import numpy as np
import pytest
import torch

from wmhseg.core import FLAIR, T1, TaskKind, TaskSpec
from wmhseg.errors import ShapeError
from wmhseg.model import ANY_MODALITY, ModelBundle, ModelConfig, forward, init_model, load_bundle, save_bundle

SMALL = dict(depth=2, base_filters=4)


def _batch(n, c, shape, seed=0):
    return torch.from_numpy(np.random.default_rng(seed).normal(size=(n, c, *shape)).astype(np.float32))


class TestShapes:
    @pytest.mark.parametrize("cin, classes", [(1, 2), (2, 2), (2, 35), (1, 35)])
    def test_output_shape(self, cin, classes):
        m = init_model(ModelConfig(cin, classes, **SMALL))
        with torch.no_grad():
            out = forward(m, _batch(2, cin, (8, 16, 16)))
        assert out.shape == (2, classes, 8, 16, 16) and torch.isfinite(out).all()

    def test_batch_of_twelve_at_depth_four(self):
        m = init_model(ModelConfig(2, 2, depth=4, base_filters=4))
        with torch.no_grad():
            out = forward(m, _batch(12, 2, (8, 16, 16)))
        assert out.shape == (12, 2, 8, 16, 16)

    def test_divisibility_enforced(self):
        m = init_model(ModelConfig(1, 2, depth=3, base_filters=4))
        assert m.config.divisor == 4
        with pytest.raises(ShapeError, match="divisible"):
            forward(m, _batch(1, 1, (8, 10, 16)))

    def test_channel_mismatch(self):
        m = init_model(ModelConfig(2, 2, **SMALL))
        with pytest.raises(ShapeError):
            forward(m, _batch(1, 1, (8, 8, 8)))
        with pytest.raises(ShapeError):
            forward(m, torch.zeros(2, 8, 8, 8))

    def test_first_layer_sees_both_channels(self):
        m = init_model(ModelConfig(2, 2, **SMALL))
        assert m.network.first_conv.in_channels == 2
        assert m.network.first_conv.weight.shape[1] == 2

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ModelConfig(3, 2)
        with pytest.raises(ValueError):
            ModelConfig(1, 2, upsample="nearest")
        with pytest.raises(ValueError):
            ModelConfig(1, 2, depth=1)


class TestDeterminism:
    def test_same_seed_same_weights(self):
        a = init_model(ModelConfig(1, 2, **SMALL), seed=3)
        b = init_model(ModelConfig(1, 2, **SMALL), seed=3)
        np.testing.assert_array_equal(a.parameters_vector(), b.parameters_vector())
        c = init_model(ModelConfig(1, 2, **SMALL), seed=4)
        assert not np.array_equal(a.parameters_vector(), c.parameters_vector())

    def test_init_does_not_touch_global_rng(self):
        torch.manual_seed(0)
        expected = torch.rand(3)
        torch.manual_seed(0)
        init_model(ModelConfig(1, 2, **SMALL), seed=9)
        assert torch.equal(torch.rand(3), expected)


class TestEquivariance:
    def test_constant_input_gives_constant_output(self):
        m = init_model(ModelConfig(1, 2, depth=3, base_filters=4))
        with torch.no_grad():
            out = forward(m, torch.full((1, 1, 8, 16, 16), 0.7))
        spread = (out - out.mean(dim=(2, 3, 4), keepdim=True)).abs().max()
        assert spread < 1e-4

    def test_translation_by_divisor_multiple(self):
        # content surrounded by a zero margin wider than the receptive field shift
        m = init_model(ModelConfig(1, 2, depth=2, base_filters=4, norm="none"))
        m.network.double()
        x = torch.zeros(1, 1, 16, 48, 48, dtype=torch.float64)
        x[..., 4:8, 18:26, 18:26] = _batch(1, 1, (4, 8, 8), seed=2).double()
        shifted = torch.roll(x, shifts=(4, -6), dims=(3, 4))
        with torch.no_grad():
            a, b = forward(m, x), forward(m, shifted)
        np.testing.assert_allclose(torch.roll(a, shifts=(4, -6), dims=(3, 4)).numpy(), b.numpy(), atol=1e-10)


class TestBundle:
    def test_round_trip(self, tmp_path):
        m = init_model(ModelConfig(2, 35, **SMALL), seed=1, task=TaskKind.JOINT, provenance={"note": "x"})
        save_bundle(m, tmp_path / "net")
        back = load_bundle(tmp_path / "net.pt", expected_channels=(T1, FLAIR))
        np.testing.assert_array_equal(back.parameters_vector(), m.parameters_vector())
        assert back.task == TaskSpec(TaskKind.JOINT) and back.channel_tags == (T1, FLAIR)
        meta = json.loads((tmp_path / "net.json").read_text())
        assert meta["provenance"]["note"] == "x" and meta["config"]["in_channels"] == 2
        x = _batch(1, 2, (8, 8, 8))
        m.network.eval()
        with torch.no_grad():
            assert torch.equal(forward(m, x), forward(back, x))

    def test_refuses_channel_mismatch(self, tmp_path):
        save_bundle(init_model(ModelConfig(2, 2, **SMALL)), tmp_path / "concat")
        with pytest.raises(ShapeError):
            load_bundle(tmp_path / "concat", expected_channels=(FLAIR,))

    def test_interchangeable_accepts_either_modality(self):
        m = init_model(ModelConfig(1, 2, **SMALL))
        assert m.interchangeable and m.accepts((T1,)) and m.accepts((FLAIR,))
        assert not m.accepts((T1, FLAIR))
        fixed = init_model(ModelConfig(1, 2, **SMALL), channel_tags=(FLAIR,))
        assert fixed.accepts((FLAIR,)) and not fixed.accepts((T1,))

    def test_bundle_validation(self):
        net = init_model(ModelConfig(1, 2, **SMALL)).network
        with pytest.raises(ShapeError):
            ModelBundle(net, net.cfg, (T1, FLAIR), TaskKind.LESION)
        with pytest.raises(ShapeError):
            ModelBundle(net, net.cfg, (ANY_MODALITY,), TaskKind.REGION)
