import numpy as np
import pytest

from gliopipe import tensor as T
from gliopipe.dcn import (DcnConfig, build_dcn, classifier_width, dcn1_config,
                          dcn2_config)
from gliopipe.tensor import ShapeError, Tensor


def test_dcn1_preset_values():
    cfg = dcn1_config()
    assert cfg.block_config == [2, 2, 2, 2]
    assert cfg.growth_rate == 32
    assert cfg.init_features == 64
    assert cfg.bottleneck_factor == 4
    assert cfg.dropout == 0.0
    assert cfg.num_classes == 4


def test_dcn2_preset_values():
    cfg = dcn2_config()
    assert cfg.block_config == [6, 12, 36, 24]
    assert cfg.growth_rate == 24
    assert cfg.init_features == 48


def test_dcn1_classifier_width():
    # 64 -> 128 -> 64 -> 128 -> 64 -> 128 -> 64 -> 128 with compression 0.5
    assert classifier_width(dcn1_config()) == 128


def test_dcn2_classifier_width():
    # 48 -> 192 -> 96 -> 384 -> 192 -> 1056 -> 528 -> 1104
    assert classifier_width(dcn2_config()) == 1104


def test_channel_arithmetic_random_configs():
    rng = np.random.default_rng(42)
    for _ in range(50):
        blocks = [int(rng.integers(1, 5)) for _ in range(int(rng.integers(1, 5)))]
        cfg = DcnConfig(
            block_config=blocks,
            growth_rate=int(rng.integers(2, 17)),
            init_features=int(rng.integers(4, 33)),
            compression=float(rng.choice([0.5, 0.75, 1.0])),
            input_size=32,
            in_channels=1,
        )
        model = build_dcn(cfg, seed=0)
        # structural check: walk the blocks and verify c_out = c_in + L*k
        c = cfg.init_features
        for i, block in enumerate(model.blocks):
            for layer in block:
                assert layer.in_ch == c
                c += cfg.growth_rate
            if i != len(model.blocks) - 1:
                c = int(np.floor(c * cfg.compression))
        assert model.feature_width == c == classifier_width(cfg)


def test_same_seed_bit_identical_parameters():
    cfg = dcn1_config(input_size=32)
    a = build_dcn(cfg, seed=7).named_parameters()
    b = build_dcn(cfg, seed=7).named_parameters()
    assert a.keys() == b.keys()
    for name in a:
        np.testing.assert_array_equal(a[name].data, b[name].data)


def test_different_seeds_same_shapes():
    cfg = dcn1_config(input_size=32)
    a = build_dcn(cfg, seed=0).named_parameters()
    b = build_dcn(cfg, seed=1).named_parameters()
    assert {n: p.shape for n, p in a.items()} == {n: p.shape for n, p in b.items()}
    assert any(not np.array_equal(a[n].data, b[n].data) for n in a)


def test_zero_length_block_rejected():
    with pytest.raises(ValueError):
        build_dcn(DcnConfig(block_config=[2, 0, 2]), seed=0)


def test_dense_layer_bottleneck_channels():
    cfg = dcn1_config(input_size=32)
    model = build_dcn(cfg, seed=0)
    layer = model.blocks[0][0]
    assert layer.conv1.weight.shape == (128, 64, 1, 1)  # 4 * 32 bottleneck
    assert layer.conv2.weight.shape == (32, 128, 3, 3)  # k new channels


def test_dense_layer_preserves_spatial_dims():
    cfg = DcnConfig(block_config=[1], growth_rate=4, init_features=6,
                    input_size=16, in_channels=1)
    model = build_dcn(cfg, seed=0)
    layer = model.blocks[0][0]
    for hw in (1, 3, 5):
        x = Tensor(np.random.default_rng(0).normal(size=(2, 6, hw, hw)))
        out = layer(x, training=True)
        assert out.shape == (2, 4, hw, hw)


def test_stacked_layers_concatenate():
    cfg = dcn1_config(input_size=32)
    model = build_dcn(cfg, seed=0)
    x = Tensor(np.random.default_rng(0).normal(size=(2, 64, 4, 4)))
    for layer in model.blocks[0]:
        x = T.concat_channels([x, layer(x, training=True)])
    assert x.shape[1] == 128  # 64 + 2 * 32


class TestForward:
    @pytest.fixture(scope="class")
    @staticmethod
    def model():
        return build_dcn(dcn1_config(input_size=32), seed=0).eval()

    def test_identical_rows_give_identical_logits(self, model):
        img = np.random.default_rng(0).normal(size=(1, 3, 32, 32)).astype(np.float32)
        batch = np.concatenate([img, img])
        out = model(Tensor(batch)).data
        np.testing.assert_array_equal(out[0], out[1])

    def test_output_shape(self, model):
        for n in (1, 3, 5):
            x = Tensor(np.zeros((n, 3, 32, 32), dtype=np.float32))
            assert model(x).shape == (n, 4)

    def test_untrained_entropy_near_uniform(self):
        model = build_dcn(dcn1_config(input_size=32), seed=3).eval()
        x = Tensor(np.random.default_rng(5).normal(size=(8, 3, 32, 32)))
        logits = model(x)
        assert np.all(np.isfinite(logits.data))
        probs = np.exp(logits.data - logits.data.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        entropy = -(probs * np.log(probs)).sum(axis=1).mean()
        assert abs(entropy - np.log(4.0)) < 0.5

    def test_wrong_spatial_size(self, model):
        with pytest.raises(ShapeError):
            model(Tensor(np.zeros((1, 3, 16, 16), dtype=np.float32)))

    def test_wrong_channel_count(self, model):
        with pytest.raises(ShapeError):
            model(Tensor(np.zeros((1, 1, 32, 32), dtype=np.float32)))


def test_gradient_reaches_every_parameter():
    cfg = DcnConfig(block_config=[2, 2], growth_rate=4, init_features=8,
                    input_size=16, in_channels=1)
    model = build_dcn(cfg, seed=0).train()
    x = Tensor(np.random.default_rng(0).normal(size=(4, 1, 16, 16)))
    loss = T.cross_entropy_loss(model(x), [0, 1, 2, 3])
    loss.backward()
    for name, p in model.named_parameters().items():
        assert p.grad is not None, name
        assert np.any(p.grad != 0), name
