"""Densely connected classifier networks (DCN1 for histology, DCN2 for MRI).

Layout: 7x7/2 stem conv -> BN -> ReLU -> 3x3/2 max pool, then alternating
dense blocks and transitions (1x1 conv with channel compression + 2x2 average
pool), finishing with BN -> ReLU -> global average pool -> linear classifier.
Each dense layer is pre-activation: BN -> ReLU -> 1x1 bottleneck conv ->
BN -> ReLU -> 3x3 conv, and its k output channels are concatenated onto its
input.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .tensor import DTYPE, ShapeError, Tensor

CLASS_ORDER = ("A", "O", "G", "N")
TUMOR_CLASSES = ("A", "O", "G")


@dataclass
class DcnConfig:
    block_config: list[int] = field(default_factory=lambda: [2, 2, 2, 2])
    growth_rate: int = 32
    init_features: int = 64
    bottleneck_factor: int = 4
    dropout: float = 0.0
    compression: float = 0.5
    num_classes: int = 4
    input_size: int = 224
    in_channels: int = 3

    def validate(self):
        if any(l < 1 for l in self.block_config) or not self.block_config:
            raise ValueError(f"every dense block needs >= 1 layer, got {self.block_config}")
        if not (0.0 < self.compression <= 1.0):
            raise ValueError(f"compression must be in (0, 1], got {self.compression}")
        if self.growth_rate < 1 or self.init_features < 1:
            raise ValueError("growth_rate and init_features must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DcnConfig":
        return cls(**d)


def dcn1_config(**overrides) -> DcnConfig:
    """Histology preset: blocks [2,2,2,2], growth 32, 64 stem filters."""
    cfg = DcnConfig(block_config=[2, 2, 2, 2], growth_rate=32, init_features=64,
                    in_channels=3)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def dcn2_config(**overrides) -> DcnConfig:
    """Radiology preset: blocks [6,12,36,24], growth 24, 48 stem filters."""
    cfg = DcnConfig(block_config=[6, 12, 36, 24], growth_rate=24, init_features=48,
                    in_channels=1)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


PRESETS = {"DCN1": dcn1_config, "DCN2": dcn2_config}


# ---- layers ------------------------------------------------------------------


def _he_weight(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=shape).astype(DTYPE), requires_grad=True)


class Conv2d:
    def __init__(self, rng, in_ch, out_ch, kernel, stride=1, padding=0):
        self.stride = stride
        self.padding = padding
        self.weight = _he_weight(rng, (out_ch, in_ch, kernel, kernel),
                                 fan_in=in_ch * kernel * kernel)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, stride=self.stride, padding=self.padding)

    def params(self):
        return {"weight": self.weight}

    def buffers(self):
        return {}


class BatchNorm2d:
    def __init__(self, channels):
        self.gamma = Tensor(np.ones(channels, dtype=DTYPE), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=DTYPE), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=DTYPE)
        self.running_var = np.ones(channels, dtype=DTYPE)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return T.batch_norm2d(x, self.gamma, self.beta,
                              self.running_mean, self.running_var, training)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class Linear:
    def __init__(self, rng, in_features, out_features):
        self.weight = _he_weight(rng, (in_features, out_features), fan_in=in_features)
        self.bias = Tensor(np.zeros(out_features, dtype=DTYPE), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def buffers(self):
        return {}


class DenseLayer:
    """BN-ReLU-1x1 conv (factor*k filters) -> BN-ReLU-3x3 conv (k filters)."""

    def __init__(self, rng, in_ch, growth_rate, bottleneck_factor):
        mid = bottleneck_factor * growth_rate
        self.in_ch = in_ch
        self.bn1 = BatchNorm2d(in_ch)
        self.conv1 = Conv2d(rng, in_ch, mid, kernel=1)
        self.bn2 = BatchNorm2d(mid)
        self.conv2 = Conv2d(rng, mid, growth_rate, kernel=3, padding=1)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.shape[1] != self.in_ch:
            raise ShapeError(f"dense layer expects {self.in_ch} channels, got {x.shape[1]}")
        h = self.conv1(T.relu(self.bn1(x, training)))
        h = self.conv2(T.relu(self.bn2(h, training)))
        return h

    def submodules(self):
        return {"bn1": self.bn1, "conv1": self.conv1, "bn2": self.bn2, "conv2": self.conv2}


class Transition:
    """BN-ReLU-1x1 compressing conv followed by 2x2 average pooling."""

    def __init__(self, rng, in_ch, out_ch):
        self.bn = BatchNorm2d(in_ch)
        self.conv = Conv2d(rng, in_ch, out_ch, kernel=1)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = self.conv(T.relu(self.bn(x, training)))
        return T.avg_pool2d(h, 2, 2)

    def submodules(self):
        return {"bn": self.bn, "conv": self.conv}


class DcnModel:
    def __init__(self, config: DcnConfig, seed: int):
        config.validate()
        self.config = config
        self.seed = seed
        self.mode = "train"
        rng = np.random.default_rng(seed)

        c = config.init_features
        self.stem_conv = Conv2d(rng, config.in_channels, c, kernel=7, stride=2, padding=3)
        self.stem_bn = BatchNorm2d(c)

        self.blocks: list[list[DenseLayer]] = []
        self.transitions: list[Transition] = []
        for i, n_layers in enumerate(config.block_config):
            block = []
            for _ in range(n_layers):
                block.append(DenseLayer(rng, c, config.growth_rate, config.bottleneck_factor))
                c += config.growth_rate
            self.blocks.append(block)
            if i != len(config.block_config) - 1:
                out_c = int(np.floor(c * config.compression))
                self.transitions.append(Transition(rng, c, out_c))
                c = out_c

        self.final_bn = BatchNorm2d(c)
        self.classifier = Linear(rng, c, config.num_classes)
        self.feature_width = c

    # ---- parameter / buffer traversal ---------------------------------------

    def _modules(self):
        yield "stem.conv", self.stem_conv
        yield "stem.bn", self.stem_bn
        for i, block in enumerate(self.blocks):
            for j, layer in enumerate(block):
                for name, sub in layer.submodules().items():
                    yield f"block{i}.layer{j}.{name}", sub
        for i, t in enumerate(self.transitions):
            for name, sub in t.submodules().items():
                yield f"transition{i}.{name}", sub
        yield "final.bn", self.final_bn
        yield "classifier", self.classifier

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for path, mod in self._modules():
            for name, p in mod.params().items():
                out[f"{path}.{name}"] = p
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for path, mod in self._modules():
            for name, b in mod.buffers().items():
                out[f"{path}.{name}"] = b
        return out

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    # ---- forward -------------------------------------------------------------

    def forward(self, batch: Tensor) -> Tensor:
        cfg = self.config
        if batch.ndim != 4:
            raise ShapeError(f"expected N x C x S x S batch, got {batch.shape}")
        n, c, h, w = batch.shape
        if c != cfg.in_channels:
            raise ShapeError(f"expected {cfg.in_channels} input channels, got {c}")
        if h != cfg.input_size or w != cfg.input_size:
            raise ShapeError(
                f"expected {cfg.input_size}x{cfg.input_size} input, got {h}x{w}"
            )
        training = self.mode == "train"
        x = self.stem_conv(batch)
        x = T.relu(self.stem_bn(x, training))
        x = T.max_pool2d(x, 3, 2, padding=1)
        for i, block in enumerate(self.blocks):
            for layer in block:
                new = layer(x, training)
                x = T.concat_channels([x, new])
            if i != len(self.blocks) - 1:
                x = self.transitions[i](x, training)
        x = T.relu(self.final_bn(x, training))
        x = T.global_avg_pool(x)
        return self.classifier(x)

    __call__ = forward


def build_dcn(config: DcnConfig, seed: int) -> DcnModel:
    """Instantiate a DCN with He-style initialization from the given seed."""
    return DcnModel(config, seed)


def classifier_width(config: DcnConfig) -> int:
    """Channel count entering the classifier, by pure arithmetic."""
    c = config.init_features
    for i, n_layers in enumerate(config.block_config):
        c += n_layers * config.growth_rate
        if i != len(config.block_config) - 1:
            c = int(np.floor(c * config.compression))
    return c
