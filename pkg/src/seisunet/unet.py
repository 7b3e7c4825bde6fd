"""UNet and UNetMod built on :mod:`seisunet.autodiff`.

Both share the same encoder/decoder. ``outer_skip=False`` (UNetMod) drops
the concatenation at the shallowest decoder level, so the last decoder
block sees only upsampled features.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Parameter,
    Tensor,
    concat_channels,
    conv2d,
    he_normal,
    maxpool2,
    relu,
    upsample_nearest2,
)

__all__ = ["UNetConfig", "UNetModel", "build_unet", "forward", "count_params", "conv_layout"]


class UNetConfigError(ValueError):
    pass


@dataclass
class UNetConfig:
    in_channels: int = 8
    depth: int = 4
    base_channels: int = 16
    outer_skip: bool = True
    input_hw: tuple = (128, 128)

    def validate(self):
        if self.depth < 1:
            raise UNetConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise UNetConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.in_channels < 1:
            raise UNetConfigError(f"in_channels must be >= 1, got {self.in_channels}")
        h, w = self.input_hw
        step = 2 ** self.depth
        if h % step or w % step or h < step or w < step:
            raise UNetConfigError(f"input_hw {self.input_hw} not divisible by 2**depth = {step}")
        return self

    def to_dict(self):
        return {
            "in_channels": self.in_channels,
            "depth": self.depth,
            "base_channels": self.base_channels,
            "outer_skip": self.outer_skip,
            "input_hw": list(self.input_hw),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["input_hw"] = tuple(d.get("input_hw", (128, 128)))
        return cls(**d)


def conv_layout(config: UNetConfig):
    """Ordered ``(name, c_in, c_out)`` for every 3x3 conv in the network."""
    base, depth = config.base_channels, config.depth
    layout = []
    c_prev = config.in_channels
    for level in range(depth):
        c = base * 2 ** level
        layout += [(f"enc{level}.conv1", c_prev, c), (f"enc{level}.conv2", c, c)]
        c_prev = c
    c_mid = base * 2 ** depth
    layout += [("bottleneck.conv1", c_prev, c_mid), ("bottleneck.conv2", c_mid, c_mid)]
    c_prev = c_mid
    for level in reversed(range(depth)):
        c = base * 2 ** level
        skip = config.outer_skip or level > 0
        layout += [(f"dec{level}.up_conv", c_prev, c), (f"dec{level}.conv", 2 * c if skip else c, c)]
        c_prev = c
    layout.append(("head", c_prev, 1))
    return layout


class UNetModel:
    def __init__(self, config: UNetConfig, parameters):
        self.config = config
        self.parameters = parameters
        self._by_name = {p.name: p for p in parameters}

    def __getitem__(self, name):
        return self._by_name[name].tensor

    def __call__(self, x, hook=None):
        return forward(self, x, hook=hook)

    def state(self):
        return {p.name: p.data.copy() for p in self.parameters}

    def load_state(self, state):
        for p in self.parameters:
            p.tensor.data = state[p.name].copy()


def build_unet(config: UNetConfig, seed: int, dtype=np.float32) -> UNetModel:
    """Seeded He-normal weights, zero biases."""
    config.validate()
    rng = np.random.default_rng(seed)
    params = []
    for name, c_in, c_out in conv_layout(config):
        params.append(Parameter(f"{name}.weight", Tensor(he_normal(rng, c_out, c_in, dtype), requires_grad=True)))
        params.append(Parameter(f"{name}.bias", Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)))
    return UNetModel(config, params)


def _conv(model, name, x, activate=True):
    out = conv2d(x, model[f"{name}.weight"], model[f"{name}.bias"])
    return relu(out) if activate else out


def forward(model: UNetModel, x, hook=None):
    """Prediction of shape ``(n, 1, h, w)``; ``hook(name, tensor)`` sees each block output."""
    cfg = model.config
    x = x if isinstance(x, Tensor) else Tensor(x)
    expected = (cfg.in_channels, *cfg.input_hw)
    if x.data.ndim != 4 or x.shape[1:] != expected:
        raise ValueError(f"expected input (n, {expected[0]}, {expected[1]}, {expected[2]}), got {x.shape}")
    note = hook or (lambda name, t: None)

    skips = []
    for level in range(cfg.depth):
        x = _conv(model, f"enc{level}.conv1", x)
        x = _conv(model, f"enc{level}.conv2", x)
        note(f"enc{level}", x)
        skips.append(x)
        x = maxpool2(x)
    x = _conv(model, "bottleneck.conv1", x)
    x = _conv(model, "bottleneck.conv2", x)
    note("bottleneck", x)
    for level in reversed(range(cfg.depth)):
        x = _conv(model, f"dec{level}.up_conv", upsample_nearest2(x))
        if cfg.outer_skip or level > 0:
            x = concat_channels(x, skips[level])
        x = _conv(model, f"dec{level}.conv", x)
        note(f"dec{level}", x)
    out = _conv(model, "head", x, activate=False)
    note("head", out)
    return out


def count_params(model_or_config) -> int:
    config = model_or_config.config if isinstance(model_or_config, UNetModel) else model_or_config
    return sum(c_out * c_in * 9 + c_out for _, c_in, c_out in conv_layout(config))
