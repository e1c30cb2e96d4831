"""4x super-resolution generator: dense blocks in scaled residuals, no normalization.

The network is conv_first -> N residual-in-residual dense blocks -> trunk
conv -> global residual add -> two (nearest 2x upsample + conv + leaky)
stages -> hr conv + leaky -> final conv.  Every conv is 3x3, stride 1,
pad 1.  Weight names follow a fixed schema (see weight_shapes) so that
archives, optimizers and tests can address parameters by name.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .autodiff import (Tensor, ShapeError, add, concat_channels, conv2d,
                       leaky_relu, nearest_upsample2x, scale, sub)

IMG_CHANNELS = 3
DENSE_CONVS = 5
BLOCKS_PER_RRDB = 3
KSIZE = 3
INIT_GAIN = 0.1  # shrinks the usual fan-in std; small initial residuals train stabler


@dataclass(frozen=True)
class ArchConfig:
    """Generator hyperparameters; residual_scale is the beta in [0,1]."""
    num_rrdb: int = 4
    num_features: int = 32
    growth_channels: int = 16
    residual_scale: float = 0.2
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.num_rrdb < 1:
            raise ValueError(f"num_rrdb must be >= 1, got {self.num_rrdb}")
        if self.num_features < 4:
            raise ValueError(f"num_features must be >= 4, got {self.num_features}")
        if self.growth_channels < 2:
            raise ValueError(f"growth_channels must be >= 2, got {self.growth_channels}")
        if not 0.0 <= self.residual_scale <= 1.0:
            raise ValueError(f"residual_scale must lie in [0,1], got {self.residual_scale}")
        if not 0.0 <= self.leaky_slope < 1.0:
            raise ValueError(f"leaky_slope must lie in [0,1), got {self.leaky_slope}")


def weight_shapes(cfg: ArchConfig) -> dict[str, tuple[int, ...]]:
    """The complete name -> shape schema implied by an ArchConfig."""
    f, g = cfg.num_features, cfg.growth_channels
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name: str, cin: int, cout: int):
        shapes[f"{name}.weight"] = (cout, cin, KSIZE, KSIZE)
        shapes[f"{name}.bias"] = (cout,)

    conv("conv_first", IMG_CHANNELS, f)
    for r in range(cfg.num_rrdb):
        for b in range(BLOCKS_PER_RRDB):
            for k in range(1, DENSE_CONVS + 1):
                cin = f + (k - 1) * g
                cout = g if k < DENSE_CONVS else f
                conv(f"rrdb{r}.db{b}.conv{k}", cin, cout)
    conv("trunk_conv", f, f)
    conv("upconv1", f, f)
    conv("upconv2", f, f)
    conv("hr_conv", f, f)
    conv("conv_last", f, IMG_CHANNELS)
    return shapes


def parameter_count(cfg: ArchConfig) -> int:
    """Closed-form total parameter count for the schema above."""
    f, g = cfg.num_features, cfg.growth_channels
    k2 = KSIZE * KSIZE
    dense = sum((f + i * g) * g * k2 + g for i in range(DENSE_CONVS - 1))
    dense += (f + (DENSE_CONVS - 1) * g) * f * k2 + f
    body = cfg.num_rrdb * BLOCKS_PER_RRDB * dense
    head = IMG_CHANNELS * f * k2 + f
    tail = 4 * (f * f * k2 + f) + f * IMG_CHANNELS * k2 + IMG_CHANNELS
    return head + body + tail


def init_generator_weights(cfg: ArchConfig, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    """Seeded fan-in normal init, scaled by INIT_GAIN; biases start at zero."""
    rng = np.random.Generator(np.random.PCG64(seed))
    weights: dict[str, Tensor] = {}
    for name, shape in weight_shapes(cfg).items():
        if name.endswith(".bias"):
            data = np.zeros(shape, dtype=dtype)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            std = INIT_GAIN * np.sqrt(2.0 / fan_in)
            data = (rng.standard_normal(shape) * std).astype(dtype)
        weights[name] = Tensor(data, requires_grad=True, dtype=dtype)
    return weights


def _conv(x: Tensor, weights: Mapping[str, Tensor], name: str) -> Tensor:
    return conv2d(x, weights[f"{name}.weight"], weights[f"{name}.bias"], stride=1,
                  padding=KSIZE // 2)


def dense_block_forward(x: Tensor, weights: Mapping[str, Tensor], cfg: ArchConfig,
                        prefix: str = "") -> Tensor:
    """Five densely connected convs; returns x + beta * conv5 output.

    Conv k sees the channel concatenation of x and the activated outputs
    of convs 1..k-1 (growth_channels each); convs 1-4 are followed by the
    leaky activation, conv5 projects back to num_features.
    """
    if x.shape[1] != cfg.num_features:
        raise ShapeError(f"dense block expects {cfg.num_features} channels, got {x.shape[1]}")
    feats = [x]
    for k in range(1, DENSE_CONVS):
        fed = feats[0] if len(feats) == 1 else concat_channels(feats)
        feats.append(leaky_relu(_conv(fed, weights, f"{prefix}conv{k}"), cfg.leaky_slope))
    residual = _conv(concat_channels(feats), weights, f"{prefix}conv{DENSE_CONVS}")
    return add(x, scale(residual, cfg.residual_scale))


def rrdb_forward(x: Tensor, weights: Mapping[str, Tensor], cfg: ArchConfig,
                 prefix: str = "") -> Tensor:
    """The residual-in-residual wrapper: x + beta times the dense chain's delta.

    The chain DB3(DB2(DB1(x))) carries the identity path internally, so the
    outer branch scales its deviation from x; zero weights or beta = 0 make
    the whole block an exact identity.
    """
    y = x
    for b in range(BLOCKS_PER_RRDB):
        y = dense_block_forward(y, weights, cfg, prefix=f"{prefix}db{b}.")
    return add(x, scale(sub(y, x), cfg.residual_scale))


def generator_forward(lr: Tensor, weights: Mapping[str, Tensor], cfg: ArchConfig) -> Tensor:
    """[N,3,h,w] -> [N,3,4h,4w]; output is not clamped."""
    if lr.data.ndim != 4 or lr.shape[1] != IMG_CHANNELS:
        raise ShapeError(f"generator expects [N,{IMG_CHANNELS},h,w] input, got {lr.shape}")
    if lr.shape[2] < 4 or lr.shape[3] < 4:
        raise ShapeError(f"generator needs spatial dims >= 4, got {lr.shape}")
    shallow = _conv(lr, weights, "conv_first")
    y = shallow
    for r in range(cfg.num_rrdb):
        y = rrdb_forward(y, weights, cfg, prefix=f"rrdb{r}.")
    trunk = _conv(y, weights, "trunk_conv")
    y = add(shallow, trunk)
    y = leaky_relu(_conv(nearest_upsample2x(y), weights, "upconv1"), cfg.leaky_slope)
    y = leaky_relu(_conv(nearest_upsample2x(y), weights, "upconv2"), cfg.leaky_slope)
    y = leaky_relu(_conv(y, weights, "hr_conv"), cfg.leaky_slope)
    return _conv(y, weights, "conv_last")
