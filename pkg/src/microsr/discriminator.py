"""Convolutional critic and the relativistic-average adversarial losses.

The critic is a plain strided conv stack (channels doubling, spatial
halving, leaky activations, no normalization layers) ending in global
average pooling and two dense layers that emit one raw logit per sample.
The losses compare each logit against the mean logit of the opposite
batch before the logistic squash, so adding a common constant to every
logit changes nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .autodiff import (Tensor, ShapeError, add, conv2d, global_avg_pool,
                       leaky_relu, linear, neg, reduce_mean, reshape,
                       softplus, sub)

KSIZE = 3


@dataclass(frozen=True)
class DiscConfig:
    input_size: int = 96
    in_channels: int = 3
    base_channels: int = 16
    num_stages: int = 5
    dense_width: int = 64
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.input_size < 2 ** self.num_stages:
            raise ValueError(f"input {self.input_size} too small for {self.num_stages} "
                             f"halving stages")
        if self.num_stages < 1 or self.base_channels < 1 or self.dense_width < 1:
            raise ValueError("discriminator dimensions must be positive")


def _stage_channels(cfg: DiscConfig) -> list[int]:
    # Doubling, capped at 8x base (deep stacks stay desk-sized).
    return [cfg.base_channels * min(2 ** i, 8) for i in range(cfg.num_stages)]


def weight_shapes(cfg: DiscConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    cin = cfg.in_channels
    for i, cout in enumerate(_stage_channels(cfg)):
        shapes[f"stage{i}.weight"] = (cout, cin, KSIZE, KSIZE)
        shapes[f"stage{i}.bias"] = (cout,)
        cin = cout
    shapes["dense0.weight"] = (cin, cfg.dense_width)
    shapes["dense0.bias"] = (cfg.dense_width,)
    shapes["dense1.weight"] = (cfg.dense_width, 1)
    shapes["dense1.bias"] = (1,)
    return shapes


def init_discriminator_weights(cfg: DiscConfig, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    rng = np.random.Generator(np.random.PCG64(seed))
    weights: dict[str, Tensor] = {}
    for name, shape in weight_shapes(cfg).items():
        if name.endswith(".bias"):
            data = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            std = np.sqrt(2.0 / fan_in)
            data = (rng.standard_normal(shape) * std).astype(dtype)
        weights[name] = Tensor(data, requires_grad=True, dtype=dtype)
    return weights


def discriminator_forward(x: Tensor, weights: Mapping[str, Tensor], cfg: DiscConfig) -> Tensor:
    """[N,C,H,W] at the configured size -> one raw logit per sample, shape [N]."""
    if x.data.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeError(f"discriminator expects [N,{cfg.in_channels},H,W], got {x.shape}")
    if x.shape[2] != cfg.input_size or x.shape[3] != cfg.input_size:
        raise ShapeError(f"discriminator is configured for {cfg.input_size}x"
                         f"{cfg.input_size} inputs, got {x.shape[2]}x{x.shape[3]}")
    y = x
    for i in range(cfg.num_stages):
        y = conv2d(y, weights[f"stage{i}.weight"], weights[f"stage{i}.bias"],
                   stride=2, padding=KSIZE // 2)
        y = leaky_relu(y, cfg.leaky_slope)
    y = global_avg_pool(y)
    y = leaky_relu(linear(y, weights["dense0.weight"], weights["dense0.bias"]),
                   cfg.leaky_slope)
    y = linear(y, weights["dense1.weight"], weights["dense1.bias"])
    return reshape(y, (x.shape[0],))


def _check_logits(real_logits: Tensor, fake_logits: Tensor) -> None:
    for name, t in (("real", real_logits), ("fake", fake_logits)):
        if t.data.ndim != 1:
            raise ValueError(f"{name} logits must be a rank-1 batch, got shape {t.shape}")


def relativistic_d_loss(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    """Critic objective: real logits should beat the mean fake logit and vice versa.

    -mean_r log sigma(r - mean_f) - mean_f log(1 - sigma(f - mean_r)),
    evaluated through softplus so large logits cannot overflow.
    """
    _check_logits(real_logits, fake_logits)
    r_vs_f = sub(real_logits, reduce_mean(fake_logits))
    f_vs_r = sub(fake_logits, reduce_mean(real_logits))
    return add(reduce_mean(softplus(neg(r_vs_f))), reduce_mean(softplus(f_vs_r)))


def relativistic_g_loss(real_logits: Tensor, fake_logits: Tensor) -> Tensor:
    """Generator objective: the role-swapped critic loss.

    -mean_r log(1 - sigma(r - mean_f)) - mean_f log sigma(f - mean_r).
    Both real and fake logits appear, so gradients reach the generator
    through the fake batch while the real batch shapes the reference mean.
    """
    _check_logits(real_logits, fake_logits)
    r_vs_f = sub(real_logits, reduce_mean(fake_logits))
    f_vs_r = sub(fake_logits, reduce_mean(real_logits))
    return add(reduce_mean(softplus(r_vs_f)), reduce_mean(softplus(neg(f_vs_r))))
