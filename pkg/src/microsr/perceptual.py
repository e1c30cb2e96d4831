"""Feature-space distance and the composite generator objective.

The feature extractor is a frozen conv stack.  At desk scale its weights
come from a seeded generator (pretrained 19-layer classifier features are
out of reach here); the same archive format used for checkpoints can
supply externally trained weights instead.  Features are tapped BEFORE
the activation of the tap layer, which keeps them dense rather than
sparse and half-dead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .autodiff import (Tensor, ShapeError, absolute, add, conv2d, leaky_relu,
                       reduce_mean, scale, sub)
from .discriminator import relativistic_g_loss
from . import weights_io

KSIZE = 3


@dataclass(frozen=True)
class FeatureNetSpec:
    """Frozen feature stack: conv widths, per-conv strides, pre-activation tap."""
    widths: tuple[int, ...] = (16, 16, 32, 32, 64)
    strides: tuple[int, ...] = (1, 1, 2, 1, 2)
    tap_layer: int = 4
    seed: int = 11
    leaky_slope: float = 0.2

    def __post_init__(self):
        if len(self.widths) != len(self.strides):
            raise ValueError("widths and strides must have equal length")
        if not self.widths:
            raise ValueError("feature net needs at least one conv")
        if not 0 <= self.tap_layer < len(self.widths):
            raise ValueError(f"tap_layer {self.tap_layer} out of range")
        if any(s not in (1, 2) for s in self.strides):
            raise ValueError("feature net strides must be 1 or 2")

    def min_input(self) -> int:
        """Smallest H/W that still reaches the tap layer."""
        return int(np.prod([s for s in self.strides[: self.tap_layer + 1]]))


def feature_weight_shapes(spec: FeatureNetSpec) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    cin = 3
    for i, cout in enumerate(spec.widths):
        shapes[f"feat{i}.weight"] = (cout, cin, KSIZE, KSIZE)
        shapes[f"feat{i}.bias"] = (cout,)
        cin = cout
    return shapes


def init_feature_weights(spec: FeatureNetSpec, dtype=np.float32) -> dict[str, Tensor]:
    """Deterministic function of spec.seed; tensors never require grad."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    weights: dict[str, Tensor] = {}
    for name, shape in feature_weight_shapes(spec).items():
        if name.endswith(".bias"):
            data = np.zeros(shape, dtype=dtype)
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            data = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
        weights[name] = Tensor(data, requires_grad=False, dtype=dtype)
    return weights


class FeatureNet:
    """Spec plus frozen weights; training never touches these tensors."""

    def __init__(self, spec: FeatureNetSpec, weights: Mapping[str, Tensor]):
        expected = feature_weight_shapes(spec)
        for name, shape in expected.items():
            if name not in weights:
                raise ValueError(f"feature weights missing entry {name!r}")
            if weights[name].shape != shape:
                raise ValueError(f"feature entry {name!r} has shape {weights[name].shape}, "
                                 f"expected {shape}")
            weights[name].requires_grad = False
        self.spec = spec
        self.weights = dict(weights)

    @classmethod
    def from_seed(cls, spec: FeatureNetSpec, dtype=np.float32) -> "FeatureNet":
        return cls(spec, init_feature_weights(spec, dtype=dtype))

    @classmethod
    def from_archive(cls, spec: FeatureNetSpec, path) -> "FeatureNet":
        return cls(spec, weights_io.read_archive(path))


def feature_extract(x: Tensor, net: FeatureNet) -> Tensor:
    """Run the frozen stack; return the tap layer's pre-activation map."""
    spec = net.spec
    if x.data.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"feature extractor expects [N,3,H,W], got {x.shape}")
    if x.shape[2] < spec.min_input() or x.shape[3] < spec.min_input():
        raise ShapeError(f"input {x.shape[2]}x{x.shape[3]} too small for tap layer "
                         f"{spec.tap_layer} (needs >= {spec.min_input()})")
    y = x
    for i in range(spec.tap_layer + 1):
        y = conv2d(y, net.weights[f"feat{i}.weight"], net.weights[f"feat{i}.bias"],
                   stride=spec.strides[i], padding=KSIZE // 2)
        if i < spec.tap_layer:
            y = leaky_relu(y, spec.leaky_slope)
    return y


def perceptual_loss(sr: Tensor, hr: Tensor, net: FeatureNet) -> Tensor:
    """Mean absolute difference between the two feature maps."""
    if sr.shape != hr.shape:
        raise ShapeError(f"perceptual loss needs matching shapes, got {sr.shape} vs {hr.shape}")
    return reduce_mean(absolute(sub(feature_extract(sr, net), feature_extract(hr, net))))


def pixel_l1(sr: Tensor, hr: Tensor) -> Tensor:
    """Mean absolute pixel difference."""
    if sr.shape != hr.shape:
        raise ShapeError(f"pixel loss needs matching shapes, got {sr.shape} vs {hr.shape}")
    return reduce_mean(absolute(sub(sr, hr)))


@dataclass(frozen=True)
class LossWeights:
    """Composite-objective weights: adversarial term and pixel term."""
    lambda_adv: float = 0.005
    eta_pixel: float = 0.01

    def __post_init__(self):
        if not (np.isfinite(self.lambda_adv) and self.lambda_adv >= 0):
            raise ValueError(f"lambda_adv must be finite and >= 0, got {self.lambda_adv}")
        if not (np.isfinite(self.eta_pixel) and self.eta_pixel >= 0):
            raise ValueError(f"eta_pixel must be finite and >= 0, got {self.eta_pixel}")


def total_generator_loss(sr: Tensor, hr: Tensor, real_logits: Tensor, fake_logits: Tensor,
                         net: FeatureNet, w: LossWeights) -> dict[str, Tensor]:
    """total = percep + lambda * adversarial + eta * l1, with components for logging."""
    percep = perceptual_loss(sr, hr, net)
    adv = relativistic_g_loss(real_logits, fake_logits)
    l1 = pixel_l1(sr, hr)
    total = add(percep, add(scale(adv, w.lambda_adv), scale(l1, w.eta_pixel)))
    return {"total": total, "percep": percep, "adv": adv, "l1": l1}
