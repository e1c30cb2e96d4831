"""Finite-difference verification of every differentiable op and both networks.

All checks run in float64 with fixed seeds.  Op-level checks compare the
full gradient; the end-to-end network checks sample a couple dozen input
and weight coordinates so the whole suite stays well under the time box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (Tensor, absolute, add, concat_channels, conv2d,
                       finite_difference_check, finite_difference_sample,
                       global_avg_pool, leaky_relu, linear, nearest_upsample2x,
                       reduce_mean, reshape, scale, sigmoid, softplus, sub)
from .discriminator import (DiscConfig, discriminator_forward,
                            init_discriminator_weights, relativistic_g_loss)
from .generator import ArchConfig, generator_forward, init_generator_weights
from .perceptual import (FeatureNet, FeatureNetSpec, LossWeights, pixel_l1,
                         total_generator_loss)

OP_TOLERANCE = 1e-4
NETWORK_TOLERANCE = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.max_error <= self.tolerance


def _rand(rng, *shape, spread=1.0, offset=0.0):
    return Tensor(rng.standard_normal(shape) * spread + offset, dtype=np.float64)


def _op_checks(rng) -> list[CheckResult]:
    x = _rand(rng, 2, 3, 5, 5)
    bias = _rand(rng, 3)
    other = _rand(rng, 2, 3, 5, 5)
    # keep sampled points away from the |.| and leaky_relu kinks
    x_off = Tensor(np.where(np.abs(x.data) < 0.2, x.data + 0.5, x.data),
                   dtype=np.float64)

    cases = [
        ("add.x", lambda t: reduce_mean(add(t, other)), x),
        ("add.bias", lambda t: reduce_mean(add(x, t)), bias),
        ("sub.x", lambda t: reduce_mean(sub(t, other)), x),
        ("sub.y", lambda t: reduce_mean(sub(other, t)), x),
        ("scale", lambda t: reduce_mean(scale(t, -1.7)), x),
        ("absolute", lambda t: reduce_mean(absolute(t)), x_off),
        ("leaky_relu", lambda t: reduce_mean(leaky_relu(t, 0.2)), x_off),
        ("sigmoid", lambda t: reduce_mean(sigmoid(t)), x),
        ("softplus", lambda t: reduce_mean(softplus(t)), x),
        ("reduce_mean", reduce_mean, x),
        ("reshape", lambda t: reduce_mean(reshape(t, (2, 75))), x),
        ("concat.a", lambda t: reduce_mean(concat_channels([t, other])), x),
        ("concat.b", lambda t: reduce_mean(concat_channels([other, t])), x),
        ("nearest_upsample2x", lambda t: reduce_mean(nearest_upsample2x(t)), x),
        ("global_avg_pool", lambda t: reduce_mean(global_avg_pool(t)), x),
    ]

    w = _rand(rng, 4, 3, 3, 3, spread=0.5)
    b = _rand(rng, 4)
    for stride in (1, 2):
        tag = f"conv2d.s{stride}"
        cases.append((f"{tag}.x",
                      lambda t, s=stride: reduce_mean(conv2d(t, w, b, stride=s, padding=1)), x))
        cases.append((f"{tag}.w",
                      lambda t, s=stride: reduce_mean(conv2d(x, t, b, stride=s, padding=1)), w))
        cases.append((f"{tag}.b",
                      lambda t, s=stride: reduce_mean(conv2d(x, w, t, stride=s, padding=1)), b))

    xf = _rand(rng, 3, 6)
    wf = _rand(rng, 6, 2)
    bf = _rand(rng, 2)
    cases.append(("linear.x", lambda t: reduce_mean(linear(t, wf, bf)), xf))
    cases.append(("linear.w", lambda t: reduce_mean(linear(xf, t, bf)), wf))
    cases.append(("linear.b", lambda t: reduce_mean(linear(xf, wf, t)), bf))

    return [CheckResult(name, finite_difference_check(f, t), OP_TOLERANCE)
            for name, f, t in cases]


def _sample(rng, size: int, count: int) -> np.ndarray:
    return rng.choice(size, size=min(count, size), replace=False)


def _network_checks(rng) -> list[CheckResult]:
    results = []

    arch = ArchConfig(num_rrdb=1, num_features=8, growth_channels=4)
    gw = init_generator_weights(arch, seed=7, dtype=np.float64)
    lr_img = _rand(rng, 1, 3, 6, 6, spread=0.25, offset=0.5)
    hr_img = _rand(rng, 1, 3, 24, 24, spread=0.25, offset=0.5)

    def gen_loss_wrt_input(t):
        return pixel_l1(generator_forward(t, gw, arch), hr_img)

    results.append(CheckResult(
        "generator.input",
        finite_difference_sample(gen_loss_wrt_input, lr_img,
                                 _sample(rng, lr_img.data.size, 20)),
        NETWORK_TOLERANCE))

    probe_name = "rrdb0.db1.conv3.weight"

    def gen_loss_wrt_weight(t):
        patched = dict(gw)
        patched[probe_name] = t
        return pixel_l1(generator_forward(lr_img, patched, arch), hr_img)

    results.append(CheckResult(
        "generator.weight",
        finite_difference_sample(gen_loss_wrt_weight, gw[probe_name],
                                 _sample(rng, gw[probe_name].data.size, 20)),
        NETWORK_TOLERANCE))

    disc_cfg = DiscConfig(input_size=16, base_channels=4, num_stages=2, dense_width=8)
    dw = init_discriminator_weights(disc_cfg, seed=9, dtype=np.float64)
    real = _rand(rng, 2, 3, 16, 16, spread=0.25, offset=0.5)
    fake = _rand(rng, 2, 3, 16, 16, spread=0.25, offset=0.5)

    def disc_loss_wrt_fake(t):
        return relativistic_g_loss(discriminator_forward(real, dw, disc_cfg),
                                   discriminator_forward(t, dw, disc_cfg))

    results.append(CheckResult(
        "discriminator.input",
        finite_difference_sample(disc_loss_wrt_fake, fake,
                                 _sample(rng, fake.data.size, 20)),
        NETWORK_TOLERANCE))

    disc_probe = "stage1.weight"

    def disc_loss_wrt_weight(t):
        patched = dict(dw)
        patched[disc_probe] = t
        return relativistic_g_loss(discriminator_forward(real, patched, disc_cfg),
                                   discriminator_forward(fake, patched, disc_cfg))

    results.append(CheckResult(
        "discriminator.weight",
        finite_difference_sample(disc_loss_wrt_weight, dw[disc_probe],
                                 _sample(rng, dw[disc_probe].data.size, 20)),
        NETWORK_TOLERANCE))

    spec = FeatureNetSpec(widths=(4, 4), strides=(1, 2), tap_layer=1, seed=11)
    featnet = FeatureNet.from_seed(spec, dtype=np.float64)
    lw = LossWeights()
    sr_free = _rand(rng, 1, 3, 16, 16, spread=0.25, offset=0.5)
    hr_ref = _rand(rng, 1, 3, 16, 16, spread=0.25, offset=0.5)

    def composite_wrt_sr(t):
        real_logits = discriminator_forward(hr_ref, dw, disc_cfg)
        fake_logits = discriminator_forward(t, dw, disc_cfg)
        return total_generator_loss(t, hr_ref, real_logits, fake_logits,
                                    featnet, lw)["total"]

    results.append(CheckResult(
        "composite_loss.sr",
        finite_difference_sample(composite_wrt_sr, sr_free,
                                 _sample(rng, sr_free.data.size, 20)),
        NETWORK_TOLERANCE))

    return results


def run_gradient_suite(seed: int = 1234) -> list[CheckResult]:
    """The full float64 check list; every result should satisfy result.ok."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return _op_checks(rng) + _network_checks(rng)
