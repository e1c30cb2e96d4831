import math

import numpy as np
import pytest

from microsr.autodiff import ShapeError, Tensor, backward
from microsr.discriminator import (DiscConfig, discriminator_forward,
                                   init_discriminator_weights,
                                   relativistic_d_loss, relativistic_g_loss)


def logits(values):
    return Tensor(np.asarray(values, dtype=np.float64), dtype=np.float64)


def test_config_validation():
    with pytest.raises(ValueError):
        DiscConfig(input_size=16, num_stages=5)  # 16 < 2^5
    with pytest.raises(ValueError):
        DiscConfig(input_size=0)


def test_forward_shape_and_input_check(tiny_disc):
    weights = init_discriminator_weights(tiny_disc, seed=0)
    rng = np.random.Generator(np.random.PCG64(1))
    x = Tensor(rng.uniform(0, 1, (3, 3, 16, 16)).astype(np.float32))
    out = discriminator_forward(x, weights, tiny_disc)
    assert out.shape == (3,)
    with pytest.raises(ShapeError):
        discriminator_forward(Tensor(np.zeros((1, 3, 8, 8), dtype=np.float32)),
                              weights, tiny_disc)


def test_channel_widths_cap_at_8x(tiny_disc):
    cfg = DiscConfig(input_size=256, base_channels=4, num_stages=6, dense_width=8)
    weights = init_discriminator_weights(cfg, seed=0)
    # stages: 4, 8, 16, 32, 32, 32 (growth stops at 8x base)
    assert weights["stage0.weight"].shape[0] == 4
    assert weights["stage3.weight"].shape[0] == 32
    assert weights["stage5.weight"].shape[0] == 32


# ---------------------------------------------------------------------------
# relativistic average losses
# ---------------------------------------------------------------------------

def test_symmetric_case_gives_two_ln_two():
    r = logits([1.0, 1.0])
    f = logits([1.0, 1.0])
    want = 2.0 * math.log(2.0)
    assert relativistic_d_loss(r, f).item() == pytest.approx(want, abs=1e-6)
    assert relativistic_g_loss(r, f).item() == pytest.approx(want, abs=1e-6)


def test_confident_discriminator_closed_form():
    r = logits([2.0, 2.0])
    f = logits([0.0, 0.0])
    # softplus(-2)*2 for D, softplus(2)*2 for G (per-term means coincide here)
    sp = lambda z: math.log1p(math.exp(-abs(z))) + max(z, 0.0)
    assert relativistic_d_loss(r, f).item() == pytest.approx(2 * sp(-2.0), abs=1e-6)
    assert relativistic_g_loss(r, f).item() == pytest.approx(2 * sp(2.0), abs=1e-6)
    assert relativistic_d_loss(r, f).item() == pytest.approx(0.253856, abs=1e-6)
    assert relativistic_g_loss(r, f).item() == pytest.approx(4.253856, abs=1e-6)


def test_global_logit_shift_invariance():
    rng = np.random.Generator(np.random.PCG64(3))
    r = rng.standard_normal(8)
    f = rng.standard_normal(8)
    for shift in (-100.0, -3.0, 0.5, 250.0):
        d0 = relativistic_d_loss(logits(r), logits(f)).item()
        d1 = relativistic_d_loss(logits(r + shift), logits(f + shift)).item()
        g0 = relativistic_g_loss(logits(r), logits(f)).item()
        g1 = relativistic_g_loss(logits(r + shift), logits(f + shift)).item()
        assert d1 == pytest.approx(d0, abs=1e-6)
        assert g1 == pytest.approx(g0, abs=1e-6)


def test_losses_positive_and_finite_at_extremes():
    r = logits([1e4, -1e4])
    f = logits([-1e4, 1e4])
    for fn in (relativistic_d_loss, relativistic_g_loss):
        v = fn(r, f).item()
        assert math.isfinite(v)
        assert v >= 0.0


def test_loss_swap_symmetry():
    # swapping real and fake swaps the two losses
    rng = np.random.Generator(np.random.PCG64(4))
    r = rng.standard_normal(5)
    f = rng.standard_normal(5)
    assert relativistic_d_loss(logits(r), logits(f)).item() == pytest.approx(
        relativistic_g_loss(logits(f), logits(r)).item(), abs=1e-9)


def test_d_loss_gradients_flow_to_both_sides():
    r = Tensor(np.asarray([0.5, -0.2], dtype=np.float64), requires_grad=True,
               dtype=np.float64)
    f = Tensor(np.asarray([0.1, 0.3], dtype=np.float64), requires_grad=True,
               dtype=np.float64)
    backward(relativistic_d_loss(r, f))
    assert r.grad is not None and f.grad is not None
    assert np.all(r.grad != 0) and np.all(f.grad != 0)


def test_unequal_batch_sizes_are_fine():
    # each side only ever sees the other's mean, so sizes may differ
    v = relativistic_d_loss(logits([1.0, 2.0]), logits([1.0, 2.0, 3.0])).item()
    assert math.isfinite(v)
    with pytest.raises(ValueError):
        relativistic_d_loss(logits([1.0]), Tensor(np.zeros((2, 2), dtype=np.float32)))
