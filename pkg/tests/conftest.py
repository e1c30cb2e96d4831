import numpy as np
import pytest

from microsr.discriminator import DiscConfig
from microsr.generator import ArchConfig
from microsr.images import (DatasetManifest, ManifestEntry, buffer_from_array,
                            save_image)
from microsr.perceptual import FeatureNetSpec
from microsr.trainer import TrainConfig


@pytest.fixture
def tiny_arch():
    return ArchConfig(num_rrdb=1, num_features=8, growth_channels=4)


@pytest.fixture
def tiny_disc():
    return DiscConfig(input_size=16, base_channels=4, num_stages=2, dense_width=8)


@pytest.fixture
def tiny_featspec():
    return FeatureNetSpec(widths=(4, 4), strides=(1, 2), tap_layer=1, seed=3)


def tiny_train_config(**overrides) -> TrainConfig:
    """A config small enough that a unit test trains in well under a second."""
    base = dict(
        arch=ArchConfig(num_rrdb=1, num_features=8, growth_channels=4),
        disc=DiscConfig(input_size=32, base_channels=4, num_stages=3, dense_width=8),
        features=FeatureNetSpec(widths=(4, 4), strides=(1, 2), tap_layer=1, seed=3),
        seed=0, batch_size=1, hr_crop=32, phase1_steps=3, phase2_steps=0,
        checkpoint_every=10 ** 9, log_every=1,
    )
    base.update(overrides)
    return TrainConfig(**base)


def synth_texture(size: int, seed: int, detail: float = 1.0) -> np.ndarray:
    """A smooth random (size, size, 3) texture in [0,1]: band-limited sinusoid mix."""
    rng = np.random.Generator(np.random.PCG64(seed))
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.full((size, size, 3), 0.5)
    for _ in range(4):
        fx, fy = rng.uniform(0.5, 2.5 * detail, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.05, 0.15)
        wave = amp * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
        img += wave[:, :, None] * rng.uniform(0.3, 1.0, size=3)
    return np.clip(img, 0.0, 1.0)


def write_texture_dataset(root, count: int, size: int, seed: int = 0) -> DatasetManifest:
    """Save `count` HR textures under root and return an LR-less manifest."""
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        path = root / f"tex{i:02d}.png"
        save_image(buffer_from_array(synth_texture(size, seed * 1000 + i)), path)
        entries.append(ManifestEntry(hr_path=path))
    return DatasetManifest(scale=4, root=root, entries=entries)
