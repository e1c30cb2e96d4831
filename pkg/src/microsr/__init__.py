"""microsr: a desk-scale 4x single-image super-resolution engine.

Pure numpy throughout: a small reverse-mode autodiff core, a
residual-in-residual dense-block generator, a relativistic-average
adversarial objective, bicubic degradation, PSNR/SSIM benchmarking and a
compact binary weight format, tied together by a CLI.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, ShapeError, backward, no_grad, zero_grads
from .generator import ArchConfig, generator_forward, init_generator_weights
from .discriminator import (DiscConfig, discriminator_forward,
                            init_discriminator_weights, relativistic_d_loss,
                            relativistic_g_loss)
from .perceptual import (FeatureNet, FeatureNetSpec, LossWeights,
                         perceptual_loss, pixel_l1, total_generator_loss)
from .images import (ImageBuffer, DatasetManifest, bicubic_resize, load_image,
                     parse_manifest, sample_patch_pair, save_image)
from .metrics import (REFERENCE_RESULTS, MetricReport, evaluate_dataset,
                      format_report, psnr, ssim, super_resolve)
from .trainer import (AdamOptimizer, TrainConfig, TrainingDiverged,
                      load_generator, run_training, save_generator)
from .weights_io import ArchiveError, read_archive, write_archive

__all__ = [
    "Tensor", "ShapeError", "backward", "no_grad", "zero_grads",
    "ArchConfig", "generator_forward", "init_generator_weights",
    "DiscConfig", "discriminator_forward", "init_discriminator_weights",
    "relativistic_d_loss", "relativistic_g_loss",
    "FeatureNet", "FeatureNetSpec", "LossWeights",
    "perceptual_loss", "pixel_l1", "total_generator_loss",
    "ImageBuffer", "DatasetManifest", "bicubic_resize", "load_image",
    "parse_manifest", "sample_patch_pair", "save_image",
    "REFERENCE_RESULTS", "MetricReport", "evaluate_dataset", "format_report",
    "psnr", "ssim", "super_resolve",
    "AdamOptimizer", "TrainConfig", "TrainingDiverged", "load_generator",
    "run_training", "save_generator",
    "ArchiveError", "read_archive", "write_archive",
    "__version__",
]
