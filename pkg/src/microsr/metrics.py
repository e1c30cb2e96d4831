"""PSNR/SSIM and dataset-level evaluation reports.

PSNR is computed over all three RGB channels with unit peak; SSIM on the
BT.601 luma channel with the standard 11x11 / sigma 1.5 Gaussian window.
Published Set5 benchmark figures ship as display-only reference rows for
side-by-side tables; they are not targets this engine can reproduce at
desk scale.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import images
from .autodiff import Tensor, no_grad
from .generator import ArchConfig, generator_forward
from .images import DatasetManifest, ImageBuffer

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # BT.601

# (method, loss config, psnr, ssim, mos) - reported Set5 figures, display only.
REFERENCE_RESULTS = (
    ("SRResNet", "MSE", "32.05", "0.9019", "3.37"),
    ("SRResNet", "VGG22", "30.51", "0.8803", "3.46"),
    ("SRGAN", "MSE", "30.64", "0.8701", "3.77"),
    ("SRGAN", "VGG22", "29.84", "0.8468", "3.478"),
    ("Our method", "MSE", "29.56", "0.9109", "3.64"),
    ("Our method", "VGG22", "28.12", "0.8881", "3.49"),
)


def _check_dims(a: ImageBuffer, b: ImageBuffer, what: str) -> None:
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError(f"{what} needs equal dimensions, got "
                         f"{a.width}x{a.height} vs {b.width}x{b.height}")


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """10 log10(1 / MSE) over all RGB values; identical images give inf."""
    _check_dims(a, b, "psnr")
    mse = float(np.mean((a.pixels - b.pixels) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def luma(buffer: ImageBuffer) -> np.ndarray:
    r, g, b = LUMA_WEIGHTS
    p = buffer.pixels
    return r * p[:, :, 0] + g * p[:, :, 1] + b * p[:, :, 2]


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()

_SSIM_KERNEL_1D = _gaussian_window()


def _windowed_mean(img: np.ndarray) -> np.ndarray:
    # Separable valid-mode Gaussian filtering via sliding windows.
    k = _SSIM_KERNEL_1D
    rows = np.lib.stride_tricks.sliding_window_view(img, SSIM_WINDOW, axis=0) @ k
    return np.lib.stride_tricks.sliding_window_view(rows, SSIM_WINDOW, axis=1) @ k


def ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean structural similarity over sliding Gaussian windows of the luma plane."""
    _check_dims(a, b, "ssim")
    if min(a.width, a.height) < SSIM_WINDOW:
        raise ValueError(f"ssim needs images at least {SSIM_WINDOW} pixels per side, "
                         f"got {a.width}x{a.height}")
    x = luma(a)
    y = luma(b)
    mu_x = _windowed_mean(x)
    mu_y = _windowed_mean(y)
    xx = _windowed_mean(x * x) - mu_x * mu_x
    yy = _windowed_mean(y * y) - mu_y * mu_y
    xy = _windowed_mean(x * y) - mu_x * mu_y
    score = ((2 * mu_x * mu_y + SSIM_C1) * (2 * xy + SSIM_C2)) / \
            ((mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (xx + yy + SSIM_C2))
    return float(score.mean())


@dataclass
class EntryMetrics:
    name: str
    psnr_db: float
    ssim: float


@dataclass
class MetricReport:
    entries: list[EntryMetrics] = field(default_factory=list)
    mean_psnr: float = math.nan
    mean_ssim: float = math.nan
    failures: list[str] = field(default_factory=list)

    def finalize(self) -> "MetricReport":
        if self.entries:
            self.mean_psnr = float(np.mean([e.psnr_db for e in self.entries]))
            self.mean_ssim = float(np.mean([e.ssim for e in self.entries]))
        return self


def _upscale_nearest(lr: ImageBuffer) -> ImageBuffer:
    px = lr.pixels.repeat(images.SCALE, axis=0).repeat(images.SCALE, axis=1)
    return images.buffer_from_array(px)


def super_resolve(lr: ImageBuffer, weights, cfg: ArchConfig) -> ImageBuffer:
    """Run the generator on a full LR image and clamp to a displayable buffer."""
    with no_grad():
        sr = generator_forward(images.tensor_from_image(lr), weights, cfg)
    return images.image_from_tensor(sr)


def evaluate_dataset(manifest: DatasetManifest, weights=None, cfg: ArchConfig | None = None,
                     mode: str = "network", out_dir=None) -> MetricReport:
    """Score a manifest: synthesize/load LR, reconstruct, compare with HR.

    mode selects the reconstruction path: 'network' (needs weights + cfg),
    'bicubic' or 'nearest' upsampling baselines.  Per-image failures are
    collected, excluded from the aggregates and reported, not fatal.
    """
    if len(manifest) == 0:
        raise ValueError("cannot evaluate an empty manifest")
    if mode == "network" and (weights is None or cfg is None):
        raise ValueError("network mode needs generator weights and an ArchConfig")
    if mode not in ("network", "bicubic", "nearest"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    report = MetricReport()
    for i, entry in enumerate(manifest.entries):
        name = entry.hr_path.name
        try:
            hr = manifest.load_hr(i)
            if hr.width % images.SCALE or hr.height % images.SCALE:
                raise ValueError(f"HR dimensions {hr.width}x{hr.height} not divisible "
                                 f"by {images.SCALE}")
            lr = manifest.load_lr(i)
            if lr is None:
                lr = images.bicubic_resize(hr, hr.width // images.SCALE,
                                           hr.height // images.SCALE)
            if mode == "network":
                sr = super_resolve(lr, weights, cfg)
            elif mode == "bicubic":
                sr = images.bicubic_resize(lr, hr.width, hr.height)
            else:
                sr = _upscale_nearest(lr)
            report.entries.append(EntryMetrics(name=name, psnr_db=psnr(sr, hr),
                                               ssim=ssim(sr, hr)))
            if out_dir is not None:
                images.save_image(sr, out_dir / f"sr_{Path(name).stem}.png")
        except Exception as exc:  # per-image failures must not kill a benchmark run
            report.failures.append(f"{name}: {exc}")
    return report.finalize()


# ---------------------------------------------------------------------------
# report rendering and serialization
# ---------------------------------------------------------------------------

def _fmt(value: float, digits: int) -> str:
    if math.isinf(value):
        return "inf"
    return f"{value:.{digits}f}"


def format_report(report: MetricReport, reference_rows=()) -> str:
    """Fixed-width text table; reference rows render beneath the measured rows."""
    lines = []
    lines.append(f"{'image':<28}{'PSNR(dB)':>10}{'SSIM':>9}")
    for e in report.entries:
        lines.append(f"{e.name:<28}{_fmt(e.psnr_db, 2):>10}{_fmt(e.ssim, 4):>9}")
    if report.entries:
        lines.append(f"{'mean':<28}{_fmt(report.mean_psnr, 2):>10}{_fmt(report.mean_ssim, 4):>9}")
    if report.failures:
        lines.append(f"skipped: {len(report.failures)} image(s)")
        for msg in report.failures:
            lines.append(f"  ! {msg}")
    if reference_rows:
        lines.append("")
        lines.append(format_reference_table(reference_rows).rstrip("\n"))
    return "\n".join(lines) + "\n"


def format_reference_table(rows=REFERENCE_RESULTS) -> str:
    """Published comparison rows, rendered verbatim."""
    lines = [f"{'reference':<28}{'PSNR(dB)':>10}{'SSIM':>9}{'MOS':>7}"]
    for method, variant, p, s, m in rows:
        lines.append(f"{method + ' / ' + variant:<28}{p:>10}{s:>9}{m:>7}")
    return "\n".join(lines) + "\n"


def _number_or_inf(value: float):
    return "inf" if math.isinf(value) else value


def report_to_json(report: MetricReport, label: str = "") -> str:
    """Machine-readable report; infinities serialize as the string \"inf\"."""
    doc = {
        "label": label,
        "entries": [{"name": e.name, "psnr_db": _number_or_inf(e.psnr_db),
                     "ssim": e.ssim} for e in report.entries],
        "mean_psnr": _number_or_inf(report.mean_psnr) if report.entries else None,
        "mean_ssim": report.mean_ssim if report.entries else None,
        "failures": list(report.failures),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> tuple[str, MetricReport]:
    doc = json.loads(text)
    report = MetricReport()
    for e in doc["entries"]:
        p = math.inf if e["psnr_db"] == "inf" else float(e["psnr_db"])
        report.entries.append(EntryMetrics(name=e["name"], psnr_db=p, ssim=float(e["ssim"])))
    report.failures = list(doc.get("failures", []))
    return doc.get("label", ""), report.finalize()
