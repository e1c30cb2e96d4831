"""Image decoding, bicubic degradation, dataset manifests and patch sampling.

Pixel buffers hold unit-interval float64 RGB, shape (H, W, 3) row-major.
Files are PNG (8-bit RGB) or binary PPM; both round-trip 8-bit data
bit-exactly.  The low-resolution side of every pair is fixed at 1/4 scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .autodiff import ShapeError, Tensor

SCALE = 4
CUBIC_A = -0.5  # Catmull-Rom flavour of the cubic convolution kernel


class ImageIOError(IOError):
    """Image file could not be read or written."""


class ManifestError(ValueError):
    """Dataset manifest is malformed or references bad images."""


@dataclass
class ImageBuffer:
    """Decoded RGB raster, pixels in [0,1], channel-interleaved float64."""
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) float64

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dimensions must be positive, got {self.width}x{self.height}")
        if self.pixels.shape != (self.height, self.width, 3):
            raise ValueError(f"pixel array shape {self.pixels.shape} does not match "
                             f"{self.height}x{self.width}x3")


def buffer_from_array(pixels: np.ndarray) -> ImageBuffer:
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) array, got {pixels.shape}")
    return ImageBuffer(width=pixels.shape[1], height=pixels.shape[0], pixels=pixels)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

_SAVE_FORMATS = {".png": "PNG", ".ppm": "PPM"}


def load_image(path) -> ImageBuffer:
    """Decode an 8-bit PNG or PPM file into a unit-interval buffer."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
                raise ImageIOError(f"{path}: unsupported bit depth (mode {img.mode})")
            if img.mode not in ("RGB", "L"):
                raise ImageIOError(f"{path}: unsupported image mode {img.mode}, expected 8-bit RGB")
            arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError as exc:
        raise ImageIOError(f"{path}: file not found") from exc
    except ImageIOError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise ImageIOError(f"{path}: cannot decode image ({exc})") from exc
    return buffer_from_array(arr.astype(np.float64) / 255.0)


def save_image(buffer: ImageBuffer, path) -> None:
    """Quantize to 8 bits and write PNG or PPM, chosen by extension."""
    path = Path(path)
    fmt = _SAVE_FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise ImageIOError(f"{path}: unsupported output format, use .png or .ppm")
    quantized = np.rint(np.clip(buffer.pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    try:
        Image.fromarray(quantized, mode="RGB").save(path, format=fmt)
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write image ({exc})") from exc


def image_dimensions(path) -> tuple[int, int]:
    """Read (width, height) from the file header without decoding pixel data."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            return img.size
    except FileNotFoundError as exc:
        raise ImageIOError(f"{path}: file not found") from exc
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageIOError(f"{path}: cannot read image header ({exc})") from exc


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def cubic_kernel_weight(x: float, a: float = CUBIC_A) -> float:
    """The cubic convolution kernel W(x); a must be negative."""
    if a >= 0:
        raise ValueError(f"cubic kernel parameter must be negative, got {a}")
    ax = abs(float(x))
    if ax <= 1.0:
        return (a + 2.0) * ax ** 3 - (a + 3.0) * ax ** 2 + 1.0
    if ax < 2.0:
        return a * ax ** 3 - 5.0 * a * ax ** 2 + 8.0 * a * ax - 4.0 * a
    return 0.0


def _cubic_weights_vec(x: np.ndarray, a: float) -> np.ndarray:
    ax = np.abs(x)
    near = (a + 2.0) * ax ** 3 - (a + 3.0) * ax ** 2 + 1.0
    far = a * ax ** 3 - 5.0 * a * ax ** 2 + 8.0 * a * ax - 4.0 * a
    return np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))


def resample_axis_plan(n_in: int, n_out: int, a: float = CUBIC_A):
    """Tap indices and normalized weights for one separable resampling axis.

    Output pixel centres map to source coordinates via
    src = (dst + 0.5) * n_in / n_out - 0.5.  Each output sample takes the
    4 nearest source taps; out-of-range taps clamp to the edge and the
    weights are renormalized to sum exactly 1.
    """
    dst = np.arange(n_out, dtype=np.float64)
    src = (dst + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    taps = base[:, None] + np.arange(-1, 3)
    weights = _cubic_weights_vec(src[:, None] - taps, a)
    weights = weights / weights.sum(axis=1, keepdims=True)
    return np.clip(taps, 0, n_in - 1), weights


def bicubic_resize(buffer: ImageBuffer, out_w: int, out_h: int) -> ImageBuffer:
    """Separable cubic resampling with edge clamp; output clamped to [0,1]."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output dimensions must be >= 1, got {out_w}x{out_h}")
    px = buffer.pixels
    if out_w != buffer.width:
        taps, w = resample_axis_plan(buffer.width, out_w)
        px = (px[:, taps, :] * w[None, :, :, None]).sum(axis=2)
    if out_h != buffer.height:
        taps, w = resample_axis_plan(buffer.height, out_h)
        px = (px[taps, :, :] * w[:, :, None, None]).sum(axis=1)
    return buffer_from_array(np.clip(px, 0.0, 1.0))


def hflip(buffer: ImageBuffer) -> ImageBuffer:
    return buffer_from_array(buffer.pixels[:, ::-1, :].copy())


# ---------------------------------------------------------------------------
# tensor conversion
# ---------------------------------------------------------------------------

def tensor_from_image(buffer: ImageBuffer) -> Tensor:
    """Interleaved (H,W,3) buffer -> planar float32 tensor [1,3,H,W]."""
    planar = buffer.pixels.transpose(2, 0, 1)[np.newaxis, ...]
    return Tensor(planar.astype(np.float32))


def image_from_tensor(t: Tensor) -> ImageBuffer:
    """Planar [1,3,H,W] tensor -> buffer, values clamped to [0,1]."""
    if t.data.ndim != 4 or t.shape[0] != 1 or t.shape[1] != 3:
        raise ShapeError(f"expected a [1,3,H,W] tensor, got {t.shape}")
    if not np.isfinite(t.data).all():
        raise ValueError("tensor contains non-finite values")
    planar = np.clip(t.data[0].astype(np.float64), 0.0, 1.0)
    return buffer_from_array(planar.transpose(1, 2, 0))


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    hr_path: Path
    lr_path: Path | None = None


@dataclass
class DatasetManifest:
    """Resolved list of HR images (optionally paired with LR files)."""
    scale: int
    root: Path
    entries: list[ManifestEntry]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    def load_hr(self, index: int) -> ImageBuffer:
        key = ("hr", index)
        if key not in self._cache:
            self._cache[key] = load_image(self.entries[index].hr_path)
        return self._cache[key]

    def load_lr(self, index: int) -> ImageBuffer | None:
        entry = self.entries[index]
        if entry.lr_path is None:
            return None
        key = ("lr", index)
        if key not in self._cache:
            self._cache[key] = load_image(entry.lr_path)
        return self._cache[key]


def parse_manifest(path) -> DatasetManifest:
    """Parse and validate a manifest file.

    Line-oriented UTF-8 text: blank lines and '#' comments are skipped,
    otherwise 'scale N', 'root PATH' or 'image HR_PATH [LR_PATH]', fields
    separated by whitespace.  Paths resolve against root, root against
    the manifest's directory.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as exc:
        raise ManifestError(f"{path}: manifest not found") from exc

    scale = None
    root = path.parent
    raw_entries: list[tuple[int, str, str | None]] = []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        parts = text.split()
        if parts[0] == "scale":
            if len(parts) != 2 or not parts[1].isdigit():
                raise ManifestError(f"{path}:{lineno}: expected 'scale <int>'")
            scale = int(parts[1])
            if scale != SCALE:
                raise ManifestError(f"{path}:{lineno}: scale must be {SCALE}, got {scale}")
        elif parts[0] == "root":
            if len(parts) != 2:
                raise ManifestError(f"{path}:{lineno}: expected 'root <path>'")
            root = (path.parent / parts[1]).resolve()
        elif parts[0] == "image":
            if len(parts) not in (2, 3):
                raise ManifestError(f"{path}:{lineno}: expected 'image <hr> [<lr>]'")
            raw_entries.append((lineno, parts[1], parts[2] if len(parts) == 3 else None))
        else:
            raise ManifestError(f"{path}:{lineno}: unknown directive {parts[0]!r}")

    if scale is None:
        raise ManifestError(f"{path}: missing 'scale' directive")

    entries = []
    for lineno, hr_rel, lr_rel in raw_entries:
        hr_path = root / hr_rel
        if not hr_path.is_file():
            raise ManifestError(f"{path}:{lineno}: missing HR image {hr_path}")
        hr_w, hr_h = image_dimensions(hr_path)
        lr_path = None
        if lr_rel is not None:
            lr_path = root / lr_rel
            if not lr_path.is_file():
                raise ManifestError(f"{path}:{lineno}: missing LR image {lr_path}")
            lr_w, lr_h = image_dimensions(lr_path)
            if (hr_w, hr_h) != (lr_w * SCALE, lr_h * SCALE):
                raise ManifestError(
                    f"{path}:{lineno}: HR {hr_w}x{hr_h} is not {SCALE}x the LR {lr_w}x{lr_h}")
        elif hr_w % SCALE or hr_h % SCALE:
            raise ManifestError(
                f"{path}:{lineno}: HR dimensions {hr_w}x{hr_h} not divisible by {SCALE} "
                f"and no LR image was given")
        entries.append(ManifestEntry(hr_path=hr_path, lr_path=lr_path))

    return DatasetManifest(scale=scale, root=root, entries=entries)


def write_manifest(manifest: DatasetManifest, path) -> None:
    """Write a manifest with paths stored relative to its root."""
    path = Path(path)
    lines = [f"scale {manifest.scale}"]
    try:
        root_rel = manifest.root.relative_to(path.parent.resolve())
        lines.append(f"root {root_rel or '.'}")
    except ValueError:
        lines.append(f"root {manifest.root}")
    for entry in manifest.entries:
        hr = entry.hr_path.relative_to(manifest.root)
        if entry.lr_path is not None:
            lines.append(f"image {hr} {entry.lr_path.relative_to(manifest.root)}")
        else:
            lines.append(f"image {hr}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# patch sampling
# ---------------------------------------------------------------------------

@dataclass
class PatchPair:
    """One training sample: lr [1,3,h,w] and hr [1,3,4h,4w] tensors."""
    lr: Tensor
    hr: Tensor
    entry_index: int
    flipped: bool


def sample_patch_pair(manifest: DatasetManifest, entry: int, hr_crop: int,
                      rng: np.random.Generator) -> PatchPair:
    """Cut an aligned LR/HR patch pair with an optional shared horizontal flip.

    The HR crop sits at a uniformly random 4-aligned offset.  LR comes from
    the paired file when present, otherwise from a bicubic 1/4 downscale of
    the crop.  Consumes exactly three RNG draws, so a seeded generator
    reproduces the same pair.
    """
    if hr_crop % SCALE:
        raise ValueError(f"hr_crop must be divisible by {SCALE}, got {hr_crop}")
    hr_img = manifest.load_hr(entry)
    if hr_img.width < hr_crop or hr_img.height < hr_crop:
        raise ValueError(
            f"entry {entry} ({manifest.entries[entry].hr_path.name}): image "
            f"{hr_img.width}x{hr_img.height} is smaller than crop {hr_crop}")

    max_ox = (hr_img.width - hr_crop) // SCALE
    max_oy = (hr_img.height - hr_crop) // SCALE
    ox = SCALE * int(rng.integers(0, max_ox + 1))
    oy = SCALE * int(rng.integers(0, max_oy + 1))
    flip = bool(rng.random() < 0.5)

    hr_patch = buffer_from_array(hr_img.pixels[oy:oy + hr_crop, ox:ox + hr_crop].copy())
    lr_img = manifest.load_lr(entry)
    lr_crop = hr_crop // SCALE
    if lr_img is None:
        lr_patch = bicubic_resize(hr_patch, lr_crop, lr_crop)
    else:
        lx, ly = ox // SCALE, oy // SCALE
        lr_patch = buffer_from_array(lr_img.pixels[ly:ly + lr_crop, lx:lx + lr_crop].copy())
    if flip:
        hr_patch = hflip(hr_patch)
        lr_patch = hflip(lr_patch)

    return PatchPair(lr=tensor_from_image(lr_patch), hr=tensor_from_image(hr_patch),
                     entry_index=entry, flipped=flip)
