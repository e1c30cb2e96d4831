import json
import math

import numpy as np
import pytest

from microsr.images import DatasetManifest, ManifestEntry, buffer_from_array, save_image
from microsr.generator import ArchConfig, init_generator_weights
from microsr.metrics import (REFERENCE_RESULTS, EntryMetrics, MetricReport,
                             evaluate_dataset, format_reference_table,
                             format_report, psnr, report_from_json,
                             report_to_json, ssim, super_resolve)


def const(size, value):
    return buffer_from_array(np.full((size, size, 3), value))


# ---------------------------------------------------------------------------
# psnr
# ---------------------------------------------------------------------------

def test_psnr_identical_is_infinite():
    rng = np.random.Generator(np.random.PCG64(0))
    buf = buffer_from_array(rng.uniform(0, 1, (16, 16, 3)))
    assert psnr(buf, buf) == math.inf


def test_psnr_known_mse():
    # MSE 0.01 -> exactly 20 dB
    a = const(16, 0.5)
    b = const(16, 0.6)
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)


def test_psnr_symmetry_and_dim_check():
    a = const(8, 0.2)
    b = const(8, 0.3)
    assert psnr(a, b) == psnr(b, a)
    with pytest.raises(ValueError):
        psnr(a, const(16, 0.3))


# ---------------------------------------------------------------------------
# ssim
# ---------------------------------------------------------------------------

def test_ssim_identical_is_exactly_one():
    rng = np.random.Generator(np.random.PCG64(1))
    buf = buffer_from_array(rng.uniform(0, 1, (16, 16, 3)))
    assert ssim(buf, buf) == 1.0


def test_ssim_constant_pair_closed_form():
    # constant images: structure terms drop out, closed form
    # (2*mu1*mu2 + C1)(2*0 + C2) / ((mu1^2 + mu2^2 + C1)(0 + C2))
    got = ssim(const(16, 0.5), const(16, 0.6))
    want = (2 * 0.5 * 0.6 + 0.01 ** 2) / (0.5 ** 2 + 0.6 ** 2 + 0.01 ** 2)
    assert got == pytest.approx(want, abs=1e-9)
    assert got == pytest.approx(0.983610, abs=1e-5)


def test_ssim_penalizes_noise_more_than_psnr_suggests():
    rng = np.random.Generator(np.random.PCG64(2))
    clean = buffer_from_array(np.tile(np.linspace(0.2, 0.8, 32)[None, :, None], (32, 1, 3)))
    noisy = buffer_from_array(np.clip(clean.pixels + rng.normal(0, 0.1, clean.pixels.shape), 0, 1))
    assert 0 < ssim(clean, noisy) < 1


def test_ssim_needs_full_window():
    with pytest.raises(ValueError):
        ssim(const(8, 0.5), const(8, 0.5))  # smaller than the 11x11 window


def test_ssim_range_property():
    rng = np.random.Generator(np.random.PCG64(3))
    for _ in range(5):
        a = buffer_from_array(rng.uniform(0, 1, (12, 12, 3)))
        b = buffer_from_array(rng.uniform(0, 1, (12, 12, 3)))
        v = ssim(a, b)
        assert -1.0 <= v <= 1.0


# ---------------------------------------------------------------------------
# dataset evaluation
# ---------------------------------------------------------------------------

def manifest_of(tmp_path, sizes):
    entries = []
    rng = np.random.Generator(np.random.PCG64(11))
    for i, size in enumerate(sizes):
        path = tmp_path / f"im{i}.png"
        smooth = rng.uniform(0.3, 0.7, (size // 4, size // 4, 3))
        big = smooth.repeat(4, axis=0).repeat(4, axis=1)
        save_image(buffer_from_array(big), path)
        entries.append(ManifestEntry(hr_path=path))
    return DatasetManifest(scale=4, root=tmp_path, entries=entries)


def test_evaluate_bicubic_and_nearest(tmp_path):
    manifest = manifest_of(tmp_path, [32, 48])
    rb = evaluate_dataset(manifest, mode="bicubic")
    rn = evaluate_dataset(manifest, mode="nearest")
    assert len(rb.entries) == 2 and not rb.failures
    assert all(math.isfinite(e.psnr_db) for e in rb.entries + rn.entries)
    # aggregate is the arithmetic mean of per-image scores
    assert rb.mean_psnr == pytest.approx(np.mean([e.psnr_db for e in rb.entries]), abs=1e-9)
    assert rb.mean_ssim == pytest.approx(np.mean([e.ssim for e in rb.entries]), abs=1e-9)


def test_evaluate_network_mode(tmp_path, tiny_arch):
    manifest = manifest_of(tmp_path, [32])
    weights = init_generator_weights(tiny_arch, seed=0)
    report = evaluate_dataset(manifest, weights, tiny_arch, mode="network")
    assert len(report.entries) == 1
    assert math.isfinite(report.entries[0].psnr_db)


def test_evaluate_empty_manifest_rejected(tmp_path):
    manifest = DatasetManifest(scale=4, root=tmp_path, entries=[])
    with pytest.raises(ValueError):
        evaluate_dataset(manifest, mode="bicubic")


def test_evaluate_collects_per_image_failures(tmp_path):
    manifest = manifest_of(tmp_path, [32, 48])
    manifest.entries.append(ManifestEntry(hr_path=tmp_path / "gone.png"))
    report = evaluate_dataset(manifest, mode="bicubic")
    assert len(report.entries) == 2
    assert len(report.failures) == 1
    assert "gone.png" in report.failures[0]


def test_evaluate_network_needs_weights(tmp_path):
    manifest = manifest_of(tmp_path, [32])
    with pytest.raises(ValueError):
        evaluate_dataset(manifest, mode="network")
    with pytest.raises(ValueError):
        evaluate_dataset(manifest, mode="sideways")


def test_super_resolve_shape(tmp_path, tiny_arch):
    weights = init_generator_weights(tiny_arch, seed=0)
    rng = np.random.Generator(np.random.PCG64(4))
    lr = buffer_from_array(rng.uniform(0, 1, (6, 9, 3)))
    sr = super_resolve(lr, weights, tiny_arch)
    assert (sr.width, sr.height) == (36, 24)
    assert sr.pixels.min() >= 0 and sr.pixels.max() <= 1


# ---------------------------------------------------------------------------
# report rendering and round trip
# ---------------------------------------------------------------------------

def sample_report():
    r = MetricReport()
    r.entries = [EntryMetrics("a.png", 31.5, 0.91), EntryMetrics("b.png", math.inf, 1.0)]
    return r.finalize()


def test_reference_rows_render_verbatim():
    text = format_reference_table()
    for method, variant, p, s, m in REFERENCE_RESULTS:
        row = next(line for line in text.splitlines() if line.startswith(f"{method} / {variant}"))
        assert p in row and s in row and m in row
    assert "29.56" in text and "0.9109" in text and "28.12" in text


def test_format_report_includes_means_and_reference():
    text = format_report(sample_report(), REFERENCE_RESULTS)
    assert "a.png" in text and "mean" in text
    assert "inf" in text
    assert "SRGAN / VGG22" in text


def test_report_json_round_trip():
    report = sample_report()
    text = report_to_json(report, label="net")
    doc = json.loads(text)
    assert doc["label"] == "net"
    assert doc["entries"][1]["psnr_db"] == "inf"
    label, back = report_from_json(text)
    assert label == "net"
    assert back.entries[1].psnr_db == math.inf
    assert back.mean_ssim == pytest.approx(report.mean_ssim)


def test_report_json_is_byte_stable():
    a = report_to_json(sample_report(), label="x")
    b = report_to_json(sample_report(), label="x")
    assert a == b
