import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microsr.autodiff import Tensor
from microsr.weights_io import ArchiveError, read_archive, write_archive


def tensors_from(spec):
    """spec: list of (name, shape, seed) -> dict of float32 tensors."""
    out = {}
    for name, shape, seed in spec:
        rng = np.random.Generator(np.random.PCG64(seed))
        out[name] = Tensor(rng.standard_normal(shape).astype(np.float32))
    return out


def test_simple_round_trip(tmp_path):
    tensors = tensors_from([("a", (2, 3), 0), ("b", (4,), 1), ("c.d.e", (1, 1, 2, 2), 2)])
    path = tmp_path / "w.srwt"
    write_archive(tensors, path)
    back = read_archive(path)
    assert sorted(back) == sorted(tensors)
    for name in tensors:
        np.testing.assert_array_equal(back[name].data, tensors[name].data)
        assert back[name].data.dtype == np.float32


def test_archive_bytes_deterministic_and_name_sorted(tmp_path):
    t = tensors_from([("zeta", (3,), 0), ("alpha", (2,), 1)])
    p1, p2 = tmp_path / "a.srwt", tmp_path / "b.srwt"
    write_archive(t, p1)
    write_archive({"alpha": t["alpha"], "zeta": t["zeta"]}, p2)  # other insert order
    assert p1.read_bytes() == p2.read_bytes()
    blob = p1.read_bytes()
    assert blob.index(b"alpha") < blob.index(b"zeta")


def test_magic_and_version(tmp_path):
    path = tmp_path / "w.srwt"
    write_archive(tensors_from([("x", (2,), 0)]), path)
    blob = bytearray(path.read_bytes())
    assert blob[:4] == b"SRWT"
    assert struct.unpack_from("<I", blob, 4)[0] == 1


names = st.text(st.characters(codec="utf-8", exclude_characters="\x00"),
                min_size=1, max_size=24)
shapes = st.lists(st.integers(1, 5), min_size=1, max_size=4)


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(names, shapes, min_size=1, max_size=6), st.integers(0, 2 ** 31))
def test_round_trip_property(tmp_path_factory, spec, seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    tensors = {}
    for name, shape in spec.items():
        raw = rng.standard_normal(shape).astype(np.float32)
        # exercise non-finite payloads too: exact bits must survive
        if rng.random() < 0.1:
            raw.flat[0] = np.inf
        tensors[name] = Tensor(raw)
    path = tmp_path_factory.mktemp("rt") / "w.srwt"
    write_archive(tensors, path)
    back = read_archive(path)
    assert sorted(back) == sorted(tensors)
    for name in tensors:
        assert back[name].data.tobytes() == tensors[name].data.tobytes()
        assert back[name].shape == tensors[name].shape


# ---------------------------------------------------------------------------
# corruption
# ---------------------------------------------------------------------------

@pytest.fixture
def good_archive(tmp_path):
    path = tmp_path / "w.srwt"
    write_archive(tensors_from([("w1", (2, 2), 0), ("w2", (3,), 1)]), path)
    return path


def test_bad_magic_rejected(good_archive):
    blob = bytearray(good_archive.read_bytes())
    blob[:4] = b"NOPE"
    good_archive.write_bytes(blob)
    with pytest.raises(ArchiveError, match="magic"):
        read_archive(good_archive)


def test_flipped_payload_bit_fails_crc(good_archive):
    blob = bytearray(good_archive.read_bytes())
    blob[len(blob) // 2] ^= 0x40
    good_archive.write_bytes(blob)
    with pytest.raises(ArchiveError, match="CRC"):
        read_archive(good_archive)


def test_truncation_detected(good_archive):
    blob = good_archive.read_bytes()
    for cut in (3, 7, len(blob) // 2, len(blob) - 1):
        good_archive.write_bytes(blob[:cut])
        with pytest.raises(ArchiveError):
            read_archive(good_archive)


def test_trailing_garbage_detected(good_archive):
    blob = good_archive.read_bytes()
    good_archive.write_bytes(blob + b"\x00\x01\x02\x03\x04")
    with pytest.raises(ArchiveError):
        read_archive(good_archive)


def test_unknown_version_rejected(good_archive):
    blob = bytearray(good_archive.read_bytes())
    struct.pack_into("<I", blob, 4, 9)
    # keep the trailing CRC consistent so the version check itself fires
    body = bytes(blob[:-4])
    good_archive.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    with pytest.raises(ArchiveError, match="version"):
        read_archive(good_archive)


def test_crc_cross_check_matches_zlib(good_archive):
    blob = good_archive.read_bytes()
    stored = struct.unpack("<I", blob[-4:])[0]
    assert stored == zlib.crc32(blob[:-4])


def test_write_rejects_non_float32(tmp_path):
    bad = {"x": Tensor(np.ones(3, dtype=np.float64), dtype=np.float64)}
    with pytest.raises(ArchiveError):
        write_archive(bad, tmp_path / "w.srwt")


def test_write_rejects_empty_name(tmp_path):
    with pytest.raises(ArchiveError):
        write_archive({"": Tensor(np.ones(1, dtype=np.float32))}, tmp_path / "w.srwt")


def test_read_missing_file(tmp_path):
    with pytest.raises(ArchiveError):
        read_archive(tmp_path / "absent.srwt")
