"""HSC1 container and sectioned checkpoint: bit-exact round trips and
rejection of malformed input."""

import struct

import numpy as np
import pytest

from cassikit import hsc1
from cassikit.errors import DataFormatError


class TestHsc1:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        cube = rng.random((3, 5, 4)).astype(np.float32)
        path = tmp_path / "cube.hsc1"
        hsc1.write_hsc1(path, cube)
        back = hsc1.read_hsc1(path)
        assert back.shape == (3, 5, 4)
        assert np.array_equal(back.view(np.uint32), cube.view(np.uint32))
        # writing again produces identical bytes
        path2 = tmp_path / "cube2.hsc1"
        hsc1.write_hsc1(path2, back)
        assert path.read_bytes() == path2.read_bytes()

    def test_header_layout(self, tmp_path):
        cube = np.zeros((2, 3, 4), dtype=np.float32)
        path = tmp_path / "c.hsc1"
        hsc1.write_hsc1(path, cube)
        raw = path.read_bytes()
        magic, version, dtype, w, h, l, reserved = struct.unpack_from("<4sHHIIIQ", raw)
        assert magic == b"HSC1" and version == 1 and dtype == 0
        assert (w, h, l) == (4, 3, 2) and reserved == 0
        assert len(raw) == 28 + 4 * w * h * l

    def test_2d_stored_as_single_band(self, tmp_path):
        img = np.random.default_rng(1).random((6, 7)).astype(np.float32)
        path = tmp_path / "m.hsc1"
        hsc1.write_hsc1(path, img)
        back = hsc1.read_hsc1(path)
        assert back.shape == (1, 6, 7)
        assert np.array_equal(back[0], img)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.hsc1"
        hsc1.write_hsc1(path, np.zeros((1, 4, 4), dtype=np.float32))
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError, match="magic"):
            hsc1.read_hsc1(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "short.hsc1"
        hsc1.write_hsc1(path, np.zeros((1, 4, 4), dtype=np.float32))
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(DataFormatError, match="payload"):
            hsc1.read_hsc1(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        path = tmp_path / "long.hsc1"
        hsc1.write_hsc1(path, np.zeros((1, 4, 4), dtype=np.float32))
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(DataFormatError):
            hsc1.read_hsc1(path)

    def test_truncated_header_rejected(self, tmp_path):
        path = tmp_path / "tiny.hsc1"
        path.write_bytes(b"HSC1\x01\x00")
        with pytest.raises(DataFormatError):
            hsc1.read_hsc1(path)


class TestSections:
    def test_roundtrip(self, tmp_path):
        sections = {"meta": b'{"a":1}', "param/w": bytes(range(16)), "empty": b""}
        path = tmp_path / "ck.bin"
        hsc1.write_sections(path, sections)
        back = hsc1.read_sections(path)
        assert back == sections

    def test_write_is_order_independent(self, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        hsc1.write_sections(a, {"x": b"1", "y": b"2"})
        hsc1.write_sections(b, {"y": b"2", "x": b"1"})
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "c.bin"
        hsc1.write_sections(path, {"x": b"1"})
        raw = bytearray(path.read_bytes())
        raw[:4] = b"ZZZZ"
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError):
            hsc1.read_sections(path)

    def test_truncated_table(self, tmp_path):
        path = tmp_path / "d.bin"
        hsc1.write_sections(path, {"name": b"payload"})
        raw = path.read_bytes()
        path.write_bytes(raw[:14])
        with pytest.raises(DataFormatError):
            hsc1.read_sections(path)

    def test_overrunning_section_rejected(self, tmp_path):
        path = tmp_path / "e.bin"
        hsc1.write_sections(path, {"x": b"12345678"})
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])
        with pytest.raises(DataFormatError):
            hsc1.read_sections(path)
