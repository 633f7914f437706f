"""Bit-exact binary containers: the HSC1 cube file and the sectioned
checkpoint container built on the same header style.

HSC1 layout (all little-endian):
    magic "HSC1" (4 bytes) | version u16 | dtype u16 (0 = f32)
    | W u32 | H u32 | L u32 | reserved u64
    | payload: W*H*L float32, band-major then row-major.

Checkpoint layout:
    magic "HSCK" (4 bytes) | version u16 | reserved u16 | section count u32
    | table: per section, name length u16 | name utf-8 | offset u64 | length u64
    | payload blob (offsets are relative to the first payload byte).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError

HSC1_MAGIC = b"HSC1"
HSC1_VERSION = 1
HSC1_DTYPE_F32 = 0
_HSC1_HEADER = struct.Struct("<4sHHIIIQ")

CKPT_MAGIC = b"HSCK"
CKPT_VERSION = 1


def write_hsc1(path, cube: np.ndarray) -> None:
    """Write an (L, H, W) cube; a 2-D array is stored with L = 1."""
    arr = np.asarray(cube)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DataFormatError(f"HSC1 stores 3-D cubes, got shape {arr.shape}")
    l, h, w = arr.shape
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    header = _HSC1_HEADER.pack(HSC1_MAGIC, HSC1_VERSION, HSC1_DTYPE_F32, w, h, l, 0)
    Path(path).write_bytes(header + payload)


def read_hsc1(path) -> np.ndarray:
    """Read an HSC1 cube as (L, H, W) float32; rejects malformed files."""
    raw = Path(path).read_bytes()
    if len(raw) < _HSC1_HEADER.size:
        raise DataFormatError(f"{path}: truncated HSC1 header ({len(raw)} bytes)")
    magic, version, dtype, w, h, l, _reserved = _HSC1_HEADER.unpack_from(raw)
    if magic != HSC1_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {HSC1_MAGIC!r}")
    if version != HSC1_VERSION:
        raise DataFormatError(f"{path}: unsupported HSC1 version {version}")
    if dtype != HSC1_DTYPE_F32:
        raise DataFormatError(f"{path}: unsupported dtype code {dtype}")
    expected = 4 * w * h * l
    payload = raw[_HSC1_HEADER.size:]
    if len(payload) != expected:
        raise DataFormatError(
            f"{path}: payload is {len(payload)} bytes, expected {expected} for {w}x{h}x{l}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(l, h, w).astype(np.float32)


def write_sections(path, sections: dict[str, bytes]) -> None:
    """Write a named-section container; names are sorted for reproducibility."""
    names = sorted(sections)
    table = bytearray()
    payload = bytearray()
    for name in names:
        blob = sections[name]
        encoded = name.encode("utf-8")
        table += struct.pack("<H", len(encoded)) + encoded
        table += struct.pack("<QQ", len(payload), len(blob))
        payload += blob
    header = struct.pack("<4sHHI", CKPT_MAGIC, CKPT_VERSION, 0, len(names))
    Path(path).write_bytes(header + bytes(table) + bytes(payload))


def read_sections(path) -> dict[str, bytes]:
    raw = Path(path).read_bytes()
    head = struct.Struct("<4sHHI")
    if len(raw) < head.size:
        raise DataFormatError(f"{path}: truncated checkpoint header")
    magic, version, _reserved, count = head.unpack_from(raw)
    if magic != CKPT_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}, expected {CKPT_MAGIC!r}")
    if version != CKPT_VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    pos = head.size
    entries = []
    for _ in range(count):
        if pos + 2 > len(raw):
            raise DataFormatError(f"{path}: truncated section table")
        (nlen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos: pos + nlen].decode("utf-8")
        pos += nlen
        if pos + 16 > len(raw):
            raise DataFormatError(f"{path}: truncated section table")
        offset, length = struct.unpack_from("<QQ", raw, pos)
        pos += 16
        entries.append((name, offset, length))
    base = pos
    sections = {}
    for name, offset, length in entries:
        end = base + offset + length
        if end > len(raw):
            raise DataFormatError(f"{path}: section {name!r} exceeds file size")
        sections[name] = raw[base + offset: end]
    return sections
