"""Binary dataset containers, manifests and CSV import/export.

Container layout (little-endian)::

    magic      4 bytes   b"CSQ1" (52-sample CSI) or b"IQF1" (320-sample IQ / TDSG)
    version    uint16
    count      uint32
    length     uint16
    frames     count x (uint32 device_id, length x (float32 re, float32 im))

Samples are stored as float32; everything upstream computes in float64.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContainerFormatError, InvalidInputError
from .simulate import FrameSet

VERSION = 1
HEADER = struct.Struct("<4sHIH")
MAGIC_LENGTH = {b"CSQ1": 52, b"IQF1": 320}
KIND_MAGIC = {"csi": b"CSQ1", "iq": b"IQF1", "tdsg": b"IQF1"}


def _frame_dtype(length: int) -> np.dtype:
    return np.dtype([("device_id", "<u4"), ("samples", "<f4", (length, 2))])


def magic_for_length(length: int) -> bytes:
    for magic, n in MAGIC_LENGTH.items():
        if n == length:
            return magic
    raise InvalidInputError(f"no container kind for frame length {length}")


def write_container(path, frames: FrameSet, magic: bytes | None = None) -> Path:
    length = frames.frame_length
    magic = magic or magic_for_length(length)
    if MAGIC_LENGTH.get(magic) != length:
        raise InvalidInputError(f"magic {magic!r} requires length {MAGIC_LENGTH.get(magic)}, got {length}")
    if np.any(frames.device_ids < 0) or np.any(frames.device_ids > 0xFFFFFFFF):
        raise InvalidInputError("device ids must fit in uint32")
    body = np.zeros(len(frames), dtype=_frame_dtype(length))
    body["device_id"] = frames.device_ids
    body["samples"][..., 0] = frames.samples.real
    body["samples"][..., 1] = frames.samples.imag
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(magic, VERSION, len(frames), length))
        fh.write(body.tobytes())
    return path


def read_header(path) -> tuple[bytes, int, int, int]:
    path = Path(path)
    if not path.exists():
        raise ContainerFormatError(f"{path}: no such file")
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise ContainerFormatError(f"{path}: truncated header")
    magic, version, count, length = HEADER.unpack(raw)
    if magic not in MAGIC_LENGTH:
        raise ContainerFormatError(f"{path}: unknown magic {magic!r}")
    if version != VERSION:
        raise ContainerFormatError(f"{path}: unsupported version {version}")
    if MAGIC_LENGTH[magic] != length:
        raise ContainerFormatError(f"{path}: magic {magic.decode()} with frame length {length}")
    return magic, version, count, length


def read_container(path) -> tuple[FrameSet, bytes]:
    magic, _, count, length = read_header(path)
    dt = _frame_dtype(length)
    raw = Path(path).read_bytes()[HEADER.size:]
    if len(raw) != count * dt.itemsize:
        raise ContainerFormatError(
            f"{path}: header declares {count} frames ({count * dt.itemsize} bytes), body has {len(raw)} bytes")
    body = np.frombuffer(raw, dtype=dt)
    s = body["samples"].astype(np.float64)
    return FrameSet(s[..., 0] + 1j * s[..., 1], body["device_id"].astype(np.int64)), magic


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        man = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ContainerFormatError(f"{path}: unreadable manifest ({exc})") from None
    for name in man.get("files", {}).values():
        read_header(path.parent / name)
    return man


def import_csv(path, kind: str) -> FrameSet:
    """Rows ``device_id, re_0, im_0, re_1, im_1, ...``; values are quantised to float32."""
    if kind not in ("csi", "iq"):
        raise InvalidInputError(f"kind must be 'csi' or 'iq', got {kind!r}")
    length = MAGIC_LENGTH[KIND_MAGIC[kind]]
    ids, rows = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 1 + 2 * length:
                raise ContainerFormatError(f"{path}:{lineno}: expected {1 + 2 * length} columns, got {len(row)}")
            try:
                ids.append(int(row[0]))
                rows.append([float(c) for c in row[1:]])
            except ValueError as exc:
                raise ContainerFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ContainerFormatError(f"{path}: no frames")
    a = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ContainerFormatError(f"{path}: non-finite sample values")
    a = a.astype(np.float32).astype(np.float64)  # containers hold float32
    return FrameSet(a[:, 0::2] + 1j * a[:, 1::2], np.asarray(ids, dtype=np.int64))


def export_csv(path, frames: FrameSet) -> None:
    """Inverse of :func:`import_csv`; values printed as shortest float32 round-trip strings."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for v, d in frames.frames():
            vals = np.empty(2 * v.size, dtype=np.float32)
            vals[0::2], vals[1::2] = v.real, v.imag
            w.writerow([d] + [np.format_float_positional(x, unique=True, trim="-") for x in vals])
