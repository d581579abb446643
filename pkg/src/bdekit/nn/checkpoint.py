"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic        6 bytes   b"BDEKIT"
    version      u16       FORMAT_VERSION
    digest       32 bytes  sha256 of the UTF-8 config text
    config_len   u32
    config       config_len bytes, UTF-8 ``key=value`` lines
    meta_len     u32
    meta         meta_len bytes, UTF-8 ``key=value`` lines
    count        u32       number of tensors
    count x tensor:
        path_len u16
        path     path_len bytes, UTF-8
        ndim     u8
        dims     ndim x u32
        data     prod(dims) x f32

The file ends exactly after the last tensor. See docs/checkpoint_format.md.
"""

from __future__ import annotations

import hashlib
import io
import os
import struct

import numpy as np

from bdekit.errors import (
    CheckpointDigestError,
    CheckpointError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)

MAGIC = b"BDEKIT"
FORMAT_VERSION = 1


def config_digest(config_text: str) -> bytes:
    return hashlib.sha256(config_text.encode("utf-8")).digest()


def _kv_text(d: dict[str, str]) -> str:
    lines = []
    for k, v in d.items():
        v = str(v)
        if "\n" in v or "=" in k:
            raise CheckpointError(f"cannot store metadata entry {k!r}")
        lines.append(f"{k}={v}\n")
    return "".join(lines)


def _parse_kv(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line:
            k, _, v = line.partition("=")
            out[k] = v
    return out


def dumps(config_text: str, tensors: dict[str, np.ndarray], meta: dict[str, str] | None = None) -> bytes:
    buf = io.BytesIO()
    cfg = config_text.encode("utf-8")
    meta_b = _kv_text(meta or {}).encode("utf-8")
    buf.write(MAGIC)
    buf.write(struct.pack("<H", FORMAT_VERSION))
    buf.write(config_digest(config_text))
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(meta_b)))
    buf.write(meta_b)
    buf.write(struct.pack("<I", len(tensors)))
    for path, arr in tensors.items():
        p = path.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        buf.write(struct.pack("<H", len(p)))
        buf.write(p)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.blob):
            raise CheckpointTruncatedError(
                f"checkpoint truncated while reading {what} "
                f"(need {n} bytes at offset {self.pos}, file has {len(self.blob)})"
            )
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(blob: bytes, expected_config: str | None = None):
    """Parse a checkpoint. Returns ``(config_text, meta, tensors)``.

    Raises a distinct :class:`CheckpointError` subclass for a bad version,
    a config digest mismatch and a truncated or corrupted length field.
    """
    r = _Reader(blob)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError("not a bdekit checkpoint (bad magic)")
    (version,) = r.unpack("<H", "version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}, expected {FORMAT_VERSION}")
    digest = r.take(32, "digest")
    (n,) = r.unpack("<I", "config length")
    try:
        config_text = r.take(n, "config").decode("utf-8")
        if config_digest(config_text) != digest:
            raise CheckpointDigestError("stored config does not match its digest")
        if expected_config is not None and config_digest(expected_config) != digest:
            raise CheckpointDigestError(
                "checkpoint was written for a different model config:\n"
                f"  checkpoint: {config_text.strip()!r}\n  expected:   {expected_config.strip()!r}"
            )
        (n,) = r.unpack("<I", "meta length")
        meta = _parse_kv(r.take(n, "meta").decode("utf-8"))
        (count,) = r.unpack("<I", "tensor count")
        tensors = {}
        for _ in range(count):
            (plen,) = r.unpack("<H", "path length")
            path = r.take(plen, "path").decode("utf-8")
            (ndim,) = r.unpack("<B", f"{path} ndim")
            dims = r.unpack(f"<{ndim}I", f"{path} dims")
            size = int(np.prod(dims, dtype=np.int64))
            raw = r.take(4 * size, f"{path} data")
            tensors[path] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
    except UnicodeDecodeError as exc:
        raise CheckpointTruncatedError(f"corrupted checkpoint text field: {exc}") from exc
    if r.pos != len(blob):
        raise CheckpointError(f"{len(blob) - r.pos} trailing bytes after last tensor")
    return config_text, meta, tensors


def write(path, config_text: str, tensors: dict[str, np.ndarray], meta: dict[str, str] | None = None):
    blob = dumps(config_text, tensors, meta)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def read(path, expected_config: str | None = None):
    with open(path, "rb") as fh:
        return loads(fh.read(), expected_config)
