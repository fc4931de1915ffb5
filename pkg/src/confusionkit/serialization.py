"""Framed little-endian binary formats with offset-aware error reporting.

Every persistent artifact starts with an 8-byte magic and a u32 version.
Readers never index past the buffer: all failures surface as FormatError
with the byte offset where parsing stopped.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError

WORLD_MAGIC = b"CAPTWRLD"
BANK_MAGIC = b"CAPTBANK"
CHECKPOINT_MAGIC = b"CAPTCKPT"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


class ByteWriter:
    def __init__(self):
        self._chunks: list[bytes] = []

    def raw(self, data: bytes) -> None:
        self._chunks.append(data)

    def u32(self, value: int) -> None:
        self.raw(struct.pack("<I", value))

    def u64(self, value: int) -> None:
        self.raw(struct.pack("<Q", value))

    def i64(self, value: int) -> None:
        self.raw(struct.pack("<q", value))

    def f64(self, value: float) -> None:
        self.raw(struct.pack("<d", value))

    def block(self, data: bytes) -> None:
        self.u64(len(data))
        self.raw(data)

    def text(self, value: str) -> None:
        self.block(value.encode("utf-8"))

    def array_f64(self, array: np.ndarray) -> None:
        array = np.ascontiguousarray(array, dtype="<f8")
        self.u32(array.ndim)
        for dim in array.shape:
            self.u64(dim)
        self.raw(array.tobytes())

    def array_i64(self, array: np.ndarray) -> None:
        array = np.ascontiguousarray(array, dtype="<i8")
        self.u32(array.ndim)
        for dim in array.shape:
            self.u64(dim)
        self.raw(array.tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self._chunks)


class ByteReader:
    def __init__(self, data: bytes, path: str | None = None):
        self._data = data
        self._pos = 0
        self._path = path

    @property
    def offset(self) -> int:
        return self._pos

    def fail(self, message: str) -> FormatError:
        return FormatError(message, offset=self._pos, path=self._path)

    def take(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise self.fail(f"truncated file: needed {n} more bytes")
        out = self._data[self._pos:self._pos + n]
        self._pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def block(self) -> bytes:
        length = self.u64()
        if length > len(self._data):
            raise self.fail(f"block length {length} exceeds file size")
        return self.take(length)

    def text(self) -> str:
        raw = self.block()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise self.fail(f"invalid utf-8 text block: {exc}") from exc

    def _array(self, dtype: str, itemsize: int) -> np.ndarray:
        ndim = self.u32()
        if ndim > 8:
            raise self.fail(f"implausible array rank {ndim}")
        shape = tuple(self.u64() for _ in range(ndim))
        count = 1
        for dim in shape:
            if dim > len(self._data):
                raise self.fail(f"implausible dimension {dim}")
            count *= dim
        raw = self.take(count * itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()

    def array_f64(self) -> np.ndarray:
        return self._array("<f8", 8)

    def array_i64(self) -> np.ndarray:
        return self._array("<i8", 8)

    def expect_magic(self, magic: bytes) -> None:
        got = self.take(len(magic))
        if got != magic:
            raise FormatError(
                f"bad magic: expected {magic!r}, found {got!r}",
                offset=0,
                path=self._path,
            )

    def expect_version(self, supported: int) -> int:
        version = self.u32()
        if version != supported:
            raise self.fail(f"unsupported format version {version} (supported: {supported})")
        return version

    def expect_end(self) -> None:
        if self._pos != len(self._data):
            raise self.fail(f"{len(self._data) - self._pos} trailing bytes after payload")

    def json_block(self):
        raw = self.text()
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise self.fail(f"invalid embedded JSON: {exc}") from exc
