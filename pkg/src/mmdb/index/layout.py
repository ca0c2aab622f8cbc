"""Fixed-stride encoding of index entries: ``prefix fields | key | suffix fields``.

Entries are ``count u32`` followed by packed little-endian records.  When the
primary key is int64 (length-prefixed, 10 bytes) every entry has the same
width and the block is read with a single structured ``numpy`` view; string
keys fall back to a per-entry loop.  A field whose dtype is ``"str"`` is a
u16-length-prefixed UTF-8 string (loop path only).
"""

from __future__ import annotations

import struct

import numpy as np

from mmdb.codec import KeyCodec

_U16 = struct.Struct("<H")


class EntryLayout:
    def __init__(self, prefix: list[tuple], suffix: list[tuple], keys: KeyCodec | None):
        self.prefix = prefix
        self.suffix = suffix
        self.keys = keys
        fields = list(prefix)
        self._fixed = all(f[1] != "str" for f in prefix + suffix)
        if keys is not None:
            if keys.kind == "int64":
                fields += [("_klen", "<u2"), ("key", "<i8")]
            else:
                self._fixed = False
        fields += list(suffix)
        self.dtype = np.dtype(fields) if self._fixed else None

    @property
    def vectorized(self) -> bool:
        return self._fixed

    def encode(self, columns: dict, count: int) -> bytes:
        head = struct.pack("<I", count)
        if count == 0:
            return head
        if self._fixed:
            arr = np.zeros(count, dtype=self.dtype)
            for name, *_ in self.prefix + self.suffix:
                arr[name] = columns[name]
            if self.keys is not None:
                arr["_klen"] = 8
                arr["key"] = columns["key"]
            return head + arr.tobytes()
        parts = [head]
        for i in range(count):
            for f in self.prefix:
                parts.append(_pack_field(f, columns[f[0]][i]))
            if self.keys is not None:
                parts.append(self.keys.encode(columns["key"][i]))
            for f in self.suffix:
                parts.append(_pack_field(f, columns[f[0]][i]))
        return b"".join(parts)

    def decode(self, payload: bytes, offset: int = 0) -> tuple[dict, int]:
        """Returns ``(columns, end_offset)``; key column is an array or list."""
        (count,) = struct.unpack_from("<I", payload, offset)
        pos = offset + 4
        if self._fixed:
            arr = np.frombuffer(payload, dtype=self.dtype, count=count, offset=pos)
            out = {name: arr[name] for name, *_ in self.prefix + self.suffix}
            if self.keys is not None:
                out["key"] = arr["key"]
            return out, pos + count * self.dtype.itemsize
        cols: dict = {f[0]: [] for f in self.prefix + self.suffix}
        keys = []
        for _ in range(count):
            for f in self.prefix:
                v, pos = _unpack_field(f, payload, pos)
                cols[f[0]].append(v)
            if self.keys is not None:
                k, pos = self.keys.decode_from(payload, pos)
                keys.append(k)
            for f in self.suffix:
                v, pos = _unpack_field(f, payload, pos)
                cols[f[0]].append(v)
        out = {}
        for f in self.prefix + self.suffix:
            if f[1] == "str":
                out[f[0]] = cols[f[0]]
            elif len(f) > 2:
                out[f[0]] = np.array(cols[f[0]], dtype=f[1]).reshape((count,) + tuple(f[2]))
            else:
                out[f[0]] = np.array(cols[f[0]], dtype=f[1])
        if self.keys is not None:
            out["key"] = keys
        return out, pos


def _pack_field(f, v) -> bytes:
    name, dt = f[0], f[1]
    if dt == "str":
        raw = v.encode("utf-8")
        return _U16.pack(len(raw)) + raw
    if len(f) > 2:
        return np.ascontiguousarray(v, dtype=dt).tobytes()
    return np.array(v, dtype=dt).tobytes()


def _unpack_field(f, buf, pos):
    dt = f[1]
    if dt == "str":
        (n,) = _U16.unpack_from(buf, pos)
        return bytes(buf[pos + 2 : pos + 2 + n]).decode("utf-8"), pos + 2 + n
    d = np.dtype(dt)
    if len(f) > 2:
        n = int(np.prod(f[2]))
        v = np.frombuffer(buf, dtype=d, count=n, offset=pos).copy()
        return v, pos + n * d.itemsize
    return np.frombuffer(buf, dtype=d, count=1, offset=pos)[0].item(), pos + d.itemsize


HANDLE_FIELDS = [("off", "<u8"), ("len", "<u4")]


def chunk_ranges(n: int, per_chunk: int):
    per_chunk = max(1, per_chunk)
    for start in range(0, n, per_chunk):
        yield start, min(n, start + per_chunk)
