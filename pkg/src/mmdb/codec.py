"""Binary encodings: checksums, primary keys, attribute values and data blocks.

All integers are little-endian.  Keys are written length-prefixed (u16 length,
then bytes); int64 keys encode as 8 signed bytes, string keys as UTF-8.
"""

from __future__ import annotations

import struct

import crc32c as _crc32c
import numpy as np

from mmdb.errors import CorruptionError, SchemaError
from mmdb.types import Column, Point, Polygon, Rect, Record, TableSchema

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")
_F64X2 = struct.Struct("<dd")
_F64X4 = struct.Struct("<dddd")
_ENTRY_HDR = struct.Struct("<QBI")  # seqno, flags, payload length

FLAG_TOMBSTONE = 1


def crc32c(data: bytes) -> int:
    return _crc32c.crc32c(data)


def seal(payload: bytes) -> bytes:
    """Append the CRC32C trailer to a block payload."""
    return payload + _U32.pack(crc32c(payload))


def unseal(block: bytes) -> bytes:
    """Verify and strip the CRC32C trailer."""
    if len(block) < 4:
        raise CorruptionError("block shorter than its checksum")
    payload = block[:-4]
    (stored,) = _U32.unpack_from(block, len(block) - 4)
    if crc32c(payload) != stored:
        raise CorruptionError("block checksum mismatch")
    return payload


class KeyCodec:
    """Length-prefixed primary key encoding for one primary-key kind."""

    def __init__(self, kind: str):
        if kind not in ("int64", "string"):
            raise SchemaError(f"unsupported key kind {kind}")
        self.kind = kind

    def encode(self, key) -> bytes:
        if self.kind == "int64":
            return b"\x08\x00" + _I64.pack(key)
        raw = key.encode("utf-8")
        return _U16.pack(len(raw)) + raw

    def decode_from(self, buf, offset: int):
        (n,) = _U16.unpack_from(buf, offset)
        start = offset + 2
        if self.kind == "int64":
            return _I64.unpack_from(buf, start)[0], start + 8
        return bytes(buf[start : start + n]).decode("utf-8"), start + n

    def decode_raw(self, raw: bytes):
        if self.kind == "int64":
            return _I64.unpack(raw)[0]
        return raw.decode("utf-8")

    @property
    def fixed_width(self) -> int | None:
        """Encoded width when every key has the same length."""
        return 10 if self.kind == "int64" else None

    def numpy_dtype(self):
        return np.dtype("<i8") if self.kind == "int64" else None


class RecordCodec:
    """Encodes the non-key attributes of a record for a given schema."""

    def __init__(self, schema: TableSchema):
        self.schema = schema
        self.keys = KeyCodec(schema.pk_kind)
        self.columns: list[Column] = [c for c in schema.columns if c.name != schema.primary_key]
        self._nbitmap = (len(self.columns) + 7) // 8
        self._vec_bytes = {c.name: 4 * c.dim for c in self.columns if c.kind == "vector"}

    def encode_attrs(self, attrs: dict) -> bytes:
        bitmap = bytearray(self._nbitmap)
        parts = [b""]
        for i, col in enumerate(self.columns):
            v = attrs.get(col.name)
            if v is None:
                continue
            bitmap[i >> 3] |= 1 << (i & 7)
            kind = col.kind
            if kind in ("int64", "timestamp"):
                parts.append(_I64.pack(v))
            elif kind == "float64":
                parts.append(_F64.pack(v))
            elif kind in ("string", "text"):
                raw = v.encode("utf-8")
                parts.append(_U32.pack(len(raw)))
                parts.append(raw)
            elif kind == "blob":
                parts.append(_U32.pack(len(v)))
                parts.append(v)
            elif kind == "vector":
                parts.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
            elif kind == "geometry":
                parts.append(encode_geometry(v))
        parts[0] = bytes(bitmap)
        return b"".join(parts)

    def decode_attrs(self, buf, offset: int, end: int) -> dict:
        nb = self._nbitmap
        bitmap = buf[offset : offset + nb]
        pos = offset + nb
        out = {}
        for i, col in enumerate(self.columns):
            if not bitmap[i >> 3] & (1 << (i & 7)):
                out[col.name] = None
                continue
            kind = col.kind
            if kind in ("int64", "timestamp"):
                out[col.name] = _I64.unpack_from(buf, pos)[0]
                pos += 8
            elif kind == "float64":
                out[col.name] = _F64.unpack_from(buf, pos)[0]
                pos += 8
            elif kind in ("string", "text"):
                (n,) = _U32.unpack_from(buf, pos)
                pos += 4
                out[col.name] = bytes(buf[pos : pos + n]).decode("utf-8")
                pos += n
            elif kind == "blob":
                (n,) = _U32.unpack_from(buf, pos)
                pos += 4
                out[col.name] = bytes(buf[pos : pos + n])
                pos += n
            elif kind == "vector":
                nbytes = self._vec_bytes[col.name]
                out[col.name] = np.frombuffer(buf, dtype="<f4", count=nbytes // 4, offset=pos).copy()
                pos += nbytes
            elif kind == "geometry":
                out[col.name], pos = decode_geometry(buf, pos)
        if pos != end:
            raise CorruptionError("record payload length mismatch")
        return out

    def encoded_size(self, record: Record) -> int:
        return len(self.keys.encode(record.key)) + _ENTRY_HDR.size + len(self.encode_attrs(record.attrs))

    # -- data blocks -------------------------------------------------------

    def encode_entry(self, record: Record) -> bytes:
        payload = b"" if record.tombstone else self.encode_attrs(record.attrs)
        flags = FLAG_TOMBSTONE if record.tombstone else 0
        return self.keys.encode(record.key) + _ENTRY_HDR.pack(record.seqno, flags, len(payload)) + payload

    def decode_block(self, payload: bytes) -> list[Record]:
        (count,) = _U32.unpack_from(payload, 0)
        pos = 4
        pk = self.schema.primary_key
        out = []
        for _ in range(count):
            key, pos = self.keys.decode_from(payload, pos)
            seqno, flags, n = _ENTRY_HDR.unpack_from(payload, pos)
            pos += _ENTRY_HDR.size
            if flags & FLAG_TOMBSTONE:
                out.append(Record(key, {}, seqno, True))
            else:
                attrs = self.decode_attrs(payload, pos, pos + n)
                attrs[pk] = key
                out.append(Record(key, attrs, seqno, False))
            pos += n
        if pos != len(payload):
            raise CorruptionError("data block length mismatch")
        return out


def encode_geometry(g) -> bytes:
    if isinstance(g, Point):
        return b"\x00" + _F64X2.pack(g.x, g.y)
    if isinstance(g, Rect):
        return b"\x01" + _F64X4.pack(*g)
    if isinstance(g, Polygon):
        flat = [c for v in g.vertices for c in v]
        return b"\x02" + _U32.pack(len(g.vertices)) + struct.pack(f"<{len(flat)}d", *flat)
    raise SchemaError(f"cannot encode geometry {g!r}")


def decode_geometry(buf, pos: int):
    tag = buf[pos]
    pos += 1
    if tag == 0:
        return Point(*_F64X2.unpack_from(buf, pos)), pos + 16
    if tag == 1:
        return Rect(*_F64X4.unpack_from(buf, pos)), pos + 32
    if tag == 2:
        (n,) = _U32.unpack_from(buf, pos)
        pos += 4
        flat = struct.unpack_from(f"<{2 * n}d", buf, pos)
        verts = tuple((flat[2 * i], flat[2 * i + 1]) for i in range(n))
        return Polygon(verts), pos + 16 * n
    raise CorruptionError(f"unknown geometry tag {tag}")


def pack_u32(v: int) -> bytes:
    return _U32.pack(v)


def pack_handle(offset: int, length: int) -> bytes:
    return _HANDLE.pack(offset, length)


_HANDLE = struct.Struct("<QI")
HANDLE_SIZE = _HANDLE.size


def unpack_handle(buf, pos: int) -> tuple[int, int]:
    return _HANDLE.unpack_from(buf, pos)
