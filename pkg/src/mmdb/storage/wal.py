"""Write-ahead log: ``"MMDW"`` magic followed by ``len u32 | crc32c u32 | payload`` frames."""

from __future__ import annotations

import os
import struct

from mmdb.codec import RecordCodec, crc32c
from mmdb.errors import CorruptionError
from mmdb.types import Record

WAL_MAGIC = b"MMDW"
_FRAME = struct.Struct("<II")


class WalWriter:
    def __init__(self, path: str, sync_mode: str = "batch"):
        self.path = path
        self.sync_mode = sync_mode
        new = not os.path.exists(path) or os.path.getsize(path) == 0
        self._f = open(path, "ab", buffering=1 << 16)
        if new:
            self._f.write(WAL_MAGIC)
        self.frames = 0

    def append(self, entry: bytes):
        self._f.write(_FRAME.pack(len(entry), crc32c(entry)))
        self._f.write(entry)
        self.frames += 1
        if self.sync_mode == "always":
            self.sync()

    def sync(self):
        """Make every appended frame durable (one fsync per batch)."""
        if self._f.closed:
            return
        self._f.flush()
        if self.sync_mode != "off":
            os.fsync(self._f.fileno())

    def close(self):
        if not self._f.closed:
            self._f.flush()
            self._f.close()


def replay(path: str, codec: RecordCodec) -> list[Record]:
    """Decode every intact frame; a torn final frame is ignored."""
    with open(path, "rb") as f:
        data = f.read()
    if not data:
        return []
    if data[:4] != WAL_MAGIC:
        raise CorruptionError(f"bad WAL magic in {path}")
    pos = 4
    out: list[Record] = []
    while pos + _FRAME.size <= len(data):
        n, crc = _FRAME.unpack_from(data, pos)
        start = pos + _FRAME.size
        if start + n > len(data):
            break  # torn tail
        entry = data[start : start + n]
        if crc32c(entry) != crc:
            if start + n == len(data):
                break
            raise CorruptionError(f"WAL frame checksum mismatch at {pos} in {path}")
        block = struct.pack("<I", 1) + entry
        out.extend(codec.decode_block(block))
        pos = start + n
    return out
