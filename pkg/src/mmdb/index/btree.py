"""Per-segment ordered index over a scalar column.

Root block: ``tag u8 | value kind u8 | count u64 | has_range u8 | [min | max] |
n_leaves u32 | leaf*`` where each leaf directory entry is ``first | last |
handle | count u32``.  Leaf blocks hold ``count u32 | (value | key | handle)*``
sorted by ``(value, key)``.
"""

from __future__ import annotations

import bisect
import struct
from dataclasses import dataclass
from typing import Any

import numpy as np

from mmdb.codec import pack_handle, unpack_handle
from mmdb.index.layout import HANDLE_FIELDS, EntryLayout, chunk_ranges
from mmdb.storage.blocks import BlockHandle

TAG = 0
LEAF_TARGET_BYTES = 4096
_VKIND = {"int64": 0, "timestamp": 0, "float64": 1, "string": 2}
_VDTYPE = {0: "<i8", 1: "<f8", 2: "str"}


@dataclass
class BtreeSummary:
    count: int
    min: Any
    max: Any

    def overlaps(self, lo, hi) -> bool:
        if self.count == 0:
            return False
        return not (hi < self.min or lo > self.max)


def _layout(vkind: int, keys) -> EntryLayout:
    return EntryLayout([("value", _VDTYPE[vkind])], HANDLE_FIELDS, keys)


def _pack_value(vkind: int, v) -> bytes:
    if vkind == 0:
        return struct.pack("<q", v)
    if vkind == 1:
        return struct.pack("<d", v)
    raw = v.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _unpack_value(vkind: int, buf, pos):
    if vkind == 0:
        return struct.unpack_from("<q", buf, pos)[0], pos + 8
    if vkind == 1:
        return struct.unpack_from("<d", buf, pos)[0], pos + 8
    (n,) = struct.unpack_from("<H", buf, pos)
    return bytes(buf[pos + 2 : pos + 2 + n]).decode("utf-8"), pos + 2 + n


def build(writer, column_kind: str, keys_codec, rows_keys: list, values: list, handles: list):
    """Write leaf and root blocks; returns ``(root_handle, summary)``."""
    vkind = _VKIND[column_kind]
    items = [(v, k, h) for k, v, h in zip(rows_keys, values, handles) if v is not None]
    items.sort(key=lambda t: (t[0], t[1]))
    layout = _layout(vkind, keys_codec)
    per_entry = (8 if vkind < 2 else 24) + 12 + 12
    leaves = []
    for a, b in chunk_ranges(len(items), LEAF_TARGET_BYTES // per_entry):
        chunk = items[a:b]
        cols = {
            "value": [t[0] for t in chunk],
            "key": [t[1] for t in chunk],
            "off": [t[2].offset for t in chunk],
            "len": [t[2].length for t in chunk],
        }
        h = writer.add_block(layout.encode(cols, len(chunk)))
        leaves.append((chunk[0][0], chunk[-1][0], h, len(chunk)))
    parts = [struct.pack("<BBQ", TAG, vkind, len(items))]
    if items:
        parts.append(b"\x01" + _pack_value(vkind, items[0][0]) + _pack_value(vkind, items[-1][0]))
    else:
        parts.append(b"\x00")
    parts.append(struct.pack("<I", len(leaves)))
    for first, last, h, n in leaves:
        parts.append(_pack_value(vkind, first) + _pack_value(vkind, last) + pack_handle(h.offset, h.length) + struct.pack("<I", n))
    root = writer.add_block(b"".join(parts))
    summary = BtreeSummary(len(items), items[0][0] if items else None, items[-1][0] if items else None)
    return root, summary


@dataclass
class BtreeRoot:
    vkind: int
    count: int
    min: Any
    max: Any
    leaves: list  # (first, last, handle, count)
    firsts: list


def decode_root(payload: bytes, segment_id: int) -> BtreeRoot:
    tag, vkind, count = struct.unpack_from("<BBQ", payload, 0)
    assert tag == TAG
    pos = 10
    has = payload[pos]
    pos += 1
    lo = hi = None
    if has:
        lo, pos = _unpack_value(vkind, payload, pos)
        hi, pos = _unpack_value(vkind, payload, pos)
    (n,) = struct.unpack_from("<I", payload, pos)
    pos += 4
    leaves = []
    for _ in range(n):
        first, pos = _unpack_value(vkind, payload, pos)
        last, pos = _unpack_value(vkind, payload, pos)
        off, ln = unpack_handle(payload, pos)
        pos += 12
        (c,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        leaves.append((first, last, BlockHandle(segment_id, off, ln), c))
    return BtreeRoot(vkind, count, lo, hi, leaves, [l[0] for l in leaves])


def load_summary(segment, root_handle) -> BtreeSummary:
    r = segment.read_decoded(root_handle, "btree_root", lambda p: decode_root(p, segment.segment_id))
    return BtreeSummary(r.count, r.min, r.max)


def range_lookup(segment, root_handle, lo, hi) -> list[tuple[Any, BlockHandle]]:
    """``(key, data handle)`` of rows with ``lo <= value <= hi``."""
    root = segment.read_decoded(root_handle, "btree_root", lambda p: decode_root(p, segment.segment_id))
    if root.count == 0 or hi < root.min or lo > root.max:
        return []
    layout = _layout(root.vkind, segment.codec.keys)
    out = []
    # first leaf whose last value >= lo
    start = max(0, bisect.bisect_left(root.firsts, lo) - 1)
    sid = segment.segment_id
    for first, last, h, _ in root.leaves[start:]:
        if first > hi:
            break
        if last < lo:
            continue
        cols = segment.read_decoded(h, "btree_leaf", lambda p: layout.decode(p)[0])
        vals = cols["value"]
        if isinstance(vals, np.ndarray):
            mask = (vals >= lo) & (vals <= hi)
            idx = np.nonzero(mask)[0]
            keys, offs, lens = cols["key"], cols["off"], cols["len"]
            out.extend(
                (keys[i].item() if hasattr(keys[i], "item") else keys[i], BlockHandle(sid, int(offs[i]), int(lens[i])))
                for i in idx
            )
        else:
            for i, v in enumerate(vals):
                if lo <= v <= hi:
                    out.append((cols["key"][i], BlockHandle(sid, int(cols["off"][i]), int(cols["len"][i]))))
    return out


def leaves_touched(segment, root_handle, lo, hi) -> int:
    root = segment.read_decoded(root_handle, "btree_root", lambda p: decode_root(p, segment.segment_id))
    return sum(1 for first, last, _, _ in root.leaves if not (first > hi or last < lo))
