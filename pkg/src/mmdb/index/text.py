"""Per-segment inverted index over a text column.

Root block::

    tag u8 = 3 | N u32 | bloom filter | n_dict u32 |
    (first term | last term | dictionary handle u64,u32)*

Dictionary block: ``count u32 | (term | posting handle u64,u32 | df u32)*``
sorted by term.  Posting block: ``count u32 | (key | handle u64,u32 | tf u32)*``
sorted by key.  Terms are u16-length-prefixed UTF-8.
"""

from __future__ import annotations

import bisect
import functools
import math
import re
import struct
from collections import Counter
from dataclasses import dataclass

import numpy as np

from mmdb.codec import pack_handle, unpack_handle
from mmdb.index.base import Hit, LazySortedIterator
from mmdb.index.bloom import BloomFilter
from mmdb.index.layout import HANDLE_FIELDS, EntryLayout
from mmdb.storage.blocks import BlockHandle

TAG = 3
DICT_TARGET_BYTES = 4096
BLOOM_FPR = 0.005  # half the 1% target, leaving margin for hashing variance
MISSING_DISTANCE = 1.0  # score 0: the distance of any document matching no query term
_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str | None) -> tuple[str, ...]:
    """Lowercase, split on non-alphanumerics, drop tokens shorter than 2."""
    if not text:
        return ()
    return _tokenize(text)


@functools.lru_cache(maxsize=1 << 16)
def _tokenize(text: str) -> tuple[str, ...]:
    # a flush tokenizes each document twice (index build, then column stats); the cache absorbs the second pass
    return tuple(t for t in _TOKEN.findall(text.lower()) if len(t) >= 2)


def normalize_term(term: str) -> str:
    return term.lower()


def idf(n_docs: int, df: int) -> float:
    return math.log(1.0 + n_docs / df)


def score_to_distance(score: float) -> float:
    return 1.0 / (1.0 + score)


@dataclass
class TextSummary:
    n_docs: int
    bloom: BloomFilter
    n_terms: int

    def may_contain(self, term: str) -> bool:
        return self.n_terms > 0 and normalize_term(term) in self.bloom


@dataclass
class TextRoot:
    n_docs: int
    bloom: BloomFilter
    dicts: list  # (first, last, handle)
    firsts: list
    n_terms: int


def _posting_layout(keys) -> EntryLayout:
    return EntryLayout([], HANDLE_FIELDS + [("tf", "<u4")], keys)


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def _unpack_str(buf, pos):
    (n,) = struct.unpack_from("<H", buf, pos)
    return bytes(buf[pos + 2 : pos + 2 + n]).decode("utf-8"), pos + 2 + n


def build(writer, keys_codec, rows_keys: list, texts: list, handles: list):
    order = list(range(len(rows_keys)))
    if any(rows_keys[i] > rows_keys[i + 1] for i in range(len(rows_keys) - 1)):
        order.sort(key=rows_keys.__getitem__)
    # postings hold row positions in key order, so each list is already sorted by key
    postings: dict[str, list] = {}
    freqs: dict[str, list] = {}
    n_docs = 0
    for i in order:
        text = texts[i]
        if text is None:
            continue
        n_docs += 1
        toks = tokenize(text)
        counts = Counter(toks) if len(set(toks)) < len(toks) else dict.fromkeys(toks, 1)
        for term, tf in counts.items():
            plist = postings.get(term)
            if plist is None:
                postings[term] = [i]
                freqs[term] = [tf]
            else:
                plist.append(i)
                freqs[term].append(tf)
    terms = sorted(postings)
    bloom = BloomFilter.for_capacity(len(terms), BLOOM_FPR)
    layout = _posting_layout(keys_codec)
    key_arr = np.asarray(rows_keys) if layout.vectorized else np.asarray(rows_keys, dtype=object)
    off_arr = np.fromiter((h.offset for h in handles), dtype=np.int64, count=len(handles))
    len_arr = np.fromiter((h.length for h in handles), dtype=np.int64, count=len(handles))
    dict_entries = []
    for term in terms:
        idx = np.asarray(postings[term], dtype=np.int64)
        cols = {"key": key_arr[idx], "off": off_arr[idx], "len": len_arr[idx], "tf": freqs[term]}
        ph = writer.add_block(layout.encode(cols, len(idx)))
        dict_entries.append((term, ph, len(idx)))
        bloom.add(term)
    dicts = []
    buf: list[bytes] = []
    first = None
    size = 4
    for i, (term, ph, df) in enumerate(dict_entries):
        enc = _pack_str(term) + pack_handle(ph.offset, ph.length) + struct.pack("<I", df)
        if buf and size + len(enc) > DICT_TARGET_BYTES:
            h = writer.add_block(struct.pack("<I", len(buf)) + b"".join(buf))
            dicts.append((first, dict_entries[i - 1][0], h))
            buf, size, first = [], 4, None
        if first is None:
            first = term
        buf.append(enc)
        size += len(enc)
    if buf:
        h = writer.add_block(struct.pack("<I", len(buf)) + b"".join(buf))
        dicts.append((first, dict_entries[-1][0], h))
    parts = [struct.pack("<BI", TAG, n_docs), bloom.to_bytes(), struct.pack("<II", len(terms), len(dicts))]
    for a, b, h in dicts:
        parts.append(_pack_str(a) + _pack_str(b) + pack_handle(h.offset, h.length))
    root = writer.add_block(b"".join(parts))
    return root, TextSummary(n_docs, bloom, len(terms))


def decode_root(payload: bytes, segment_id: int) -> TextRoot:
    tag, n_docs = struct.unpack_from("<BI", payload, 0)
    assert tag == TAG
    bloom, pos = BloomFilter.from_bytes(payload, 5)
    n_terms, n = struct.unpack_from("<II", payload, pos)
    pos += 8
    dicts = []
    for _ in range(n):
        a, pos = _unpack_str(payload, pos)
        b, pos = _unpack_str(payload, pos)
        off, ln = unpack_handle(payload, pos)
        pos += 12
        dicts.append((a, b, BlockHandle(segment_id, off, ln)))
    return TextRoot(n_docs, bloom, dicts, [d[0] for d in dicts], n_terms)


def read_root(segment, root_handle) -> TextRoot:
    return segment.read_decoded(root_handle, "text_root", lambda p: decode_root(p, segment.segment_id))


def load_summary(segment, root_handle) -> TextSummary:
    r = read_root(segment, root_handle)
    return TextSummary(r.n_docs, r.bloom, r.n_terms)


def _decode_dict(payload: bytes, segment_id: int):
    (n,) = struct.unpack_from("<I", payload, 0)
    pos = 4
    terms, entries = [], []
    for _ in range(n):
        t, pos = _unpack_str(payload, pos)
        off, ln = unpack_handle(payload, pos)
        (df,) = struct.unpack_from("<I", payload, pos + 12)
        pos += 16
        terms.append(t)
        entries.append((BlockHandle(segment_id, off, ln), df))
    return terms, entries


def lookup_term(segment, root: TextRoot, term: str):
    """``(posting handle, df)`` for ``term`` or ``None``; consults the Bloom filter first."""
    if root.n_terms == 0 or term not in root.bloom:
        return None
    i = bisect.bisect_right(root.firsts, term) - 1
    if i < 0 or root.dicts[i][1] < term:
        return None
    terms, entries = segment.read_decoded(root.dicts[i][2], "text_dict",
                                          lambda p: _decode_dict(p, segment.segment_id))
    j = bisect.bisect_left(terms, term)
    if j < len(terms) and terms[j] == term:
        return entries[j]
    return None


def read_posting(segment, handle: BlockHandle) -> dict:
    layout = _posting_layout(segment.codec.keys)
    return segment.read_decoded(handle, "text_posting", lambda p: layout.decode(p)[0])


def _posting_hits(segment, cols, dists=None) -> list[Hit]:
    sid = segment.segment_id
    out = []
    for i, k in enumerate(cols["key"]):
        k = k.item() if hasattr(k, "item") else k
        out.append(Hit(k, 0.0, BlockHandle(sid, int(cols["off"][i]), int(cols["len"][i])), sid))
    return out


def keyword_filter(segment, root_handle, term: str) -> list[Hit]:
    """Rows whose tokenized text contains ``term``."""
    root = read_root(segment, root_handle)
    found = lookup_term(segment, root, normalize_term(term))
    if found is None:
        return []
    return _posting_hits(segment, read_posting(segment, found[0]))


def score_segment(segment, root_handle, terms: list[str]) -> list[Hit]:
    """Matching rows with their tf-idf distance, sorted by ``(distance, key)``."""
    root = read_root(segment, root_handle)
    scores: dict = {}
    handles: dict = {}
    for term in dict.fromkeys(normalize_term(t) for t in terms):
        found = lookup_term(segment, root, term)
        if found is None:
            continue
        ph, df = found
        w = idf(root.n_docs, df)
        cols = read_posting(segment, ph)
        for hit, tf in zip(_posting_hits(segment, cols), cols["tf"]):
            scores[hit.key] = scores.get(hit.key, 0.0) + int(tf) * w
            handles[hit.key] = hit.handle
    sid = segment.segment_id
    hits = [Hit(k, score_to_distance(s), handles[k], sid) for k, s in scores.items()]
    hits.sort(key=lambda h: (h.distance, h.key))
    return hits


def segment_iterator(segment, column: str, root_handle, terms: list[str]) -> LazySortedIterator:
    it = LazySortedIterator(lambda: iter(score_segment(segment, root_handle, terms)),
                            contains=segment.keys.__contains__, missing_distance=MISSING_DISTANCE)
    summary = segment.index_summaries.get(column)
    if summary is not None and not any(summary.may_contain(t) for t in terms):
        it.lower_bound = math.inf
    return it
