"""Bloom filter with Kirsch-Mitzenmacher double hashing over BLAKE2b."""

from __future__ import annotations

import hashlib
import math
import struct

import numpy as np


class BloomFilter:
    def __init__(self, n_bits: int, n_hashes: int, bits: np.ndarray | None = None):
        self.n_bits = max(8, int(n_bits))
        self.n_hashes = max(1, int(n_hashes))
        nbytes = (self.n_bits + 7) // 8
        self.bits = bits if bits is not None else np.zeros(nbytes, dtype=np.uint8)

    @classmethod
    def for_capacity(cls, n_items: int, fpr: float = 0.01) -> "BloomFilter":
        n = max(1, n_items)
        m = math.ceil(-n * math.log(fpr) / (math.log(2) ** 2))
        k = max(1, round(m / n * math.log(2)))
        return cls(m, k)

    def _positions(self, item: str):
        d = hashlib.blake2b(item.encode("utf-8"), digest_size=16).digest()
        h1, h2 = struct.unpack("<QQ", d)
        h2 |= 1
        return [(h1 + i * h2) % self.n_bits for i in range(self.n_hashes)]

    def add(self, item: str):
        for p in self._positions(item):
            self.bits[p >> 3] |= np.uint8(1 << (p & 7))

    def __contains__(self, item: str) -> bool:
        return all(self.bits[p >> 3] & (1 << (p & 7)) for p in self._positions(item))

    def to_bytes(self) -> bytes:
        return struct.pack("<IB", self.n_bits, self.n_hashes) + self.bits.tobytes()

    @classmethod
    def from_bytes(cls, buf, pos: int = 0) -> tuple["BloomFilter", int]:
        n_bits, k = struct.unpack_from("<IB", buf, pos)
        pos += 5
        nbytes = (n_bits + 7) // 8
        bits = np.frombuffer(buf, dtype=np.uint8, count=nbytes, offset=pos).copy()
        return cls(n_bits, k, bits), pos + nbytes
