"""Commit-reveal randomness beacon and the reveal order derived from it.

Byte-level conventions, so that anyone can recompute the order:

* commitment = SHA-256(opening)
* seed = SHA-256 over contributions sorted by contributor id, each encoded
  as ``len(id) || id || len(opening) || opening`` with 4-byte big-endian
  lengths and UTF-8 ids
* keyed stream: block ``i`` is SHA-256(seed || i as 8-byte big-endian),
  bytes consumed in order starting at block 0
* ``randbelow(n)``: read ``ceil(b / 8)`` bytes big-endian where
  ``b = (n - 1).bit_length()``, keep the low ``b`` bits, retry if ``>= n``;
  ``n == 1`` consumes nothing
* permutation: forward Fisher-Yates, ``for i in 0..N-2: swap(i, i + randbelow(N - i))``
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from typing import Iterator, Sequence

SEED_ENV = "RLT_BEACON_SEED"


class BeaconError(ValueError):
    pass


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class BeaconContribution:
    contributor_id: str
    commitment: bytes
    opening: bytes = b""

    def verifies(self) -> bool:
        return digest(self.opening) == self.commitment

    @classmethod
    def from_opening(cls, contributor_id: str, opening: bytes) -> "BeaconContribution":
        return cls(contributor_id, digest(opening), opening)

    def to_json(self) -> dict:
        return {
            "contributor_id": self.contributor_id,
            "commitment_hex": self.commitment.hex(),
            "opening_hex": self.opening.hex(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "BeaconContribution":
        return cls(d["contributor_id"], bytes.fromhex(d["commitment_hex"]), bytes.fromhex(d.get("opening_hex", "")))


def load_contributions(path) -> list[BeaconContribution]:
    with open(path) as fh:
        return [BeaconContribution.from_json(d) for d in json.load(fh)]


def derive_seed(contributions: Sequence[BeaconContribution]) -> bytes:
    if not contributions:
        raise BeaconError("no beacon contributions")
    ids = [c.contributor_id for c in contributions]
    if len(set(ids)) != len(ids):
        raise BeaconError("duplicate contributor id")
    h = hashlib.sha256()
    for c in sorted(contributions, key=lambda c: c.contributor_id):
        if not c.verifies():
            raise BeaconError(f"opening from contributor {c.contributor_id!r} does not match its commitment")
        cid = c.contributor_id.encode()
        h.update(struct.pack(">I", len(cid)) + cid + struct.pack(">I", len(c.opening)) + c.opening)
    return h.digest()


def seed_override() -> bytes | None:
    """Seed from the ``RLT_BEACON_SEED`` environment variable (hex), if set."""
    raw = os.environ.get(SEED_ENV)
    if not raw:
        return None
    try:
        seed = bytes.fromhex(raw)
    except ValueError:
        seed = b""
    if len(seed) != 32:
        raise BeaconError(f"{SEED_ENV} must be 32 bytes of hex")
    return seed


class KeyedStream:
    """SHA-256 counter-mode byte stream; single consumer."""

    def __init__(self, seed: bytes):
        self.seed = bytes(seed)
        self.counter = 0
        self._buf = b""

    def read(self, n: int) -> bytes:
        while len(self._buf) < n:
            self._buf += digest(self.seed + self.counter.to_bytes(8, "big"))
            self.counter += 1
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def randbelow(self, n: int) -> int:
        if n < 1:
            raise ValueError("randbelow needs n >= 1")
        if n == 1:
            return 0
        bits = (n - 1).bit_length()
        nbytes = (bits + 7) // 8
        mask = (1 << bits) - 1
        while True:
            v = int.from_bytes(self.read(nbytes), "big") & mask
            if v < n:
                return v

    def randrange(self, lo: int, hi: int) -> int:
        return lo + self.randbelow(hi - lo)


def subseed(seed: bytes, label: str) -> bytes:
    """Domain-separated child seed."""
    return digest(seed + b"/" + label.encode())


def permutation_prefix(seed: bytes, N: int) -> Iterator[int]:
    """Lazily yield the Fisher-Yates permutation of 0..N-1; any prefix equals the full permutation's prefix."""
    if N < 1:
        raise ValueError("permutation needs N >= 1")
    stream = KeyedStream(seed)
    swapped: dict[int, int] = {}
    for i in range(N - 1):
        j = i + stream.randbelow(N - i)
        vi, vj = swapped.get(i, i), swapped.get(j, j)
        swapped[j] = vi
        swapped.pop(i, None)
        yield vj
    yield swapped.get(N - 1, N - 1)


def permutation(seed: bytes, N: int) -> list[int]:
    return list(permutation_prefix(seed, N))


def with_replacement_stream(seed: bytes, N: int) -> Iterator[int]:
    if N < 1:
        raise ValueError("index stream needs N >= 1")
    stream = KeyedStream(seed)
    while True:
        yield stream.randbelow(N)


@dataclass(frozen=True)
class SamplingPlan:
    seed: bytes
    population: int
    with_replacement: bool = False

    def order(self) -> Iterator[int]:
        if self.with_replacement:
            return with_replacement_stream(self.seed, self.population)
        return permutation_prefix(self.seed, self.population)

    def to_json(self) -> dict:
        return {"seed": self.seed.hex(), "population": self.population, "with_replacement": self.with_replacement}
