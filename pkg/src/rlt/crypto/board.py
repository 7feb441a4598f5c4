"""Append-only bulletin board with a SHA-256 hash chain.

Each entry's payload is canonical JSON (sorted keys, no whitespace) that
also carries the entry's index and pseudo id, and
``entry_digest = SHA-256(prev_digest || payload)`` with a zero genesis.
Persistence is JSON lines with hex digests.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

GENESIS = bytes(32)


class BoardIntegrityError(ValueError):
    pass


def canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


@dataclass(frozen=True)
class BoardEntry:
    index: int
    pseudo_id: str
    payload: bytes
    prev_digest: bytes
    entry_digest: bytes

    @property
    def kind(self) -> str:
        return self.content["kind"]

    @property
    def content(self) -> dict:
        return json.loads(self.payload)

    @property
    def data(self):
        return self.content["data"]

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "index": self.index,
                "pseudo_id": self.pseudo_id,
                "payload": self.payload.decode(),
                "prev_digest": self.prev_digest.hex(),
                "entry_digest": self.entry_digest.hex(),
            },
            sort_keys=True,
            separators=(",", ":"),
        )


class BulletinBoard:
    def __init__(self):
        self.entries: list[BoardEntry] = []

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def head(self) -> bytes:
        return self.entries[-1].entry_digest if self.entries else GENESIS

    def append(self, kind: str, pseudo_id: str, data) -> BoardEntry:
        index = len(self.entries)
        payload = canonical({"index": index, "pseudo_id": pseudo_id, "kind": kind, "data": data})
        prev = self.head
        entry = BoardEntry(index, pseudo_id, payload, prev, hashlib.sha256(prev + payload).digest())
        self.entries.append(entry)
        return entry

    def of_kind(self, kind: str) -> list[BoardEntry]:
        return [e for e in self.entries if e.kind == kind]

    def verify(self) -> None:
        prev = GENESIS
        for i, e in enumerate(self.entries):
            if e.index != i or e.prev_digest != prev:
                raise BoardIntegrityError(f"chain broken at entry {i}")
            if hashlib.sha256(prev + e.payload).digest() != e.entry_digest:
                raise BoardIntegrityError(f"digest mismatch at entry {i}")
            try:
                content = json.loads(e.payload)
            except ValueError as exc:
                raise BoardIntegrityError(f"unreadable payload at entry {i}") from exc
            if content.get("index") != i or content.get("pseudo_id") != e.pseudo_id:
                raise BoardIntegrityError(f"header does not match payload at entry {i}")
            prev = e.entry_digest

    def dumps(self) -> str:
        return "".join(e.to_json_line() + "\n" for e in self.entries)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str, verify: bool = True) -> "BulletinBoard":
        board = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                board.entries.append(
                    BoardEntry(
                        d["index"], d["pseudo_id"], d["payload"].encode(),
                        bytes.fromhex(d["prev_digest"]), bytes.fromhex(d["entry_digest"]),
                    )
                )
            except (ValueError, KeyError, TypeError, AttributeError) as exc:
                raise BoardIntegrityError(f"line {lineno}: malformed board entry ({exc})") from exc
        if verify:
            board.verify()
        return board

    @classmethod
    def load(cls, path, verify: bool = True) -> "BulletinBoard":
        with open(path) as fh:
            return cls.loads(fh.read(), verify)
