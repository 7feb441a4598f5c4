"""Prime-order subgroup of Z_p^* for a safe prime p = 2q + 1, and ElGamal over it."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53)


def is_probable_prime(n: int) -> bool:
    if n < 2:
        return False
    for b in _MR_BASES:
        if n % b == 0:
            return n == b
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for b in _MR_BASES:
        x = pow(b, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class GroupParams:
    p: int
    q: int
    g: int

    def validate(self) -> "GroupParams":
        if self.p != 2 * self.q + 1:
            raise ValueError("p must equal 2q + 1")
        if not (is_probable_prime(self.q) and is_probable_prime(self.p)):
            raise ValueError("p and q must be prime")
        if self.g in (0, 1) or pow(self.g, self.q, self.p) != 1:
            raise ValueError("g must generate the order-q subgroup")
        return self

    def contains(self, m: int) -> bool:
        return 0 < m < self.p and pow(m, self.q, self.p) == 1

    def inv(self, a: int) -> int:
        return pow(a, -1, self.p)

    def exp(self, e: int) -> int:
        return pow(self.g, e, self.p)

    def to_json(self) -> dict:
        return {"p": str(self.p), "q": str(self.q), "g": str(self.g)}

    @classmethod
    def from_json(cls, d: dict) -> "GroupParams":
        return cls(int(d["p"]), int(d["q"]), int(d["g"])).validate()

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path) -> "GroupParams":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# 4 = 2**2 is a quadratic residue, so it generates the order-q subgroup.
TOY64 = GroupParams(
    p=13036846008883210607,
    q=6518423004441605303,
    g=4,
)
MODP512 = GroupParams(
    p=int(
        "85262074764890151267381162098953510112428573088617441433882333"
        "02635485840471391662441190896175623995721707068285976812583470"
        "448025122203691126750417178507"
    ),
    q=int(
        "42631037382445075633690581049476755056214286544308720716941166"
        "51317742920235695831220595448087811997860853534142988406291735"
        "224012561101845563375208589253"
    ),
    g=4,
)

GROUPS = {"toy64": TOY64, "modp512": MODP512}


@dataclass(frozen=True)
class Ciphertext:
    alpha: int
    beta: int

    def to_json(self) -> dict:
        return {"alpha": format(self.alpha, "x"), "beta": format(self.beta, "x")}

    @classmethod
    def from_json(cls, d: dict) -> "Ciphertext":
        return cls(int(d["alpha"], 16), int(d["beta"], 16))


def keygen(group: GroupParams, rng) -> tuple[int, int]:
    x = rng.randrange(1, group.q)
    return x, group.exp(x)


def _check_r(group, r):
    if not 1 <= r < group.q:
        raise ValueError("randomness must lie in 1..q-1")


def encrypt(group: GroupParams, h: int, m: int, r: int) -> Ciphertext:
    if not group.contains(m):
        raise ValueError("message is not a subgroup element")
    _check_r(group, r)
    return Ciphertext(group.exp(r), m * pow(h, r, group.p) % group.p)


def decrypt(group: GroupParams, x: int, c: Ciphertext) -> int:
    return c.beta * pow(c.alpha, group.q - x, group.p) % group.p


def reencrypt(group: GroupParams, h: int, c: Ciphertext, r: int) -> Ciphertext:
    _check_r(group, r)
    p = group.p
    return Ciphertext(c.alpha * group.exp(r) % p, c.beta * pow(h, r, p) % p)


def power(group: GroupParams, c: Ciphertext, s: int) -> Ciphertext:
    """Raise both components to ``s`` (Enc(m) -> Enc(m**s))."""
    return Ciphertext(pow(c.alpha, s, group.p), pow(c.beta, s, group.p))


def divide(group: GroupParams, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    p = group.p
    return Ciphertext(c1.alpha * group.inv(c2.alpha) % p, c1.beta * group.inv(c2.beta) % p)


class VoteEncoding:
    """Selections of 1..k candidates mapped to ``g**(index + 1)``; singletons first, so candidate i is g**(i+1)."""

    def __init__(self, group: GroupParams, num_candidates: int, num_winners: int = 1):
        self.group = group
        self.selections: list[frozenset] = []
        for size in range(1, num_winners + 1):
            self.selections.extend(frozenset(s) for s in itertools.combinations(range(num_candidates), size))
        self.element = {s: group.exp(i + 1) for i, s in enumerate(self.selections)}
        self._decode = {e: s for s, e in self.element.items()}

    def encode(self, chosen) -> int:
        """Element for a selection; anything not in the table maps to g**0 (decodes as invalid)."""
        return self.element.get(frozenset(chosen), 1)

    def decode(self, m: int) -> frozenset | None:
        return self._decode.get(m)

    def to_json(self) -> list:
        return [{"selection": sorted(s), "element": format(e, "x")} for s, e in self.element.items()]


BSGS_BABY_STEPS = 1 << 15


def bsgs_log(group: GroupParams, y: int, lo: int, hi: int, _cache={}) -> int | None:
    """Exponent e in [lo, hi) with g**e == y, else None (baby-step giant-step)."""
    width = hi - lo
    if width <= 0:
        return None
    # a wide baby table is built once per group and keeps each lookup to a few dozen giant steps
    m = max(math.isqrt(width - 1) + 1, min(width, BSGS_BABY_STEPS))
    key = (group, m)
    baby = _cache.get(key)
    if baby is None:
        baby, cur = {}, 1
        for j in range(m):
            baby.setdefault(cur, j)
            cur = cur * group.g % group.p
        _cache[key] = baby
    shifts = _cache.get((group, m, lo))
    if shifts is None:
        shifts = _cache[(group, m, lo)] = (pow(group.g, group.q - m, group.p), pow(group.g, group.q - lo, group.p))
    giant, unshift = shifts
    cur = y * unshift % group.p
    for i in range((width - 1) // m + 1):
        j = baby.get(cur)
        if j is not None:
            e = i * m + j
            return lo + e if e < width else None
        cur = cur * giant % group.p
    return None
