"""Selene-style trackers with risk-limiting verification.

Each voter holds a trapdoor ``x`` with public ``h = g**x``.  The tracker
commitment publishes ``beta = g**tracker * h**r`` and withholds
``alpha = g**r``; ``beta / alpha**x`` recovers ``g**tracker``.  With the
trapdoor the voter can solve for an ``alpha'`` opening ``beta`` to any other
tracker.  Valid trackers live in a small decimal range (six digits by
default), so an arbitrary ``alpha`` opens to a valid tracker only with
probability about ``space.size / q``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Mapping, Sequence

from rlt import beacon
from rlt.beacon import KeyedStream, subseed
from rlt.crypto.group import Ciphertext, GroupParams, bsgs_log, decrypt, encrypt, power
from rlt.crypto.protocol import mix, pet

VOTES_THEN_TRACKERS = "votes_then_trackers"
TRACKERS_FIRST = "trackers_first"
POLICIES = (VOTES_THEN_TRACKERS, TRACKERS_FIRST)


class PolicyViolation(RuntimeError):
    pass


class PhaseError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrackerSpace:
    lo: int = 100_000
    hi: int = 1_000_000

    def __post_init__(self):
        if not 0 <= self.lo < self.hi:
            raise ValueError("tracker space must be a non-empty range of non-negative integers")

    @property
    def size(self) -> int:
        return self.hi - self.lo

    def __contains__(self, t) -> bool:
        return isinstance(t, int) and self.lo <= t < self.hi

    def collision_ratio(self, voters: int) -> float:
        """Chance that a uniformly faked tracker equals some assigned one."""
        return voters / self.size


SIX_DIGITS = TrackerSpace()


def assign_trackers(voters: Sequence, seed: bytes, space: TrackerSpace = SIX_DIGITS) -> dict:
    """Distinct trackers: the first ``len(voters)`` entries of the beacon permutation of the space."""
    if len(voters) > space.size:
        raise ValueError(f"{len(voters)} voters but only {space.size} trackers")
    if not voters:
        return {}
    perm = beacon.permutation_prefix(subseed(seed, "trackers"), space.size)
    return {v: space.lo + next(perm) for v in voters}


def assign_trackers_via_mix(group: GroupParams, h: int, x: int, voters: Sequence, seed: bytes,
                            space: TrackerSpace = SIX_DIGITS) -> dict:
    """Protocol-faithful assignment: encrypt the chosen trackers, mix, hand out in mixed order."""
    chosen = sorted(assign_trackers(voters, seed, space).values())
    rng = KeyedStream(subseed(seed, "tracker-encryption"))
    cts = [encrypt(group, h, group.exp(t), rng.randrange(1, group.q)) for t in chosen]
    mixed = mix(group, h, cts, subseed(seed, "tracker-mix"))
    return {v: bsgs_log(group, decrypt(group, x, c), space.lo, space.hi) for v, c in zip(voters, mixed)}


@dataclass(frozen=True)
class TrackerCommitment:
    voter_id: str
    voter_h: int
    beta: int
    alpha: int = field(repr=False)

    def published(self) -> dict:
        return {"voter_pseudo_id": self.voter_id, "h_hex": format(self.voter_h, "x"), "beta_hex": format(self.beta, "x")}


def commit(group: GroupParams, tracker: int, x: int, r: int, voter_id: str = "",
           space: TrackerSpace = SIX_DIGITS) -> TrackerCommitment:
    if tracker not in space:
        raise ValueError(f"tracker {tracker} outside the tracker space")
    if not 1 <= r < group.q:
        raise ValueError("randomness must lie in 1..q-1")
    h = group.exp(x)
    return TrackerCommitment(voter_id, h, group.exp(tracker) * pow(h, r, group.p) % group.p, group.exp(r))


def open_commitment(group: GroupParams, commitment: TrackerCommitment, alpha: int, x: int,
                    space: TrackerSpace = SIX_DIGITS) -> int | None:
    """Tracker that ``alpha`` opens the commitment to, or None if outside the space."""
    if not group.contains(alpha):
        raise ValueError("alpha is not a group element")
    g_t = commitment.beta * pow(alpha, group.q - x % group.q, group.p) % group.p
    return bsgs_log(group, g_t, space.lo, space.hi)


def fake_alpha(group: GroupParams, commitment: TrackerCommitment, x: int, tracker: int,
               space: TrackerSpace = SIX_DIGITS) -> int:
    """Alpha opening the commitment to ``tracker``.  Needs the voter's trapdoor ``x``."""
    if tracker not in space:
        raise ValueError(f"tracker {tracker} outside the tracker space")
    base = commitment.beta * pow(group.g, group.q - tracker % group.q, group.p) % group.p
    return pow(base, pow(x, -1, group.q), group.p)


# -- distinctness ------------------------------------------------------------

@dataclass(frozen=True)
class DistinctnessResult:
    collisions: tuple = ()  # tuple of index tuples sharing a tracker

    @property
    def all_distinct(self) -> bool:
        return not self.collisions

    def to_json(self) -> dict:
        return {"all_distinct": self.all_distinct, "collisions": [list(c) for c in self.collisions]}


def distinctness_check(group: GroupParams, encrypted: Sequence[Ciphertext], s: int, x: int) -> DistinctnessResult:
    """Raise every ciphertext to one secret ``s`` and decrypt; equal blinded values mean equal trackers."""
    if not 1 <= s < group.q:
        raise ValueError("exponent must lie in 1..q-1")
    seen: dict[int, list[int]] = {}
    for i, c in enumerate(encrypted):
        seen.setdefault(decrypt(group, x, power(group, c, s)), []).append(i)
    return DistinctnessResult(tuple(tuple(v) for v in seen.values() if len(v) > 1))


def pairwise_distinctness(group: GroupParams, encrypted: Sequence[Ciphertext], x: int,
                          rng: KeyedStream) -> tuple[DistinctnessResult, int]:
    """Quadratic variant: one PET per pair.  Returns the verdict and the PET count."""
    parent = list(range(len(encrypted)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    n_pets = 0
    for i, j in combinations(range(len(encrypted)), 2):
        n_pets += 1
        if pet(group, encrypted[i], encrypted[j], x, rng.randrange(1, group.q)).verdict == "equal":
            parent[find(j)] = find(i)
    groups: dict[int, list[int]] = {}
    for i in range(len(encrypted)):
        groups.setdefault(find(i), []).append(i)
    return DistinctnessResult(tuple(tuple(v) for v in groups.values() if len(v) > 1)), n_pets


# -- publication -------------------------------------------------------------

@dataclass
class TrackerPublication:
    policy: str
    published: list = field(default_factory=list)  # {"position", "tracker", "vote"}
    population: int = 0
    aborted: bool = False
    collision: tuple = ()

    @property
    def shrouded(self) -> int:
        return self.population - len({p["position"] for p in self.published})

    @property
    def shrouded_fraction(self) -> float:
        return self.shrouded / self.population if self.population else 0.0


class TrackerColumn:
    """Encrypted trackers by mixed position; decrypts only positions the policy allows."""

    def __init__(self, group: GroupParams, x: int, encrypted: Sequence[Ciphertext],
                 space: TrackerSpace = SIX_DIGITS):
        self.group, self._x, self.encrypted, self.space = group, x, list(encrypted), space
        self.allowed: set[int] = set()

    def allow(self, positions: Iterable[int]) -> None:
        self.allowed.update(positions)

    def tracker_at(self, position: int) -> int | None:
        if position not in self.allowed:
            raise PolicyViolation(f"tracker requested for shrouded ballot at position {position}")
        m = decrypt(self.group, self._x, self.encrypted[position])
        return bsgs_log(self.group, m, self.space.lo, self.space.hi)


def reveal_trackers(column: TrackerColumn, policy: str, *, revealed: Sequence[int] = (),
                    votes: Mapping[int, object] | None = None, sampled: Sequence[int] = (),
                    post: Callable[[dict], int] | None = None) -> TrackerPublication:
    """Publish trackers according to ``policy``.

    ``votes_then_trackers``: trackers for the revealed positions only, paired
    with their votes, in reveal order.  ``trackers_first``: trackers for the
    ``sampled`` positions before any vote is opened; a duplicate aborts.
    ``post`` appends a record to the board and returns its entry index.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown reveal policy {policy!r}")
    pub = TrackerPublication(policy, population=len(column.encrypted))
    positions = list(dict.fromkeys(revealed if policy == VOTES_THEN_TRACKERS else sampled))
    column.allow(positions)
    seen: dict[int, int] = {}
    for pos in positions:
        t = column.tracker_at(pos)
        rec = {"position": pos, "tracker": t, "vote": None if votes is None else votes.get(pos)}
        rec["board_index"] = post(rec) if post else None
        pub.published.append(rec)
        if t in seen:
            pub.collision = (seen[t], pos)
            if policy == TRACKERS_FIRST:
                pub.aborted = True
                break
        seen[t] = pos
    return pub


# -- notification ------------------------------------------------------------

@dataclass(frozen=True)
class Delivery:
    voter_id: str
    alpha: int
    phase: str


class NotificationAuthority:
    """Trusted party that delivers alpha terms and hands out unassigned trackers on request."""

    def __init__(self, commitments: Mapping[str, TrackerCommitment], assignment: Mapping[str, int],
                 seed: bytes, space: TrackerSpace = SIX_DIGITS):
        self.commitments = dict(commitments)
        self.space = space
        self._assigned = set(assignment.values())
        self._given: set[int] = set()
        self._rng = KeyedStream(subseed(seed, "notification-authority"))
        self.phase = "voting"
        self.deliveries: list[Delivery] = []

    def close_tally(self) -> None:
        self.phase = "tally_published"

    def notify_all(self) -> list[Delivery]:
        if self.phase != "tally_published":
            raise PhaseError("voters are notified only after the tally is published")
        for vid, c in self.commitments.items():
            self.deliveries.append(Delivery(vid, c.alpha, self.phase))
        return self.deliveries

    def unassigned_tracker(self, voter_id: str) -> int:
        """A valid tracker nobody holds, for a coerced voter to claim."""
        if voter_id not in self.commitments:
            raise KeyError(voter_id)
        if len(self._assigned) + len(self._given) >= self.space.size:
            raise RuntimeError("no unassigned trackers left")
        while True:
            t = self.space.lo + self._rng.randbelow(self.space.size)
            if t not in self._assigned and t not in self._given:
                self._given.add(t)
                return t
