"""Simulated E2E-verifiable election: casting, mixing, sampled decryption, PETs.

All parties are honest and proofs of correct shuffling or decryption are
not produced; tests check honesty by decrypting both sides.  Every random
choice is drawn from a :class:`~rlt.beacon.KeyedStream` so that the
ballots, keys and seeds fully determine every board entry.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

from rlt import beacon
from rlt.beacon import BeaconContribution, KeyedStream, SamplingPlan, subseed
from rlt.crypto.board import BulletinBoard
from rlt.crypto.group import (
    Ciphertext,
    GroupParams,
    VoteEncoding,
    decrypt,
    divide,
    encrypt,
    keygen,
    power,
    reencrypt,
)
from rlt.tally import (
    INVALID,
    TIE_SUSPECTED,
    BallotInterpretation,
    ContestSpec,
    Decision,
    HypothesisBattery,
    RltTranscript,
    _finish,
    continue_pair,
    pair_decided,
    pets_exhausted,
    resolve_after_pets,
)

EQUAL, UNEQUAL = "equal", "unequal"


class ProtocolError(RuntimeError):
    pass


class CorruptedBoardError(ProtocolError):
    pass


def _rows(entries):
    return [e if isinstance(e, tuple) else (e,) for e in entries]


def mix(group: GroupParams, h: int, entries: Sequence, seed: bytes) -> list:
    """Permute and re-encrypt; output[i] is a re-encryption of entries[perm[i]].

    Entries may be single ciphertexts or tuples travelling together (vote and
    tracker).  The output has the same shape as the input.
    """
    rows = _rows(entries)
    if not rows:
        return []
    perm = beacon.permutation(subseed(seed, "mix-permutation"), len(rows))
    rng = KeyedStream(subseed(seed, "mix-reencryption"))
    out = [tuple(reencrypt(group, h, c, rng.randrange(1, group.q)) for c in rows[i]) for i in perm]
    if all(not isinstance(e, tuple) for e in entries):
        return [r[0] for r in out]
    return out


@dataclass(frozen=True)
class PetResult:
    pair: tuple
    verdict: str
    blinded_plaintext: int


def pet(group: GroupParams, c1: Ciphertext, c2: Ciphertext, x: int, r: int, pair=("", "")) -> PetResult:
    """Plaintext equivalence test: decrypt ``(c1 / c2)**r``; identity iff plaintexts match."""
    if not 1 <= r < group.q:
        raise ValueError("blinding exponent must lie in 1..q-1")
    m = decrypt(group, x, power(group, divide(group, c1, c2), r))
    return PetResult(tuple(pair), EQUAL if m == 1 else UNEQUAL, m)


class Election:
    """One election on one bulletin board, driven through its phases in order.

    setup -> beacon commitments -> cast -> mix -> beacon openings -> reveal.
    """

    def __init__(self, group: GroupParams, contest: ContestSpec, seed: bytes):
        self.group = group
        self.contest = contest
        self.seed = seed
        self.encoding = VoteEncoding(group, contest.num_candidates, contest.num_winners)
        self.x, self.h = keygen(group, KeyedStream(subseed(seed, "teller-key")))
        self.board = BulletinBoard()
        self.board.append("setup", "election", {
            "group": group.to_json(),
            "public_key": format(self.h, "x"),
            "contest": contest.to_dict(),
            "encoding": self.encoding.to_json(),
        })
        self.cast_rows: list[tuple] = []
        self.mixed: list[tuple] | None = None
        self.commitments: dict[str, bytes] | None = None
        self.plan: SamplingPlan | None = None
        self.decrypted_positions: set[int] = set()
        self._pet_rng = KeyedStream(subseed(seed, "pet-blinding"))

    # -- phases -------------------------------------------------------------
    def commit_beacon(self, contributions: Sequence[BeaconContribution]) -> None:
        if self.cast_rows:
            raise ProtocolError("beacon commitments must close before ballots are cast")
        self.commitments = {c.contributor_id: c.commitment for c in contributions}
        for c in contributions:
            self.board.append("beacon_commitment", c.contributor_id, {"commitment": c.commitment.hex()})

    def cast(self, ballots: Sequence, trackers: Sequence[int] | None = None) -> None:
        """Encrypt and post ballots; each ballot is a selection, ``None`` (invalid) or a raw group element."""
        if self.commitments is None:
            raise ProtocolError("commit the beacon before casting")
        if self.mixed is not None:
            raise ProtocolError("casting is closed")
        if trackers is not None and len(trackers) != len(ballots):
            raise ValueError("one tracker per ballot required")
        rng = KeyedStream(subseed(self.seed, "voter-randomness"))
        for i, b in enumerate(ballots):
            if isinstance(b, int) and not isinstance(b, bool):
                m = b
            else:
                m = self.encoding.encode(b or ())
            row = [encrypt(self.group, self.h, m, rng.randrange(1, self.group.q))]
            if trackers is not None:
                row.append(encrypt(self.group, self.h, self.group.exp(trackers[i]), rng.randrange(1, self.group.q)))
            row = tuple(row)
            self.cast_rows.append(row)
            self.board.append("ballot", f"voter-{i:06d}", [c.to_json() for c in row])

    def run_mixes(self, num_mixers: int = 2) -> list[tuple]:
        if not self.cast_rows:
            raise ProtocolError("nothing to mix")
        rows = self.cast_rows
        for k in range(num_mixers):
            rows = mix(self.group, self.h, rows, subseed(self.seed, f"mixer-{k}"))
            for i, row in enumerate(rows):
                self.board.append(f"mix_{k}", f"mix{k}-{i:06d}", [c.to_json() for c in row])
        self.mixed = rows
        return rows

    def open_beacon(self, contributions: Sequence[BeaconContribution], seed_override: bytes | None = None) -> SamplingPlan:
        if self.mixed is None:
            raise ProtocolError("beacon openings come after the final mix is posted")
        if self.commitments is None:
            raise ProtocolError("no beacon commitments")
        for c in contributions:
            if self.commitments.get(c.contributor_id) != c.commitment:
                raise beacon.BeaconError(f"contributor {c.contributor_id!r} changed its commitment")
            self.board.append("beacon_opening", c.contributor_id, {"opening": c.opening.hex()})
        if set(self.commitments) != {c.contributor_id for c in contributions}:
            raise beacon.BeaconError("every committed contributor must open")
        seed = seed_override if seed_override is not None else beacon.derive_seed(contributions)
        self.plan = SamplingPlan(seed, len(self.mixed), self.contest.sampling == "with_replacement")
        self.board.append("sampling_plan", "beacon", {
            **self.plan.to_json(), "override": seed_override is not None,
        })
        return self.plan

    # -- sampled decryption -------------------------------------------------
    def decrypt_vote(self, position: int) -> BallotInterpretation:
        m = decrypt(self.group, self.x, self.mixed[position][0])
        chosen = self.encoding.decode(m)
        return INVALID if chosen is None else BallotInterpretation(chosen, True)

    def reveal(self, position: int) -> BallotInterpretation:
        if self.plan is None:
            raise ProtocolError("no sampling plan")
        ballot = self.decrypt_vote(position)
        self.decrypted_positions.add(position)
        self.board.append("vote_opening", f"mix-out-{position:06d}", {
            "position": position,
            "selection": ballot.to_json(),
        })
        return ballot

    def plan_order(self) -> Iterator[int]:
        return self.plan.order()

    def reveal_next(self, j: int) -> BallotInterpretation:
        """Open the ballot at the j-th position of the sampling plan."""
        return self.reveal(self.plan_position(j))

    def plan_position(self, j: int) -> int:
        if not self.plan.with_replacement and not 0 <= j < self.plan.population:
            raise IndexError("sampling plan exhausted")
        for i, pos in enumerate(self.plan_order()):
            if i == j:
                return pos
        raise IndexError("sampling plan exhausted")

    def reveal_stream(self) -> Iterator[tuple[int, BallotInterpretation]]:
        for pos in self.plan_order():
            yield pos, self.reveal(pos)

    # -- PETs ---------------------------------------------------------------
    def reference(self, selection) -> Ciphertext:
        """Public trivial encryption (randomness 1) of a selection's encoding."""
        return encrypt(self.group, self.h, self.encoding.element[frozenset(selection)], 1)

    def pet(self, c1: Ciphertext, c2: Ciphertext, pair=("", "")) -> PetResult:
        return pet(self.group, c1, c2, self.x, self._pet_rng.randrange(1, self.group.q), pair)


def remix_sample(election: Election, seed: bytes, draws: int) -> Iterator[BallotInterpretation]:
    """Sampling with replacement done literally: re-mix the whole list before every draw."""
    rows = election.mixed
    picks = beacon.with_replacement_stream(subseed(seed, "remix-index"), len(rows))
    for d in range(draws):
        rows = mix(election.group, election.h, rows, subseed(seed, f"remix-{d}"))
        ct = rows[next(picks)][0]
        chosen = election.encoding.decode(decrypt(election.group, election.x, ct))
        yield INVALID if chosen is None else BallotInterpretation(chosen, True)


def pair_classes(encoding: VoteEncoding, w: int, l: int):
    """Selections counted as 1 (w without l) and as 0 (l without w) for the pair."""
    wins = [s for s in encoding.selections if w in s and l not in s]
    loses = [s for s in encoding.selections if l in s and w not in s]
    return wins, loses


def classify_by_pet(election: Election, ct: Ciphertext, w: int, l: int) -> tuple[int, list, list]:
    """Half-unit label of a shrouded ballot for pair (w, l), plus the verdict lists."""
    wins, loses = pair_classes(election.encoding, w, l)
    vw = [election.pet(ct, election.reference(s), (w, l)).verdict for s in wins]
    vl = [election.pet(ct, election.reference(s), (l, w)).verdict for s in loses]
    hit_w, hit_l = EQUAL in vw, EQUAL in vl
    if hit_w and hit_l:
        raise CorruptedBoardError("ballot matched both candidates of the contested pair")
    return (2 if hit_w else 0 if hit_l else 1), vw, vl


def pet_fallback(election: Election, transcript: RltTranscript, battery: HypothesisBattery) -> RltTranscript:
    """Resume contested pairs by PETing further plan ballots against the pair's candidates.

    Only PET verdicts and the resulting labels go into the continuation; the
    ballots' plaintexts are never decrypted.
    """
    if transcript.outcome.kind != "escalate":
        raise ProtocolError("PET fallback needs an escalated transcript")
    contest = transcript.contest
    pairs = list(transcript.contested_pairs)
    records = []
    order = election.plan_order()
    for _ in range(transcript.draws):
        next(order)
    decision = resolve_after_pets(battery, contest, pairs, False)
    d = 0
    for pos in order:
        if decision is not None:
            break
        ct = election.mixed[pos][0]
        for w, l in pairs:
            if pair_decided(battery, w, l):
                continue
            hx, vw, vl = classify_by_pet(election, ct, w, l)
            continue_pair(battery, w, l, hx)
            rec = {
                "pet_draw": d,
                "position": pos,
                "pair": [w, l],
                "verdicts_w": vw,
                "verdicts_l": vl,
                "label_half_units": hx,
                "p_value_wl": battery.p_value(w, l),
                "p_value_lw": battery.p_value(l, w),
            }
            records.append(rec)
            election.board.append("pet", f"mix-out-{pos:06d}", rec)
        d += 1
        decision = resolve_after_pets(battery, contest, pairs, pets_exhausted(battery, contest, pairs, d))
    out = _finish(transcript, battery, decision or Decision("escalate", reason=TIE_SUSPECTED))
    out.pet_continuation = records
    return out


__all__ = [
    "Election", "PetResult", "mix", "pet", "pet_fallback", "remix_sample", "classify_by_pet",
]
