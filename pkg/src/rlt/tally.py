"""Risk-limiting tally: pairwise battery, stop rule, transcripts.

Each ordered pair ``(w, l)`` carries the null "w did not beat l", tested by
relabelling ballots (vote for w but not l -> 1, for l but not w -> 0, else
1/2) and running the mixture martingale with ``t = 1/2``.  Labels are kept
in half units (0, 1, 2) so the running sums are exact integers.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator

import numpy as np

from rlt import kernel
from rlt.martingale import DEFAULT_TRIM

WITHOUT_REPLACEMENT = "without_replacement"
WITH_REPLACEMENT = "with_replacement"

REVEAL_BUDGET_EXHAUSTED = "reveal_budget_exhausted"
TIE_SUSPECTED = "tie_suspected"
TALLY_HIDING_REQUIRED = "tally_hiding_required"

OPEN, REJECTED, CERTAIN = 0, 1, 2


def overall_risk(per_test_alpha: float, k: int, C: int) -> float:
    """Bound on the chance of announcing a wrong winner set."""
    if not 1 <= k < C:
        raise ValueError(f"need 1 <= k < C, got k={k}, C={C}")
    return k * (C - k) * per_test_alpha


@dataclass(frozen=True)
class ContestSpec:
    num_candidates: int
    num_winners: int
    num_ballots: int
    risk_limit: float
    per_test_alpha: float | None = None
    max_reveal_fraction: float = 0.5
    sampling: str = WITHOUT_REPLACEMENT

    def __post_init__(self):
        C, k = self.num_candidates, self.num_winners
        if C < 2:
            raise ValueError("num_candidates must be at least 2")
        if not 1 <= k < C:
            raise ValueError(f"num_winners must satisfy 1 <= k < C, got {k}")
        if self.num_ballots < 0:
            raise ValueError("num_ballots must be non-negative")
        if not 0 < self.risk_limit < 1:
            raise ValueError("risk_limit must lie in (0, 1)")
        if self.per_test_alpha is None:
            object.__setattr__(self, "per_test_alpha", self.risk_limit / (k * (C - k)))
        if not 0 < self.per_test_alpha < 1:
            raise ValueError("per_test_alpha must lie in (0, 1)")
        if overall_risk(self.per_test_alpha, k, C) > self.risk_limit * (1 + 1e-12):
            raise ValueError(
                f"per_test_alpha {self.per_test_alpha} times k(C-k)={k * (C - k)} "
                f"exceeds risk_limit {self.risk_limit}"
            )
        if not 0 < self.max_reveal_fraction <= 1:
            raise ValueError("max_reveal_fraction must lie in (0, 1]")
        if self.sampling not in (WITHOUT_REPLACEMENT, WITH_REPLACEMENT):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")

    @property
    def reveal_budget(self) -> int:
        # float fuzz guard so that 0.5 * 1000 does not round down to 499
        return min(self.num_ballots, math.floor(self.max_reveal_fraction * self.num_ballots + 1e-9))

    def to_dict(self) -> dict:
        return {
            "num_candidates": self.num_candidates,
            "num_winners": self.num_winners,
            "num_ballots": self.num_ballots,
            "risk_limit": self.risk_limit,
            "per_test_alpha": self.per_test_alpha,
            "max_reveal_fraction": self.max_reveal_fraction,
            "sampling": self.sampling,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ContestSpec":
        return cls(**d)


@dataclass(frozen=True)
class BallotInterpretation:
    chosen: frozenset = frozenset()
    valid: bool = True

    @classmethod
    def of(cls, choices, k: int = 1, C: int | None = None) -> "BallotInterpretation":
        """Interpret raw choices; blank, over-voted or out-of-range ballots are invalid."""
        if choices is None:
            return cls(frozenset(), False)
        chosen = frozenset(int(c) for c in choices)
        ok = 1 <= len(chosen) <= k and (C is None or all(0 <= c < C for c in chosen))
        return cls(chosen if ok else frozenset(), ok)

    def to_json(self):
        return sorted(self.chosen) if self.valid else None


INVALID = BallotInterpretation(frozenset(), False)


def relabel(ballot: BallotInterpretation, w: int, l: int) -> Fraction:
    if w == l:
        raise ValueError("pair members must differ")
    return Fraction(_half_label(ballot, w, l), 2)


def _half_label(ballot, w, l) -> int:
    if not ballot.valid:
        return 1
    return 1 + (w in ballot.chosen) - (l in ballot.chosen)


@dataclass(frozen=True)
class Decision:
    kind: str  # "winners", "continue" or "escalate"
    winners: frozenset = frozenset()
    reason: str | None = None


CONTINUE = Decision("continue")


@dataclass
class PairwiseHypothesis:
    """Read-only snapshot of one pair in a battery."""

    winner: int
    loser: int
    status: int
    rejected_at: int | None
    p_value: float
    count_w: int
    count_l: int
    count_u: int


class HypothesisBattery:
    """All C(C-1) pairwise nulls, packed into arrays for the kernel."""

    def __init__(self, contest: ContestSpec, trim: float = DEFAULT_TRIM,
                 record_history: bool = True, capacity: int = 64):
        C = contest.num_candidates
        self.contest = contest
        self.trim = trim
        self.pairs = [(w, l) for w in range(C) for l in range(C) if w != l]
        self.index = {pair: i for i, pair in enumerate(self.pairs)}
        P = len(self.pairs)
        self._w = np.array([w for w, _ in self.pairs])
        self._l = np.array([l for _, l in self.pairs])
        self.coeffs = np.zeros((P, max(capacity, 4)))
        self.coeffs[:, 0] = 1.0
        z = lambda: np.zeros(P, dtype=np.int64)
        self.lo, self.hi, self.deg, self.e2 = z(), z(), z(), z()
        self.draws, self.hsum = z(), z()
        self.rejected_at = z() - 1
        self.log_y = np.zeros(P)
        self.log_max = np.zeros(P)
        self.status = np.zeros(P, dtype=np.int8)
        self.counts = np.zeros((P, 3), dtype=np.int64)
        self.record_history = record_history
        self.history = [[] for _ in range(P)]
        self._N = 0 if contest.sampling == WITH_REPLACEMENT else contest.num_ballots

    # -- labels -------------------------------------------------------------
    def label_row(self, ballot: BallotInterpretation) -> np.ndarray:
        if not ballot.valid:
            return np.ones(len(self.pairs), dtype=np.int8)
        mask = np.zeros(self.contest.num_candidates, dtype=np.int8)
        for c in ballot.chosen:
            mask[c] = 1
        return (1 + mask[self._w] - mask[self._l]).astype(np.int8)

    def label_table(self, ballots: Iterable[BallotInterpretation]) -> np.ndarray:
        return np.ascontiguousarray(np.stack([self.label_row(b) for b in ballots]))

    # -- updates ------------------------------------------------------------
    def _reserve(self, m: int) -> None:
        need = int(self.hi.max()) + m + 2
        if need > self.coeffs.shape[1]:
            width = max(need, 2 * self.coeffs.shape[1])
            grown = np.zeros((len(self.pairs), width))
            grown[:, : self.coeffs.shape[1]] = self.coeffs
            self.coeffs = grown

    def advance(self, codes: np.ndarray, table: np.ndarray, mask: np.ndarray | None = None) -> int:
        """Feed ballots given as rows of ``table``; stop after the first new rejection.

        ``mask`` restricts the update to a subset of pairs (the others are
        treated as frozen for this call).  Returns draws consumed.
        """
        codes = np.ascontiguousarray(codes, dtype=np.int64)
        table = np.ascontiguousarray(table, dtype=np.int8)
        m = len(codes)
        if m == 0:
            return 0
        if self._N:
            live = self.status == OPEN if mask is None else (self.status == OPEN) & mask
            if live.any() and int(self.draws[live].max()) + m > self._N:
                raise ValueError("ingest past the end of the population")
        self._reserve(m)
        status = self.status
        held = None
        if mask is not None:
            held = (~mask) & (status == OPEN)
            status[held] = -1
        hist = np.full((m, len(self.pairs)), np.nan) if self.record_history else None
        try:
            used = kernel.advance(
                self.coeffs, self.lo, self.hi, self.deg, self.e2, self.draws, self.hsum,
                self.log_y, self.log_max, status, self.rejected_at, self.counts,
                codes, table, self._N, float(self.contest.per_test_alpha), float(self.trim), hist,
            )
        finally:
            if held is not None:
                status[held] = OPEN
        if hist is not None:
            for r in range(len(self.pairs)):
                col = hist[:used, r]
                self.history[r].extend(float(v) for v in col[~np.isnan(col)])
        return used

    def ingest(self, ballot: BallotInterpretation, mask: np.ndarray | None = None) -> None:
        self.advance(np.zeros(1, dtype=np.int64), self.label_row(ballot)[None, :], mask)

    # -- queries ------------------------------------------------------------
    def p_value(self, w: int, l: int) -> float:
        r = self.index[(w, l)]
        if self.status[r] == CERTAIN:
            return 0.0
        return min(1.0, math.exp(-self.log_max[r]))

    def is_rejected(self, w: int, l: int) -> bool:
        return self.status[self.index[(w, l)]] != OPEN

    def hypothesis(self, w: int, l: int) -> PairwiseHypothesis:
        r = self.index[(w, l)]
        ra = int(self.rejected_at[r])
        cw, cl, cu = (int(v) for v in self.counts[r])
        return PairwiseHypothesis(w, l, int(self.status[r]), ra if ra >= 0 else None,
                                  self.p_value(w, l), cw, cl, cu)

    def rejected_matrix(self) -> np.ndarray:
        C = self.contest.num_candidates
        R = np.zeros((C, C), dtype=bool)
        R[self._w, self._l] = self.status != OPEN
        return R

    def open_pairs(self) -> list[tuple[int, int]]:
        return [p for p, s in zip(self.pairs, self.status) if s == OPEN]


def winner_set(R: np.ndarray, k: int) -> frozenset | None:
    """A size-``k`` set whose members are rejected-against every outsider, if any."""
    C = R.shape[0]
    beats = R.sum(axis=1)
    hopefuls = [w for w in range(C) if beats[w] >= C - k]
    for W in itertools.combinations(hopefuls, k):
        outside = [l for l in range(C) if l not in W]
        if all(R[w, l] for w in W for l in outside):
            return frozenset(W)
    return None


def check_stop(battery: HypothesisBattery, contest: ContestSpec, revealed: int) -> Decision:
    W = winner_set(battery.rejected_matrix(), contest.num_winners)
    if W is not None:
        return Decision("winners", W)
    if revealed >= contest.num_ballots:
        return Decision("escalate", reason=TIE_SUSPECTED)
    if revealed >= contest.reveal_budget:
        return Decision("escalate", reason=REVEAL_BUDGET_EXHAUSTED)
    return CONTINUE


def _pair_key(pair) -> str:
    return f"{pair[0]},{pair[1]}"


def _parse_pair(key: str) -> tuple[int, int]:
    w, l = key.split(",")
    return int(w), int(l)


@dataclass
class RltTranscript:
    contest: ContestSpec
    reveal_order: list[int] = field(default_factory=list)
    revealed_votes: list = field(default_factory=list)
    per_draw_pvalues: dict = field(default_factory=dict)
    rejected_at: dict = field(default_factory=dict)
    outcome: Decision = CONTINUE
    ballots_revealed: int = 0
    contested_pairs: list = field(default_factory=list)
    seed_hex: str | None = None
    pet_continuation: list | None = None

    @property
    def ballots_shrouded(self) -> int:
        return self.contest.num_ballots - self.ballots_revealed

    @property
    def draws(self) -> int:
        return len(self.reveal_order)

    def to_dict(self) -> dict:
        out = self.outcome
        d = {
            "contest": self.contest.to_dict(),
            "seed": self.seed_hex,
            "reveal_order": list(self.reveal_order),
            "revealed_votes": list(self.revealed_votes),
            "per_draw_pvalues": {_pair_key(p): list(v) for p, v in self.per_draw_pvalues.items()},
            "rejected_at": {_pair_key(p): j for p, j in self.rejected_at.items()},
            "outcome": {
                "kind": out.kind,
                "winners": sorted(out.winners),
                "reason": out.reason,
            },
            "ballots_revealed": self.ballots_revealed,
            "ballots_shrouded": self.ballots_shrouded,
            "contested_pairs": [list(p) for p in self.contested_pairs],
        }
        if self.pet_continuation is not None:
            d["pet_continuation"] = self.pet_continuation
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "RltTranscript":
        o = d["outcome"]
        return cls(
            contest=ContestSpec.from_dict(d["contest"]),
            reveal_order=list(d["reveal_order"]),
            revealed_votes=list(d["revealed_votes"]),
            per_draw_pvalues={_parse_pair(k): list(v) for k, v in d["per_draw_pvalues"].items()},
            rejected_at={_parse_pair(k): j for k, j in d["rejected_at"].items()},
            outcome=Decision(o["kind"], frozenset(o["winners"]), o["reason"]),
            ballots_revealed=d["ballots_revealed"],
            contested_pairs=[tuple(p) for p in d["contested_pairs"]],
            seed_hex=d.get("seed"),
            pet_continuation=d.get("pet_continuation"),
        )

    @classmethod
    def from_json(cls, text: str) -> "RltTranscript":
        return cls.from_dict(json.loads(text))


def _finish(transcript: RltTranscript, battery: HypothesisBattery, decision: Decision) -> RltTranscript:
    transcript.outcome = decision
    transcript.per_draw_pvalues = {p: battery.history[i] for i, p in enumerate(battery.pairs)}
    transcript.rejected_at = {
        p: int(battery.rejected_at[i]) for i, p in enumerate(battery.pairs) if battery.status[i] != OPEN
    }
    transcript.contested_pairs = _contested(battery)
    return transcript


def _contested(battery: HypothesisBattery) -> list[tuple[int, int]]:
    """Unordered pairs {w, l} with neither direction rejected, as (w, l) with w < l."""
    R = battery.rejected_matrix()
    C = R.shape[0]
    return [(w, l) for w in range(C) for l in range(w + 1, C) if not R[w, l] and not R[l, w]]


def run_rlt(ballots: Iterable[tuple[int, BallotInterpretation]], contest: ContestSpec,
            trim: float = DEFAULT_TRIM, seed_hex: str | None = None,
            battery: HypothesisBattery | None = None) -> tuple[RltTranscript, HypothesisBattery]:
    """Reveal ballots from ``ballots`` (``(index, interpretation)`` in sampling order) until the stop rule fires.

    Returns the transcript and the final battery (needed to resume contested
    pairs by PET).
    """
    battery = battery or HypothesisBattery(contest, trim)
    transcript = RltTranscript(contest, seed_hex=seed_hex)
    seen: set[int] = set()
    decision = check_stop(battery, contest, 0)
    it: Iterator = iter(ballots)
    while decision.kind == "continue":
        try:
            idx, ballot = next(it)
        except StopIteration:
            raise ValueError(
                f"ballot stream ended after {transcript.draws} draws without a stop decision"
            ) from None
        battery.ingest(ballot)
        transcript.reveal_order.append(int(idx))
        transcript.revealed_votes.append(ballot.to_json())
        seen.add(int(idx))
        transcript.ballots_revealed = len(seen)
        decision = check_stop(battery, contest, len(seen))
    return _finish(transcript, battery, decision), battery


def continue_pair(battery: HypothesisBattery, w: int, l: int, hx: int) -> None:
    """Feed one externally classified ballot (half-unit label ``hx`` for w over l) to (w, l) and (l, w) only."""
    row = np.ones(len(battery.pairs), dtype=np.int8)
    iw, il = battery.index[(w, l)], battery.index[(l, w)]
    row[iw], row[il] = hx, 2 - hx
    mask = np.zeros(len(battery.pairs), dtype=bool)
    mask[[iw, il]] = True
    battery.advance(np.zeros(1, dtype=np.int64), row[None, :], mask)


def pair_decided(battery: HypothesisBattery, w: int, l: int) -> bool:
    return battery.is_rejected(w, l) or battery.is_rejected(l, w)


def pets_exhausted(battery: HypothesisBattery, contest: ContestSpec, pairs, pet_draws: int) -> bool:
    """Whether the shrouded ballots are used up for some undecided contested pair.

    Without replacement a pair is exhausted once it has seen all N ballots;
    with replacement the PET phase is capped at N draws.
    """
    if contest.sampling == WITH_REPLACEMENT:
        return pet_draws >= contest.num_ballots
    N = contest.num_ballots
    return any(
        battery.draws[battery.index[(w, l)]] >= N and not pair_decided(battery, w, l) for w, l in pairs
    )


def tally_hiding_fallback() -> Decision:
    """Placeholder for an MPC / tally-hiding resolution; escalates with a machine-readable reason."""
    return Decision("escalate", reason=TALLY_HIDING_REQUIRED)


def resolve_after_pets(battery: HypothesisBattery, contest: ContestSpec, pairs, exhausted: bool) -> Decision | None:
    W = winner_set(battery.rejected_matrix(), contest.num_winners)
    if W is not None:
        return Decision("winners", W)
    if exhausted:
        return Decision("escalate", reason=TIE_SUSPECTED)
    if all(pair_decided(battery, w, l) for w, l in pairs):
        return tally_hiding_fallback()
    return None


def replay(transcript: RltTranscript, trim: float = DEFAULT_TRIM) -> RltTranscript:
    """Recompute every martingale from the transcript's own reveal order, votes and PET labels."""
    contest = transcript.contest
    C, k = contest.num_candidates, contest.num_winners
    stream = [
        (i, BallotInterpretation.of(v, k, C)) for i, v in zip(transcript.reveal_order, transcript.revealed_votes)
    ]
    again, battery = run_rlt(stream, contest, trim, seed_hex=transcript.seed_hex)
    records = transcript.pet_continuation
    if records is None or again.outcome.kind != "escalate":
        return again
    pairs = list(again.contested_pairs)
    decision = resolve_after_pets(battery, contest, pairs, False)
    by_draw: dict[int, list] = {}
    for rec in records:
        by_draw.setdefault(rec["pet_draw"], []).append(rec)
    for d in sorted(by_draw):
        if decision is not None:
            break
        for rec in by_draw[d]:
            continue_pair(battery, *rec["pair"], rec["label_half_units"])
        decision = resolve_after_pets(battery, contest, pairs, pets_exhausted(battery, contest, pairs, d + 1))
    out = _finish(again, battery, decision or Decision("escalate", reason=TIE_SUSPECTED))
    out.pet_continuation = records
    return out
