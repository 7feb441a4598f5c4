"""Replicated plaintext elections for risk and sample-size campaigns.

The cryptographic layer does not change which ballots are revealed, so
trials skip it: each trial draws a sampling order from its own PCG64
stream and feeds ballot types straight to the compiled battery.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from rlt.config import ElectionConfig, largest_remainder
from rlt.martingale import DEFAULT_TRIM
from rlt.tally import (
    WITH_REPLACEMENT,
    BallotInterpretation,
    ContestSpec,
    Decision,
    HypothesisBattery,
    check_stop,
)

COLUMNS = ("config_hash", "trial", "ballots_revealed", "outcome", "wrong_outcome", "wall_time")


@dataclass(frozen=True)
class Population:
    """Ballot types and exact counts."""

    types: tuple
    counts: tuple

    @classmethod
    def from_shares(cls, shares, N: int, k: int, C: int) -> "Population":
        """``shares`` maps a selection (tuple of candidates, or None for invalid) to its fraction."""
        keys = list(shares)
        types = tuple(BallotInterpretation.of(s, k, C) if s else BallotInterpretation.of(None) for s in keys)
        return cls(types, tuple(largest_remainder([shares[s] for s in keys], N)))

    @classmethod
    def from_config(cls, cfg: ElectionConfig) -> "Population":
        c = cfg.contest
        shares = {tuple(sorted(s)) if s else None: p for s, p in cfg.distribution.items()}
        return cls.from_shares(shares, c.num_ballots, c.num_winners, c.num_candidates)

    @property
    def size(self) -> int:
        return sum(self.counts)

    def tallies(self, C: int) -> np.ndarray:
        out = np.zeros(C, dtype=np.int64)
        for t, n in zip(self.types, self.counts):
            for c in t.chosen:
                out[c] += n
        return out

    def correct_winner_sets(self, k: int, C: int) -> set:
        """Every size-k set whose smallest tally is at least the largest tally outside it."""
        v = self.tallies(C)
        ok = set()
        for W in itertools.combinations(range(C), k):
            rest = [v[c] for c in range(C) if c not in W]
            if min(v[c] for c in W) >= max(rest):
                ok.add(frozenset(W))
        return ok


def trial_seed(config_hash: str, trial: int) -> int:
    return int.from_bytes(hashlib.sha256(f"{config_hash}/{trial}".encode()).digest()[:16], "big")


def simulate_trial(contest: ContestSpec, pop: Population, rng: np.random.Generator,
                   trim: float = DEFAULT_TRIM, table: np.ndarray | None = None) -> tuple[int, Decision]:
    """One risk-limiting tally over a random order of ``pop``; returns (ballots revealed, decision)."""
    battery = HypothesisBattery(contest, trim, record_history=False, capacity=128)
    if table is None:
        table = battery.label_table(pop.types)
    N = pop.size
    kinds = np.repeat(np.arange(len(pop.types), dtype=np.int64), pop.counts)
    budget = contest.reveal_budget
    with_repl = contest.sampling == WITH_REPLACEMENT
    if with_repl:
        seen = np.zeros(N, dtype=bool)
    else:
        order = rng.permutation(N)[:budget]
        codes = kinds[order]
    pos = revealed = 0
    decision = check_stop(battery, contest, 0)
    while decision.kind == "continue":
        room = budget - revealed  # at most one new distinct ballot per draw
        if with_repl:
            idx = rng.integers(0, N, size=room)
            used = battery.advance(kinds[idx], table)
            fresh = idx[:used]
            seen[fresh] = True
            revealed = int(seen.sum())
            pos += used
        else:
            used = battery.advance(codes[pos:pos + room], table)
            pos += used
            revealed = pos
        decision = check_stop(battery, contest, revealed)
    return revealed, decision


@dataclass
class CampaignResult:
    rows: list

    @property
    def revealed(self) -> np.ndarray:
        return np.array([r["ballots_revealed"] for r in self.rows], dtype=float)

    def summary(self) -> dict:
        rev = self.revealed
        wrong = np.array([r["wrong_outcome"] for r in self.rows], dtype=float)
        esc = np.array([r["outcome"].startswith("escalate") for r in self.rows], dtype=float)
        q = np.quantile(rev, [0.05, 0.25, 0.5, 0.75, 0.95]) if len(rev) else [float("nan")] * 5
        return {
            "trials": len(self.rows),
            "mean_revealed": float(rev.mean()) if len(rev) else float("nan"),
            "quantiles_revealed": {k: float(v) for k, v in zip(("q05", "q25", "q50", "q75", "q95"), q)},
            "wrong_outcome_rate": float(wrong.mean()) if len(rev) else float("nan"),
            "escalation_rate": float(esc.mean()) if len(rev) else float("nan"),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for r in self.rows:
                w.writerow([fmt(r[c]) for c in COLUMNS])


def fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def outcome_label(d: Decision) -> str:
    if d.kind == "winners":
        return "winners:" + "+".join(str(c) for c in sorted(d.winners))
    return f"escalate:{d.reason}"


def _trial_rows(contest: ContestSpec, pop: Population, trials, config_hash: str, trim: float) -> list:
    correct = pop.correct_winner_sets(contest.num_winners, contest.num_candidates)
    table = HypothesisBattery(contest, trim, record_history=False).label_table(pop.types)
    rows = []
    for t in trials:
        rng = np.random.Generator(np.random.PCG64(trial_seed(config_hash, t)))
        start = time.perf_counter()
        revealed, d = simulate_trial(contest, pop, rng, trim, table)
        rows.append({
            "config_hash": config_hash,
            "trial": t,
            "ballots_revealed": revealed,
            "outcome": outcome_label(d),
            "wrong_outcome": d.kind == "winners" and d.winners not in correct,
            "wall_time": time.perf_counter() - start,
        })
    return rows


def run_campaign(contest: ContestSpec, pop: Population, trials: int, config_hash: str = "adhoc",
                 trim: float = DEFAULT_TRIM, workers: int = 1) -> CampaignResult:
    """Trials are independent replicas seeded by (config hash, trial index), so ``workers`` changes
    only wall time; rows come back in trial order for a single writer."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if workers <= 1:
        return CampaignResult(_trial_rows(contest, pop, range(trials), config_hash, trim))
    chunks = [range(i, trials, workers) for i in range(workers)]
    with ProcessPoolExecutor(workers) as ex:
        parts = ex.map(_trial_rows, *zip(*[(contest, pop, c, config_hash, trim) for c in chunks]))
    rows = sorted((r for part in parts for r in part), key=lambda r: r["trial"])
    return CampaignResult(rows)


def campaign_from_config(cfg: ElectionConfig, trials: int, workers: int = 1) -> CampaignResult:
    return run_campaign(cfg.contest, Population.from_config(cfg), trials, cfg.config_hash, cfg.trim, workers)
