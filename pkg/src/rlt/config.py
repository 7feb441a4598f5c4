"""Election configuration documents.

One JSON object per election.  Unknown keys are rejected, and every error
names the offending field path and, when it can be located, its line::

    {
      "contest": {"num_candidates": 2, "num_winners": 1, "num_ballots": 1000,
                  "risk_limit": 0.1, "max_reveal_fraction": 0.5,
                  "sampling": "without_replacement"},
      "vote_distribution": {"candidates": {"0": 0.6, "1": 0.4}, "invalid": 0.0},
      "ballots": {"file": null, "arrangement": "shuffled"},
      "seeds": {"election": "demo", "ballots": "demo-ballots", "beacon_contributors": 3},
      "crypto": {"group": "toy64", "mixers": 2},
      "pet_fallback": true,
      "rlv": {"enabled": true, "tracker_space": [100000, 1000000],
              "policy": "votes_then_trackers", "distinctness": "exponent",
              "assignment": "direct", "plant_collision": null},
      "output": {"dir": "out"}
    }

Candidate keys in ``vote_distribution.candidates`` are comma-separated
selections, so ``"0,2"`` is a ballot marking candidates 0 and 2.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from rlt.beacon import BeaconContribution, digest, subseed
from rlt.crypto.group import GROUPS
from rlt.martingale import DEFAULT_TRIM
from rlt.selene import POLICIES, VOTES_THEN_TRACKERS, TrackerSpace
from rlt.tally import WITH_REPLACEMENT, BallotInterpretation, ContestSpec

ARRANGEMENTS = ("shuffled", "plan_order")
DISTINCTNESS_MODES = ("exponent", "pairwise", "none")
ASSIGNMENT_PATHS = ("direct", "mix")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str, line: int | None = None):
        self.path, self.line = path, line
        where = f"{path}" + (f" (line {line})" if line else "")
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class RlvConfig:
    enabled: bool = False
    space: TrackerSpace = TrackerSpace()
    policy: str = VOTES_THEN_TRACKERS
    distinctness: str = "exponent"
    assignment: str = "direct"
    plant_collision: tuple | None = None


@dataclass(frozen=True)
class ElectionConfig:
    contest: ContestSpec
    distribution: dict  # frozenset selection (empty = invalid) -> probability
    ballot_file: Path | None = None
    arrangement: str = "shuffled"
    election_seed: bytes = b""
    ballot_seed: bytes = b""
    beacon: tuple = ()
    group: str = "toy64"
    mixers: int = 2
    pet_fallback: bool = True
    rlv: RlvConfig = RlvConfig()
    output_dir: Path = Path("out")
    trim: float = DEFAULT_TRIM
    config_hash: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    def ballot_types(self) -> list[tuple[BallotInterpretation, float]]:
        C, k = self.contest.num_candidates, self.contest.num_winners
        return [
            (BallotInterpretation.of(sorted(sel), k, C) if sel else BallotInterpretation.of(None), p)
            for sel, p in self.distribution.items()
        ]


def _seed(value) -> bytes:
    """Seeds are hex strings of 64 digits or arbitrary text hashed with SHA-256."""
    if isinstance(value, str) and len(value) == 64:
        try:
            return bytes.fromhex(value)
        except ValueError:
            pass
    return digest(str(value).encode())


class _Reader:
    def __init__(self, text: str):
        self.text = text

    def line_of(self, path: str) -> int | None:
        pos = 0
        for part in path.split("."):
            if part.isdigit():
                continue
            i = self.text.find(f'"{part}"', pos)
            if i < 0:
                return None
            pos = i
        return self.text.count("\n", 0, pos) + 1

    def fail(self, path: str, message: str):
        raise ConfigError(path, message, self.line_of(path))

    def section(self, d: dict, key: str, path: str, allowed: set) -> dict:
        sub = d.get(key, {})
        if sub is None:
            sub = {}
        if not isinstance(sub, dict):
            self.fail(path, "must be an object")
        for k in sub:
            if k not in allowed:
                self.fail(f"{path}.{k}", "unknown field")
        return sub

    def get(self, d: dict, key: str, path: str, kind, default=None, required=False):
        if key not in d or d[key] is None:
            if required:
                self.fail(path, "required field missing")
            return default
        v = d[key]
        if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
            self.fail(path, f"expected an integer, got {v!r}")
        if kind is float and (isinstance(v, bool) or not isinstance(v, (int, float))):
            self.fail(path, f"expected a number, got {v!r}")
        if kind is bool and not isinstance(v, bool):
            self.fail(path, f"expected true or false, got {v!r}")
        if kind is str and not isinstance(v, str):
            self.fail(path, f"expected a string, got {v!r}")
        return v


def parse_config(text: str, base_dir: Path | str = ".") -> ElectionConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("<document>", f"invalid JSON: {e.msg} (column {e.colno})", e.lineno) from None
    if not isinstance(raw, dict):
        raise ConfigError("<document>", "top level must be an object", 1)
    r = _Reader(text)
    base = Path(base_dir)
    top = {"contest", "vote_distribution", "ballots", "seeds", "crypto", "pet_fallback", "rlv", "output", "trim"}
    for k in raw:
        if k not in top:
            r.fail(k, "unknown field")

    c = r.section(raw, "contest", "contest", {
        "num_candidates", "num_winners", "num_ballots", "risk_limit", "per_test_alpha",
        "max_reveal_fraction", "sampling",
    })
    try:
        contest = ContestSpec(
            num_candidates=r.get(c, "num_candidates", "contest.num_candidates", int, required=True),
            num_winners=r.get(c, "num_winners", "contest.num_winners", int, 1),
            num_ballots=r.get(c, "num_ballots", "contest.num_ballots", int, required=True),
            risk_limit=float(r.get(c, "risk_limit", "contest.risk_limit", float, required=True)),
            per_test_alpha=r.get(c, "per_test_alpha", "contest.per_test_alpha", float),
            max_reveal_fraction=float(r.get(c, "max_reveal_fraction", "contest.max_reveal_fraction", float, 0.5)),
            sampling=r.get(c, "sampling", "contest.sampling", str, "without_replacement"),
        )
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        r.fail("contest", str(e))
    C, k = contest.num_candidates, contest.num_winners

    vd = r.section(raw, "vote_distribution", "vote_distribution", {"candidates", "invalid"})
    cands = vd.get("candidates", {})
    if not isinstance(cands, dict):
        r.fail("vote_distribution.candidates", "must map selections to probabilities")
    dist: dict = {}
    for key, p in cands.items():
        path = f"vote_distribution.candidates.{key}"
        try:
            sel = frozenset(int(s) for s in str(key).split(","))
        except ValueError:
            r.fail(path, "selection keys are comma-separated candidate numbers")
        if not sel or not 1 <= len(sel) <= k or any(not 0 <= s < C for s in sel):
            r.fail(path, f"not a valid vote-for-{k} selection among {C} candidates")
        p = r.get(cands, key, path, float)
        if p < 0:
            r.fail(path, "probability must be non-negative")
        dist[sel] = dist.get(sel, 0.0) + float(p)
    u = float(r.get(vd, "invalid", "vote_distribution.invalid", float, 0.0))
    if u < 0:
        r.fail("vote_distribution.invalid", "fraction must be non-negative")
    if u:
        dist[frozenset()] = u

    b = r.section(raw, "ballots", "ballots", {"file", "arrangement"})
    bf = r.get(b, "file", "ballots.file", str)
    arrangement = r.get(b, "arrangement", "ballots.arrangement", str, "shuffled")
    if arrangement not in ARRANGEMENTS:
        r.fail("ballots.arrangement", f"must be one of {', '.join(ARRANGEMENTS)}")
    if arrangement == "plan_order" and contest.sampling == WITH_REPLACEMENT:
        r.fail("ballots.arrangement", "plan_order needs sampling without replacement")
    if bf is None and abs(sum(dist.values()) - 1.0) > 1e-9:
        r.fail("vote_distribution", f"probabilities plus invalid fraction sum to {sum(dist.values())!r}, not 1")

    s = r.section(raw, "seeds", "seeds", {"election", "ballots", "beacon_contributors", "beacon"})
    election_seed = _seed(r.get(s, "election", "seeds.election", str, "rlt-election"))
    ballot_seed = _seed(r.get(s, "ballots", "seeds.ballots", str, "rlt-ballots"))
    if "beacon" in s and s["beacon"] is not None:
        items = s["beacon"]
        if not isinstance(items, list) or not items:
            r.fail("seeds.beacon", "must be a non-empty list of {contributor_id, opening_hex}")
        contribs = []
        for i, it in enumerate(items):
            p = f"seeds.beacon.{i}"
            if not isinstance(it, dict) or set(it) - {"contributor_id", "opening_hex"}:
                r.fail(p, "entries need exactly contributor_id and opening_hex")
            cid = r.get(it, "contributor_id", f"{p}.contributor_id", str, required=True)
            try:
                opening = bytes.fromhex(r.get(it, "opening_hex", f"{p}.opening_hex", str, required=True))
            except ValueError:
                r.fail(f"{p}.opening_hex", "not hex")
            contribs.append(BeaconContribution.from_opening(cid, opening))
    else:
        n = r.get(s, "beacon_contributors", "seeds.beacon_contributors", int, 3)
        if n < 1:
            r.fail("seeds.beacon_contributors", "need at least one contributor")
        contribs = [
            BeaconContribution.from_opening(f"contributor-{i}", subseed(election_seed, f"beacon-opening-{i}"))
            for i in range(n)
        ]

    cr = r.section(raw, "crypto", "crypto", {"group", "mixers"})
    group = r.get(cr, "group", "crypto.group", str, "toy64")
    if group not in GROUPS:
        r.fail("crypto.group", f"must be one of {', '.join(sorted(GROUPS))}")
    mixers = r.get(cr, "mixers", "crypto.mixers", int, 2)
    if mixers < 1:
        r.fail("crypto.mixers", "need at least one mixer")

    rv = r.section(raw, "rlv", "rlv", {
        "enabled", "tracker_space", "policy", "distinctness", "assignment", "plant_collision",
    })
    space = rv.get("tracker_space", [100_000, 1_000_000])
    if not (isinstance(space, list) and len(space) == 2 and all(isinstance(x, int) for x in space)
            and 0 <= space[0] < space[1]):
        r.fail("rlv.tracker_space", "must be [lo, hi) with 0 <= lo < hi")
    rlv = RlvConfig(
        enabled=r.get(rv, "enabled", "rlv.enabled", bool, False),
        space=TrackerSpace(*space),
        policy=r.get(rv, "policy", "rlv.policy", str, VOTES_THEN_TRACKERS),
        distinctness=r.get(rv, "distinctness", "rlv.distinctness", str, "exponent"),
        assignment=r.get(rv, "assignment", "rlv.assignment", str, "direct"),
        plant_collision=rv.get("plant_collision"),
    )
    if rlv.policy not in POLICIES:
        r.fail("rlv.policy", f"must be one of {', '.join(POLICIES)}")
    if rlv.distinctness not in DISTINCTNESS_MODES:
        r.fail("rlv.distinctness", f"must be one of {', '.join(DISTINCTNESS_MODES)}")
    if rlv.assignment not in ASSIGNMENT_PATHS:
        r.fail("rlv.assignment", f"must be one of {', '.join(ASSIGNMENT_PATHS)}")
    if rlv.enabled and contest.num_ballots > rlv.space.size:
        r.fail("rlv.tracker_space", f"{contest.num_ballots} voters exceed {rlv.space.size} trackers")
    pc = rlv.plant_collision
    if pc is not None:
        if not (isinstance(pc, list) and len(pc) == 2 and all(isinstance(x, int) for x in pc)
                and pc[0] != pc[1] and all(0 <= x < contest.num_ballots for x in pc)):
            r.fail("rlv.plant_collision", "must be two distinct voter indices")
        rlv = RlvConfig(rlv.enabled, rlv.space, rlv.policy, rlv.distinctness, rlv.assignment, tuple(pc))

    out = r.section(raw, "output", "output", {"dir"})
    trim = float(r.get(raw, "trim", "trim", float, DEFAULT_TRIM))
    if not 0 <= trim < 1:
        r.fail("trim", "must lie in [0, 1)")

    return ElectionConfig(
        contest=contest,
        distribution=dist,
        ballot_file=(base / bf) if bf else None,
        arrangement=arrangement,
        election_seed=election_seed,
        ballot_seed=ballot_seed,
        beacon=tuple(contribs),
        group=group,
        mixers=mixers,
        pet_fallback=r.get(raw, "pet_fallback", "pet_fallback", bool, True),
        rlv=rlv,
        output_dir=base / r.get(out, "dir", "output.dir", str, "out"),
        trim=trim,
        config_hash=hashlib.sha256(json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16],
        raw=raw,
    )


def load_config(path) -> ElectionConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(str(path), f"cannot read: {e.strerror}") from None
    return parse_config(text, path.parent)


def largest_remainder(probs, total: int) -> list[int]:
    """Integer counts summing to ``total`` closest to ``probs * total``."""
    raw = [p * total for p in probs]
    counts = [math.floor(x) for x in raw]
    short = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (counts[i] - raw[i], i))
    for i in order[:short]:
        counts[i] += 1
    return counts
