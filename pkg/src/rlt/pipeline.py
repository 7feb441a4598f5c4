"""End-to-end simulated election driven by an :class:`~rlt.config.ElectionConfig`.

keygen -> beacon commitments -> cast -> mix -> distinctness check ->
beacon openings -> (trackers first) -> risk-limiting tally -> PET fallback
-> (votes then trackers) -> notification.  Everything is a pure function of
the configuration, so running it twice writes byte-identical files.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from rlt import beacon
from rlt.beacon import KeyedStream, subseed
from rlt.config import ElectionConfig, largest_remainder
from rlt.crypto.board import BulletinBoard
from rlt.crypto.group import GROUPS
from rlt.crypto.protocol import Election, pet_fallback
from rlt.selene import (
    TRACKERS_FIRST,
    VOTES_THEN_TRACKERS,
    DistinctnessResult,
    NotificationAuthority,
    TrackerColumn,
    TrackerPublication,
    assign_trackers,
    assign_trackers_via_mix,
    commit,
    distinctness_check,
    pairwise_distinctness,
    reveal_trackers,
)
from rlt.tally import (
    REVEAL_BUDGET_EXHAUSTED,
    Decision,
    RltTranscript,
    run_rlt,
)

TRACKER_COLLISION = "tracker_collision"

EXIT_OK, EXIT_ESCALATED, EXIT_VERIFICATION, EXIT_CONFIG = 0, 2, 3, 4

TRANSCRIPT = "transcript.json"
BOARD = "board.jsonl"
ENCODING = "encoding.json"
PET_CONTINUATION = "pet_continuation.json"
TRACKER_BOARD = "tracker_board.jsonl"
COMMITMENT_BOARD = "commitment_board.jsonl"
RLV_SUMMARY = "rlv.json"


def synthetic_ballots(cfg: ElectionConfig) -> list:
    """Ballots in cast order: exact counts from the distribution, shuffled with the ballot seed."""
    types = sorted(cfg.distribution, key=lambda s: (len(s) == 0, sorted(s)))
    counts = largest_remainder([cfg.distribution[s] for s in types], cfg.contest.num_ballots)
    ballots = [tuple(sorted(s)) if s else None for s, n in zip(types, counts) for _ in range(n)]
    if cfg.arrangement == "shuffled":
        random.Random(cfg.ballot_seed).shuffle(ballots)
    return ballots


def load_ballot_file(path: Path) -> list:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ValueError(f"{path}: ballot file must be a JSON list")
    return [None if b is None else tuple(b) for b in data]


def mix_permutation(seed: bytes, n: int, mixers: int) -> list[int]:
    """Cast index of the ballot landing at each final mixed position."""
    pos = list(range(n))
    for k in range(mixers):
        perm = beacon.permutation(subseed(subseed(seed, f"mixer-{k}"), "mix-permutation"), n)
        pos = [pos[i] for i in perm]
    return pos


def arrange_for_plan(ballots: list, plan_seed: bytes, election_seed: bytes, mixers: int) -> list:
    """Reorder ``ballots`` so the sampling plan reveals them in list order."""
    n = len(ballots)
    final = mix_permutation(election_seed, n, mixers)
    out = [None] * n
    for j, pos in enumerate(beacon.permutation_prefix(plan_seed, n)):
        out[final[pos]] = ballots[j]
    return out


@dataclass
class TallyRun:
    transcript: RltTranscript
    election: Election
    exit_code: int
    assignment: dict = field(default_factory=dict)
    commitments: dict = field(default_factory=dict)
    publication: TrackerPublication | None = None
    distinctness: DistinctnessResult | None = None
    notifications: int = 0
    files: dict = field(default_factory=dict)


def run_election(cfg: ElectionConfig, env_seed: bytes | None = None) -> TallyRun:
    contest = cfg.contest
    group = GROUPS[cfg.group]
    N = contest.num_ballots
    el = Election(group, contest, cfg.election_seed)
    el.commit_beacon(cfg.beacon)
    plan_seed = env_seed if env_seed is not None else beacon.derive_seed(cfg.beacon)

    ballots = load_ballot_file(cfg.ballot_file) if cfg.ballot_file else synthetic_ballots(cfg)
    if len(ballots) != N:
        raise ValueError(f"{len(ballots)} ballots supplied but contest.num_ballots is {N}")
    if cfg.arrangement == "plan_order":
        ballots = arrange_for_plan(ballots, plan_seed, cfg.election_seed, cfg.mixers)

    rlv = cfg.rlv
    voters = [f"voter-{i:06d}" for i in range(N)]
    assignment, commitments = {}, {}
    if rlv.enabled:
        if rlv.assignment == "mix":
            assignment = assign_trackers_via_mix(group, el.h, el.x, voters, cfg.election_seed, rlv.space)
        else:
            assignment = assign_trackers(voters, cfg.election_seed, rlv.space)
        if rlv.plant_collision:
            i, j = rlv.plant_collision
            assignment[voters[j]] = assignment[voters[i]]
        rng = KeyedStream(subseed(cfg.election_seed, "voter-trapdoors"))
        for v in voters:
            x, r = rng.randrange(1, group.q), rng.randrange(1, group.q)
            commitments[v] = commit(group, assignment[v], x, r, v, rlv.space)
        el.board.append("tracker_commitments", "rlv", [commitments[v].published() for v in voters])
    el.cast(ballots, [assignment[v] for v in voters] if rlv.enabled else None)
    el.run_mixes(cfg.mixers)

    run = TallyRun(RltTranscript(contest, seed_hex=plan_seed.hex()), el, EXIT_OK, assignment, commitments)
    column = None
    if rlv.enabled:
        column = TrackerColumn(group, el.x, [row[1] for row in el.mixed], rlv.space)
        if rlv.distinctness == "exponent":
            s = KeyedStream(subseed(cfg.election_seed, "distinctness-exponent")).randrange(1, group.q)
            run.distinctness = distinctness_check(group, column.encrypted, s, el.x)
        elif rlv.distinctness == "pairwise":
            run.distinctness, _ = pairwise_distinctness(
                group, column.encrypted, el.x, KeyedStream(subseed(cfg.election_seed, "distinctness-pets")))
        if run.distinctness is not None:
            el.board.append("distinctness", "rlv", {**run.distinctness.to_json(), "mode": rlv.distinctness})
            if not run.distinctness.all_distinct:
                return _abort(run, "distinctness check found a repeated tracker")

    el.open_beacon(cfg.beacon, env_seed)

    if rlv.enabled and rlv.policy == TRACKERS_FIRST:
        order = el.plan_order()
        sampled = [next(order) for _ in range(contest.reveal_budget)]
        run.publication = reveal_trackers(column, TRACKERS_FIRST, sampled=sampled, post=_poster(el))
        if run.publication.aborted:
            return _abort(run, "sampled trackers are not distinct")

    transcript, battery = run_rlt(el.reveal_stream(), contest, cfg.trim, seed_hex=plan_seed.hex())
    if (cfg.pet_fallback and transcript.outcome.kind == "escalate"
            and transcript.outcome.reason == REVEAL_BUDGET_EXHAUSTED):
        transcript = pet_fallback(el, transcript, battery)
    run.transcript = transcript
    el.board.append("tally", "rlt", transcript.to_dict()["outcome"])

    if rlv.enabled:
        if rlv.policy == VOTES_THEN_TRACKERS:
            votes = dict(zip(transcript.reveal_order, transcript.revealed_votes))
            run.publication = reveal_trackers(column, VOTES_THEN_TRACKERS, revealed=transcript.reveal_order,
                                              votes=votes, post=_poster(el))
        else:
            votes = dict(zip(transcript.reveal_order, transcript.revealed_votes))
            for rec in run.publication.published:
                rec["vote"] = votes.get(rec["position"])
        authority = NotificationAuthority(commitments, assignment, cfg.election_seed, rlv.space)
        authority.close_tally()
        run.notifications = len(authority.notify_all())
        el.board.append("notification", "rlv", {"delivered": run.notifications, "phase": authority.phase})
    run.exit_code = EXIT_OK if transcript.outcome.kind == "winners" else EXIT_ESCALATED
    return run


def _poster(el: Election):
    def post(rec):
        return el.board.append("tracker_reveal", f"mix-out-{rec['position']:06d}",
                               {k: rec[k] for k in ("position", "tracker", "vote")}).index
    return post


def _abort(run: TallyRun, why: str) -> TallyRun:
    run.election.board.append("abort", "rlv", {"reason": TRACKER_COLLISION, "detail": why})
    run.transcript.outcome = Decision("escalate", reason=TRACKER_COLLISION)
    run.exit_code = EXIT_VERIFICATION
    return run


def write_outputs(run: TallyRun, cfg: ElectionConfig) -> dict:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"transcript": out / TRANSCRIPT, "board": out / BOARD, "encoding": out / ENCODING}
    files["transcript"].write_text(run.transcript.to_json() + "\n")
    run.election.board.dump(files["board"])
    files["encoding"].write_text(json.dumps(run.election.encoding.to_json(), sort_keys=True) + "\n")
    if run.transcript.pet_continuation is not None:
        files["pet_continuation"] = out / PET_CONTINUATION
        files["pet_continuation"].write_text(
            json.dumps(run.transcript.pet_continuation, sort_keys=True, separators=(",", ":")) + "\n")
    if cfg.rlv.enabled:
        files["tracker_board"] = out / TRACKER_BOARD
        files["commitment_board"] = out / COMMITMENT_BOARD
        files["rlv"] = out / RLV_SUMMARY
        pub = run.publication
        with open(files["tracker_board"], "w") as fh:
            for rec in (pub.published if pub else []):
                fh.write(json.dumps({"tracker": rec["tracker"], "vote": rec["vote"],
                                     "board_index": rec["board_index"]}, sort_keys=True) + "\n")
        with open(files["commitment_board"], "w") as fh:
            for v in sorted(run.commitments):
                fh.write(json.dumps(run.commitments[v].published(), sort_keys=True) + "\n")
        summary = {
            "policy": cfg.rlv.policy,
            "voters": cfg.contest.num_ballots,
            "tracker_space": [cfg.rlv.space.lo, cfg.rlv.space.hi],
            "trackers_published": len(pub.published) if pub else 0,
            "aborted": run.transcript.outcome.reason == TRACKER_COLLISION,
            "distinctness": None if run.distinctness is None else
            {**run.distinctness.to_json(), "mode": cfg.rlv.distinctness},
            "notifications": run.notifications,
        }
        files["rlv"].write_text(json.dumps(summary, sort_keys=True) + "\n")
    run.files = files
    return files


def verify_board(path) -> BulletinBoard:
    """Load and check the hash chain; raises BoardIntegrityError on any tampering."""
    return BulletinBoard.load(path)

