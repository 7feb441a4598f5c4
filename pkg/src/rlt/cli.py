"""``rlt`` command line.

Exit codes: 0 success, 2 escalated outcome, 3 verification failure
(hash chain, replay mismatch, tracker distinctness), 4 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

from rlt.beacon import BeaconError, seed_override
from rlt.config import ConfigError, load_config
from rlt.crypto.board import BoardIntegrityError
from rlt.martingale import min_unanimous_samples
from rlt.montecarlo import campaign_from_config, fmt
from rlt.pipeline import (
    COMMITMENT_BOARD,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_VERIFICATION,
    RLV_SUMMARY,
    TRACKER_BOARD,
    TRACKER_COLLISION,
    BOARD,
    run_election,
    verify_board,
    write_outputs,
)
from rlt.selene import TrackerSpace
from rlt.tally import RltTranscript, replay

TABLE1_ALPHAS = [10.0 ** -e for e in range(1, 10)]
TABLE1_EXPECTED = {
    2: [5, 9, 13, 17, 21, 24, 28, 31, 35],
    10: [9, 13, 17, 20, 24, 27, 31, 34, 38],
}


def table1_rows() -> dict:
    # threshold (C - 1) / alpha: Bonferroni over the C - 1 pairs the winner must beat
    return {C: [min_unanimous_samples((C - 1) * 10 ** e) for e in range(1, 10)] for C in TABLE1_EXPECTED}


def cmd_table1(args) -> int:
    start = time.perf_counter()
    rows = table1_rows()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["candidates"] + [f"{a:.0e}" for a in TABLE1_ALPHAS])
    for C, cells in rows.items():
        w.writerow([C] + cells)
    text = buf.getvalue()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    bad = [(C, i) for C in rows for i, (a, b) in enumerate(zip(rows[C], TABLE1_EXPECTED[C])) if a != b]
    for C, i in bad:
        print(f"mismatch: {C} candidates, alpha={TABLE1_ALPHAS[i]:.0e}: got {rows[C][i]}, "
              f"expected {TABLE1_EXPECTED[C][i]}", file=sys.stderr)
    print(f"table1: {'ok' if not bad else 'MISMATCH'} in {time.perf_counter() - start:.3f}s", file=sys.stderr)
    return 1 if bad else EXIT_OK


def cmd_tally(args) -> int:
    cfg = load_config(args.config)
    env = seed_override()
    if args.replay:
        return _replay(cfg, Path(args.replay), env)
    run = run_election(cfg, env)
    files = write_outputs(run, cfg)
    t = run.transcript
    print(json.dumps({
        "outcome": t.to_dict()["outcome"],
        "ballots_revealed": t.ballots_revealed,
        "ballots_shrouded": t.ballots_shrouded,
        "pet_draws": None if t.pet_continuation is None else len({r["pet_draw"] for r in t.pet_continuation}),
        "files": {k: str(v) for k, v in files.items()},
    }, sort_keys=True))
    return run.exit_code


def _replay(cfg, path: Path, env) -> int:
    """Check a transcript: its own martingales must recompute, and the config must regenerate it byte for byte."""
    recorded = path.read_text()
    t = RltTranscript.from_json(recorded)
    ok = True
    if t.outcome.reason != TRACKER_COLLISION:
        again = replay(t, cfg.trim)
        if again.to_json() != t.to_json():
            print("replay: martingales recomputed from the transcript differ", file=sys.stderr)
            ok = False
    regenerated = run_election(cfg, env).transcript.to_json() + "\n"
    if regenerated != recorded:
        print("replay: config does not regenerate the transcript byte for byte", file=sys.stderr)
        ok = False
    print(json.dumps({"replay": "identical" if ok else "mismatch", "transcript": str(path)}))
    return EXIT_OK if ok else EXIT_VERIFICATION


def cmd_montecarlo(args) -> int:
    cfg = load_config(args.config)
    if args.trials < 1:
        raise ConfigError("--trials", "must be at least 1")
    if args.workers < 1:
        raise ConfigError("--workers", "must be at least 1")
    result = campaign_from_config(cfg, args.trials, args.workers)
    result.write_csv(args.out)
    summary = result.summary()
    print(json.dumps(_rounded(summary), sort_keys=True))
    return EXIT_OK


def _rounded(v):
    if isinstance(v, dict):
        return {k: _rounded(x) for k, x in v.items()}
    return float(fmt(v)) if isinstance(v, float) else v


def cmd_rlv_report(args) -> int:
    tpath = Path(args.transcript)
    d = tpath.parent
    missing = [n for n in (RLV_SUMMARY, TRACKER_BOARD, COMMITMENT_BOARD) if not (d / n).exists()]
    if not tpath.exists() or missing:
        print(f"rlv-report: missing {', '.join(missing) or tpath.name} next to {tpath}", file=sys.stderr)
        return EXIT_CONFIG
    t = RltTranscript.from_json(tpath.read_text())
    summary = json.loads((d / RLV_SUMMARY).read_text())
    with open(d / TRACKER_BOARD) as fh:
        published = [json.loads(line) for line in fh if line.strip()]
    code = EXIT_OK
    chain = "not checked"
    if (d / BOARD).exists():
        try:
            verify_board(d / BOARD)
            chain = "ok"
        except BoardIntegrityError as e:
            chain = f"broken: {e}"
            code = EXIT_VERIFICATION
    voters = summary["voters"]
    space = TrackerSpace(*summary["tracker_space"])
    aborted = summary["aborted"] or t.outcome.reason == TRACKER_COLLISION
    distinct = summary["distinctness"]
    report = {
        "voters": voters,
        "ballots_revealed": t.ballots_revealed,
        "trackers_published": len({p["tracker"] for p in published}),
        "shrouded_fraction": float(fmt(t.ballots_shrouded / voters)) if voters else 0.0,
        "collision_ratio": float(fmt(space.collision_ratio(voters))),
        "distinctness": distinct,
        "aborted": aborted,
        "board_chain": chain,
        "policy": summary["policy"],
    }
    print(json.dumps(report, sort_keys=True))
    if aborted or (distinct and not distinct["all_distinct"]):
        code = EXIT_VERIFICATION
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rlt", description="Risk-limiting tallies and verification.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("tally", help="run a simulated election from a config")
    s.add_argument("--config", required=True)
    s.add_argument("--replay", metavar="TRANSCRIPT", help="verify an existing transcript instead of writing one")
    s.set_defaults(func=cmd_tally)
    s = sub.add_parser("table1", help="minimum unanimous sample sizes")
    s.add_argument("--out", help="CSV path (default stdout)")
    s.set_defaults(func=cmd_table1)
    s = sub.add_parser("montecarlo", help="replicated elections")
    s.add_argument("--config", required=True)
    s.add_argument("--trials", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1, help="parallel trial processes (rows are unchanged)")
    s.set_defaults(func=cmd_montecarlo)
    s = sub.add_parser("rlv-report", help="tracker shrouding summary")
    s.add_argument("--transcript", required=True)
    s.set_defaults(func=cmd_rlv_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, BeaconError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BoardIntegrityError as e:
        print(f"verification failure: {e}", file=sys.stderr)
        return EXIT_VERIFICATION


if __name__ == "__main__":
    sys.exit(main())
