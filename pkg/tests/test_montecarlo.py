import csv
import math

import numpy as np
import pytest

from rlt.montecarlo import COLUMNS, Population, fmt, run_campaign, simulate_trial, trial_seed
from rlt.tally import WITH_REPLACEMENT, BallotInterpretation, ContestSpec, run_rlt


def two_way(margin, N):
    return Population.from_shares({(0,): (1 + margin) / 2, (1,): (1 - margin) / 2}, N, 1, 2)


def test_population():
    pop = Population.from_shares({(0,): 0.41, (1,): 0.39, (2,): 0.2}, 10_000, 1, 3)
    assert pop.counts == (4100, 3900, 2000) and pop.size == 10_000
    assert list(pop.tallies(3)) == [4100, 3900, 2000]
    assert pop.correct_winner_sets(1, 3) == {frozenset({0})}
    tie = Population.from_shares({(0,): 0.5, (1,): 0.5}, 10, 1, 2)
    assert tie.correct_winner_sets(1, 2) == {frozenset({0}), frozenset({1})}
    inv = Population.from_shares({(0,): 0.9, None: 0.1}, 100, 1, 10)
    assert inv.counts == (90, 10) and not inv.types[1].valid


def test_simulated_trial_matches_full_tally():
    contest = ContestSpec(3, 1, 2000, 0.05)
    pop = Population.from_shares({(0,): 0.45, (1,): 0.35, (2,): 0.15, None: 0.05}, 2000, 1, 3)
    kinds = np.repeat(np.arange(len(pop.types)), pop.counts)
    for t in range(20):
        seed = trial_seed("match", t)
        revealed, d = simulate_trial(contest, pop, np.random.Generator(np.random.PCG64(seed)))
        order = np.random.Generator(np.random.PCG64(seed)).permutation(2000)
        stream = [(int(i), pop.types[kinds[i]]) for i in order]
        tr, _ = run_rlt(stream, contest)
        assert revealed == tr.ballots_revealed
        assert (d.kind, d.winners, d.reason) == (tr.outcome.kind, tr.outcome.winners, tr.outcome.reason)


def test_with_replacement_counts_distinct_ballots():
    contest = ContestSpec(2, 1, 30, 0.001, sampling=WITH_REPLACEMENT)
    revealed, d = simulate_trial(contest, two_way(0.2, 30), np.random.default_rng(0))
    # 30 ballots, budget 15 distinct: repeats mean more draws than ballots revealed
    assert revealed <= 15


def test_sample_size_shrinks_with_margin():
    contest = ContestSpec(2, 1, 10_000, 0.1)
    means = []
    for m in (0.1, 0.5, 0.9, 1.0):
        res = run_campaign(contest, two_way(m, 10_000), 5000, f"margin-{m}")
        s = res.summary()
        means.append(s["mean_revealed"])
        assert s["wrong_outcome_rate"] <= 0.1 + 3 * math.sqrt(0.1 * 0.9 / 5000)
    assert means == sorted(means, reverse=True)
    assert means[-1] == 5.0


def test_exact_tie_per_pair_rate():
    N, trials = 1000, 5000
    contest = ContestSpec(2, 1, N, 0.1, max_reveal_fraction=1.0)
    rows = run_campaign(contest, two_way(0.0, N), trials, "tie").rows
    bound = 0.1 + 3 * math.sqrt(0.1 * 0.9 / trials)
    for w in (0, 1):
        rate = sum(r["outcome"] == f"winners:{w}" for r in rows) / trials
        assert rate <= bound


def test_campaign_rows_and_csv(tmp_path):
    contest = ContestSpec(3, 1, 300, 0.1)
    pop = Population.from_shares({(0,): 0.6, (1,): 0.3, (2,): 0.1}, 300, 1, 3)
    res = run_campaign(contest, pop, 30, "abc")
    assert len(res.rows) == 30
    path = tmp_path / "rows.csv"
    res.write_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == COLUMNS and len(rows) == 31
    again = run_campaign(contest, pop, 30, "abc")
    assert [r["ballots_revealed"] for r in again.rows] == [r["ballots_revealed"] for r in res.rows]
    with pytest.raises(ValueError):
        run_campaign(contest, pop, 0)


def test_fmt_twelve_significant_digits():
    assert fmt(1 / 3) == "0.333333333333"
    assert fmt(123456.7890123456) == "123456.789012"
    assert fmt(True) == "1" and fmt(17) == "17"


def test_trial_seeds_are_independent():
    seeds = {trial_seed("h", t) for t in range(1000)}
    assert len(seeds) == 1000
    assert trial_seed("h", 0) != trial_seed("g", 0)


def test_vote_for_two_population():
    contest = ContestSpec(4, 2, 1000, 0.1)
    pop = Population.from_shares({(0, 1): 0.4, (0, 2): 0.3, (1, 3): 0.3}, 1000, 2, 4)
    assert pop.correct_winner_sets(2, 4) == {frozenset({0, 1})}
    revealed, d = simulate_trial(contest, pop, np.random.default_rng(3))
    assert d.kind == "winners" and d.winners == {0, 1}
    assert isinstance(pop.types[0], BallotInterpretation)


def test_workers_do_not_change_rows():
    contest = ContestSpec(3, 1, 400, 0.1)
    pop = Population.from_shares({(0,): 0.5, (1,): 0.3, (2,): 0.2}, 400, 1, 3)
    strip = lambda res: [{k: v for k, v in r.items() if k != "wall_time"} for r in res.rows]
    assert strip(run_campaign(contest, pop, 13, "w", workers=3)) == strip(run_campaign(contest, pop, 13, "w"))
