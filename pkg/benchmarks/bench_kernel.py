"""Compiled kernel against the numpy fallback.

    python3 benchmarks/bench_kernel.py [--repeat 5]

Times ``advance`` over a long stream for a 10-candidate battery and a full
Monte Carlo trial, checks that both backends produce identical arrays, and
prints one line per workload.
"""
import argparse
import time

import numpy as np

from rlt import kernel
from rlt.montecarlo import Population, simulate_trial
from rlt.tally import BallotInterpretation, ContestSpec, HypothesisBattery


def drive(mod, contest, codes, table):
    b = HypothesisBattery(contest, record_history=False, capacity=len(codes) + 4)
    arrays = [b.coeffs, b.lo, b.hi, b.deg, b.e2, b.draws, b.hsum, b.log_y, b.log_max,
              b.status, b.rejected_at, b.counts]
    N = contest.num_ballots
    pos = 0
    while pos < len(codes):
        pos += mod.advance(*arrays, codes[pos:], table, N, contest.per_test_alpha, 1e-20, None)
    return arrays


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--draws", type=int, default=3000)
    args = ap.parse_args()
    backends = kernel.backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the fallback is available")

    C = 10
    contest = ContestSpec(C, 1, 100_000, 0.001)
    types = [BallotInterpretation.of([c], 1, C) for c in range(C)] + [BallotInterpretation.of(None)]
    table = HypothesisBattery(contest).label_table(types)
    shares = np.array([0.14] + [0.095] * 9 + [0.005])
    codes = np.random.default_rng(0).choice(len(types), size=args.draws, p=shares / shares.sum())

    results = {}
    for name, mod in backends.items():
        t, arrays = best_of(lambda: drive(mod, contest, codes, table), args.repeat)
        results[name] = (t, arrays)
        print(f"advance  {name:9s} {C * (C - 1)} pairs x {args.draws} draws: {t * 1e3:9.2f} ms")
    if len(results) == 2:
        same = all(np.array_equal(a, b) for a, b in zip(results["compiled"][1], results["python"][1]))
        print(f"advance  speedup {results['python'][0] / results['compiled'][0]:.1f}x, identical arrays: {same}")

    pop = Population.from_shares({(0,): 0.45, (1,): 0.35, (2,): 0.2}, 10_000, 1, 3)
    c3 = ContestSpec(3, 1, 10_000, 0.1, per_test_alpha=0.05)
    trial = {}
    for name, mod in backends.items():
        saved = kernel.advance
        kernel.advance = mod.advance
        try:
            t, out = best_of(lambda: [simulate_trial(c3, pop, np.random.default_rng(s)) for s in range(20)],
                             args.repeat)
        finally:
            kernel.advance = saved
        trial[name] = (t, [r for r, _ in out])
        print(f"trials   {name:9s} 20 x 3-candidate, 10% margin: {t * 1e3:9.2f} ms")
    if len(trial) == 2:
        print(f"trials   speedup {trial['python'][0] / trial['compiled'][0]:.1f}x, "
              f"identical sample sizes: {trial['python'][1] == trial['compiled'][1]}")


if __name__ == "__main__":
    main()
