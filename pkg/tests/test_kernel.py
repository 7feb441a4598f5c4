"""Compiled core and numpy fallback must agree bit for bit."""
import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from rlt import _fallback, kernel
from rlt.tally import ContestSpec, HypothesisBattery

BACKENDS = kernel.backends()
needs_compiled = pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")


def _row_path(mod, a_values, trim):
    c = np.zeros(len(a_values) + 2)
    c[0] = 1.0
    lo = hi = deg = e2 = 0
    out = []
    for a in a_values:
        lo, hi, deg, e2, ly = mod.row_step(c, lo, hi, deg, e2, a, trim)
        out.append(ly)
    return np.array(out), c, (lo, hi, deg, e2)


@needs_compiled
@pytest.mark.parametrize("trim", [0.0, 1e-20, 1e-8])
def test_row_step_bit_identical(trim):
    rng = np.random.default_rng(11)
    a_values = list(rng.choice([0.0, 2.0, 0.37, 1.9, 1.25], size=2500))
    ya, ca, sa = _row_path(BACKENDS["compiled"], a_values, trim)
    yb, cb, sb = _row_path(_fallback, a_values, trim)
    assert sa == sb
    assert np.array_equal(ya, yb)
    assert np.array_equal(ca, cb)


def _battery_arrays(b):
    return [b.coeffs, b.lo, b.hi, b.deg, b.e2, b.draws, b.hsum, b.log_y, b.log_max,
            b.status, b.rejected_at, b.counts]


def _drive(mod, contest, codes, table, trim):
    b = HypothesisBattery(contest, trim, record_history=False, capacity=len(codes) + 4)
    arrs = _battery_arrays(b)
    hist = np.full((len(codes), len(b.pairs)), np.nan)
    N = 0 if contest.sampling == "with_replacement" else contest.num_ballots
    pos, steps = 0, []
    while pos < len(codes):
        used = mod.advance(*arrs, codes[pos:], table, N, contest.per_test_alpha, trim, hist[pos:])
        pos += used
        steps.append(used)
    return arrs, hist, steps


@needs_compiled
@pytest.mark.parametrize("sampling", ["without_replacement", "with_replacement"])
def test_advance_bit_identical(sampling):
    contest = ContestSpec(4, 1, 3000, 0.3, sampling=sampling)
    b = HypothesisBattery(contest)
    from rlt.tally import BallotInterpretation
    types = [BallotInterpretation.of([c], 1, 4) for c in range(4)] + [BallotInterpretation.of(None)]
    table = b.label_table(types)
    rng = np.random.default_rng(12)
    codes = rng.choice(5, size=2500, p=[0.34, 0.3, 0.2, 0.06, 0.1]).astype(np.int64)
    A, ha, sa = _drive(BACKENDS["compiled"], contest, codes, table, 1e-20)
    B, hb, sb = _drive(_fallback, contest, codes, table, 1e-20)
    assert sa == sb
    for x, y in zip(A, B):
        assert np.array_equal(x, y)
    assert np.array_equal(ha, hb, equal_nan=True)
    assert (A[9] != 0).any()  # some rejection happened, so freezing was exercised


def test_advance_stops_after_first_new_rejection():
    contest = ContestSpec(2, 1, 100, 0.1)
    b = HypothesisBattery(contest)
    from rlt.tally import BallotInterpretation
    table = b.label_table([BallotInterpretation.of([0], 1, 2)])
    used = b.advance(np.zeros(20, dtype=np.int64), table)
    assert used == 5
    assert b.is_rejected(0, 1)


def test_pure_python_env_selects_fallback():
    code = "from rlt import kernel; print(kernel.BACKEND)"
    env = dict(os.environ, RLT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_compiled
def test_default_backend_is_compiled():
    if os.environ.get("RLT_PURE_PYTHON"):
        pytest.skip("pure Python forced")
    assert importlib.reload(kernel).BACKEND == "compiled"
