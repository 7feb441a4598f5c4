"""Pure numpy implementation of the martingale kernel.

Operation-for-operation twin of ``_kernel.pyx``: the same expressions in
the same order, sequential summation (``cumsum``) and libm ``log``/``exp``
through :mod:`math`, so results match the compiled core exactly.  The
coefficient arrays are processed densely; entries outside a row's window
are zero and stay zero, which is what the compiled windowed loop assumes.
"""
from __future__ import annotations

import math

import numpy as np

LN2 = 0.6931471805599453
SCALE_HI = 2.0**512
SCALE_LO = 2.0**-512


def _dense_step(c, n, a, trim, e2):
    """Step rows of ``c`` (2-D, modified copy returned) by per-row factors ``a``."""
    width = c.shape[1]
    k = np.arange(width, dtype=np.float64)
    prev = np.zeros_like(c)
    prev[:, 1:] = c[:, :-1]
    np1 = (n + 1).astype(np.float64)[:, None]
    new = ((np1 - k) * c + (a[:, None] * k) * prev) * (1.0 / np1)
    m = new.max(axis=1)
    thr = trim * m
    live = new > thr[:, None]
    first = live.argmax(axis=1)
    last = width - 1 - live[:, ::-1].argmax(axis=1)
    outside = (k[None, :] < first[:, None]) | (k[None, :] > last[:, None])
    new[outside] = 0.0
    e2 = e2.copy()
    for r in np.nonzero((m > SCALE_HI) | (m < SCALE_LO))[0]:
        e = math.frexp(m[r])[1]
        new[r] = np.ldexp(new[r], -e)
        e2[r] += e
    s = np.cumsum(new, axis=1)[:, -1]
    log_y = np.array(
        [math.log(s[r] / float(n[r] + 2)) + float(e2[r]) * LN2 for r in range(len(s))]
    )
    return new, first, last, e2, log_y


def row_step(c, lo, hi, deg, e2, a, trim):
    width = hi + 2
    block = c[None, :width]
    new, first, last, e2s, log_y = _dense_step(
        block, np.array([deg]), np.array([float(a)]), trim, np.array([e2])
    )
    c[:width] = new[0]
    return int(first[0]), int(last[0]), deg + 1, int(e2s[0]), float(log_y[0])


def advance(coeffs, lo, hi, deg, e2, draws, hsum, log_y, log_max, status,
            rejected_at, counts, codes, table, N, alpha, trim, hist=None):
    m = len(codes)
    for i in range(m):
        live = np.nonzero(status == 0)[0]
        if len(live) == 0:
            continue
        hx = table[codes[i], live].astype(np.int64)
        j = draws[live] + 1
        draws[live] = j
        counts[live, 0] += hx == 2
        counts[live, 1] += hx == 0
        counts[live, 2] += hx == 1
        if N > 0:
            den = N - hsum[live]
            num = hx * (N - j + 1)
            hsum[live] += hx
            certain = hsum[live] > N
            step = ~certain & (den != 0) & (num != den)
            a = np.where(step, num, 0).astype(np.float64) / np.where(step, den, 1).astype(np.float64)
        else:
            hsum[live] += hx
            certain = np.zeros(len(live), dtype=bool)
            step = hx != 1
            a = hx.astype(np.float64)
        rows = live[step]
        if len(rows):
            width = int(hi[rows].max()) + 2
            new, first, last, e2s, ly = _dense_step(
                coeffs[rows, :width], deg[rows], a[step], trim, e2[rows]
            )
            coeffs[rows, :width] = new
            lo[rows] = first
            hi[rows] = last
            deg[rows] += 1
            e2[rows] = e2s
            log_y[rows] = ly
            log_max[rows] = np.maximum(log_max[rows], ly)
        fresh = False
        for idx, r in enumerate(live):
            if certain[idx]:
                status[r] = 2
                rejected_at[r] = j[idx]
                fresh = True
                if hist is not None:
                    hist[i, r] = 0.0
                continue
            p = math.exp(-log_max[r])
            if hist is not None:
                hist[i, r] = p
            if p <= alpha:
                status[r] = 1
                rejected_at[r] = j[idx]
                fresh = True
        if fresh:
            return i + 1
    return m
