# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled core for the mixture-martingale updates.

The integrand of the test statistic is kept in the Bernstein basis on
[0, 1].  Multiplying by a linear factor ``(1 - g) + a*g`` is a positive
recurrence on the coefficients and the integral is their mean, so no
cancellation occurs.  Every expression here is mirrored operation for
operation in ``rlt._fallback`` so both backends agree bit for bit.
"""
from libc.math cimport exp, frexp, ldexp, log
from libc.stdint cimport int8_t, int64_t

cdef double LN2 = 0.6931471805599453
cdef double SCALE_HI = 1.3407807929942597e154   # 2**512
cdef double SCALE_LO = 7.458340731200207e-155   # 2**-512


cdef inline double _step(double* c, int64_t* lo, int64_t* hi, int64_t* deg,
                         int64_t* e2, double a, double trim) noexcept nogil:
    cdef int64_t n = deg[0]
    cdef int64_t k
    cdef int64_t l = lo[0]
    cdef int64_t h = hi[0] + 1
    cdef double m = 0.0, s = 0.0, thr
    cdef int e
    cdef double inv = 1.0 / <double>(n + 1)
    k = h
    while k >= l:
        if k > 0:
            c[k] = (<double>(n + 1 - k) * c[k] + a * <double>k * c[k - 1]) * inv
        else:
            c[k] = (<double>(n + 1 - k) * c[k] + a * <double>k * 0.0) * inv
        if c[k] > m:
            m = c[k]
        k -= 1
    thr = trim * m
    while l < h and c[l] <= thr:
        c[l] = 0.0
        l += 1
    while h > l and c[h] <= thr:
        c[h] = 0.0
        h -= 1
    if m > SCALE_HI or m < SCALE_LO:
        frexp(m, &e)
        for k in range(l, h + 1):
            c[k] = ldexp(c[k], -e)
        e2[0] += e
    for k in range(l, h + 1):
        s += c[k]
    lo[0] = l
    hi[0] = h
    deg[0] = n + 1
    return log(s / <double>(n + 2)) + <double>e2[0] * LN2


def row_step(double[::1] c, int64_t lo, int64_t hi, int64_t deg, int64_t e2,
             double a, double trim):
    """Multiply one integrand by ``(1 - g) + a*g`` in place.

    Returns ``(lo, hi, deg, e2, log_y)``.  ``c`` needs room for ``hi + 2``.
    """
    cdef double ly
    ly = _step(&c[0], &lo, &hi, &deg, &e2, a, trim)
    return lo, hi, deg, e2, ly


def advance(double[:, ::1] coeffs, int64_t[::1] lo, int64_t[::1] hi,
            int64_t[::1] deg, int64_t[::1] e2, int64_t[::1] draws,
            int64_t[::1] hsum, double[::1] log_y, double[::1] log_max,
            int8_t[::1] status, int64_t[::1] rejected_at, int64_t[:, ::1] counts,
            const int64_t[::1] codes, const int8_t[:, ::1] table,
            int64_t N, double alpha, double trim, double[:, ::1] hist=None):
    """Feed a block of ballots (as type codes) to every open pair.

    Labels come from ``table[code, pair]`` in half units (0, 1, 2).  ``N``
    is the population size, or 0 for sampling with replacement.  Stops after
    the first draw on which any pair is newly rejected and returns the
    number of draws consumed.  Status: 0 open, 1 rejected, 2 rejected with
    certainty (the sampled sum alone exceeds N/2).
    """
    cdef Py_ssize_t m = codes.shape[0]
    cdef Py_ssize_t P = coeffs.shape[0]
    cdef Py_ssize_t i, r
    cdef int64_t hx, j, num, den
    cdef double p, ly
    cdef bint fresh, keep = hist is not None
    cdef Py_ssize_t used = m
    with nogil:
        for i in range(m):
            fresh = False
            for r in range(P):
                if status[r] != 0:
                    continue
                hx = table[codes[i], r]
                j = draws[r] + 1
                draws[r] = j
                if hx == 2:
                    counts[r, 0] += 1
                elif hx == 0:
                    counts[r, 1] += 1
                else:
                    counts[r, 2] += 1
                if N > 0:
                    den = N - hsum[r]
                    num = hx * (N - j + 1)
                    hsum[r] += hx
                    if hsum[r] > N:
                        status[r] = 2
                        rejected_at[r] = j
                        fresh = True
                        if keep:
                            hist[i, r] = 0.0
                        continue
                    if den != 0 and num != den:
                        ly = _step(&coeffs[r, 0], &lo[r], &hi[r], &deg[r], &e2[r],
                                   <double>num / <double>den, trim)
                        log_y[r] = ly
                        if ly > log_max[r]:
                            log_max[r] = ly
                else:
                    hsum[r] += hx
                    if hx != 1:
                        ly = _step(&coeffs[r, 0], &lo[r], &hi[r], &deg[r], &e2[r],
                                   <double>hx, trim)
                        log_y[r] = ly
                        if ly > log_max[r]:
                            log_max[r] = ly
                p = exp(-log_max[r])
                if keep:
                    hist[i, r] = p
                if p <= alpha:
                    status[r] = 1
                    rejected_at[r] = j
                    fresh = True
            if fresh:
                used = i + 1
                break
    return used
