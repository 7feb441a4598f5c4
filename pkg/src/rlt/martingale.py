"""Sequential test of ``mean <= t`` for a non-negative population.

The statistic after ``n`` draws is the uniform mixture over ``g`` in [0, 1]
of the product of the factors ``g * (x_j * jt / (t - St_{j-1}) - 1) + 1``,
where ``St_{j-1} = S_{j-1} / N`` and ``jt = 1 - (j - 1) / N`` (sampling
without replacement) or ``St = 0`` and ``jt = 1`` (with replacement).
Under the null it is a non-negative martingale with mean 1, so the running
maximum gives the anytime-valid p-value ``min(1, 1 / max_j Y_j)``.

The integrand is stored as Bernstein coefficients (see ``rlt._kernel``).
Coefficients that fall below ``trim`` times the largest one are dropped
from the ends of the live window.  All coefficients are non-negative and the
update is positive, so dropping them can only lower every later ``Y``:
trimming makes the test slightly conservative, never anti-conservative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational

import numpy as np

from rlt import kernel

INFINITE = math.inf
DEFAULT_TRIM = 1e-20


def as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, Rational)):
        return Fraction(x)
    if isinstance(x, float):
        if not math.isfinite(x):
            raise ValueError(f"label must be finite, got {x}")
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x)
    raise TypeError(f"cannot use {x!r} as an exact label")


@dataclass(frozen=True)
class PopulationParams:
    """Population size (``INFINITE`` for sampling with replacement), null mean, label bound."""

    population_size: int | float
    hypothesized_mean: Fraction = Fraction(1, 2)
    label_upper_bound: Fraction = Fraction(1)

    def __post_init__(self):
        t = as_fraction(self.hypothesized_mean)
        u = as_fraction(self.label_upper_bound)
        object.__setattr__(self, "hypothesized_mean", t)
        object.__setattr__(self, "label_upper_bound", u)
        n = self.population_size
        if n != INFINITE:
            if int(n) != n or n < 1:
                raise ValueError(f"population size must be a positive integer or INFINITE, got {n}")
            object.__setattr__(self, "population_size", int(n))
        if t <= 0:
            raise ValueError(f"hypothesized mean must be positive, got {t}")
        if t > u:
            raise ValueError(f"hypothesized mean {t} exceeds label upper bound {u}")

    @property
    def with_replacement(self) -> bool:
        return self.population_size == INFINITE


class MartingaleState:
    """Running state of the mixture martingale for one null hypothesis."""

    def __init__(self, params: PopulationParams, trim: float = DEFAULT_TRIM):
        if not 0.0 <= trim < 1.0:
            raise ValueError("trim must lie in [0, 1)")
        self.params = params
        self.trim = trim
        self.draws = 0
        self.running_sum = Fraction(0)
        self._c = np.zeros(16)
        self._c[0] = 1.0
        self._lo = 0
        self._hi = 0
        self.degree = 0
        self._exp2 = 0
        self.log_y = 0.0
        self.log_max = 0.0
        self.certainty_rejected = False

    def copy(self) -> "MartingaleState":
        other = MartingaleState.__new__(MartingaleState)
        other.__dict__.update(self.__dict__)
        other._c = self._c.copy()
        return other

    @property
    def current_Y(self) -> float:
        return math.exp(self.log_y)

    @property
    def max_Y(self) -> float:
        return math.exp(self.log_max)

    @property
    def log_scale(self) -> float:
        """Natural-log scale shared by the stored coefficients."""
        return self._exp2 * math.log(2.0)

    @property
    def poly_coeffs(self) -> np.ndarray:
        """Bernstein coefficients of the integrand, degree ``self.degree``, unscaled."""
        return self._c[: self.degree + 1].copy()

    def factor_slope(self, x) -> Fraction:
        """``x * jt / (t - St_{j-1})`` for the next draw; 1 means a neutral draw."""
        p = self.params
        x = as_fraction(x)
        if p.with_replacement:
            return x / p.hypothesized_mean
        n = p.population_size
        den = n * p.hypothesized_mean - self.running_sum
        if den == 0:
            return Fraction(1)
        return x * (n - self.draws) / den

    def update(self, x) -> "MartingaleState":
        p = self.params
        x = as_fraction(x)
        if x < 0 or x > p.label_upper_bound:
            raise ValueError(f"label {x} outside [0, {p.label_upper_bound}]")
        if self.certainty_rejected:
            raise ValueError("null already rejected with certainty; no further updates")
        if not p.with_replacement and self.draws >= p.population_size:
            raise ValueError("population exhausted")
        a = self.factor_slope(x)
        self.draws += 1
        self.running_sum += x
        if not p.with_replacement and self.running_sum > p.population_size * p.hypothesized_mean:
            self.certainty_rejected = True
            return self
        if a != 1:
            if self._hi + 2 > len(self._c):
                self._c = np.concatenate([self._c, np.zeros(len(self._c))])
            self._lo, self._hi, self.degree, self._exp2, ly = kernel.row_step(
                self._c, self._lo, self._hi, self.degree, self._exp2, float(a), self.trim
            )
            self.log_y = ly
            self.log_max = max(self.log_max, ly)
        assert self.log_y > -math.inf
        return self

    def p_value(self) -> float:
        if self.certainty_rejected:
            return 0.0
        return min(1.0, math.exp(-self.log_max))


def new_state(params: PopulationParams, trim: float = DEFAULT_TRIM) -> MartingaleState:
    return MartingaleState(params, trim)


def update(state: MartingaleState, x) -> MartingaleState:
    return state.update(x)


def p_value(state: MartingaleState) -> float:
    return state.p_value()


def min_unanimous_samples(threshold: float, t=Fraction(1, 2), max_draws: int = 100_000) -> int:
    """Smallest ``n`` for which ``n`` draws labelled 1 push ``max_Y`` to ``threshold``.

    Sampling with replacement, so the result does not depend on population
    size.  For ``t = 1/2`` this is the least ``n`` with
    ``(2**(n+1) - 1) / (n + 1) >= threshold``.
    """
    if threshold < 1:
        raise ValueError("threshold must be at least 1")
    if threshold == 1:
        return 0
    target = math.log(threshold)
    state = MartingaleState(PopulationParams(INFINITE, t))
    while state.draws < max_draws:
        state.update(1)
        if state.log_max >= target:
            return state.draws
    raise RuntimeError(f"threshold {threshold} not reached within {max_draws} draws")
