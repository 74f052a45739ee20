"""Finitely supported laws on {0, ..., K} and the two discrete interaction constructions.

Laws hold either doubles or ``fractions.Fraction`` entries. With fractions every
operation here is exact, which is how normalization of convolution products is
checked without tolerance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .config import NORMALIZATION_TOL, POINTWISE_SUM_TOL


class LawError(ValueError):
    pass


def _is_exact(values):
    return all(isinstance(v, (Fraction, int)) and not isinstance(v, bool) for v in values)


def _coerce(values):
    values = tuple(values)
    if not values:
        raise LawError("empty support")
    if _is_exact(values):
        return tuple(Fraction(v) for v in values)
    return tuple(float(v) for v in values)


@dataclass(frozen=True)
class WeightFunction:
    """Nonnegative finite weights indexed by k = 0..support_max."""

    weights: tuple

    def __post_init__(self):
        w = _coerce(self.weights)
        for k, v in enumerate(w):
            if not (v >= 0 and math.isfinite(v)):
                raise LawError(f"weight at k={k} is {v}, must be finite and >= 0")
        object.__setattr__(self, "weights", w)

    @property
    def values(self):
        return self.weights

    @property
    def support_max(self):
        return len(self.weights) - 1

    @property
    def exact(self):
        return isinstance(self.weights[0], Fraction)

    def as_array(self):
        return np.array([float(v) for v in self.weights])


@dataclass(frozen=True)
class DiscreteLaw:
    """Probability law on {0, ..., support_max}."""

    probs: tuple

    def __post_init__(self):
        p = _coerce(self.probs)
        for k, v in enumerate(p):
            if not (0 <= v <= 1):
                raise LawError(f"probability at k={k} is {v}, outside [0, 1]")
        total = sum(p) if isinstance(p[0], Fraction) else math.fsum(p)
        if isinstance(total, Fraction):
            if total != 1:
                raise LawError(f"probabilities sum to {total}, expected exactly 1")
        elif abs(total - 1.0) > NORMALIZATION_TOL:
            raise LawError(f"probabilities sum to {total!r}, expected 1")
        object.__setattr__(self, "probs", p)

    @property
    def values(self):
        return self.probs

    @property
    def support_max(self):
        return len(self.probs) - 1

    @property
    def exact(self):
        return isinstance(self.probs[0], Fraction)

    def as_array(self):
        return np.array([float(v) for v in self.probs])

    def mean(self):
        return sum(k * p for k, p in enumerate(self.probs))

    def variance(self):
        m = self.mean()
        return sum((k - m) ** 2 * p for k, p in enumerate(self.probs))

    def to_json(self):
        return [float(v) for v in self.probs]

    @classmethod
    def delta(cls, k=0, exact=False):
        one, zero = (Fraction(1), Fraction(0)) if exact else (1.0, 0.0)
        return cls(tuple([zero] * k + [one]))

    @classmethod
    def bernoulli(cls, p):
        return cls((1 - p, p))

    @classmethod
    def uniform(cls, support_max, exact=False):
        n = support_max + 1
        v = Fraction(1, n) if exact else 1.0 / n
        return cls((v,) * n)


def _check_compatible(p_free, p_int):
    if p_free.support_max != p_int.support_max:
        raise LawError(
            f"incompatible supports: {p_free.support_max} vs {p_int.support_max}")


def mean_one_check(p_free, p_int):
    """Expectation of ``p_int`` under ``p_free``; a valid pointwise term gives 1."""
    _check_compatible(p_free, p_int)
    terms = [a * b for a, b in zip(p_free.probs, p_int.weights)]
    if all(isinstance(t, Fraction) for t in terms):
        return sum(terms)
    return math.fsum(float(t) for t in terms)


def pointwise_interaction(p_free, p_int):
    """Law ``k -> p_free(k) * p_int(k)``.

    Rejected unless every product lies in [0, 1] and the products sum to 1
    (within ``POINTWISE_SUM_TOL``, or exactly for rational inputs).
    """
    if not isinstance(p_int, WeightFunction):
        p_int = WeightFunction(tuple(p_int))
    _check_compatible(p_free, p_int)
    prod = [a * b for a, b in zip(p_free.probs, p_int.weights)]
    for k, v in enumerate(prod):
        if not 0 <= v <= 1:
            raise LawError(f"pointwise product at k={k} is {float(v):.6g}, outside [0, 1]")
    total = mean_one_check(p_free, p_int)
    exact = isinstance(total, Fraction)
    if (exact and total != 1) or (not exact and abs(total - 1.0) > POINTWISE_SUM_TOL):
        raise LawError(f"pointwise product sums to {float(total)!r}, expected 1")
    if not exact:
        # renormalize away the admitted residual so the result is a law at 1e-12
        prod = [float(v) / total for v in prod]
    return DiscreteLaw(tuple(prod))


def discrete_convolution(f, g):
    """``(f*g)(k) = sum_{a+b=k} f(a) g(b)``; two laws give a law."""
    fv, gv = f.values, g.values
    if isinstance(fv[0], Fraction) and isinstance(gv[0], Fraction):
        out = [Fraction(0)] * (len(fv) + len(gv) - 1)
        for a, x in enumerate(fv):
            if x:
                for b, y in enumerate(gv):
                    out[a + b] += x * y
        out = tuple(out)
    else:
        out = tuple(np.convolve(np.array(fv, dtype=float), np.array(gv, dtype=float)).tolist())
    if isinstance(f, DiscreteLaw) and isinstance(g, DiscreteLaw):
        if not isinstance(out[0], Fraction):
            # np.convolve rounding can push entries a few ulps past 1
            out = tuple(min(max(v, 0.0), 1.0) for v in out)
        return DiscreteLaw(out)
    return WeightFunction(out)


def convolution_interaction(p_free, p_int_hat):
    """Interacting law ``p_free * p_int_hat``; any pair of laws is admissible."""
    if not isinstance(p_int_hat, DiscreteLaw):
        raise LawError("interaction term of the convolution construction must be a law")
    return discrete_convolution(p_free, p_int_hat)


def convolution_power(base, n):
    """n-fold convolution of ``base`` with itself, by repeated squaring."""
    if n < 1:
        raise ValueError(f"power must be >= 1, got {n}")
    result = None
    square = base
    while n:
        if n & 1:
            result = square if result is None else discrete_convolution(result, square)
        n >>= 1
        if n:
            square = discrete_convolution(square, square)
    return result


def _normal_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def partial_sum_clt_distance(base, n):
    """Kolmogorov distance between the standardized n-fold sum and N(0, 1).

    The lattice CDF is right-continuous; it is compared with the normal CDF at
    every support point (both the value and the left limit) and at the midpoints
    between consecutive support points.
    """
    var = float(base.variance())
    if not var > 0:
        raise LawError("base law has zero variance")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    mean = float(base.mean())
    law = convolution_power(base, n)
    p = law.as_array()
    cdf = np.cumsum(p)
    left = np.concatenate([[0.0], cdf[:-1]])
    scale = math.sqrt(n * var)
    ks = np.arange(p.size)
    z = (ks - n * mean) / scale
    phi = np.array([_normal_cdf(v) for v in z])
    dist = max(np.max(np.abs(cdf - phi)), np.max(np.abs(left - phi)))
    zm = (ks[:-1] + 0.5 - n * mean) / scale
    if zm.size:
        phim = np.array([_normal_cdf(v) for v in zm])
        dist = max(dist, np.max(np.abs(cdf[:-1] - phim)))
    return float(dist)
