"""Correlation functions of an interacting measure.

Four engines estimate ``<f_1 ... f_N>``:

* ``mc``: plain Monte Carlo over exact draws of the interacting law.
* ``semi_analytic_mc``: Monte Carlo over ``A`` only. At fixed ``A`` the field is
  Gaussian with covariance ``zeta(A)^-1 B_m^-1 zeta(A)^-T``, so the inner
  integral is a Wick pairing sum and is done exactly.
* ``quadrature``: the same ``A``-integrand on a tensor Gauss-Hermite grid.
* ``perturbative``: ``zeta(A)^-1`` truncated to a matrix polynomial in ``A`` and
  averaged term by term with Gaussian moments.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .config import (
    CHUNK_SIZE,
    PERTURBATIVE_MAX_ORDER,
    QUADRATURE_MAX_DIM,
    QUADRATURE_MAX_NODES,
    QUADRATURE_MIN_NODES,
)
from .gaussian import MomentSpec, hafnian_moment, isserlis_moment, perfect_matchings, sample
from .interaction import InteractionMap, sample_interacting
from .rng import chunk_bounds

METHODS = ("mc", "semi_analytic_mc", "quadrature", "perturbative")


class EngineError(ValueError):
    """Engine precondition violated (dimension cap, order cap, map type)."""


@dataclass(frozen=True, eq=False)
class Functional:
    """Covector acting on field space by dot product."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).ravel()
        if not np.all(np.isfinite(c)):
            raise ValueError("functional has non-finite coefficients")
        if not np.any(c):
            raise ValueError("functional is identically zero")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def coordinate(cls, i, dim):
        e = np.zeros(dim)
        e[i] = 1.0
        return cls(e)

    def __call__(self, u):
        return np.asarray(u) @ self.coeffs


@dataclass(frozen=True)
class CorrelatorEstimate:
    value: float
    stderr: float
    method: str
    n_or_nodes: int
    order: int | None = None
    convergence: float | None = None

    def to_dict(self):
        d = {
            "value": self.value,
            "stderr": self.stderr,
            "method": self.method,
            "n": self.n_or_nodes,
            "order": self.order,
        }
        if self.convergence is not None:
            d["convergence"] = self.convergence
        return d


def _functionals(fs, dim):
    out = [f if isinstance(f, Functional) else Functional(f) for f in fs]
    if not out:
        raise ValueError("need at least one functional")
    for f in out:
        if f.coeffs.size != dim:
            raise ValueError(f"functional of length {f.coeffs.size} on a {dim}-dim space")
    return out


def _mean_stderr(values):
    n = values.size
    mean = math.fsum(values.tolist()) / n
    if n < 2:
        return mean, 0.0
    dev = values - mean
    var = math.fsum((dev * dev).tolist()) / (n - 1)
    return mean, math.sqrt(var / n)


def mc_correlator(m, fs, n, seed, stream_id=0, workers=1):
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    fs = _functionals(fs, m.dim)
    u = sample_interacting(m, n, seed, stream_id, workers).values
    prod = np.ones(u.shape[0])
    for f in fs:
        prod = prod * f(u)
    value, err = _mean_stderr(prod)
    return CorrelatorEstimate(value, err, "mc", int(u.shape[0]))


def conditional_covariance(m, A):
    """Field covariance at fixed ``A``: ``zeta(A)^-1 B_m^-1 zeta(A)^-T``, batched."""
    A = np.atleast_2d(A)
    inv = np.asarray(m.zeta.inverse_apply(A)).reshape(A.shape[0], m.dim, m.dim)
    return np.einsum("nij,jk,nlk->nil", inv, m.mu_m.covariance, inv)


def _wick_integrand(m, fs, A):
    """Wick pairing sum of ``fs`` under the conditional covariance, per row of ``A``."""
    if len(fs) % 2:
        return np.zeros(np.atleast_2d(A).shape[0])
    F = np.stack([f.coeffs for f in fs])
    gram = np.einsum("ai,nij,bj->nab", F, conditional_covariance(m, A), F)
    total = np.zeros(gram.shape[0])
    for matching in perfect_matchings(range(len(fs))):
        term = np.ones(gram.shape[0])
        for i, j in matching:
            term = term * gram[:, i, j]
        total = total + term
    return total


def _integrand_chunks(m, fs, A, workers):
    bounds = chunk_bounds(A.shape[0], CHUNK_SIZE)

    def run(idx):
        lo, hi = bounds[idx]
        return _wick_integrand(m, fs, A[lo:hi])

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(bounds))))
    else:
        parts = [run(i) for i in range(len(bounds))]
    return np.concatenate(parts) if parts else np.empty(0)


def n_point_semi_analytic(m, fs, n_A, seed, stream_id=0, workers=1):
    """Average over ``A ~ mu_g`` of the exact Gaussian N-point function at fixed ``A``."""
    if n_A < 2:
        raise ValueError(f"need n_A >= 2, got {n_A}")
    fs = _functionals(fs, m.dim)
    # role 2 keeps these draws independent of mc_correlator's at the same seed
    A = sample(m.mu_g, n_A, seed, stream_id, workers, role=2).values
    A = A[m.zeta.admissible(A)]
    value, err = _mean_stderr(_integrand_chunks(m, fs, A, workers))
    return CorrelatorEstimate(value, err, "semi_analytic_mc", int(A.shape[0]))


def two_point_semi_analytic(m, f1, f2, n_A, seed, stream_id=0, workers=1):
    return n_point_semi_analytic(m, [f1, f2], n_A, seed, stream_id, workers)


def _gauss_hermite_grid(mu_g, nodes):
    x, w = hermegauss(nodes)
    w = w / math.sqrt(2.0 * math.pi)
    r = mu_g.dim
    z = np.array(list(itertools.product(x, repeat=r)))
    weights = np.prod(np.array(list(itertools.product(w, repeat=r))), axis=1)
    return z @ mu_g.cov_chol.T, weights


def _quadrature_value(m, fs, nodes, workers):
    A, weights = _gauss_hermite_grid(m.mu_g, nodes)
    keep = m.zeta.admissible(A)
    if not np.all(keep):
        raise EngineError(f"{np.count_nonzero(~keep)} quadrature nodes exceed the exponential norm bound")
    g = _integrand_chunks(m, fs, A, workers)
    # fsum is correctly rounded, hence independent of how the blocks were split
    return math.fsum((weights * g).tolist())


def n_point_quadrature(m, fs, nodes_per_dim, workers=1):
    r = m.mu_g.dim
    if r > QUADRATURE_MAX_DIM:
        raise EngineError(f"quadrature limited to dim(P) <= {QUADRATURE_MAX_DIM}, got {r}")
    if not QUADRATURE_MIN_NODES <= nodes_per_dim <= QUADRATURE_MAX_NODES:
        raise EngineError(
            f"nodes_per_dim must lie in [{QUADRATURE_MIN_NODES}, {QUADRATURE_MAX_NODES}], got {nodes_per_dim}")
    fs = _functionals(fs, m.dim)
    value = _quadrature_value(m, fs, nodes_per_dim, workers)
    coarse = _quadrature_value(m, fs, max(nodes_per_dim // 2, 1), workers)
    return CorrelatorEstimate(value, 0.0, "quadrature", nodes_per_dim, convergence=abs(value - coarse))


def two_point_quadrature(m, f1, f2, nodes_per_dim=60, workers=1):
    return n_point_quadrature(m, [f1, f2], nodes_per_dim, workers)


def _multi_indices(r, degree):
    for combo in itertools.combinations_with_replacement(range(r), degree):
        counts = [0] * r
        for a in combo:
            counts[a] += 1
        yield tuple(counts)


def _word_sums(f, gens, order):
    """Row vectors ``f^T sum_{words w with letter counts c} T^{w_1} ... T^{w_k}``, keyed by c."""
    r = gens.shape[0]
    table = {tuple([0] * r): np.asarray(f, dtype=float)}
    for k in range(1, order + 1):
        for counts in _multi_indices(r, k):
            acc = np.zeros(gens.shape[1])
            for a in range(r):
                if counts[a]:
                    prev = list(counts)
                    prev[a] -= 1
                    acc = acc + table[tuple(prev)] @ gens[a]
            table[counts] = acc
    return table


def two_point_perturbative(m, f1, f2, order):
    """Truncate ``zeta(A)^-1 = sum_{k<=K} (-M(A))^k / k!`` and average exactly.

    The truncated inverse enters the integrand twice, so the polynomial in ``A``
    has degree up to ``2K``; each monomial's Gaussian moment comes from the
    Wick pairing sum over ``mu_g``.
    """
    if not isinstance(m.zeta, InteractionMap):
        raise EngineError("perturbative engine needs an exponential-map interaction")
    if not 0 <= order <= PERTURBATIVE_MAX_ORDER:
        raise EngineError(f"order must lie in [0, {PERTURBATIVE_MAX_ORDER}], got {order}")
    f1, f2 = _functionals([f1, f2], m.dim)
    gens = m.zeta.gens.generators
    r = gens.shape[0]
    left = _word_sums(f1.coeffs, gens, order)
    right = _word_sums(f2.coeffs, gens, order)
    cov_m = m.mu_m.covariance
    moments = {}

    def moment(counts):
        if counts not in moments:
            indices = tuple(a for a in range(r) for _ in range(counts[a]))
            moments[counts] = isserlis_moment(m.mu_g, MomentSpec(indices)) if indices else 1.0
        return moments[counts]

    terms = []
    for cl, vl in left.items():
        kl = sum(cl)
        if not np.any(vl):
            continue
        for cr, vr in right.items():
            kr = sum(cr)
            if (kl + kr) % 2 or not np.any(vr):
                continue
            coef = (-1.0) ** (kl + kr) / (math.factorial(kl) * math.factorial(kr))
            total = tuple(a + b for a, b in zip(cl, cr))
            terms.append(coef * float(vl @ cov_m @ vr) * moment(total))
    return CorrelatorEstimate(math.fsum(terms), 0.0, "perturbative", 0, order=order)


def n_point_free_oracle(mu, fs):
    """Free Gaussian N-point function: pairing sum of ``B^-1(f_i, f_j)``."""
    fs = _functionals(fs, mu.dim)
    F = np.stack([f.coeffs for f in fs])
    gram = F @ mu.covariance @ F.T
    return hafnian_moment(gram, tuple(range(len(fs))))


def diag2_reference(var_g):
    """Closed-form ``<e_1 e_1>`` on the reference instance: ``E[exp(-2A)] = exp(2 var_g)``."""
    return math.exp(2.0 * var_g)
