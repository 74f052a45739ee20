"""Centered Gaussian measures on R^d given by a precision form.

A measure is fixed by its precision matrix ``B`` (density proportional to
``exp(-B(x, x) / 2)``) and carries the covariance ``B^-1``. It is a probability
law by construction; no partition function is ever evaluated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import rng
from .config import INVERSE_RESIDUAL_TOL, SYMMETRY_TOL


class FormError(ValueError):
    """A matrix is not a valid symmetric positive-definite form."""


def cholesky_checked(matrix, name="form"):
    """Lower Cholesky factor; raises FormError naming the first nonpositive pivot.

    Uses an explicit column-by-column factorization so the failing pivot is
    reported. No eigenvalue fallback.
    """
    a = np.array(matrix, dtype=float)
    n = a.shape[0]
    lower = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - lower[j, :j] @ lower[j, :j]
        if not pivot > 0.0:
            raise FormError(f"{name} is not positive definite: pivot {j} = {pivot:.6g}")
        lower[j, j] = np.sqrt(pivot)
        lower[j + 1:, j] = (a[j + 1:, j] - lower[j + 1:, :j] @ lower[j, :j]) / lower[j, j]
    return lower


def asymmetry(matrix):
    matrix = np.asarray(matrix, dtype=float)
    return float(np.max(np.abs(matrix - matrix.T))) if matrix.size else 0.0


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """Symmetric positive-definite bilinear form on R^dim."""

    matrix: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise FormError(f"form must be a nonempty square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise FormError("form has non-finite entries")
        gap = asymmetry(m)
        if gap > SYMMETRY_TOL:
            raise FormError(f"form is not symmetric: max asymmetry {gap:.3e} > {SYMMETRY_TOL:g}")
        m.setflags(write=False)
        chol = cholesky_checked(m)
        chol.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "chol", chol)

    @property
    def dim(self):
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, dim):
        return cls(np.eye(dim))

    def __call__(self, x, y):
        return float(np.asarray(x) @ self.matrix @ np.asarray(y))


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    precision: QuadraticForm
    covariance: np.ndarray = field(init=False)
    cov_chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lower = self.precision.chol
        inv_lower = np.linalg.solve(lower, np.eye(self.dim))
        cov = inv_lower.T @ inv_lower
        cov = 0.5 * (cov + cov.T)
        residual = float(np.max(np.abs(cov @ self.precision.matrix - np.eye(self.dim))))
        if residual > INVERSE_RESIDUAL_TOL:
            raise FormError(f"precision too ill-conditioned: inverse residual {residual:.3e}")
        cov.setflags(write=False)
        cov_chol = cholesky_checked(cov, "covariance")
        cov_chol.setflags(write=False)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "cov_chol", cov_chol)

    @property
    def dim(self):
        return self.precision.dim

    @classmethod
    def from_covariance(cls, covariance):
        cov = np.array(covariance, dtype=float)
        if asymmetry(cov) > SYMMETRY_TOL:
            raise FormError(f"covariance is not symmetric: max asymmetry {asymmetry(cov):.3e}")
        cov = _sym(cov)
        chol = cholesky_checked(cov, "covariance")
        mu = gaussian_from_precision(QuadraticForm(_sym(np.linalg.inv(cov))))
        # keep the caller's covariance bit-for-bit instead of the inverse of its inverse
        cov.setflags(write=False)
        chol.setflags(write=False)
        object.__setattr__(mu, "covariance", cov)
        object.__setattr__(mu, "cov_chol", chol)
        return mu

    @classmethod
    def standard(cls, dim):
        return cls(QuadraticForm.identity(dim))


def _sym(m):
    return 0.5 * (m + m.T)


@dataclass(frozen=True, eq=False)
class SampleBatch:
    values: np.ndarray
    seed: int
    stream_id: int
    # draws dropped because the interaction map refused them (norm bound)
    rejected: int = 0

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class MomentSpec:
    """Coordinate indices ``(i1, ..., iN)`` of the monomial ``x_i1 ... x_iN``."""

    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise ValueError("moment needs at least one index")
        if min(idx) < 0:
            raise ValueError(f"negative coordinate index in {idx}")
        object.__setattr__(self, "indices", idx)

    def check_dim(self, dim):
        if max(self.indices) >= dim:
            raise ValueError(f"index {max(self.indices)} out of range for dim {dim}")


def gaussian_from_precision(form):
    if not isinstance(form, QuadraticForm):
        form = QuadraticForm(form)
    return GaussianMeasure(form)


def sample(mu, n, seed, stream_id=0, workers=1, role=0):
    """Draw ``n`` i.i.d. vectors ``L z`` with ``L`` the covariance Cholesky factor."""
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    z = rng.standard_normal(n, mu.dim, seed, stream_id, role, workers)
    return SampleBatch(z @ mu.cov_chol.T, seed, stream_id)


def _check_same_dim(mu1, mu2):
    if mu1.dim != mu2.dim:
        raise ValueError(f"dimension mismatch: {mu1.dim} vs {mu2.dim}")


def classical_convolution(mu1, mu2):
    """Law of ``x + y`` for independent ``x ~ mu1``, ``y ~ mu2``: covariances add."""
    _check_same_dim(mu1, mu2)
    return GaussianMeasure.from_covariance(mu1.covariance + mu2.covariance)


def pushforward_sum_sample(mu1, mu2, n, seed, stream_id=0, workers=1):
    _check_same_dim(mu1, mu2)
    x = sample(mu1, n, seed, stream_id, workers, role=0).values
    y = sample(mu2, n, seed, stream_id, workers, role=1).values
    return SampleBatch(x + y, seed, stream_id)


def perfect_matchings(items):
    """Yield every perfect matching of ``items`` as a list of pairs."""
    items = list(items)
    if not items:
        yield []
        return
    first = items[0]
    rest = items[1:]
    for k, other in enumerate(rest):
        for tail in perfect_matchings(rest[:k] + rest[k + 1:]):
            yield [(first, other)] + tail


def hafnian_moment(cov, indices):
    """Sum over perfect matchings of ``indices`` of products of ``cov`` entries.

    Matchings are summed recursively: pair the smallest remaining index with each
    other one. Partial sums are memoized on the remaining multiset, which keeps
    moments of degree 30+ in a handful of variables cheap without changing the
    value.
    """
    cov = np.asarray(cov, dtype=float)
    if len(indices) % 2:
        return 0.0

    @lru_cache(maxsize=None)
    def rec(ms):
        if not ms:
            return 1.0
        first, rest = ms[0], ms[1:]
        total = 0.0
        seen = set()
        for k, other in enumerate(rest):
            if other in seen:
                # identical partners give identical sub-multisets
                continue
            seen.add(other)
            mult = rest.count(other)
            c = cov[first, other]
            if c != 0.0:
                total += mult * c * rec(rest[:k] + rest[k + 1:])
        return total

    return rec(tuple(sorted(int(i) for i in indices)))


def isserlis_moment(mu, spec):
    """E[x_i1 ... x_iN] under the centered Gaussian ``mu`` (Wick pairing sum)."""
    if not isinstance(spec, MomentSpec):
        spec = MomentSpec(tuple(spec))
    spec.check_dim(mu.dim)
    return hafnian_moment(mu.covariance, spec.indices)


def complex_form_to_real(h):
    """Real 2d x 2d form of a d x d Hermitian form: [[Re H, -Im H], [Im H, Re H]].

    ``z = x + i y`` maps to ``(x, y)``; ``Re(z^* H z)`` equals the real form
    evaluated at ``(x, y)``, and determinants satisfy det_real = |det H|^2.
    """
    h = np.asarray(h, dtype=complex)
    return np.block([[h.real, -h.imag], [h.imag, h.real]])


def complex_operator_to_real(z):
    """Real 2d x 2d matrix acting on ``(Re v, Im v)`` as ``z`` acts on ``v``."""
    return complex_form_to_real(z)
