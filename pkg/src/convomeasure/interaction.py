"""Interaction maps zeta: P -> Aut(F) and the interacting measure they induce.

The interacting law on F is the pushforward of ``mu_m x mu_g`` under
``(u, A) -> zeta(A)^-1 u``. For the exponential map
``zeta(A) = exp(sum_a A_a T^a)`` with traceless ``T^a`` the determinant of
``zeta(A)`` is one, so ``det(zeta(A)^* zeta(A))`` does not depend on ``A`` and the
partition function normalizes to one.

Adjoints are taken with respect to ``B_m``: ``zeta^* = B_m^-1 zeta^T B_m``. The
operator ``Xi(A) = zeta(A)^* zeta(A)`` is therefore B_m-self-adjoint; the
symmetric object is the form ``B_m Xi(A) = zeta(A)^T B_m zeta(A)``.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import CHUNK_SIZE, DET_TOL, EXPM_NORM_BOUND, TRACE_TOL, XI_DET_REL_TOL
from .expm import expm, one_norm
from .gaussian import (
    GaussianMeasure,
    SampleBatch,
    cholesky_checked,
    sample,
)
from .rng import chunk_bounds


class InteractionConditionError(ValueError):
    """One of the four admissibility conditions on zeta failed."""

    def __init__(self, condition, message):
        self.condition = condition
        label = f"condition {condition}" if condition is not None else "generator set"
        super().__init__(f"{label}: {message}")


class NormBoundError(ValueError):
    pass


PRESETS = {
    "diag2": [[[1.0, 0.0], [0.0, -1.0]]],
}


@dataclass(frozen=True, eq=False)
class GeneratorSet:
    """Stack of ``r`` real ``dim_f x dim_f`` generator matrices."""

    generators: np.ndarray

    def __post_init__(self):
        g = np.array(self.generators, dtype=float)
        if g.ndim != 3 or g.shape[1] != g.shape[2] or g.shape[0] == 0:
            raise ValueError(f"generators must have shape (r, d, d), got {g.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError("generators have non-finite entries")
        g.setflags(write=False)
        object.__setattr__(self, "generators", g)

    @property
    def dim_f(self):
        return self.generators.shape[1]

    @property
    def r(self):
        return self.generators.shape[0]

    @property
    def is_zero(self):
        return not np.any(self.generators)

    @classmethod
    def preset(cls, name):
        try:
            return cls(PRESETS[name])
        except KeyError:
            raise ValueError(f"unknown generator preset {name!r}") from None

    @classmethod
    def zeros(cls, dim_f, r):
        return cls(np.zeros((r, dim_f, dim_f)))

    @classmethod
    def random_traceless(cls, dim_f, r, rng, symmetric=False):
        """Random traceless generators, each scaled to unit Frobenius norm."""
        g = rng.standard_normal((r, dim_f, dim_f))
        if symmetric:
            g = 0.5 * (g + g.transpose(0, 2, 1))
        g -= np.trace(g, axis1=1, axis2=2)[:, None, None] / dim_f * np.eye(dim_f)
        g /= np.linalg.norm(g, axis=(1, 2))[:, None, None]
        return cls(g)

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, str):
            doc = json.loads(doc)
        unknown = set(doc) - {"dim_f", "generators"}
        if unknown:
            raise ValueError(f"unknown keys in generator document: {sorted(unknown)}")
        dim_f = int(doc["dim_f"])
        mats = []
        for k, flat in enumerate(doc["generators"]):
            flat = np.asarray(flat, dtype=float)
            if flat.size != dim_f * dim_f:
                raise ValueError(f"generator {k} has {flat.size} entries, expected {dim_f * dim_f}")
            mats.append(flat.reshape(dim_f, dim_f))
        return cls(np.array(mats))

    def to_json(self):
        return {"dim_f": self.dim_f, "generators": [m.ravel().tolist() for m in self.generators]}


@dataclass
class ValidationReport:
    traces: list
    rank: int
    r: int
    traceless: bool
    independent: bool
    passed: bool
    messages: list = field(default_factory=list)

    def to_dict(self):
        return {
            "passed": self.passed,
            "traces": self.traces,
            "rank": self.rank,
            "r": self.r,
            "traceless": self.traceless,
            "independent": self.independent,
            "messages": self.messages,
        }


def validate_generators(gens):
    """Check tracelessness and linear independence of a generator set.

    The all-zero set (no interaction) is accepted even though it is not
    independent.
    """
    traces = [float(np.trace(t)) for t in gens.generators]
    traceless = all(abs(t) <= TRACE_TOL for t in traces)
    rank = int(np.linalg.matrix_rank(gens.generators.reshape(gens.r, -1))) if not gens.is_zero else 0
    independent = rank == gens.r
    messages = []
    for a, t in enumerate(traces):
        if abs(t) > TRACE_TOL:
            messages.append(f"generator {a} has trace {t:.6g}")
    if not independent and not gens.is_zero:
        messages.append(f"generators are linearly dependent: rank {rank} < r = {gens.r}")
    passed = traceless and (independent or gens.is_zero)
    return ValidationReport(traces, rank, gens.r, traceless, independent, passed, messages)


def _as_batch(A, r):
    A = np.asarray(A, dtype=float)
    single = A.ndim <= 1
    A = A.reshape(-1, r) if A.size else A.reshape(0, r)
    if A.shape[1] != r:
        raise ValueError(f"expected parameters of length {r}")
    return A, single


class InteractionMap:
    """Exponential interaction ``zeta(A) = exp(sum_a A_a T^a)``."""

    kind = "exponential"

    def __init__(self, gens, norm_bound=EXPM_NORM_BOUND):
        self.gens = gens
        self.norm_bound = norm_bound

    @property
    def dim_f(self):
        return self.gens.dim_f

    @property
    def r(self):
        return self.gens.r

    @property
    def is_trivial(self):
        return self.gens.is_zero

    def generator_sum(self, A):
        A, single = _as_batch(A, self.r)
        m = np.einsum("na,aij->nij", A, self.gens.generators)
        return m[0] if single else m

    def admissible(self, A):
        """Mask of parameter rows whose generator sum is within the norm bound."""
        m = self.generator_sum(np.atleast_2d(A))
        return one_norm(m) <= self.norm_bound

    def _exp(self, A, sign):
        A = np.asarray(A, dtype=float)
        if not np.all(np.isfinite(A)):
            raise ValueError("interaction parameter is not finite")
        m = self.generator_sum(A)
        norms = np.atleast_1d(one_norm(m))
        if np.any(norms > self.norm_bound):
            raise NormBoundError(
                f"|sum_a A_a T^a|_1 = {norms.max():.4g} exceeds bound {self.norm_bound:g}")
        return expm(sign * m)

    def apply(self, A):
        return self._exp(A, 1.0)

    def inverse_apply(self, A):
        return self._exp(A, -1.0)


class FrozenMap:
    """Constant interaction ``zeta(A) = tau`` for every ``A``."""

    kind = "frozen"

    def __init__(self, tau, r):
        tau = np.array(tau, dtype=float)
        if tau.ndim != 2 or tau.shape[0] != tau.shape[1]:
            raise ValueError(f"tau must be square, got shape {tau.shape}")
        self.tau = tau
        self.tau_inv = np.linalg.inv(tau)
        self.r = int(r)

    @property
    def dim_f(self):
        return self.tau.shape[0]

    @property
    def is_trivial(self):
        return np.array_equal(self.tau, np.eye(self.dim_f))

    def admissible(self, A):
        return np.ones(np.atleast_2d(A).shape[0], dtype=bool)

    def _const(self, A, mat):
        A, single = _as_batch(A, self.r)
        return mat.copy() if single else np.broadcast_to(mat, (A.shape[0],) + mat.shape).copy()

    def apply(self, A):
        return self._const(A, self.tau)

    def inverse_apply(self, A):
        return self._const(A, self.tau_inv)


class CallableMap:
    """Arbitrary ``zeta`` given as a function of a single parameter vector.

    Used for negative controls; nothing about its determinant is assumed.
    """

    kind = "callable"
    is_trivial = False

    def __init__(self, fn, dim_f, r, name="callable"):
        self.fn = fn
        self.dim_f = int(dim_f)
        self.r = int(r)
        self.name = name

    def admissible(self, A):
        return np.ones(np.atleast_2d(A).shape[0], dtype=bool)

    def apply(self, A):
        A, single = _as_batch(A, self.r)
        out = np.array([np.asarray(self.fn(a), dtype=float) for a in A])
        return out[0] if single else out

    def inverse_apply(self, A):
        return np.linalg.inv(self.apply(A))


def quadratic_scalar_map(dim_f):
    """Negative control ``zeta(A) = (1 + |A|^2) I``: its determinant varies with A."""
    return CallableMap(lambda a: (1.0 + float(a @ a)) * np.eye(dim_f), dim_f, 1, "(1+A^2)I")


def zeta_apply(zeta, A):
    return zeta.apply(A)


def zeta_inverse_apply(zeta, A):
    return zeta.inverse_apply(A)


@dataclass(frozen=True, eq=False)
class XiOperator:
    """``Xi(A) = zeta(A)^* zeta(A)`` with the B_m-adjoint, plus its symmetric form."""

    matrix: np.ndarray
    form: np.ndarray
    det: float


def _b_matrix(b_m, dim):
    if b_m is None:
        return np.eye(dim)
    if isinstance(b_m, GaussianMeasure):
        return b_m.precision.matrix
    if hasattr(b_m, "matrix"):
        return b_m.matrix
    return np.asarray(b_m, dtype=float)


def xi_at(zeta, A, b_m=None):
    z = np.asarray(zeta.apply(A))
    if z.ndim != 2:
        raise ValueError("xi_at takes a single parameter vector")
    b = _b_matrix(b_m, z.shape[0])
    form = z.T @ b @ z
    form = 0.5 * (form + form.T)
    lower = cholesky_checked(form, "B_m(zeta(A)., zeta(A).)")
    b_lower = cholesky_checked(b, "B_m")
    det = float(np.exp(2.0 * (np.sum(np.log(np.diag(lower))) - np.sum(np.log(np.diag(b_lower))))))
    return XiOperator(np.linalg.solve(b, form), form, det)


def xi_det_batch(zeta, A, b_m=None):
    """det Xi(A) for each row of ``A``; NaN where the pulled-back form is not PD."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    z = np.asarray(zeta.apply(A)).reshape(A.shape[0], zeta.dim_f, zeta.dim_f)
    b = _b_matrix(b_m, zeta.dim_f)
    forms = np.einsum("nki,kl,nlj->nij", z, b, z)
    forms = 0.5 * (forms + forms.transpose(0, 2, 1))
    _, logdet_b = np.linalg.slogdet(b)
    out = np.full(A.shape[0], np.nan)
    for i, f in enumerate(forms):
        try:
            lower = np.linalg.cholesky(f)
        except np.linalg.LinAlgError:
            continue
        out[i] = np.exp(2.0 * np.sum(np.log(np.diag(lower))) - logdet_b)
    return out


def xi_nonlinearity_witness(zeta, A, z, b_m=None):
    """Return ``(Xi(z A), z Xi(A))``; these differ for any nontrivial zeta."""
    A = np.asarray(A, dtype=float)
    if z in (0, 1):
        raise ValueError("scale z must not be 0 or 1")
    if not np.any(A):
        raise ValueError("A must be nonzero")
    if zeta.is_trivial:
        raise ValueError("trivial interaction: Xi is constant, witness is degenerate")
    return xi_at(zeta, z * A, b_m).matrix, z * xi_at(zeta, A, b_m).matrix


@dataclass
class DetConstancyReport:
    dets: np.ndarray
    relative_spread: float
    tolerance: float
    passed: bool

    def to_dict(self):
        return {
            "passed": self.passed,
            "relative_spread": self.relative_spread,
            "tolerance": self.tolerance,
            "det_min": float(np.min(self.dets)),
            "det_max": float(np.max(self.dets)),
            "probes": int(self.dets.size),
        }


def probe_parameters(mu_g, count, seed, include_zero=True):
    draws = sample(mu_g, count, seed, stream_id=0, role=7).values
    if include_zero:
        draws[0] = 0.0
    return draws


def det_constancy_check(zeta, b_m, mu_g, probes=100, seed=0, tol=XI_DET_REL_TOL):
    A = probe_parameters(mu_g, probes, seed)
    dets = xi_det_batch(zeta, A, b_m)
    if np.any(~np.isfinite(dets)):
        return DetConstancyReport(dets, float("inf"), tol, False)
    spread = float((dets.max() - dets.min()) / abs(np.median(dets)))
    return DetConstancyReport(dets, spread, tol, spread <= tol)


@dataclass(frozen=True, eq=False)
class InteractingMeasure:
    mu_m: GaussianMeasure
    mu_g: GaussianMeasure
    zeta: object
    n_zeta: float

    @property
    def dim(self):
        return self.mu_m.dim


def build_interacting_measure(mu_m, mu_g, zeta, probes=64, seed=0, validate=True):
    """Assemble the interacting law after checking the admissibility conditions.

    1. ``mu_m``, ``mu_g`` are normalized Gaussian laws on F and P.
    2. ``zeta(A)`` is an endomorphism of F.
    3. ``B_m(zeta(A)., zeta(A).)`` is positive definite.
    4. ``det zeta(A)^* zeta(A)`` does not depend on ``A``.

    Conditions 2-4 are checked on ``probes`` parameter draws from ``mu_g`` (plus
    ``A = 0``). With ``validate=False`` the measure is built unchecked, which is
    how negative controls reach ``partition_identity_check``.
    """
    if not isinstance(mu_m, GaussianMeasure) or not isinstance(mu_g, GaussianMeasure):
        raise InteractionConditionError(1, "free laws must be Gaussian measures")
    if zeta.dim_f != mu_m.dim or zeta.r != mu_g.dim:
        raise InteractionConditionError(
            2, f"dims: zeta acts on R^{zeta.dim_f} with {zeta.r} parameters, "
               f"measures live on R^{mu_m.dim} and R^{mu_g.dim}")
    A = probe_parameters(mu_g, probes, seed)
    if isinstance(zeta, InteractionMap):
        report = validate_generators(zeta.gens)
        if not report.traceless:
            raise InteractionConditionError(4, "; ".join(report.messages))
        if not report.passed:
            raise InteractionConditionError(None, "; ".join(report.messages))
        A = A[zeta.admissible(A)]
    if not validate:
        dets = xi_det_batch(zeta, A[:1], mu_m.precision)
        return InteractingMeasure(mu_m, mu_g, zeta, float(np.sqrt(dets[0])))
    z = np.asarray(zeta.apply(A))
    if z.shape != (A.shape[0], mu_m.dim, mu_m.dim) or not np.all(np.isfinite(z)):
        raise InteractionConditionError(2, "zeta(A) is not a finite endomorphism of F")
    dets = xi_det_batch(zeta, A, mu_m.precision)
    if np.any(~np.isfinite(dets)):
        bad = int(np.flatnonzero(~np.isfinite(dets))[0])
        raise InteractionConditionError(
            3, f"B_m(zeta(A)., zeta(A).) is not positive definite at probe {bad}")
    spread = float((dets.max() - dets.min()) / abs(np.median(dets)))
    if spread > XI_DET_REL_TOL:
        raise InteractionConditionError(
            4, f"det Xi(A) varies with A: relative spread {spread:.3e} > {XI_DET_REL_TOL:g}")
    if isinstance(zeta, InteractionMap):
        dev = float(np.max(np.abs(np.linalg.det(z) - 1.0)))
        if dev > DET_TOL:
            raise InteractionConditionError(4, f"det zeta(A) deviates from 1 by {dev:.3e}")
        n_zeta = 1.0
    else:
        n_zeta = float(np.sqrt(dets[0]))
    return InteractingMeasure(mu_m, mu_g, zeta, n_zeta)


def _pushforward_chunks(zeta, A, u, workers):
    bounds = chunk_bounds(A.shape[0], CHUNK_SIZE)

    def apply(idx):
        lo, hi = bounds[idx]
        inv = np.asarray(zeta.inverse_apply(A[lo:hi])).reshape(hi - lo, zeta.dim_f, zeta.dim_f)
        return np.einsum("nij,nj->ni", inv, u[lo:hi])

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(apply, range(len(bounds))))
    else:
        parts = [apply(i) for i in range(len(bounds))]
    return np.concatenate(parts, axis=0) if parts else np.empty((0, zeta.dim_f))


def sample_interacting_pairs(m, n, seed, stream_id=0, workers=1):
    """Draw ``(A, u)`` pairs; ``u = zeta(A)^-1 u'`` with ``u' ~ mu_m``, ``A ~ mu_g``.

    Parameter draws beyond the exponential's norm bound are dropped and counted,
    never clamped.
    """
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    A = sample(m.mu_g, n, seed, stream_id, workers, role=0).values
    u_free = sample(m.mu_m, n, seed, stream_id, workers, role=1).values
    keep = m.zeta.admissible(A)
    rejected = int(A.shape[0] - np.count_nonzero(keep))
    if rejected:
        A, u_free = A[keep], u_free[keep]
    return A, _pushforward_chunks(m.zeta, A, u_free, workers), rejected


def sample_interacting(m, n, seed, stream_id=0, workers=1):
    _, u, rejected = sample_interacting_pairs(m, n, seed, stream_id, workers)
    return SampleBatch(u, seed, stream_id, rejected)


@dataclass
class PartitionReport:
    values: np.ndarray
    max_deviation: float
    tolerance: float
    passed: bool

    def to_dict(self):
        return {
            "passed": self.passed,
            "max_deviation": self.max_deviation,
            "tolerance": self.tolerance,
            "probes": int(self.values.size),
        }


def partition_identity_check(m, probe_count=1000, seed=0, tol=XI_DET_REL_TOL):
    """Evaluate ``N(zeta) det(Xi(A))^(-1/2)`` at random ``A`` and report max |value - 1|."""
    A = probe_parameters(m.mu_g, probe_count, seed, include_zero=False)
    A = A[m.zeta.admissible(A)]
    dets = xi_det_batch(m.zeta, A, m.mu_m.precision)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = m.n_zeta / np.sqrt(dets)
    dev = np.abs(values - 1.0)
    max_dev = float(np.nanmax(dev)) if np.all(np.isfinite(dev)) else float("inf")
    return PartitionReport(values, max_dev, tol, max_dev <= tol)

