"""Config-driven experiments behind the command-line interface.

A config is a JSON object, parsed strictly: unknown keys anywhere are an error
before any computation starts. ``run`` returns a ``ResultRecord`` whose JSON form
is byte-identical across repeated runs except for ``wall_time``.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import __version__
from .config import SPEC_VERSION
from .correlators import (
    METHODS,
    EngineError,
    Functional,
    diag2_reference,
    mc_correlator,
    n_point_free_oracle,
    n_point_quadrature,
    n_point_semi_analytic,
    two_point_perturbative,
)
from .discrete import (
    DiscreteLaw,
    LawError,
    WeightFunction,
    convolution_interaction,
    partial_sum_clt_distance,
    pointwise_interaction,
)
from .gaussian import (
    FormError,
    GaussianMeasure,
    classical_convolution,
    gaussian_from_precision,
    pushforward_sum_sample,
)
from .interaction import (
    PRESETS,
    GeneratorSet,
    InteractionConditionError,
    InteractionMap,
    build_interacting_measure,
    det_constancy_check,
    partition_identity_check,
    quadratic_scalar_map,
    sample_interacting,
    validate_generators,
)

EXPERIMENTS = ("validate", "sample", "correlate", "clt-demo", "convolution-demo", "partition-check")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    """Config does not parse or is inconsistent; maps to exit code 2."""


class ConditionFailure(RuntimeError):
    """A mathematical condition failed during the run; maps to exit code 3."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


_TOP_KEYS = {"spec_version", "experiment", "dims", "forms", "generators", "functionals",
             "engine", "discrete", "gaussian", "control", "output", "csv"}
_ENGINE_KEYS = {"n", "n_a", "seed", "nodes", "order", "engines", "probes"}
_DISCRETE_KEYS = {"base", "ns", "free", "interaction", "pointwise", "exact"}


def _strict(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _matrix(value, dim, where):
    if value == "identity":
        return np.eye(dim)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        raise ConfigError(f"{where}: expected a matrix or 'identity'")
    if arr.size != dim * dim:
        raise ConfigError(f"{where}: expected {dim}x{dim} entries, got {arr.size}")
    return arr.reshape(dim, dim)


def _parse_prob(v, exact):
    if exact:
        return Fraction(str(v)) if isinstance(v, (str, int)) else Fraction(v).limit_denominator(10**12)
    return float(Fraction(v)) if isinstance(v, str) else float(v)


@dataclass
class EngineSettings:
    n: int = 100000
    n_a: int | None = None
    seed: int = 0
    nodes: list = field(default_factory=lambda: [60])
    order: list = field(default_factory=lambda: [8])
    engines: list = field(default_factory=lambda: list(METHODS))
    probes: int = 1000


@dataclass
class ExperimentConfig:
    spec_version: int
    experiment: str
    raw: dict
    dim_f: int | None = None
    r: int | None = None
    b_m: np.ndarray | None = None
    b_g: np.ndarray | None = None
    generators: GeneratorSet | None = None
    generators_name: str | None = None
    functionals: list | None = None
    engine: EngineSettings = field(default_factory=EngineSettings)
    discrete: dict = field(default_factory=dict)
    gaussian: dict | None = None
    control: str | None = None
    output: str | None = None
    csv: str | None = None

    @classmethod
    def from_dict(cls, doc, experiment=None, seed=None):
        _strict(doc, _TOP_KEYS, "config")
        doc = json.loads(json.dumps(doc))
        if experiment is not None:
            if "experiment" in doc and doc["experiment"] != experiment:
                raise ConfigError(
                    f"config: experiment {doc['experiment']!r} does not match command {experiment!r}")
            doc["experiment"] = experiment
        if seed is not None:
            doc.setdefault("engine", {})
            if not isinstance(doc["engine"], dict):
                raise ConfigError("engine: expected an object")
            doc["engine"]["seed"] = int(seed)
        version = doc.get("spec_version")
        if version != SPEC_VERSION:
            raise ConfigError(f"spec_version: expected {SPEC_VERSION}, got {version!r}")
        exp = doc.get("experiment")
        if exp not in EXPERIMENTS:
            raise ConfigError(f"experiment: expected one of {list(EXPERIMENTS)}, got {exp!r}")
        cfg = cls(version, exp, doc)
        cfg._parse_engine(doc.get("engine", {}))
        cfg._parse_model(doc)
        if "discrete" in doc:
            cfg._parse_discrete(doc["discrete"])
        if "gaussian" in doc:
            g = doc["gaussian"]
            _strict(g, {"variances"}, "gaussian")
            v = g.get("variances")
            if not isinstance(v, list) or len(v) != 2:
                raise ConfigError("gaussian.variances: expected two variances or covariance matrices")
            cfg.gaussian = g
        cfg.control = doc.get("control")
        if cfg.control not in (None, "quadratic"):
            raise ConfigError(f"control: unknown negative control {cfg.control!r}")
        cfg.output = doc.get("output")
        cfg.csv = doc.get("csv")
        cfg._check_required()
        return cfg

    @classmethod
    def load(cls, path, experiment=None, seed=None):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        return cls.from_dict(doc, experiment, seed)

    def _parse_engine(self, eng):
        _strict(eng, _ENGINE_KEYS, "engine")
        s = EngineSettings()
        try:
            for key in ("n", "seed", "probes"):
                if key in eng:
                    setattr(s, key, int(eng[key]))
            if "n_a" in eng:
                s.n_a = int(eng["n_a"])
            if "nodes" in eng:
                s.nodes = [int(x) for x in _as_list(eng["nodes"])]
            if "order" in eng:
                s.order = [int(x) for x in _as_list(eng["order"])]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"engine: {exc}") from None
        if "engines" in eng:
            engines = _as_list(eng["engines"])
            if engines == ["all"]:
                engines = list(METHODS)
            bad = [e for e in engines if e not in METHODS]
            if bad:
                raise ConfigError(f"engine.engines: unknown engine(s) {bad}")
            s.engines = engines
        if s.n < 1 or s.probes < 1:
            raise ConfigError("engine: n and probes must be positive")
        self.engine = s

    def _parse_model(self, doc):
        gens = doc.get("generators")
        dims = doc.get("dims", {})
        _strict(dims, {"dim_f", "r"}, "dims")
        self.dim_f = dims.get("dim_f")
        self.r = dims.get("r")
        if gens is not None:
            try:
                if isinstance(gens, str):
                    if gens == "zero":
                        if self.dim_f is None or self.r is None:
                            raise ConfigError("generators: 'zero' preset needs dims.dim_f and dims.r")
                        self.generators = GeneratorSet.zeros(self.dim_f, self.r)
                    elif gens in PRESETS:
                        self.generators = GeneratorSet.preset(gens)
                    else:
                        raise ConfigError(f"generators: unknown preset {gens!r}")
                    self.generators_name = gens
                else:
                    mats = [np.asarray(g, dtype=float) for g in gens]
                    d = self.dim_f or int(round(math.sqrt(mats[0].size)))
                    self.generators = GeneratorSet(np.array([g.reshape(d, d) for g in mats]))
            except (TypeError, ValueError) as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"generators: {exc}") from None
            if self.dim_f is None:
                self.dim_f = self.generators.dim_f
            if self.r is None:
                self.r = self.generators.r
            if (self.dim_f, self.r) != (self.generators.dim_f, self.generators.r):
                raise ConfigError(
                    f"dims: dim_f={self.dim_f}, r={self.r} inconsistent with generators "
                    f"({self.generators.dim_f}, {self.generators.r})")
        forms = doc.get("forms", {})
        _strict(forms, {"b_m", "b_g"}, "forms")
        if self.dim_f is not None:
            self.b_m = self._form(forms.get("b_m", "identity"), self.dim_f, "forms.b_m")
        if self.r is not None:
            self.b_g = self._form(forms.get("b_g", "identity"), self.r, "forms.b_g")
        if "functionals" in doc:
            if self.dim_f is None:
                raise ConfigError("functionals: need dims.dim_f or generators")
            try:
                self.functionals = [Functional(f) for f in doc["functionals"]]
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"functionals: {exc}") from None
            for k, f in enumerate(self.functionals):
                if f.coeffs.size != self.dim_f:
                    raise ConfigError(f"functionals[{k}]: expected {self.dim_f} coefficients")

    @staticmethod
    def _form(value, dim, where):
        """Precision matrix from 'identity', a matrix, or {"covariance": ...}."""
        if isinstance(value, dict):
            _strict(value, {"covariance"}, where)
            cov = value["covariance"]
            if isinstance(cov, (int, float)):
                cov = (np.eye(dim) * float(cov)).tolist()
            return np.linalg.inv(_matrix(cov, dim, where + ".covariance"))
        return _matrix(value, dim, where)

    def _parse_discrete(self, d):
        _strict(d, _DISCRETE_KEYS, "discrete")
        exact = bool(d.get("exact", False))
        out = {"exact": exact}
        try:
            for key in ("base", "free", "interaction", "pointwise"):
                if key in d:
                    out[key] = [_parse_prob(v, exact) for v in d[key]]
            if "ns" in d:
                out["ns"] = [int(n) for n in d["ns"]]
        except (TypeError, ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"discrete: {exc}") from None
        self.discrete = out

    def _check_required(self):
        exp = self.experiment
        if exp in ("validate", "sample", "correlate", "partition-check") and self.generators is None \
                and not (exp == "partition-check" and self.control):
            raise ConfigError(f"{exp}: 'generators' is required")
        if exp == "partition-check" and self.control and (self.dim_f is None or self.r is None):
            raise ConfigError("partition-check: negative control needs dims.dim_f and dims.r")
        if exp == "clt-demo" and ("base" not in self.discrete or "ns" not in self.discrete):
            raise ConfigError("clt-demo: discrete.base and discrete.ns are required")
        if exp == "convolution-demo" and self.gaussian is None and "free" not in self.discrete:
            raise ConfigError("convolution-demo: needs a 'gaussian' or 'discrete' block")

    def digest(self):
        """SHA-256 of the canonical (key-sorted) config, independent of key order."""
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


@dataclass
class ResultRecord:
    config_digest: str
    experiment: str
    payload: dict
    wall_time: float = 0.0
    status: str = "ok"
    rows: list = field(default_factory=list)

    def to_dict(self):
        return {
            "config_digest": self.config_digest,
            "experiment": self.experiment,
            "status": self.status,
            "payload": self.payload,
            "version": __version__,
            "spec_version": SPEC_VERSION,
            "wall_time": self.wall_time,
        }

    def to_json(self, include_wall_time=True):
        d = self.to_dict()
        if not include_wall_time:
            d.pop("wall_time")
        return json.dumps(d, sort_keys=True, indent=2, default=_json_default) + "\n"

    def to_csv(self):
        lines = ["x,value,stderr,method"]
        for row in self.rows:
            lines.append(",".join(_csv_cell(row[k]) for k in ("x", "value", "stderr", "method")))
        return "\n".join(lines) + "\n"


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Fraction):
        return str(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _csv_cell(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _measures(cfg):
    try:
        mu_m = gaussian_from_precision(cfg.b_m)
        mu_g = gaussian_from_precision(cfg.b_g)
    except FormError as exc:
        raise ConfigError(str(exc)) from None
    return mu_m, mu_g


def _interacting(cfg):
    mu_m, mu_g = _measures(cfg)
    return build_interacting_measure(mu_m, mu_g, InteractionMap(cfg.generators), seed=cfg.engine.seed)


def _is_reference_instance(cfg):
    """diag2 with B_m = I and <e_1 e_1>: the closed form exp(2 var_g) applies."""
    if cfg.generators_name != "diag2" or not np.array_equal(cfg.b_m, np.eye(2)):
        return False
    fs = cfg.functionals or []
    e1 = np.array([1.0, 0.0])
    return len(fs) == 2 and all(np.array_equal(f.coeffs, e1) for f in fs)


def _run_validate(cfg, workers):
    report = validate_generators(cfg.generators)
    payload = {"validation": report.to_dict()}
    rows = [{"x": a, "value": t, "stderr": 0.0, "method": "trace"} for a, t in enumerate(report.traces)]
    if not report.passed:
        raise ConditionFailure("generator validation failed: " + "; ".join(report.messages),
                               (payload, rows))
    return payload, rows


def _run_sample(cfg, workers):
    m = _interacting(cfg)
    s = cfg.engine
    batch = sample_interacting(m, s.n, s.seed, workers=workers)
    u = batch.values
    n = u.shape[0]
    cov = u.T @ u / n
    prods = u[:, :, None] * u[:, None, :]
    stderr = prods.std(axis=0, ddof=1) / math.sqrt(n)
    rows = []
    for i, j in itertools.combinations_with_replacement(range(m.dim), 2):
        rows.append({"x": f"{i}:{j}", "value": float(cov[i, j]), "stderr": float(stderr[i, j]),
                     "method": "mc"})
    payload = {
        "n": n,
        "rejected": batch.rejected,
        "mean": u.mean(axis=0).tolist(),
        "second_moments": cov.tolist(),
        "stderr": stderr.tolist(),
        "free_covariance": m.mu_m.covariance.tolist(),
    }
    return payload, rows


def _correlate_estimates(cfg, workers):
    m = _interacting(cfg)
    s = cfg.engine
    fs = cfg.functionals or [Functional.coordinate(0, cfg.dim_f)] * 2
    estimates = []
    for engine in s.engines:
        if engine == "mc":
            estimates.append(mc_correlator(m, fs, s.n, s.seed, workers=workers))
        elif engine == "semi_analytic_mc":
            estimates.append(n_point_semi_analytic(m, fs, s.n_a or s.n, s.seed, workers=workers))
        elif engine == "quadrature":
            for nodes in s.nodes:
                estimates.append(n_point_quadrature(m, fs, nodes, workers=workers))
        elif engine == "perturbative":
            if len(fs) != 2:
                raise EngineError("perturbative engine computes two-point functions only")
            for order in s.order:
                estimates.append(two_point_perturbative(m, fs[0], fs[1], order))
    return m, fs, estimates


def _pairwise_table(estimates, reference=None):
    table = []
    labelled = [(_label(e), e) for e in estimates]
    if reference is not None:
        labelled.append(("closed_form", None))
    for (la, a), (lb, b) in itertools.combinations(labelled, 2):
        va = reference if a is None else a.value
        vb = reference if b is None else b.value
        sa = 0.0 if a is None else a.stderr
        sb = 0.0 if b is None else b.stderr
        delta = abs(va - vb)
        err = math.hypot(sa, sb)
        if err > 0:
            score, kind, flagged = delta / err, "sigma", delta / err > 3.0
        else:
            score = delta / max(abs(vb), abs(va), 1e-300)
            kind, flagged = "relative", score > 1e-6
        table.append({"a": la, "b": lb, "delta": delta, "score": score, "kind": kind,
                      "flagged": bool(flagged)})
    return table


def _label(e):
    if e.method == "quadrature":
        return f"quadrature[{e.n_or_nodes}]"
    if e.method == "perturbative":
        return f"perturbative[K={e.order}]"
    return e.method


def compare_engines(cfg, workers=1):
    """Run every configured engine and tabulate pairwise discrepancies.

    Stochastic pairs are scored in combined standard errors and flagged beyond
    3; deterministic pairs are scored by relative difference and flagged beyond
    1e-6. On the reference instance a closed-form column is added.
    """
    if cfg.experiment != "correlate":
        raise ConfigError("compare_engines needs experiment=correlate")
    start = time.perf_counter()
    payload, rows = _run_correlate(cfg, workers)
    if len(payload["estimates"]) < 2:
        raise ConfigError("compare_engines needs at least two engine estimates")
    return ResultRecord(cfg.digest(), cfg.experiment, payload, time.perf_counter() - start,
                        rows=rows)


def _run_correlate(cfg, workers):
    m, fs, estimates = _correlate_estimates(cfg, workers)
    reference = diag2_reference(float(m.mu_g.covariance[0, 0])) if _is_reference_instance(cfg) else None
    payload = {
        "estimates": [e.to_dict() for e in estimates],
        "free_value": n_point_free_oracle(m.mu_m, fs),
        "reference": reference,
    }
    if len(estimates) + (reference is not None) >= 2:
        payload["comparison"] = _pairwise_table(estimates, reference)
    rows = []
    for e in estimates:
        x = e.order if e.method == "perturbative" else e.n_or_nodes
        rows.append({"x": x, "value": e.value, "stderr": e.stderr, "method": e.method})
    return payload, rows


def _run_clt(cfg, workers):
    d = cfg.discrete
    try:
        base = DiscreteLaw(tuple(d["base"]))
    except LawError as exc:
        raise ConfigError(f"discrete.base: {exc}") from None
    distances = []
    rows = []
    for n in d["ns"]:
        dist = partial_sum_clt_distance(base, n)
        distances.append({"n": n, "distance": dist})
        rows.append({"x": n, "value": dist, "stderr": 0.0, "method": "kolmogorov"})
    vals = [x["distance"] for x in distances]
    monotone = all(b <= a for a, b in zip(vals, vals[1:]))
    return {"distances": distances, "non_increasing": monotone}, rows


def _run_convolution(cfg, workers):
    payload, rows = {}, []
    s = cfg.engine
    if cfg.gaussian is not None:
        covs = []
        for v in cfg.gaussian["variances"]:
            c = np.atleast_2d(np.asarray(v, dtype=float))
            covs.append(c)
        if covs[0].shape != covs[1].shape:
            raise ConfigError("gaussian.variances: dimension mismatch")
        try:
            mu1, mu2 = (GaussianMeasure.from_covariance(c) for c in covs)
        except FormError as exc:
            raise ConfigError(f"gaussian.variances: {exc}") from None
        conv = classical_convolution(mu1, mu2)
        summed = pushforward_sum_sample(mu1, mu2, s.n, s.seed).values
        n = summed.shape[0]
        emp = summed.T @ summed / n
        stderr = (summed[:, :, None] * summed[:, None, :]).std(axis=0, ddof=1) / math.sqrt(n)
        payload["gaussian"] = {
            "analytic_covariance": conv.covariance.tolist(),
            "empirical_covariance": emp.tolist(),
            "stderr": stderr.tolist(),
            "n": n,
        }
        rows.append({"x": "analytic", "value": float(conv.covariance[0, 0]), "stderr": 0.0,
                     "method": "classical_convolution"})
        rows.append({"x": n, "value": float(emp[0, 0]), "stderr": float(stderr[0, 0]),
                     "method": "pushforward_sum_sample"})
    d = cfg.discrete
    if "free" in d:
        try:
            free = DiscreteLaw(tuple(d["free"]))
            out = {}
            if "interaction" in d:
                law = convolution_interaction(free, DiscreteLaw(tuple(d["interaction"])))
                out["convolution"] = list(law.probs)
                rows.extend({"x": k, "value": float(p), "stderr": 0.0, "method": "convolution"}
                            for k, p in enumerate(law.probs))
            if "pointwise" in d:
                law = pointwise_interaction(free, WeightFunction(tuple(d["pointwise"])))
                out["pointwise"] = list(law.probs)
                rows.extend({"x": k, "value": float(p), "stderr": 0.0, "method": "pointwise"}
                            for k, p in enumerate(law.probs))
        except LawError as exc:
            raise ConditionFailure(str(exc)) from None
        payload["discrete"] = out
    return payload, rows


def _run_partition(cfg, workers):
    s = cfg.engine
    if cfg.control == "quadratic":
        if cfg.r != 1:
            raise ConfigError("control 'quadratic' is defined for r = 1")
        mu_m, mu_g = _measures(cfg)
        zeta = quadratic_scalar_map(cfg.dim_f)
        m = build_interacting_measure(mu_m, mu_g, zeta, seed=s.seed, validate=False)
    else:
        m = _interacting(cfg)
        mu_m, mu_g, zeta = m.mu_m, m.mu_g, m.zeta
    part = partition_identity_check(m, s.probes, s.seed)
    det = det_constancy_check(zeta, mu_m.precision, mu_g, min(s.probes, 100), s.seed)
    payload = {"partition": part.to_dict(), "det_constancy": det.to_dict(), "n_zeta": m.n_zeta}
    rows = [{"x": k, "value": float(v), "stderr": 0.0, "method": "partition"}
            for k, v in enumerate(part.values[:50])]
    if not (part.passed and det.passed):
        raise ConditionFailure("condition 4: det Xi(A) depends on A (partition identity violated)",
                               (payload, rows))
    return payload, rows


_DISPATCH = {
    "validate": _run_validate,
    "sample": _run_sample,
    "correlate": _run_correlate,
    "clt-demo": _run_clt,
    "convolution-demo": _run_convolution,
    "partition-check": _run_partition,
}


def run(cfg, workers=1):
    """Execute ``cfg``; raises ConfigError / ConditionFailure / InteractionConditionError."""
    start = time.perf_counter()
    payload, rows = _DISPATCH[cfg.experiment](cfg, workers)
    return ResultRecord(cfg.digest(), cfg.experiment, payload, time.perf_counter() - start,
                        rows=rows)


NUMERICAL_ERRORS = (ConditionFailure, InteractionConditionError, EngineError)
