"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line with the measured quantity
and its tolerance, then asserts. Run alone with::

    pytest tests/test_acceptance.py -v -s
"""
import json
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from convomeasure.cli import main
from convomeasure.correlators import (
    Functional,
    mc_correlator,
    n_point_free_oracle,
    n_point_quadrature,
    n_point_semi_analytic,
    two_point_perturbative,
)
from convomeasure.discrete import (
    DiscreteLaw,
    LawError,
    WeightFunction,
    convolution_interaction,
    mean_one_check,
    partial_sum_clt_distance,
    pointwise_interaction,
)
from convomeasure.experiments import ExperimentConfig, run
from convomeasure.gaussian import (
    GaussianMeasure,
    MomentSpec,
    classical_convolution,
    gaussian_from_precision,
    isserlis_moment,
    pushforward_sum_sample,
    sample,
)
from convomeasure.interaction import (
    GeneratorSet,
    InteractionMap,
    build_interacting_measure,
    det_constancy_check,
    partition_identity_check,
    quadratic_scalar_map,
    sample_interacting,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
        return ok
    return emit


def test_criterion_1_gaussian_convolution(report):
    start = time.perf_counter()
    mu1 = GaussianMeasure.from_covariance([[1.0]])
    mu2 = GaussianMeasure.from_covariance([[4.0]])
    var = float(classical_convolution(mu1, mu2).covariance[0, 0])
    x = pushforward_sum_sample(mu1, mu2, 100_000, seed=11).values[:, 0]
    sq = x * x
    emp = float(sq.mean())
    se = float(sq.std(ddof=1) / math.sqrt(sq.size))
    elapsed = time.perf_counter() - start
    ok = (var == 5.0 and abs(emp - 5.0) <= 5 * se and elapsed < 1.0)
    report(1, "Gaussian convolution additivity", ok,
           f"analytic {var!r}, empirical {emp:.5f} +/- {se:.5f} (5 se), {elapsed:.2f}s < 1s")
    assert ok


def _partition_instances():
    rng = np.random.default_rng(20260101)
    yield "diag2", GeneratorSet.preset("diag2")
    for dim_f, r in [(2, 1), (2, 2), (4, 1), (4, 2), (4, 2)]:
        yield f"random dim_f={dim_f} r={r}", GeneratorSet.random_traceless(dim_f, r, rng)


def test_criterion_2_partition_identity(report):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    details = []
    for label, gens in _partition_instances():
        a = rng.standard_normal((gens.dim_f, gens.dim_f))
        b_m = a @ a.T + gens.dim_f * np.eye(gens.dim_f) if label != "diag2" else np.eye(2)
        m = build_interacting_measure(gaussian_from_precision(b_m), GaussianMeasure.standard(gens.r),
                                      InteractionMap(gens))
        part = partition_identity_check(m, probe_count=1000, seed=3, tol=1e-8)
        worst = max(worst, part.max_deviation)
        details.append(part.passed and part.values.size == 1000)
    elapsed = time.perf_counter() - start
    ok = all(details) and worst <= 1e-8 and elapsed < 5.0
    report(2, "partition-function identity", ok,
           f"6 generator sets x 1000 probes, max |N det^-1/2 - 1| = {worst:.2e} <= 1e-8, {elapsed:.2f}s < 5s")
    assert ok


def test_criterion_3_det_constancy(report):
    start = time.perf_counter()
    rng = np.random.default_rng(8)
    spreads = []
    for gens in [GeneratorSet.preset("diag2"), GeneratorSet.random_traceless(3, 2, rng),
                 GeneratorSet.random_traceless(4, 2, rng)]:
        b = rng.standard_normal((gens.dim_f, gens.dim_f))
        b_m = gaussian_from_precision(b @ b.T + gens.dim_f * np.eye(gens.dim_f))
        rep = det_constancy_check(InteractionMap(gens), b_m.precision, GaussianMeasure.standard(gens.r),
                                  probes=100, seed=1)
        spreads.append(rep.relative_spread)
    control = det_constancy_check(quadratic_scalar_map(2), np.eye(2), GaussianMeasure.standard(1),
                                  probes=100, seed=1)
    elapsed = time.perf_counter() - start
    ok = max(spreads) <= 1e-8 and not control.passed and elapsed < 1.0
    report(3, "determinant constancy", ok,
           f"max relative spread {max(spreads):.2e} <= 1e-8; (1+A^2)I control spread "
           f"{control.relative_spread:.3g} flagged={not control.passed}; {elapsed:.2f}s < 1s")
    assert ok


def test_criterion_4_trivial_reduction(report):
    b_m = np.array([[2.0, 0.5], [0.5, 1.0]])
    mu_m = gaussian_from_precision(b_m)
    m = build_interacting_measure(mu_m, GaussianMeasure.standard(2),
                                  InteractionMap(GeneratorSet.zeros(2, 2)))
    u = sample_interacting(m, 100_000, seed=5).values
    prods = u[:, :, None] * u[:, None, :]
    emp = prods.mean(axis=0)
    se = prods.std(axis=0, ddof=1) / math.sqrt(u.shape[0])
    z_cov = float(np.max(np.abs(emp - mu_m.covariance) / se))

    f1, f2 = Functional([1.0, 0.0]), Functional([0.3, -1.0])
    free = n_point_free_oracle(mu_m, [f1, f2])
    det_errs = [
        abs(n_point_quadrature(m, [f1, f2], 20).value - free),
        abs(two_point_perturbative(m, f1, f2, 8).value - free),
        abs(n_point_semi_analytic(m, [f1, f2], 1000, seed=5).value - free),
    ]
    mc = mc_correlator(m, [f1, f2], 100_000, seed=5)
    z_mc = abs(mc.value - free) / mc.stderr
    ok = z_cov <= 5 and max(det_errs) <= 1e-12 and z_mc <= 5
    report(4, "trivial-interaction reduction", ok,
           f"covariance max |z| = {z_cov:.2f} <= 5; deterministic engines max error "
           f"{max(det_errs):.1e} <= 1e-12; mc |z| = {z_mc:.2f}")
    assert ok


def test_criterion_5_reference_engines(report):
    start = time.perf_counter()
    cfg = ExperimentConfig.load(CONFIGS / "a5_reference.json")
    est = {(_e["method"], _e["n"]): _e for _e in run(cfg).payload["estimates"]}
    quad = est[("quadrature", 60)]["value"]
    semi = est[("semi_analytic_mc", 100_000)]
    mc = est[("mc", 1_000_000)]
    rel_quad = abs(quad - math.exp(2.0)) / math.exp(2.0)
    z_semi = abs(semi["value"] - quad) / semi["stderr"]
    z_mc = abs(mc["value"] - quad) / mc["stderr"]

    weak = ExperimentConfig.load(CONFIGS / "a5_weak_coupling.json")
    pert = next(e for e in run(weak).payload["estimates"]
                if e["method"] == "perturbative" and e["order"] == 8)
    rel_pert = abs(pert["value"] - math.exp(0.18)) / math.exp(0.18)
    elapsed = time.perf_counter() - start
    ok = rel_quad <= 1e-6 and z_semi <= 3 and z_mc <= 3 and rel_pert <= 1e-5 and elapsed < 30
    report(5, "two-point engine agreement", ok,
           f"quadrature[60] rel err {rel_quad:.1e}; semi-analytic |z| = {z_semi:.2f}; mc |z| = "
           f"{z_mc:.2f}; perturbative K=8 sigma_g=0.3 rel err {rel_pert:.1e}; {elapsed:.1f}s < 30s")
    assert ok


def _random_law(rng, size, exact):
    if exact:
        w = rng.integers(0, 20, size=size)
        w[rng.integers(size)] += 1
        total = int(w.sum())
        return DiscreteLaw(tuple(Fraction(int(v), total) for v in w))
    w = rng.random(size)
    w /= w.sum()
    w[-1] = 1.0 - math.fsum(w[:-1])
    return DiscreteLaw(tuple(float(max(v, 0.0)) for v in w))


def _pointwise_accepts(free, weights):
    try:
        pointwise_interaction(free, weights)
        return True
    except LawError:
        return False


def test_criterion_6_discrete_constructions(report):
    start = time.perf_counter()
    rng = np.random.default_rng(6)
    exact_sums = 0
    agree = 0
    for i in range(500):
        size = int(rng.integers(1, 33))
        a = _random_law(rng, size, exact=True)
        b = _random_law(rng, int(rng.integers(1, 33)), exact=True)
        exact_sums += sum(convolution_interaction(a, b).probs) == 1

        free = _random_law(rng, size, exact=False)
        w = rng.random(size) * 2
        mass = math.fsum(p * x for p, x in zip(free.probs, w))
        # half the cases rescaled onto the mean-one shell, the rest perturbed off it
        if i % 2 == 0:
            w = w / mass
        else:
            w = w / mass * (1 + rng.choice([-1, 1]) * 10 ** rng.uniform(-12, -6))
        weights = WeightFunction(tuple(w.tolist()))
        expected = abs(mean_one_check(free, weights) - 1.0) <= 1e-9 and all(
            0 <= p * x <= 1 for p, x in zip(free.probs, weights.weights))
        agree += _pointwise_accepts(free, weights) == expected
    elapsed = time.perf_counter() - start
    ok = exact_sums == 500 and agree == 500 and elapsed < 5.0
    report(6, "discrete constructions", ok,
           f"{exact_sums}/500 rational convolutions sum to exactly 1; pointwise acceptance matches "
           f"the 1e-9 rule in {agree}/500; {elapsed:.2f}s < 5s")
    assert ok


def test_criterion_7_clt(report):
    start = time.perf_counter()
    base = DiscreteLaw.bernoulli(0.5)
    d = [partial_sum_clt_distance(base, n) for n in (4, 16, 64)]
    elapsed = time.perf_counter() - start
    ok = d[0] >= d[1] >= d[2] and d[2] < 0.05 and elapsed < 1.0
    report(7, "CLT demonstration", ok,
           "Kolmogorov distances n=4,16,64: " + ", ".join(f"{v:.5f}" for v in d)
           + f"; last < 0.05; {elapsed:.3f}s < 1s")
    assert ok


def test_criterion_8_wick(report):
    mu = GaussianMeasure.standard(1)
    exact = isserlis_moment(mu, MomentSpec((0, 0, 0, 0)))
    x = sample(mu, 1_000_000, seed=8).values[:, 0]
    x4 = x ** 4
    emp = float(x4.mean())
    se = float(x4.std(ddof=1) / math.sqrt(x4.size))
    ok = abs(exact - 3.0) <= 1e-12 and abs(emp - 3.0) <= 3 * se
    report(8, "Wick oracle self-consistency", ok,
           f"isserlis {float(exact)!r}; MC {emp:.4f} +/- {se:.4f} (3 se)")
    assert ok


ACCEPTANCE_RUNS = [
    ("convolution-demo", "a1_gaussian_convolution.json", 0),
    ("partition-check", "a2_partition_diag2.json", 0),
    ("partition-check", "a3_negative_control.json", 3),
    ("correlate", "a4_trivial.json", 0),
    ("correlate", "a5_reference.json", 0),
    ("correlate", "a5_weak_coupling.json", 0),
    ("convolution-demo", "a6_discrete.json", 0),
    ("clt-demo", "a7_clt.json", 0),
]


def test_criterion_9_determinism(report, tmp_path):
    mismatched = []
    for experiment, name, code in ACCEPTANCE_RUNS:
        texts = []
        for i, workers in enumerate((1, 1, 4)):
            out = tmp_path / f"{name}.{i}.json"
            rc = main([experiment, "--config", str(CONFIGS / name), "--out", str(out),
                       "--workers", str(workers)])
            rec = json.loads(out.read_text())
            rec.pop("wall_time")
            texts.append((rc, json.dumps(rec, sort_keys=True)))
        if not (texts[0] == texts[1] == texts[2] and texts[0][0] == code):
            mismatched.append(name)
    ok = not mismatched
    report(9, "determinism", ok,
           f"{len(ACCEPTANCE_RUNS)} configs x (workers 1, 1, 4) byte-identical minus wall_time"
           + (f"; mismatched: {mismatched}" if mismatched else ""))
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
