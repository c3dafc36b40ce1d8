"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line through the ``criterion`` fixture; the
lines are listed together in the "acceptance criteria" section of the
pytest terminal summary.
"""

import math
import random
import time

import numpy as np
import pytest

from oracles import chi2_survival_quadrature, scan_joint, x2_direct
from relpool.chi2 import chi_square_critical, chi_square_survival
from relpool.dataset import AttributeSchema, Event
from relpool.decision import DecisionMatrix, decide
from relpool.estimator import Action, EstimatorConfig, estimate
from relpool.simulation import (
    GeneratorSpec,
    generate,
    run_decision_experiment,
    run_moment_experiment,
    run_pool_rate_experiment,
    run_stabilization_experiment,
    trial_rngs,
)
from relpool.stats import AlphaPolicy, CellSummary, Decision, chi_square_statistic

pytestmark = pytest.mark.slow

FIXED_05 = EstimatorConfig(alpha_policy=AlphaPolicy.fixed(0.05))


def test_01_pool_rate(criterion):
    start = time.perf_counter()
    rep = run_pool_rate_experiment(k=5, p=0.5, points_per_cell=200, trials=500, config=FIXED_05, seed=1)
    elapsed = time.perf_counter() - start
    rate = rep.summary["no_pool_rate"]
    ok = rate < 0.10 and elapsed < 60
    assert criterion(1, "pool rate, 5 equal cells x 200", ok,
                     f"NO_POOL rate {rate:.4f} (< 0.10) over 500 trials in {elapsed:.1f}s (< 60s)")


def test_02_stabilization_small_gap(criterion):
    start = time.perf_counter()
    rep = run_stabilization_experiment([0.45, 0.55], FIXED_05, trials=200, seed=2)
    elapsed = time.perf_counter() - start
    median = rep.summary["median"]
    ok = 50 <= median <= 400 and elapsed < 120
    assert criterion(2, "stabilization, gap 0.1", ok,
                     f"median {median} points/cell (in [50, 400]), {rep.summary['censored']} censored, "
                     f"{elapsed:.1f}s (< 120s)")


def test_03_stabilization_large_gap(criterion):
    rep = run_stabilization_experiment([0.2, 0.5], FIXED_05, trials=200, seed=3)
    median = rep.summary["median"]
    ok = 5 <= median <= 60
    assert criterion(3, "stabilization, gap 0.3", ok, f"median {median} points/cell (in [5, 60])")


def _moment_check(number, title, probs, p_target, var_target, seed, criterion):
    rep = run_moment_experiment(probs, 500, trials=5000, seed=seed)
    s = rep.summary
    z = (s["mean"] - p_target) / s["mean_se"]
    rel = s["variance"] / var_target - 1
    ok = abs(z) <= 3 and abs(rel) <= 0.25
    return criterion(number, title, ok,
                     f"mean {s['mean']:.5f} ({z:+.2f} se), variance {s['variance']:.4g} vs {var_target:.4g} "
                     f"({rel:+.1%}, within 25%), growth exponent {s['growth_exponent']:.3f}")


def test_04_equal_probability_moments(criterion):
    assert _moment_check(4, "moments, equal p=0.3, k=4", [0.3] * 4, 0.3, 0.3 * 0.7 / 2000, 4, criterion)


def test_05_unequal_probability_moments(criterion):
    assert _moment_check(5, "moments, p=(0.2, 0.6)", [0.2, 0.6], 0.2, 0.2 * 0.8 / 500, 5, criterion)


def test_06_statistic_against_direct_formula(criterion):
    rnd = random.Random(6)
    worst = 0.0
    for _ in range(1000):
        k = rnd.randint(2, 10)
        cells = [CellSummary.from_proportion(rnd.randint(1, 1000), rnd.random()) for _ in range(k)]
        got = chi_square_statistic(cells)
        want = x2_direct([c.n for c in cells], [c.p_hat for c in cells])
        worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    nonzero = 0
    for _ in range(1000):
        num, den = rnd.randint(0, 20), rnd.randint(1, 20)
        num = min(num, den)
        cells = [CellSummary(den * m, num * m) for m in (rnd.randint(1, 50) for _ in range(rnd.randint(2, 8)))]
        nonzero += chi_square_statistic(cells) != 0.0
    ok = worst <= 1e-12 and nonzero == 0
    assert criterion(6, "X^2 vs direct formula", ok,
                     f"worst relative error {worst:.2e} (<= 1e-12) over 1000 configs; "
                     f"{nonzero} nonzero of 1000 equal-proportion configs")


def test_07_survival_kernel(criterion):
    worst = 0.0
    xs = [0.0, 0.05, 0.5] + [float(x) for x in range(1, 101, 3)] + [100.0]
    for dof in range(1, 31):
        for x in xs:
            worst = max(worst, abs(chi_square_survival(x, dof) - chi2_survival_quadrature(x, dof)))
    rnd = random.Random(7)
    worst_trip = 0.0
    for _ in range(500):
        alpha = 10 ** rnd.uniform(-6, math.log10(0.5))
        dof = rnd.randint(1, 30)
        worst_trip = max(worst_trip, abs(chi_square_survival(chi_square_critical(alpha, dof), dof) - alpha))
    ok = worst <= 1e-10 and worst_trip <= 1e-9
    assert criterion(7, "chi-square survival kernel", ok,
                     f"worst |error| vs quadrature {worst:.2e} (<= 1e-10) on {30 * len(xs)} points; "
                     f"round-trip {worst_trip:.2e} (<= 1e-9)")


def test_08_calibration(criterion):
    rep = run_pool_rate_experiment(k=2, p=0.5, points_per_cell=200, trials=10_000, config=FIXED_05,
                                   seed=8, final_only=True)
    rate = rep.summary["no_pool_rate"]
    se = math.sqrt(0.05 * 0.95 / 10_000)
    ok = abs(rate - 0.05) <= 3 * se and rep.summary["invalid"] == 0
    assert criterion(8, "test calibration at alpha 0.05", ok,
                     f"rejection rate {rate:.4f}, target 0.05 +/- {3 * se:.4f} over 10000 trials")


SCHEMA3 = AttributeSchema([("a", ["a0", "a1", "a2"]), ("b", ["b0", "b1"]), ("c", ["c0", "c1", "c2"]),
                           ("e", ["yes", "no"])])


def _world(p_of):
    """Joint table with uniform (a, b, c) and Pr(e=yes | a, b, c) = p_of(i, j, k)."""
    joint = np.zeros((3, 2, 3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(3):
                p = p_of(i, j, k)
                joint[i, j, k] = [p / 18, (1 - p) / 18]
    return GeneratorSpec(SCHEMA3, joint=joint)


def _rows(data):
    return [dict(o.bindings) for o in data.observations]


def _random_condition(rnd):
    attrs = rnd.sample(["a", "b", "c"], rnd.randint(1, 3))
    return {a: rnd.choice(SCHEMA3.domain(a)) for a in attrs}


def test_09_fallback_identity(criterion):
    # every attribute moves Pr(yes) a lot, so each test refuses to pool
    spec = _world(lambda i, j, k: 0.05 + 0.12 * i + 0.3 * j + 0.1 * k)
    rnd = random.Random(9)
    checked = mismatches = 0
    for rng in trial_rngs(9, 40):
        data = generate(spec, 6000, rng)
        rows = _rows(data)
        cond = _random_condition(rnd)
        res = estimate(data, {"e": "yes"}, cond, FIXED_05)
        if not all(s.outcome.decision is Decision.NO_POOL for s in res.trace):
            continue
        checked += 1
        n, s = scan_joint(rows, {"e": "yes"}, cond)
        mismatches += res.probability != s / n
    ok = checked >= 30 and mismatches == 0
    assert criterion(9, "all NO_POOL => exact-match proportion", ok,
                     f"{checked} of 40 datasets had every test refuse; {mismatches} differ bit-for-bit")


def test_10_pooling_identity(criterion):
    spec = _world(lambda i, j, k: 0.35)
    rnd = random.Random(10)
    checked = mismatches = 0
    for rng in trial_rngs(10, 40):
        data = generate(spec, 3000, rng)
        rows = _rows(data)
        cond = _random_condition(rnd)
        res = estimate(data, {"e": "yes"}, cond, FIXED_05)
        if res.effective_condition:
            continue
        checked += 1
        n, s = scan_joint(rows, {"e": "yes"}, {})
        mismatches += res.probability != s / n
    ok = checked >= 30 and mismatches == 0
    assert criterion(10, "fully eliminated => marginal frequency", ok,
                     f"{checked} of 40 fully eliminated; {mismatches} differ bit-for-bit")


def test_11_affine_invariance(criterion):
    rng = np.random.default_rng(11)
    schema = AttributeSchema([("weather", ["fine", "cloudy", "rain"]), ("traffic", ["light", "heavy"])])
    changed = 0
    for _ in range(100):
        n_actions = int(rng.integers(2, 6))
        u = rng.uniform(-100, 100, size=(n_actions, 6))
        w = rng.random(6)
        p = (w / w.sum()).tolist()
        m = DecisionMatrix(schema, [f"act{i}" for i in range(n_actions)], ["weather", "traffic"], u)
        chosen = decide(m, None, {}, override=p).chosen
        scale, shift = float(rng.uniform(0.01, 100)), float(rng.uniform(-1000, 1000))
        changed += decide(m.transformed(scale, shift), None, {}, override=p).chosen != chosen
    ok = changed == 0
    assert criterion(11, "positive-affine utility invariance", ok,
                     f"{changed} of 100 random matrices changed their choice")


def test_12_delivery_end_to_end(criterion):
    start = time.perf_counter()
    rep = run_decision_experiment(trials=1000, n_obs=2000, seed=12)
    elapsed = time.perf_counter() - start
    pooled, naive = rep.summary["pooled_agreement"], rep.summary["naive_agreement"]
    ok = pooled >= 0.95 and pooled > naive
    assert criterion(12, "delivery scenario vs oracle", ok,
                     f"pooled agreement {pooled:.3f} (>= 0.95), naive {naive:.3f}, "
                     f"{rep.summary['naive_starved']} naive starved, {elapsed:.1f}s")
