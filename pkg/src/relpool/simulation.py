"""Synthetic worlds and seeded Monte-Carlo experiments.

Every experiment derives one independent random stream per trial from a single
seed (numpy ``SeedSequence.spawn`` feeding ``PCG64``), so a report depends only
on its parameters and seed, never on the order trials are evaluated in.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import statistics
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from relpool.dataset import AttributeSchema, Dataset, Event, joint_proportion
from relpool.decision import DecisionMatrix, _argmax_first, decide, expected_utilities
from relpool.errors import SchemaError, StarvedEstimateError
from relpool.estimator import EstimatorConfig, OnInvalid, estimate, normalize
from relpool.stats import AlphaPolicy, CellSummary, Decision, independence_test

RNG_ALGORITHM = "numpy PCG64, per-trial streams from SeedSequence.spawn"
DEFAULT_CADENCE = 5
HORIZON_FACTOR = 4


def trial_rngs(seed: int, trials: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(trials)
    return [np.random.Generator(np.random.PCG64(s)) for s in children]


# ---------------------------------------------------------------------------
# generator


@dataclass(frozen=True)
class GeneratorSpec:
    """A state distribution over a schema.

    Give either ``marginals`` (independent categorical per attribute, each a
    probability list in domain order) or ``joint`` (an array whose axes follow
    schema attribute order and domain value order).
    """

    schema: AttributeSchema
    marginals: Mapping[str, Sequence[float]] | None = None
    joint: np.ndarray | None = None
    target: Event | None = None
    seed: int = 0

    def __post_init__(self):
        if (self.marginals is None) == (self.joint is None):
            raise ValueError("give exactly one of marginals or joint")
        if self.marginals is not None:
            if set(self.marginals) != set(self.schema.names):
                raise ValueError("marginals must cover every schema attribute")
            for name, probs in self.marginals.items():
                _check_probs(probs, len(self.schema.domain(name)), name)
        else:
            shape = tuple(len(d) for _, d in self.schema.items())
            joint = np.asarray(self.joint, dtype=float)
            if joint.shape != shape:
                raise ValueError(f"joint table must have shape {shape}")
            _check_probs(joint.ravel(), joint.size, "joint")
            object.__setattr__(self, "joint", joint)
        if self.target is not None:
            self.schema.validate(self.target)

    def joint_table(self) -> np.ndarray:
        if self.joint is not None:
            return self.joint
        table = np.ones(())
        for name in self.schema.names:
            table = np.multiply.outer(table, np.asarray(self.marginals[name], dtype=float))
        return table


def _check_probs(probs, size, label):
    p = np.asarray(probs, dtype=float)
    if p.shape != (size,):
        raise ValueError(f"{label}: expected {size} probabilities")
    if (p < 0).any() or not np.isfinite(p).all():
        raise ValueError(f"{label}: probabilities must be finite and nonnegative")
    if abs(math.fsum(p.tolist()) - 1.0) > 1e-12:
        raise ValueError(f"{label}: probabilities must sum to 1")


def generate(spec: GeneratorSpec, n: int, rng: np.random.Generator | None = None) -> Dataset:
    """Draw ``n`` fully observed states.  Uses ``spec.seed`` unless ``rng`` is given."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = rng if rng is not None else np.random.Generator(np.random.PCG64(spec.seed))
    schema = spec.schema
    if spec.marginals is not None:
        cols = [
            rng.choice(len(schema.domain(a)), size=n, p=np.asarray(spec.marginals[a], dtype=float))
            for a in schema.names
        ]
        codes = np.stack(cols, axis=1) if cols else np.zeros((n, 0))
    else:
        flat = spec.joint.ravel()
        draws = rng.choice(flat.size, size=n, p=flat / flat.sum())
        codes = np.stack(np.unravel_index(draws, spec.joint.shape), axis=1)
    return Dataset.from_codes(schema, codes.reshape(n, len(schema)))


def conditional_distribution(
    spec: GeneratorSpec, columns: Sequence[Mapping[str, str]], condition: Mapping[str, str]
) -> np.ndarray:
    """True Pr(column | condition) under the generator, one entry per column."""
    schema = spec.schema
    table = spec.joint_table()
    index = [slice(None)] * len(schema)
    for a, v in condition.items():
        index[schema.index(a)] = schema.code(a, v)
    sub = table[tuple(index)]
    free = [a for a in schema.names if a not in condition]
    total = sub.sum()
    if total <= 0:
        raise SchemaError("condition has zero probability under the generator")
    out = []
    for col in columns:
        idx = [slice(None)] * len(free)
        for a, v in col.items():
            idx[free.index(a)] = schema.code(a, v)
        out.append(sub[tuple(idx)].sum() / total)
    return np.array(out)


# ---------------------------------------------------------------------------
# reports


@dataclass
class ExperimentReport:
    """Per-trial records plus the aggregates computed from them."""

    kind: str
    params: dict
    records: list[dict]
    summary: dict = field(default_factory=dict)
    rng: str = RNG_ALGORITHM

    def __post_init__(self):
        if not self.summary:
            self.summary = SUMMARIZERS[self.kind](self.records, self.params)

    def recompute_summary(self) -> dict:
        return SUMMARIZERS[self.kind](self.records, self.params)

    def to_tsv(self) -> str:
        buf = io.StringIO()
        if not self.records:
            return ""
        keys = list(self.records[0])
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(keys)
        for rec in self.records:
            w.writerow([_cell(rec[k]) for k in keys])
        return buf.getvalue()

    def summary_document(self) -> dict:
        return {
            "experiment": self.kind,
            "params": self.params,
            "rng": self.rng,
            "summary": _json_safe(self.summary),
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary_document(), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir: str | os.PathLike) -> tuple[str, str]:
        os.makedirs(out_dir, exist_ok=True)
        trials_path = os.path.join(out_dir, "trials.tsv")
        summary_path = os.path.join(out_dir, "summary.json")
        with open(trials_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_tsv())
        with open(summary_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.summary_json())
        return trials_path, summary_path


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


def _binomial_se(rate: float, n: int) -> float:
    return math.sqrt(rate * (1.0 - rate) / n) if n else float("nan")


# ---------------------------------------------------------------------------
# pool-rate experiment


def run_pool_rate_experiment(
    k: int,
    p: float,
    points_per_cell: int,
    trials: int,
    config: EstimatorConfig | None = None,
    seed: int = 0,
    cadence: int = DEFAULT_CADENCE,
    final_only: bool = False,
) -> ExperimentReport:
    """Grow ``k`` equal-probability cells and test homogeneity as they fill.

    Tests run every ``cadence`` points per cell (or only at the final size
    with ``final_only``).  The summary's ``no_pool_rate`` is the fraction of
    all test invocations that refused to pool.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    config = config or EstimatorConfig()
    sizes = [points_per_cell] if final_only else list(range(cadence, points_per_cell + 1, cadence))
    records = []
    for t, rng in enumerate(trial_rngs(seed, trials)):
        hits = np.cumsum(rng.random((k, points_per_cell)) < p, axis=1).tolist()
        counts = {Decision.POOL: 0, Decision.NO_POOL: 0, Decision.INVALID: 0}
        last = None
        for m in sizes:
            cells = [CellSummary(m, row[m - 1]) for row in hits]
            last = independence_test(cells, config.alpha_policy, config.validity_threshold)
            counts[last.decision] += 1
        records.append({
            "trial": t,
            "tests": len(sizes),
            "pool": counts[Decision.POOL],
            "no_pool": counts[Decision.NO_POOL],
            "invalid": counts[Decision.INVALID],
            "final_decision": last.decision.value,
            "final_statistic": last.statistic,
        })
    params = {
        "k": k, "p": p, "points_per_cell": points_per_cell, "trials": trials,
        "seed": seed, "cadence": cadence, "final_only": final_only,
        "config": config.to_dict(),
    }
    return ExperimentReport("pool_rate", params, records)


def _summarize_pool_rate(records, params):
    tests = sum(r["tests"] for r in records)
    no_pool = sum(r["no_pool"] for r in records)
    invalid = sum(r["invalid"] for r in records)
    rate = no_pool / tests if tests else float("nan")
    return {
        "trials": len(records),
        "tests": tests,
        "no_pool": no_pool,
        "invalid": invalid,
        "no_pool_rate": rate,
        "no_pool_rate_se": _binomial_se(rate, tests),
        "invalid_rate": invalid / tests if tests else float("nan"),
    }


# ---------------------------------------------------------------------------
# stabilization experiment


def stabilization_point(decisions: Iterable[bool], checkpoints: Sequence[int]) -> int | None:
    """Smallest checkpoint ``m`` with NO_POOL at every checkpoint in ``[m, 4m]``.

    ``decisions`` yields True when the test at the matching checkpoint refused
    to pool; it is consumed lazily and abandoned once the answer is known.
    Returns None when no candidate's horizon fits inside the checkpoints.
    """
    start = None
    for m, refused in zip(checkpoints, decisions):
        if not refused:
            start = None
            continue
        if start is None:
            start = m
        if m >= HORIZON_FACTOR * start:
            return start
    return None


def run_stabilization_experiment(
    cell_probs: Sequence[float],
    config: EstimatorConfig | None = None,
    trials: int = 200,
    seed: int = 0,
    cadence: int = DEFAULT_CADENCE,
    max_points: int = 4000,
) -> ExperimentReport:
    """Record when the test settles on refusing to pool cells with unequal probabilities.

    "Settled at m" means NO_POOL at every checkpoint from m through 4m; trials
    that never settle within ``max_points`` per cell are censored (recorded
    with an empty stabilization value and counted as infinite in the median).
    """
    probs = [float(p) for p in cell_probs]
    if len(probs) < 2:
        raise ValueError("need at least two cells")
    if max(probs) == min(probs):
        raise ValueError("stabilization is undefined when all cell probabilities are equal")
    config = config or EstimatorConfig()
    checkpoints = list(range(cadence, max_points + 1, cadence))
    p = np.array(probs)[:, None]
    records = []
    for t, rng in enumerate(trial_rngs(seed, trials)):
        hits = np.cumsum(rng.random((len(probs), max_points)) < p, axis=1).tolist()
        tested = []

        def refusals():
            for m in checkpoints:
                cells = [CellSummary(m, row[m - 1]) for row in hits]
                out = independence_test(cells, config.alpha_policy, config.validity_threshold)
                tested.append(m)
                yield out.decision is Decision.NO_POOL

        point = stabilization_point(refusals(), checkpoints)
        tests = len(tested)
        records.append({"trial": t, "stabilization": point, "tests": tests})
    params = {
        "cell_probs": probs, "trials": trials, "seed": seed, "cadence": cadence,
        "max_points": max_points, "horizon_factor": HORIZON_FACTOR,
        "config": config.to_dict(),
    }
    return ExperimentReport("stabilization", params, records)


def _summarize_stabilization(records, params):
    values = [r["stabilization"] if r["stabilization"] is not None else math.inf for r in records]
    settled = [v for v in values if math.isfinite(v)]
    qs = statistics.quantiles(values, n=4, method="inclusive") if len(values) > 1 else values * 3
    return {
        "trials": len(records),
        "censored": len(values) - len(settled),
        "median": statistics.median(values) if values else float("nan"),
        "q1": qs[0],
        "q3": qs[2],
        "mean_settled": statistics.fmean(settled) if settled else float("nan"),
    }


# ---------------------------------------------------------------------------
# moment experiment

CELL_ATTRIBUTE = "cell"
OUTCOME_ATTRIBUTE = "outcome"


def moment_schema(k: int) -> AttributeSchema:
    return AttributeSchema([
        (CELL_ATTRIBUTE, [f"c{i + 1}" for i in range(k)]),
        (OUTCOME_ATTRIBUTE, ["yes", "no"]),
    ])


def run_moment_experiment(
    cell_probs: Sequence[float],
    cell_sizes: Sequence[int] | int,
    config: EstimatorConfig | None = None,
    trials: int = 5000,
    seed: int = 0,
) -> ExperimentReport:
    """Sampling mean and variance of the composite estimate of Pr(outcome | cell c1).

    Each trial builds a fresh dataset with ``cell_sizes[i]`` rows in cell i and
    runs :func:`relpool.estimator.estimate`.  The default config uses the
    shrinking significance schedule ``alpha = min(0.05, N**-2)``.
    """
    probs = [float(p) for p in cell_probs]
    k = len(probs)
    if k < 2:
        raise ValueError("need at least two cells")
    sizes = [int(cell_sizes)] * k if isinstance(cell_sizes, int) else [int(s) for s in cell_sizes]
    if len(sizes) != k or min(sizes) < 1:
        raise ValueError("cell_sizes must give a positive size per cell")
    if trials < 1000:
        raise ValueError("moment experiments need at least 1000 trials")
    config = config or EstimatorConfig(alpha_policy=AlphaPolicy.scheduled(2.0, 0.05))
    schema = moment_schema(k)
    cell_codes = np.repeat(np.arange(k), sizes)
    target = Event({OUTCOME_ATTRIBUTE: "yes"})
    condition = Event({CELL_ATTRIBUTE: "c1"})
    p_rows = np.repeat(np.array(probs), sizes)
    records = []
    for t, rng in enumerate(trial_rngs(seed, trials)):
        outcome = np.where(rng.random(len(p_rows)) < p_rows, 0, 1)
        data = Dataset.from_codes(schema, np.stack([cell_codes, outcome], axis=1))
        res = estimate(data, target, condition, config)
        records.append({
            "trial": t,
            "estimate": res.probability,
            "pooled": CELL_ATTRIBUTE in res.eliminated,
            "effective_n": res.effective_n,
        })
    params = {
        "cell_probs": probs, "cell_sizes": sizes, "trials": trials, "seed": seed,
        "config": config.to_dict(),
    }
    return ExperimentReport("moment", params, records)


def moment_targets(cell_probs: Sequence[float], cell_sizes: Sequence[int]) -> tuple[float, float]:
    """Asymptotic (mean, variance) of the composite estimate."""
    total = sum(cell_sizes)
    if max(cell_probs) == min(cell_probs):
        p = cell_probs[0]
        return p, p * (1.0 - p) / total
    p1, n1 = cell_probs[0], cell_sizes[0]
    return p1, p1 * (1.0 - p1) / n1


def _summarize_moment(records, params):
    values = [r["estimate"] for r in records]
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    target_mean, target_var = moment_targets(params["cell_probs"], params["cell_sizes"])
    total = sum(params["cell_sizes"])
    smallest = min(params["cell_sizes"])
    growth = math.log(smallest) / math.log(total) if total > 1 else float("nan")
    return {
        "trials": n,
        "mean": mean,
        "mean_se": math.sqrt(var / n),
        "variance": var,
        # normal-theory standard error of a sample variance
        "variance_se": var * math.sqrt(2.0 / (n - 1)),
        "target_mean": target_mean,
        "target_variance": target_var,
        "pool_rate": sum(1 for r in records if r["pooled"]) / n,
        "total_n": total,
        "min_cell_n": smallest,
        "growth_exponent": growth,
        "growth_ok": bool(growth > 0),
    }


# ---------------------------------------------------------------------------
# delivery decision scenario


@dataclass(frozen=True)
class DeliveryScenario:
    """A package-delivery world: choose drive / walk / post before seeing weather and traffic.

    Weather depends only on the forecast and traffic only on weekday vs
    weekend; package size, the car's service state and the recipient are
    irrelevant to both.  With five context attributes (504 combinations) a
    2,000-row history holds about four exact matches per situation, so
    the data-starved ``POOL_ANYWAY`` policy is the scenario's config, and the
    schema lists the context attributes first so they are swept first.
    """

    schema: AttributeSchema
    spec: GeneratorSpec
    matrix: DecisionMatrix
    info_attrs: tuple[str, ...]
    config: EstimatorConfig


def delivery_scenario(seed: int = 0) -> DeliveryScenario:
    schema = AttributeSchema([
        ("package", ["small", "medium", "large"]),
        ("serviced", ["recent", "overdue"]),
        ("recipient", ["office", "home", "shop", "depot"]),
        ("day", ["mon", "tue", "wed", "thu", "fri", "sat", "sun"]),
        ("forecast", ["sunny", "mixed", "wet"]),
        ("weather", ["fine", "cloudy", "rain"]),
        ("traffic", ["light", "heavy"]),
    ])
    p_package = np.full(3, 1 / 3)
    p_serviced = np.array([0.5, 0.5])
    p_recipient = np.full(4, 0.25)
    p_day = np.full(7, 1 / 7)
    p_forecast = np.array([0.45, 0.3, 0.25])
    weather_given_forecast = np.array([
        [0.80, 0.15, 0.05],
        [0.30, 0.45, 0.25],
        [0.05, 0.20, 0.75],
    ])
    heavy = np.array([0.7, 0.7, 0.7, 0.7, 0.7, 0.1, 0.1])
    traffic_given_day = np.stack([1 - heavy, heavy], axis=1)
    joint = np.einsum(
        "p,s,r,d,f,fw,dt->psrdfwt",
        p_package, p_serviced, p_recipient, p_day, p_forecast,
        weather_given_forecast, traffic_given_day,
    )
    joint = joint / joint.sum()
    spec = GeneratorSpec(schema, joint=joint, seed=seed)
    # minutes taken, negated; columns run weather-major: (fine,light), (fine,heavy), ...
    utilities = [
        [-20, -65, -22, -67, -25, -70],  # drive: traffic dominates
        [-28, -28, -32, -32, -90, -90],  # walk: weather dominates
        [-38, -38, -38, -38, -38, -38],  # post: constant
    ]
    matrix = DecisionMatrix(schema, ["drive", "walk", "post"], ["weather", "traffic"], utilities)
    config = EstimatorConfig(on_invalid=OnInvalid.POOL_ANYWAY)
    return DeliveryScenario(
        schema, spec, matrix, ("package", "serviced", "recipient", "day", "forecast"), config
    )


def naive_probabilities(data: Dataset, columns, condition) -> tuple[float | None, ...] | None:
    """Exact-match frequencies of each column under the full condition, normalized."""
    raw = tuple(joint_proportion(data, c, condition).proportion for c in columns)
    if any(p is None for p in raw):
        return None
    return normalize(raw)


def run_decision_experiment(
    trials: int = 1000,
    n_obs: int = 2000,
    config: EstimatorConfig | None = None,
    seed: int = 0,
) -> ExperimentReport:
    """Compare pooled and naive decisions with the omniscient choice.

    Each trial draws a fresh history of ``n_obs`` observations plus the
    current situation, then decides using (a) pooled estimates, (b) exact-match
    frequencies, and (c) the generator's true conditional distribution.  A
    starved estimate counts as a disagreement.  ``config`` defaults to the
    scenario's own.
    """
    scenario = delivery_scenario(seed)
    matrix = scenario.matrix
    config = config or scenario.config
    records = []
    for t, rng in enumerate(trial_rngs(seed, trials)):
        data = generate(scenario.spec, n_obs, rng)
        now = generate(scenario.spec, 1, rng).observations[0].bindings
        info = Event({a: now[a] for a in scenario.info_attrs})
        truth = conditional_distribution(scenario.spec, matrix.columns, info)
        oracle = matrix.actions[_argmax_first(expected_utilities(matrix, truth / truth.sum()))]
        try:
            pooled = decide(matrix, data, info, config).chosen
        except StarvedEstimateError:
            pooled = None
        naive_p = naive_probabilities(data, matrix.columns, info)
        naive = None
        if naive_p is not None:
            naive = matrix.actions[_argmax_first(expected_utilities(matrix, naive_p))]
        records.append({
            "trial": t,
            "condition": info.format(scenario.schema),
            "oracle": oracle,
            "pooled": pooled,
            "naive": naive,
            "pooled_agrees": pooled == oracle,
            "naive_agrees": naive == oracle,
        })
    params = {"trials": trials, "n_obs": n_obs, "seed": seed, "config": config.to_dict()}
    return ExperimentReport("decision", params, records)


def _summarize_decision(records, params):
    n = len(records)
    pooled = sum(1 for r in records if r["pooled_agrees"]) / n
    naive = sum(1 for r in records if r["naive_agrees"]) / n
    return {
        "trials": n,
        "pooled_agreement": pooled,
        "naive_agreement": naive,
        "pooled_starved": sum(1 for r in records if r["pooled"] is None),
        "naive_starved": sum(1 for r in records if r["naive"] is None),
    }


SUMMARIZERS = {
    "pool_rate": _summarize_pool_rate,
    "stabilization": _summarize_stabilization,
    "moment": _summarize_moment,
    "decision": _summarize_decision,
}
