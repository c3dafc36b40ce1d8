"""Decision matrices and maximum-expected-utility choice."""

from __future__ import annotations

import csv
import io
import itertools
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from relpool.dataset import AttributeSchema, Dataset, Event, _read_text
from relpool.errors import DataError, SchemaError, StarvedEstimateError
from relpool.estimator import EstimateResult, EstimatorConfig, estimate_all_columns

PROBABILITY_TOLERANCE = 1e-9


def column_events(schema: AttributeSchema, attrs: Iterable[str]) -> list[Event]:
    """Every assignment of values to ``attrs``, first schema attribute varying slowest."""
    attrs = list(attrs)
    if not attrs:
        raise SchemaError("column attribute set must be nonempty")
    if len(set(attrs)) != len(attrs):
        raise SchemaError("column attributes repeat")
    ordered = schema.ordered(attrs)
    domains = [schema.domain(a) for a in ordered]
    return [Event(zip(ordered, combo)) for combo in itertools.product(*domains)]


class DecisionMatrix:
    """Actions by column events, holding exogenous utilities."""

    def __init__(
        self,
        schema: AttributeSchema,
        actions: Sequence[str],
        column_attrs: Iterable[str],
        utilities,
    ):
        self.schema = schema
        self.actions = tuple(actions)
        if not self.actions:
            raise DataError("decision matrix needs at least one action")
        if len(set(self.actions)) != len(self.actions):
            raise DataError("action names must be unique")
        self.column_attrs = tuple(schema.ordered(column_attrs))
        self.columns = tuple(column_events(schema, self.column_attrs))
        u = np.array(utilities, dtype=float)
        if u.shape != (len(self.actions), len(self.columns)):
            raise DataError(
                f"utilities must have shape ({len(self.actions)}, {len(self.columns)}), got {u.shape}"
            )
        if not np.isfinite(u).all():
            raise DataError("utilities must be finite numbers")
        u.setflags(write=False)
        self.utilities = u

    def __repr__(self) -> str:
        return f"DecisionMatrix(actions={list(self.actions)}, columns={list(self.column_attrs)})"

    def transformed(self, scale: float, shift: float) -> "DecisionMatrix":
        return DecisionMatrix(self.schema, self.actions, self.column_attrs, self.utilities * scale + shift)


def load_matrix(source, schema: AttributeSchema) -> DecisionMatrix:
    """Read a matrix file.

    Layout (comma-delimited, ``#`` lines ignored)::

        attributes,weather,traffic
        actions,drive,walk,post
        drive,<u for column 1>,...,<u for column 6>
        walk,...
        post,...

    Utility rows appear in the order of the ``actions`` header, one value per
    column event in canonical order (first attribute varying slowest).
    """
    text, name = _read_text(source)
    where = name or "<matrix>"
    rows = []
    for line_no, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        rows.append((line_no, [c.strip() for c in row]))
    if len(rows) < 2 or rows[0][1][0] != "attributes" or rows[1][1][0] != "actions":
        raise DataError(f"{where}: expected 'attributes,...' and 'actions,...' header lines")
    attrs = rows[0][1][1:]
    actions = rows[1][1][1:]
    try:
        columns = column_events(schema, attrs)
    except SchemaError as exc:
        raise DataError(f"{where}:{rows[0][0]}: {exc}") from None
    if schema.ordered(attrs) != attrs:
        raise DataError(f"{where}:{rows[0][0]}: attributes must be listed in schema order")
    body = rows[2:]
    if [r[1][0] for r in body] != actions:
        raise DataError(f"{where}: utility rows must be labelled {actions} in that order")
    utilities = []
    for line_no, row in body:
        vals = row[1:]
        if len(vals) != len(columns):
            raise DataError(
                f"{where}:{line_no}: expected {len(columns)} utilities, got {len(vals)}"
            )
        try:
            utilities.append([float(v) for v in vals])
        except ValueError:
            raise DataError(f"{where}:{line_no}: utilities must be numbers") from None
    return DecisionMatrix(schema, actions, attrs, utilities)


def dump_matrix(matrix: DecisionMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["attributes", *matrix.column_attrs])
    w.writerow(["actions", *matrix.actions])
    for a, row in zip(matrix.actions, matrix.utilities.tolist()):
        w.writerow([a, *(repr(u) for u in row)])
    return buf.getvalue()


def _check_distribution(probabilities: Sequence[float], n: int) -> np.ndarray:
    p = np.asarray(probabilities, dtype=float)
    if p.shape != (n,):
        raise DataError(f"probability vector must have {n} entries, got {p.size}")
    if not np.isfinite(p).all() or (p < 0).any():
        raise DataError("probabilities must be finite and nonnegative")
    total = math.fsum(p.tolist())
    if abs(total - 1.0) > PROBABILITY_TOLERANCE:
        raise DataError(f"probabilities sum to {total!r}, not 1")
    return p


def expected_utilities(matrix: DecisionMatrix, probabilities: Sequence[float]) -> tuple[float, ...]:
    p = _check_distribution(probabilities, len(matrix.columns)).tolist()
    return tuple(
        math.fsum(pj * uj for pj, uj in zip(p, row)) for row in matrix.utilities.tolist()
    )


def _argmax_first(values: Sequence[float]) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


@dataclass(frozen=True)
class DecisionReport:
    chosen: str
    actions: tuple[str, ...]
    columns: tuple[Event, ...]
    expected_utilities: tuple[float, ...]
    probabilities_used: tuple[float, ...]
    probability_source: str
    raw_probabilities: tuple[float | None, ...] | None = None
    estimate_traces: tuple[EstimateResult, ...] | None = None

    def to_dict(self, schema: AttributeSchema | None = None) -> dict:
        out = {
            "chosen": self.chosen,
            "probability_source": self.probability_source,
            "actions": [
                {"action": a, "expected_utility": eu}
                for a, eu in zip(self.actions, self.expected_utilities)
            ],
            "columns": [
                {
                    "column": c.format(schema),
                    "probability": p,
                    "raw": None if self.raw_probabilities is None else self.raw_probabilities[i],
                }
                for i, (c, p) in enumerate(zip(self.columns, self.probabilities_used))
            ],
        }
        if self.estimate_traces is not None:
            out["estimates"] = [r.to_dict(schema) for r in self.estimate_traces]
        return out


def decide(
    matrix: DecisionMatrix,
    dataset: Dataset | None,
    initial_info: Mapping[str, str],
    config: EstimatorConfig | None = None,
    override: Sequence[float] | None = None,
) -> DecisionReport:
    """Choose the maximum-expected-utility action; ties go to the earliest action.

    With ``override`` the supplied distribution is used as is and no estimation
    runs.  Otherwise every column is estimated from ``dataset`` and the
    sum-normalized estimates are used; StarvedEstimateError names any column
    without support.
    """
    info = Event(initial_info)
    matrix.schema.validate(info)
    shared = set(info) & set(matrix.column_attrs)
    if shared:
        raise SchemaError(f"initial information binds column attributes {sorted(shared)}")
    if override is not None:
        probs = tuple(_check_distribution(override, len(matrix.columns)).tolist())
        eus = expected_utilities(matrix, probs)
        return DecisionReport(
            matrix.actions[_argmax_first(eus)], matrix.actions, matrix.columns,
            eus, probs, "supplied",
        )
    if dataset is None:
        raise DataError("a dataset is required when no override distribution is given")
    if dataset.schema != matrix.schema:
        raise SchemaError("dataset and matrix use different schemas")
    est = estimate_all_columns(dataset, matrix.columns, info, config)
    if est.undefined or est.normalized is None:
        starved = est.undefined or range(len(matrix.columns))
        raise StarvedEstimateError(matrix.columns[i].format(matrix.schema) for i in starved)
    probs = tuple(est.normalized)
    eus = expected_utilities(matrix, probs)
    return DecisionReport(
        matrix.actions[_argmax_first(eus)], matrix.actions, matrix.columns,
        eus, probs, "estimated", est.raw, est.results,
    )
