"""Conditional probability estimation with irrelevant-attribute pooling.

For a target event E and a condition I, each attribute A bound in I is tested
for relevance: the sibling events of I along A (I with A set to each value of
its domain) define cells, and if the cells' E-frequencies look homogeneous the
attribute is dropped from the condition, pooling their data.  Sweeps repeat
over the surviving attributes until a full pass drops nothing; the estimate is
then the plain E-frequency under whatever remains of I.
"""

from __future__ import annotations

import enum
import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

from relpool.dataset import AttributeSchema, Dataset, Event, _read_text, joint_proportion
from relpool.errors import DataError, InsufficientDataError, SchemaError
from relpool.stats import (
    DEFAULT_VALIDITY_THRESHOLD,
    AlphaPolicy,
    CellSummary,
    Decision,
    TestOutcome,
    alpha_for,
    independence_test,
)


class OnInvalid(str, enum.Enum):
    KEEP_ATTRIBUTE = "keep_attribute"
    POOL_ANYWAY = "pool_anyway"


class Skip(str, enum.Enum):
    """Step outcomes that did not involve running the test."""

    SKIPPED_KNOWN_IRRELEVANT = "skipped_known_irrelevant"
    NO_DATA = "no_data"


class Action(str, enum.Enum):
    ELIMINATED = "eliminated"
    RETAINED = "retained"


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs for :func:`estimate`.

    known_irrelevant: pairs ``(attribute, target_attributes)``; when the target
        binds exactly ``target_attributes`` the attribute is dropped untested.
    class_partitions: ``attribute -> ((class_name, values), ...)``; a partitioned
        attribute is coarsened to its class and tested across classes only.
    """

    alpha_policy: AlphaPolicy = field(default_factory=AlphaPolicy.fixed)
    validity_threshold: float = DEFAULT_VALIDITY_THRESHOLD
    on_invalid: OnInvalid = OnInvalid.KEEP_ATTRIBUTE
    known_irrelevant: frozenset[tuple[str, frozenset[str]]] = frozenset()
    class_partitions: Mapping[str, tuple[tuple[str, tuple[str, ...]], ...]] = field(
        default_factory=dict
    )

    def __post_init__(self):
        if not self.validity_threshold > 0:
            raise ValueError("validity_threshold must be positive")
        object.__setattr__(self, "on_invalid", OnInvalid(self.on_invalid))
        object.__setattr__(
            self,
            "known_irrelevant",
            frozenset((a, frozenset(t)) for a, t in self.known_irrelevant),
        )
        parts = {}
        for attr, blocks in dict(self.class_partitions).items():
            if isinstance(blocks, Mapping):
                blocks = blocks.items()
            parts[attr] = tuple((str(name), tuple(vals)) for name, vals in blocks)
            seen: set[str] = set()
            names: set[str] = set()
            for name, vals in parts[attr]:
                if not vals:
                    raise ValueError(f"partition of {attr!r}: class {name!r} is empty")
                if name in names:
                    raise ValueError(f"partition of {attr!r}: duplicate class {name!r}")
                names.add(name)
                if seen & set(vals):
                    raise ValueError(f"partition of {attr!r}: classes overlap")
                seen |= set(vals)
        object.__setattr__(self, "class_partitions", parts)

    def validate(self, schema: AttributeSchema) -> None:
        for attr, targets in self.known_irrelevant:
            schema.index(attr)
            for t in targets:
                schema.index(t)
        for attr, blocks in self.class_partitions.items():
            domain = schema.domain(attr)
            covered = [v for _, vals in blocks for v in vals]
            if sorted(covered) != sorted(domain):
                raise SchemaError(
                    f"partition of {attr!r} must cover its domain {list(domain)} exactly"
                )

    def class_of(self, attribute: str, value: str) -> tuple[str, tuple[str, ...]]:
        for name, vals in self.class_partitions[attribute]:
            if value in vals:
                return name, vals
        raise SchemaError(f"value {value!r} of {attribute!r} is in no partition class")

    def is_known_irrelevant(self, attribute: str, target_attrs: Iterable[str]) -> bool:
        return (attribute, frozenset(target_attrs)) in self.known_irrelevant

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha_policy.to_dict(),
            "validity_threshold": self.validity_threshold,
            "on_invalid": self.on_invalid.value,
            "known_irrelevant": [
                {"attribute": a, "target_attributes": sorted(t)}
                for a, t in sorted(self.known_irrelevant, key=lambda x: (x[0], sorted(x[1])))
            ],
            "class_partitions": {
                a: {name: list(vals) for name, vals in blocks}
                for a, blocks in self.class_partitions.items()
            },
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "EstimatorConfig":
        unknown = set(doc) - {
            "alpha", "validity_threshold", "on_invalid", "known_irrelevant", "class_partitions"
        }
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(
                alpha_policy=AlphaPolicy.from_dict(doc.get("alpha", {"kind": "fixed", "alpha": 0.05})),
                validity_threshold=float(doc.get("validity_threshold", DEFAULT_VALIDITY_THRESHOLD)),
                on_invalid=OnInvalid(doc.get("on_invalid", OnInvalid.KEEP_ATTRIBUTE.value)),
                known_irrelevant=frozenset(
                    (k["attribute"], frozenset(k["target_attributes"]))
                    for k in doc.get("known_irrelevant", [])
                ),
                class_partitions={
                    a: tuple((name, tuple(vals)) for name, vals in blocks.items())
                    for a, blocks in doc.get("class_partitions", {}).items()
                },
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise DataError(f"bad estimator config: {exc}") from exc


def load_config(source, schema: AttributeSchema | None = None) -> EstimatorConfig:
    """Read an estimator config JSON document (see README for the layout)."""
    text, name = _read_text(source)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{name or '<config>'}:{exc.lineno}: malformed JSON: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise DataError(f"{name or '<config>'}: config must be a JSON object")
    config = EstimatorConfig.from_dict(doc)
    if schema is not None:
        config.validate(schema)
    return config


@dataclass(frozen=True)
class EliminationStep:
    """One application of the relevance test to one attribute.

    ``condition`` and ``restrictions`` record the (partially pooled) condition
    the test ran against, so the step can be replayed.  ``labels`` name the
    cells: attribute values, or class names for a partitioned attribute.
    """

    attribute: str
    condition: Event
    restrictions: Mapping[str, str]
    outcome: TestOutcome | Skip
    cells: tuple[CellSummary, ...]
    labels: tuple[str, ...]
    action: Action

    def to_dict(self) -> dict:
        outcome = (
            {"decision": self.outcome.value}
            if isinstance(self.outcome, Skip)
            else self.outcome.to_dict()
        )
        return {
            "attribute": self.attribute,
            "condition": dict(sorted(self.condition.items())),
            "restrictions": dict(sorted(self.restrictions.items())),
            "cells": [
                {"label": lab, "n": c.n, "successes": c.successes}
                for lab, c in zip(self.labels, self.cells)
            ],
            "outcome": outcome,
            "action": self.action.value,
        }


@dataclass(frozen=True)
class EstimateResult:
    target: Event
    condition: Event
    probability: float | None
    effective_condition: Event
    class_conditions: Mapping[str, str]
    effective_n: int
    successes: int
    trace: tuple[EliminationStep, ...]
    passes: int

    @property
    def defined(self) -> bool:
        return self.probability is not None

    @property
    def eliminated(self) -> list[str]:
        return [s.attribute for s in self.trace if s.action is Action.ELIMINATED]

    def to_dict(self, schema: AttributeSchema | None = None) -> dict:
        return {
            "target": self.target.format(schema),
            "condition": self.condition.format(schema),
            "probability": self.probability,
            "effective_condition": self.effective_condition.format(schema),
            "class_conditions": dict(sorted(self.class_conditions.items())),
            "effective_n": self.effective_n,
            "successes": self.successes,
            "passes": self.passes,
            "eliminated": self.eliminated,
            "trace": [s.to_dict() for s in self.trace],
        }


# ---------------------------------------------------------------------------


def _split_condition(condition: Event, config: EstimatorConfig):
    """Separate point bindings from those coarsened to a partition class."""
    points, classes = {}, {}
    for attr, value in condition.items():
        if attr in config.class_partitions:
            classes[attr] = config.class_of(attr, value)[0]
        else:
            points[attr] = value
    return points, classes


def _restrict_map(classes: Mapping[str, str], config: EstimatorConfig) -> dict[str, tuple[str, ...]]:
    out = {}
    for attr, name in classes.items():
        out[attr] = dict(config.class_partitions[attr])[name]
    return out


def _cells(dataset, target, points, classes, attribute, config):
    restrict = _restrict_map(classes, config)
    cells, labels = [], []
    if attribute in classes:
        own = classes[attribute]
        order = [own] + [n for n, _ in config.class_partitions[attribute] if n != own]
        for name in order:
            r = dict(restrict)
            r[attribute] = dict(config.class_partitions[attribute])[name]
            prop = joint_proportion(dataset, target, points, restrict=r)
            cells.append(CellSummary(prop.n, prop.successes))
            labels.append(name)
    else:
        own = points[attribute]
        order = [own] + [v for v in dataset.schema.domain(attribute) if v != own]
        for v in order:
            cond = dict(points)
            cond[attribute] = v
            prop = joint_proportion(dataset, target, cond, restrict=restrict)
            cells.append(CellSummary(prop.n, prop.successes))
            labels.append(v)
    return tuple(cells), tuple(labels)


def _step(dataset, target, points, classes, attribute, config) -> EliminationStep:
    cond_event = Event(points)
    frozen_classes = dict(classes)
    if config.is_known_irrelevant(attribute, target.attributes):
        return EliminationStep(
            attribute, cond_event, frozen_classes, Skip.SKIPPED_KNOWN_IRRELEVANT,
            (), (), Action.ELIMINATED,
        )
    cells, labels = _cells(dataset, target, points, classes, attribute, config)
    live = [c for c in cells if c.n > 0]
    if not live:
        raise InsufficientDataError(
            f"no observations in any sibling cell of {attribute!r} under {cond_event.format()}"
        )
    if len(live) == 1:
        # nothing to compare against: merging adds no conflicting evidence
        outcome = TestOutcome(
            Decision.POOL, 0.0, 0, float("inf"), alpha_for(config.alpha_policy, live[0].n),
            tuple(True for _ in cells), live[0].successes / live[0].n,
        )
    else:
        outcome = independence_test(cells, config.alpha_policy, config.validity_threshold)
    if outcome.decision is Decision.POOL:
        action = Action.ELIMINATED
    elif outcome.decision is Decision.INVALID and config.on_invalid is OnInvalid.POOL_ANYWAY:
        action = Action.ELIMINATED
    else:
        action = Action.RETAINED
    return EliminationStep(attribute, cond_event, frozen_classes, outcome, cells, labels, action)


def _check_disjoint(target: Mapping[str, str], condition: Mapping[str, str]) -> None:
    shared = set(target) & set(condition)
    if shared:
        raise SchemaError(f"target and condition share attributes: {sorted(shared)}")


def test_attribute(
    dataset: Dataset,
    target: Mapping[str, str],
    condition: Mapping[str, str],
    attribute: str,
    config: EstimatorConfig | None = None,
) -> EliminationStep:
    """Run the relevance test for one attribute of ``condition``.

    Raises InsufficientDataError when every sibling cell is empty.
    """
    config = config or EstimatorConfig()
    target, condition = Event(target), Event(condition)
    dataset.schema.validate(target)
    dataset.schema.validate(condition)
    config.validate(dataset.schema)
    _check_disjoint(target, condition)
    if attribute not in condition:
        raise SchemaError(f"attribute {attribute!r} is not bound in the condition")
    points, classes = _split_condition(condition, config)
    return _step(dataset, target, points, classes, attribute, config)


test_attribute.__test__ = False  # keep pytest from collecting this function


def estimate(
    dataset: Dataset,
    target: Mapping[str, str],
    condition: Mapping[str, str],
    config: EstimatorConfig | None = None,
    order: Sequence[str] | None = None,
) -> EstimateResult:
    """Estimate Pr(target | condition), pooling over attributes judged irrelevant.

    ``order`` overrides the sweep order (default: schema order).  An attribute
    whose sibling cells are all empty is dropped with a NO_DATA step, so the
    result is UNDEFINED only when even the fully pooled condition has no data.
    """
    config = config or EstimatorConfig()
    schema = dataset.schema
    target, condition = Event(target), Event(condition)
    if not target:
        raise SchemaError("target event must bind at least one attribute")
    schema.validate(target)
    schema.validate(condition)
    config.validate(schema)
    _check_disjoint(target, condition)

    points, classes = _split_condition(condition, config)
    sweep = list(order) if order is not None else schema.ordered(condition)
    if sorted(sweep) != sorted(condition):
        raise SchemaError("sweep order must list exactly the condition's attributes")

    trace: list[EliminationStep] = []
    passes = 0
    while True:
        passes += 1
        changed = False
        for attr in sweep:
            if attr not in points and attr not in classes:
                continue
            try:
                step = _step(dataset, target, points, classes, attr, config)
            except InsufficientDataError:
                step = EliminationStep(
                    attr, Event(points), dict(classes), Skip.NO_DATA, (), (), Action.ELIMINATED
                )
            trace.append(step)
            if step.action is Action.ELIMINATED:
                points.pop(attr, None)
                classes.pop(attr, None)
                changed = True
        if not changed:
            break

    final = joint_proportion(dataset, target, points, restrict=_restrict_map(classes, config))
    return EstimateResult(
        target=target,
        condition=condition,
        probability=final.proportion,
        effective_condition=Event(points),
        class_conditions=dict(classes),
        effective_n=final.n,
        successes=final.successes,
        trace=tuple(trace),
        passes=passes,
    )


@dataclass(frozen=True)
class ColumnEstimates:
    """Per-column estimates plus raw and sum-normalized probability vectors.

    Entries for undefined columns are None in both vectors.  ``normalized`` is
    None when the defined estimates sum to zero.
    """

    results: tuple[EstimateResult, ...]
    raw: tuple[float | None, ...]
    normalized: tuple[float | None, ...] | None
    undefined: tuple[int, ...]

    @property
    def partial(self) -> bool:
        return bool(self.undefined)


def normalize(raw: Sequence[float | None]) -> tuple[float | None, ...] | None:
    total = sum(p for p in raw if p is not None)
    if total <= 0:
        return None
    return tuple(None if p is None else p / total for p in raw)


def estimate_all_columns(
    dataset: Dataset,
    column_events: Sequence[Mapping[str, str]],
    condition: Mapping[str, str],
    config: EstimatorConfig | None = None,
) -> ColumnEstimates:
    """Estimate every column event independently under one condition."""
    columns = [Event(c) for c in column_events]
    if not columns:
        raise SchemaError("no column events given")
    attrs = columns[0].attributes
    for c in columns[1:]:
        if c.attributes != attrs:
            raise SchemaError("column events must all bind the same attributes")
    results = tuple(estimate(dataset, c, condition, config) for c in columns)
    raw = tuple(r.probability for r in results)
    undefined = tuple(i for i, p in enumerate(raw) if p is None)
    return ColumnEstimates(results, raw, normalize(raw), undefined)


def replay_step(
    dataset: Dataset,
    target: Mapping[str, str],
    step: EliminationStep,
    config: EstimatorConfig | None = None,
) -> EliminationStep:
    """Re-run a recorded trace step against ``dataset``; equal inputs give an equal step."""
    config = config or EstimatorConfig()
    target = Event(target)
    points = dict(step.condition)
    classes = dict(step.restrictions)
    try:
        return _step(dataset, target, points, classes, step.attribute, config)
    except InsufficientDataError:
        return EliminationStep(
            step.attribute, Event(points), classes, Skip.NO_DATA, (), (), Action.ELIMINATED
        )
