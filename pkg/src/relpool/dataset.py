"""Attribute vocabulary, events, and the observation database.

An observation binds a value to some (possibly all) attributes of the schema;
attributes it leaves unbound were simply not observed.  Counting follows one
rule throughout: an observation contributes to a query only if it binds every
attribute the query mentions.
"""

from __future__ import annotations

import csv
import io
import json
import os
from collections.abc import Iterable, Iterator, Mapping, Sequence
from dataclasses import dataclass
from typing import IO, Union

import numpy as np

from relpool.errors import DataError, SchemaError

MISSING = "?"
EPISODE_KEY = "_episode"

Source = Union[str, "os.PathLike[str]", IO[str]]


class AttributeSchema:
    """An ordered set of attributes, each with an ordered finite domain.

    The order given at construction fixes the iteration and tie-break order
    of every downstream enumeration (siblings, column events, sweeps).
    """

    def __init__(self, attributes: Iterable[tuple[str, Sequence[str]]]):
        names: list[str] = []
        domains: dict[str, tuple[str, ...]] = {}
        for name, values in attributes:
            if not isinstance(name, str) or not name:
                raise SchemaError(f"attribute name must be a nonempty string: {name!r}")
            if name in domains:
                raise SchemaError(f"duplicate attribute {name!r}")
            if name == EPISODE_KEY:
                raise SchemaError(f"attribute name {EPISODE_KEY!r} is reserved")
            values = tuple(values)
            for v in values:
                if not isinstance(v, str) or not v:
                    raise SchemaError(f"attribute {name!r}: bad value {v!r}")
                if v == MISSING:
                    raise SchemaError(
                        f"attribute {name!r}: value {MISSING!r} is reserved for unobserved"
                    )
            if len(set(values)) != len(values):
                raise SchemaError(f"attribute {name!r} has duplicate values")
            if len(values) < 2:
                raise SchemaError(f"attribute {name!r} needs at least 2 values")
            names.append(name)
            domains[name] = values
        self._names = tuple(names)
        self._domains = domains
        self._index = {n: i for i, n in enumerate(names)}
        self._codes = {n: {v: j for j, v in enumerate(vs)} for n, vs in domains.items()}

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self) -> Iterator[str]:
        return iter(self._names)

    def __contains__(self, name: object) -> bool:
        return name in self._domains

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AttributeSchema):
            return NotImplemented
        return self.items() == other.items()

    def __hash__(self) -> int:
        return hash(self.items())

    def __repr__(self) -> str:
        inner = ", ".join(f"{n}={list(d)}" for n, d in self.items())
        return f"AttributeSchema({inner})"

    def items(self) -> tuple[tuple[str, tuple[str, ...]], ...]:
        return tuple((n, self._domains[n]) for n in self._names)

    def domain(self, name: str) -> tuple[str, ...]:
        try:
            return self._domains[name]
        except KeyError:
            raise SchemaError(f"unknown attribute {name!r}") from None

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise SchemaError(f"unknown attribute {name!r}") from None

    def code(self, name: str, value: str) -> int:
        codes = self._codes.get(name)
        if codes is None:
            raise SchemaError(f"unknown attribute {name!r}")
        try:
            return codes[value]
        except KeyError:
            raise SchemaError(
                f"value {value!r} not in domain of {name!r} {list(self._domains[name])}"
            ) from None

    def ordered(self, attrs: Iterable[str]) -> list[str]:
        """Return ``attrs`` sorted into schema order."""
        attrs = set(attrs)
        for a in attrs:
            self.index(a)
        return [n for n in self._names if n in attrs]

    def validate(self, bindings: Mapping[str, str]) -> None:
        for name, value in bindings.items():
            self.code(name, value)

    def event(self, bindings: Mapping[str, str] | None = None, **kw: str) -> "Event":
        """Build an Event and validate it against this schema."""
        e = Event(bindings, **kw)
        self.validate(e)
        return e


class Event(Mapping[str, str]):
    """An immutable partial assignment ``attribute -> value``.

    Binding every attribute of a schema gives a state; binding none gives the
    trivially-true event.
    """

    __slots__ = ("_b", "_key")

    def __init__(self, bindings: Mapping[str, str] | Iterable[tuple[str, str]] | None = None, **kw: str):
        b = dict(bindings or {})
        b.update(kw)
        self._b = b
        self._key = frozenset(b.items())

    @classmethod
    def parse(cls, text: str) -> "Event":
        """Parse an ``attr=value,attr=value`` literal.  Empty text is the empty event."""
        out: dict[str, str] = {}
        text = text.strip()
        if not text:
            return cls()
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise SchemaError(f"bad binding {part!r}: expected attr=value")
            name, value = (s.strip() for s in part.split("=", 1))
            if name in out and out[name] != value:
                raise SchemaError(f"contradictory bindings for {name!r}")
            out[name] = value
        return cls(out)

    def __getitem__(self, key: str) -> str:
        return self._b[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._b)

    def __len__(self) -> int:
        return len(self._b)

    def __hash__(self) -> int:
        return hash(self._key)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Event):
            return self._key == other._key
        if isinstance(other, Mapping):
            return self._b == dict(other)
        return NotImplemented

    def __repr__(self) -> str:
        return f"Event({self.format()})"

    @property
    def attributes(self) -> frozenset[str]:
        return frozenset(self._b)

    def without(self, attribute: str) -> "Event":
        return Event({k: v for k, v in self._b.items() if k != attribute})

    def with_value(self, attribute: str, value: str) -> "Event":
        b = dict(self._b)
        b[attribute] = value
        return Event(b)

    def merge(self, other: Mapping[str, str]) -> "Event":
        for k, v in other.items():
            if k in self._b and self._b[k] != v:
                raise SchemaError(f"contradictory bindings for {k!r}")
        return Event({**self._b, **other})

    def format(self, schema: AttributeSchema | None = None) -> str:
        keys = schema.ordered(self._b) if schema is not None else sorted(self._b)
        return ",".join(f"{k}={self._b[k]}" for k in keys)


@dataclass(frozen=True)
class Observation:
    bindings: Event
    episode: str | None = None


@dataclass(frozen=True)
class Rejection:
    """A source record that failed validation during ingest."""

    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


@dataclass(frozen=True)
class Proportion:
    """Counts behind a conditional frequency.  ``proportion`` is None when n == 0."""

    n: int
    successes: int

    @property
    def proportion(self) -> float | None:
        return self.successes / self.n if self.n else None

    @property
    def defined(self) -> bool:
        return self.n > 0


class Dataset:
    """Immutable observation database with counting queries.

    Observations are kept as an integer code matrix (one row per observation,
    one column per schema attribute, ``-1`` for unobserved).  Value masks are
    memoised per ``(attribute, value)``; results are identical to a linear
    scan over the decoded observations.
    """

    def __init__(
        self,
        schema: AttributeSchema,
        observations: Iterable[Observation | Mapping[str, str]] = (),
        rejected: Iterable[Rejection] = (),
    ):
        obs = [o if isinstance(o, Observation) else Observation(Event(o)) for o in observations]
        codes = np.full((len(obs), len(schema)), -1, dtype=np.int32)
        for r, o in enumerate(obs):
            for name, value in o.bindings.items():
                codes[r, schema.index(name)] = schema.code(name, value)
        episodes = tuple(o.episode for o in obs)
        self._init(schema, codes, episodes, tuple(rejected))
        self._observations: tuple[Observation, ...] | None = tuple(obs)

    @classmethod
    def from_codes(
        cls,
        schema: AttributeSchema,
        codes: np.ndarray,
        episodes: Sequence[str | None] | None = None,
    ) -> "Dataset":
        codes = np.asarray(codes, dtype=np.int32)
        if codes.ndim != 2 or codes.shape[1] != len(schema):
            raise SchemaError(f"code matrix must have shape (n, {len(schema)})")
        sizes = np.array([len(d) for _, d in schema.items()], dtype=np.int32)
        if codes.size and ((codes < -1).any() or (codes >= sizes).any()):
            raise SchemaError("code matrix holds values outside the schema domains")
        self = cls.__new__(cls)
        eps = tuple(episodes) if episodes is not None else (None,) * len(codes)
        self._init(schema, codes.copy(), eps, ())
        self._observations = None
        return self

    def _init(self, schema, codes, episodes, rejected) -> None:
        codes.setflags(write=False)
        self.schema = schema
        self.codes = codes
        self.episodes = episodes
        self.rejected = rejected
        self._value_masks: dict[tuple[int, int], np.ndarray] = {}
        self._bound_masks: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return self.codes.shape[0]

    @property
    def observations(self) -> tuple[Observation, ...]:
        if self._observations is None:
            names = self.schema.names
            domains = [self.schema.domain(n) for n in names]
            obs = []
            for row, ep in zip(self.codes.tolist(), self.episodes):
                b = {names[j]: domains[j][c] for j, c in enumerate(row) if c >= 0}
                obs.append(Observation(Event(b), ep))
            self._observations = tuple(obs)
        return self._observations

    def _value_mask(self, j: int, code: int) -> np.ndarray:
        m = self._value_masks.get((j, code))
        if m is None:
            m = self.codes[:, j] == code
            m.setflags(write=False)
            self._value_masks[(j, code)] = m
        return m

    def _bound_mask(self, j: int) -> np.ndarray:
        m = self._bound_masks.get(j)
        if m is None:
            m = self.codes[:, j] >= 0
            m.setflags(write=False)
            self._bound_masks[j] = m
        return m

    def mask(
        self,
        pattern: Mapping[str, str] = None,
        require: Iterable[str] = (),
        restrict: Mapping[str, Iterable[str]] | None = None,
    ) -> np.ndarray:
        """Boolean row mask.

        A row is selected when it agrees with every binding of ``pattern``,
        binds every attribute in ``require``, and has a value inside the
        allowed set for every attribute in ``restrict``.
        """
        out = np.ones(len(self), dtype=bool)
        for name, value in (pattern or {}).items():
            j = self.schema.index(name)
            out &= self._value_mask(j, self.schema.code(name, value))
        for name in require:
            out &= self._bound_mask(self.schema.index(name))
        for name, values in (restrict or {}).items():
            j = self.schema.index(name)
            allowed = np.zeros(len(self), dtype=bool)
            for v in values:
                allowed |= self._value_mask(j, self.schema.code(name, v))
            out &= allowed
        return out


def count_matching(dataset: Dataset, pattern: Mapping[str, str]) -> int:
    """Number of observations that bind every attribute of ``pattern`` and agree with it."""
    dataset.schema.validate(pattern)
    return int(np.count_nonzero(dataset.mask(pattern)))


def joint_proportion(
    dataset: Dataset,
    target: Mapping[str, str],
    condition: Mapping[str, str],
    restrict: Mapping[str, Iterable[str]] | None = None,
) -> Proportion:
    """Frequency of ``target`` among observations agreeing with ``condition``.

    Only observations binding every attribute of ``target`` and ``condition``
    (and of ``restrict``, a map from attribute to an allowed value set) count.
    """
    schema = dataset.schema
    schema.validate(target)
    schema.validate(condition)
    overlap = set(target) & set(condition)
    if restrict:
        overlap |= set(restrict) & (set(target) | set(condition))
    if overlap:
        raise SchemaError(f"target and condition share attributes: {sorted(overlap)}")
    base = dataset.mask(condition, require=target, restrict=restrict)
    n = int(np.count_nonzero(base))
    if n == 0:
        return Proportion(0, 0)
    hits = base & dataset.mask(target)
    return Proportion(n, int(np.count_nonzero(hits)))


def siblings(condition: Mapping[str, str], attribute: str, schema: AttributeSchema) -> list[Event]:
    """Events equal to ``condition`` except for the value of ``attribute``.

    The first entry is ``condition`` itself; the others follow schema value order.
    """
    if attribute not in condition:
        raise SchemaError(f"attribute {attribute!r} is not bound in the condition")
    cond = condition if isinstance(condition, Event) else Event(condition)
    own = cond[attribute]
    out = [cond]
    for v in schema.domain(attribute):
        if v != own:
            out.append(cond.with_value(attribute, v))
    return out


# ---------------------------------------------------------------------------
# file formats


def _read_text(source: Source) -> tuple[str, str | None]:
    """Return (text, filename-or-None)."""
    if hasattr(source, "read"):
        return source.read(), getattr(source, "name", None)
    try:
        with open(source, encoding="utf-8", newline="") as fh:
            return fh.read(), os.fspath(source)
    except OSError as exc:
        raise DataError(f"cannot read {os.fspath(source)}: {exc.strerror}") from exc


def load_schema(source: Source) -> AttributeSchema:
    """Load a JSON schema document.

    Format::

        {
          "attributes": [
            {"name": "weather", "values": ["rain", "cloudy", "fine"]},
            {"name": "traffic", "values": ["light", "heavy"]}
          ]
        }
    """
    text, name = _read_text(source)
    where = name or "<schema>"
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{where}:{exc.lineno}: malformed JSON: {exc.msg}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("attributes"), list):
        raise SchemaError(f"{where}: expected an object with an 'attributes' list")
    entries = []
    for i, entry in enumerate(doc["attributes"]):
        if (
            not isinstance(entry, dict)
            or set(entry) != {"name", "values"}
            or not isinstance(entry["values"], list)
        ):
            raise SchemaError(f"{where}: attribute entry {i} must have exactly 'name' and 'values'")
        entries.append((entry["name"], entry["values"]))
    try:
        return AttributeSchema(entries)
    except SchemaError as exc:
        raise SchemaError(f"{where}: {exc}") from None


def dump_schema(schema: AttributeSchema) -> str:
    """Canonical schema document; ``dump_schema(load_schema(doc)) == doc`` for canonical docs."""
    doc = {"attributes": [{"name": n, "values": list(d)} for n, d in schema.items()]}
    return json.dumps(doc, indent=2) + "\n"


def ingest(
    source: Source,
    schema: AttributeSchema,
    fmt: str = "auto",
    missing: str = MISSING,
) -> Dataset:
    """Read observation records into a Dataset.

    ``fmt`` is ``"csv"``, ``"jsonl"`` or ``"auto"`` (by file suffix, else by the
    first non-blank character).  Invalid records are dropped and listed in
    ``Dataset.rejected``; an unreadable source or a bad CSV header raises
    DataError.
    """
    text, name = _read_text(source)
    if fmt == "auto":
        if name and name.endswith((".jsonl", ".ndjson")):
            fmt = "jsonl"
        elif name and name.endswith((".csv", ".tsv")):
            fmt = "csv"
        else:
            fmt = "jsonl" if text.lstrip().startswith("{") else "csv"
    if fmt == "csv":
        records = _csv_records(text, schema, missing, name or "<data>")
    elif fmt == "jsonl":
        records = _jsonl_records(text, schema, missing)
    else:
        raise DataError(f"unknown observation format {fmt!r}")
    observations, rejected = [], []
    for line, rec in records:
        if isinstance(rec, str):
            rejected.append(Rejection(line, rec))
        else:
            observations.append(rec)
    return Dataset(schema, observations, rejected)


def _check_bindings(bindings: dict[str, str], schema: AttributeSchema) -> str | None:
    for k, v in bindings.items():
        if k not in schema:
            return f"unknown attribute {k!r}"
        if v not in schema.domain(k):
            return f"value {v!r} not in domain of {k!r}"
    return None


def _csv_records(text: str, schema: AttributeSchema, missing: str, where: str):
    delimiter = "\t" if where.endswith(".tsv") else ","
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    header = None
    for row in reader:
        line = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if header is None:
            header = [c.strip() for c in row]
            expected = list(schema.names)
            if header not in (expected, expected + [EPISODE_KEY]):
                raise DataError(
                    f"{where}:{line}: header {header} must list the schema attributes "
                    f"in order {expected} (optionally followed by {EPISODE_KEY!r})"
                )
            continue
        if len(row) != len(header):
            yield line, f"expected {len(header)} columns, got {len(row)}"
            continue
        cells = [c.strip() for c in row]
        episode = cells.pop() if header[-1] == EPISODE_KEY else None
        bindings = {n: c for n, c in zip(schema.names, cells) if c != missing}
        err = _check_bindings(bindings, schema)
        if err:
            yield line, err
        else:
            yield line, Observation(Event(bindings), episode or None)


def _jsonl_records(text: str, schema: AttributeSchema, missing: str):
    for line, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            yield line, f"malformed JSON: {exc.msg}"
            continue
        if not isinstance(rec, dict):
            yield line, "record must be a JSON object"
            continue
        episode = rec.pop(EPISODE_KEY, None)
        if episode is not None and not isinstance(episode, str):
            episode = str(episode)
        if any(not isinstance(v, str) and v is not None for v in rec.values()):
            yield line, "values must be strings or null"
            continue
        bindings = {k: v for k, v in rec.items() if v is not None and v != missing}
        err = _check_bindings(bindings, schema)
        if err:
            yield line, err
        else:
            yield line, Observation(Event(bindings), episode)


def write_csv(dataset: Dataset, missing: str = MISSING, episodes: bool = False) -> str:
    """Serialise a Dataset in the delimited observation format."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = list(dataset.schema.names)
    w.writerow(names + ([EPISODE_KEY] if episodes else []))
    for obs in dataset.observations:
        row = [obs.bindings.get(n, missing) for n in names]
        if episodes:
            row.append(obs.episode or "")
        w.writerow(row)
    return buf.getvalue()
