import io
import random

import pytest

from relpool.dataset import AttributeSchema, Dataset, Observation, Event

WEATHER = ["rain", "cloudy", "fine"]
TRAFFIC = ["light", "heavy"]
DAYS = ["mon", "tue", "wed"]


@pytest.fixture
def schema():
    return AttributeSchema([("day", DAYS), ("weather", WEATHER), ("traffic", TRAFFIC)])


def random_rows(schema, n, seed, missing=0.2):
    rnd = random.Random(seed)
    rows = []
    for _ in range(n):
        row = {}
        for name, dom in schema.items():
            row[name] = None if rnd.random() < missing else rnd.choice(dom)
        rows.append(row)
    return rows


def rows_to_dataset(schema, rows):
    return Dataset(schema, [Observation(Event({k: v for k, v in r.items() if v is not None})) for r in rows])


def rows_to_csv(schema, rows):
    out = io.StringIO()
    out.write(",".join(schema.names) + "\n")
    for r in rows:
        out.write(",".join(r[n] if r[n] is not None else "?" for n in schema.names) + "\n")
    return out.getvalue()


@pytest.fixture
def twenty_rows(schema):
    return random_rows(schema, 20, seed=20)


# -- acceptance reporting ------------------------------------------------------

_ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; the terminal summary lists them in order."""

    def record(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}"
        _ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[number])
