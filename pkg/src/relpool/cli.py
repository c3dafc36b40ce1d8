"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 starved estimate.
Result documents go to stdout (or ``--out``); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from collections.abc import Sequence

from relpool.dataset import Event, ingest, load_schema
from relpool.decision import decide, load_matrix
from relpool.errors import DataError, RelpoolError, SchemaError, StarvedEstimateError
from relpool.estimator import EstimatorConfig, estimate, load_config
from relpool.simulation import (
    run_decision_experiment,
    run_moment_experiment,
    run_pool_rate_experiment,
    run_stabilization_experiment,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_STARVED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="relpool", description="Conditional probability estimation with irrelevance pooling.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    v = sub.add_parser("validate", help="check schema, data, matrix and config files")
    v.add_argument("--schema", required=True)
    v.add_argument("--data")
    v.add_argument("--matrix")
    v.add_argument("--config")
    v.add_argument("--out")

    e = sub.add_parser("estimate", help="estimate Pr(target | given) with a full trace")
    e.add_argument("--schema", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--target", required=True, help="event literal, e.g. weather=fine")
    e.add_argument("--given", default="", help="condition literal, e.g. day=tue,forecast=wet")
    e.add_argument("--config")
    e.add_argument("--out")
    e.add_argument("--tsv", action="store_true")

    d = sub.add_parser("decide", help="choose the maximum-expected-utility action")
    d.add_argument("--schema", required=True)
    d.add_argument("--matrix", required=True)
    d.add_argument("--data")
    d.add_argument("--given", default="")
    d.add_argument("--config")
    d.add_argument("--override", help="comma-separated column probabilities, or @file")
    d.add_argument("--out")
    d.add_argument("--tsv", action="store_true")

    s = sub.add_parser("simulate", help="run a seeded experiment described by a JSON file")
    s.add_argument("experiment", help="experiment definition (JSON)")
    s.add_argument("--seed", type=int)
    s.add_argument("--trials", type=int)
    s.add_argument("--out", required=True, help="directory for trials.tsv and summary.json")
    s.add_argument("--tsv", action="store_true", help="print the per-trial table instead of the summary")
    return p


def _emit(text: str, out: str | None, stdout) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        stdout.write(text)


def _json(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


def _tsv(rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    for row in rows:
        w.writerow(["" if c is None else (repr(c) if isinstance(c, float) else c) for c in row])
    return buf.getvalue()


def _event(text: str, schema) -> Event:
    e = Event.parse(text)
    schema.validate(e)
    return e


def _load_data(path, schema, stderr):
    data = ingest(path, schema)
    for r in data.rejected:
        stderr.write(f"{path}:{r.line}: rejected: {r.message}\n")
    return data


def _config(path, schema) -> EstimatorConfig:
    return load_config(path, schema) if path else EstimatorConfig()


def _validate(args, stdout, stderr) -> int:
    schema = load_schema(args.schema)
    doc = {"schema": {"file": args.schema, "attributes": len(schema)}}
    problems = 0
    if args.data:
        data = _load_data(args.data, schema, stderr)
        problems += len(data.rejected)
        doc["data"] = {"file": args.data, "accepted": len(data), "rejected": len(data.rejected)}
    if args.matrix:
        m = load_matrix(args.matrix, schema)
        doc["matrix"] = {"file": args.matrix, "actions": len(m.actions), "columns": len(m.columns)}
    if args.config:
        load_config(args.config, schema)
        doc["config"] = {"file": args.config}
    doc["valid"] = problems == 0
    _emit(_json(doc), args.out, stdout)
    return EXIT_OK if problems == 0 else EXIT_DATA


def _estimate(args, stdout, stderr) -> int:
    schema = load_schema(args.schema)
    data = _load_data(args.data, schema, stderr)
    target = _event(args.target, schema)
    given = _event(args.given, schema)
    res = estimate(data, target, given, _config(args.config, schema))
    if not res.defined:
        stderr.write(
            f"starved estimate: no observations bind {target.format(schema)} "
            f"under {res.effective_condition.format(schema) or '{}'}\n"
        )
        return EXIT_STARVED
    if args.tsv:
        summary = [
            ["target", "condition", "probability", "effective_condition", "effective_n", "successes", "passes"],
            [res.target.format(schema), res.condition.format(schema), res.probability,
             res.effective_condition.format(schema), res.effective_n, res.successes, res.passes],
        ]
        steps = [["step", "attribute", "condition", "decision", "statistic", "dof", "critical", "alpha", "action", "cells"]]
        for i, st in enumerate(res.trace):
            o = st.to_dict()["outcome"]
            cells = ";".join(f"{lab}:{c.successes}/{c.n}" for lab, c in zip(st.labels, st.cells))
            steps.append([i, st.attribute, st.condition.format(schema), o["decision"], o.get("statistic"),
                          o.get("dof"), o.get("critical"), o.get("alpha"), st.action.value, cells])
        text = _tsv(summary) + "\n" + _tsv(steps)
    else:
        text = _json(res.to_dict(schema))
    _emit(text, args.out, stdout)
    return EXIT_OK


def _override(text: str) -> list[float]:
    if text.startswith("@"):
        with open(text[1:], encoding="utf-8") as fh:
            text = fh.read()
    parts = [p for p in text.replace("\n", ",").replace(" ", ",").split(",") if p.strip()]
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise DataError(f"override must be a list of numbers, got {text!r}") from None


def _decide(args, stdout, stderr) -> int:
    schema = load_schema(args.schema)
    matrix = load_matrix(args.matrix, schema)
    given = _event(args.given, schema)
    override = _override(args.override) if args.override else None
    if override is None and not args.data:
        raise UsageError("relpool decide: --data is required unless --override is given")
    data = _load_data(args.data, schema, stderr) if args.data else None
    report = decide(matrix, data, given, _config(args.config, schema), override)
    if args.tsv:
        actions = [["action", "expected_utility", "chosen"]]
        actions += [[a, eu, int(a == report.chosen)] for a, eu in zip(report.actions, report.expected_utilities)]
        cols = [["column", "probability", "raw"]]
        raw = report.raw_probabilities or [None] * len(report.columns)
        cols += [[c.format(schema), p, r] for c, p, r in zip(report.columns, report.probabilities_used, raw)]
        text = _tsv(actions) + "\n" + _tsv(cols)
    else:
        text = _json(report.to_dict(schema))
    _emit(text, args.out, stdout)
    return EXIT_OK


def _simulate(args, stdout, stderr) -> int:
    with open(args.experiment, encoding="utf-8") as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.experiment}:{exc.lineno}: malformed JSON: {exc.msg}") from None
    if not isinstance(spec, dict) or "experiment" not in spec:
        raise DataError(f"{args.experiment}: expected an object with an 'experiment' key")
    spec = dict(spec)
    kind = spec.pop("experiment")
    if args.seed is not None:
        spec["seed"] = args.seed
    if args.trials is not None:
        spec["trials"] = args.trials
    if "config" in spec:
        spec["config"] = EstimatorConfig.from_dict(spec["config"])
    runners = {
        "pool_rate": run_pool_rate_experiment,
        "stabilization": run_stabilization_experiment,
        "moment": run_moment_experiment,
        "decision": run_decision_experiment,
    }
    if kind not in runners:
        raise DataError(f"{args.experiment}: unknown experiment {kind!r}; expected one of {sorted(runners)}")
    try:
        report = runners[kind](**spec)
    except TypeError as exc:
        raise DataError(f"{args.experiment}: {exc}") from None
    report.write(args.out)
    stdout.write(report.to_tsv() if args.tsv else report.summary_json())
    return EXIT_OK


COMMANDS = {"validate": _validate, "estimate": _estimate, "decide": _decide, "simulate": _simulate}


def run(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = _parser().parse_args(argv)
        return COMMANDS[args.command](args, stdout, stderr)
    except UsageError as exc:
        stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except StarvedEstimateError as exc:
        stderr.write(f"starved estimate: {exc}\n")
        return EXIT_STARVED
    except (RelpoolError, ValueError, OSError) as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
