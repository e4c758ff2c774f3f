"""Results CSV, and the cross-domain table aggregated from one or more of them."""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..errors import ParseError
from .runner import METRICS, RunResult

RESULT_COLUMNS = ("fingerprint", "method", "dg", "train_domain", "test_domain", "seed", "step", *METRICS)


def result_rows(results: list[RunResult]) -> list[dict]:
    rows = []
    for r in results:
        for s in r.steps:
            rows.append({"fingerprint": r.fingerprint, "method": r.method, "dg": r.dg,
                         "train_domain": r.train_domain, "test_domain": r.test_domain, "seed": r.seed,
                         "step": s.step, **{m: getattr(s, m) for m in METRICS}})
    rows.sort(key=lambda row: (row["fingerprint"], row["step"]))
    return rows


def write_results_csv(results: list[RunResult], path) -> None:
    """Rows sorted by (fingerprint, step); floats written with ``repr`` so reruns compare byte for byte."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in result_rows(results):
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in RESULT_COLUMNS])


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != list(RESULT_COLUMNS):
            raise ParseError(f"{path}: header {reader.fieldnames} does not match {list(RESULT_COLUMNS)}")
        rows = []
        for line, raw in enumerate(reader, start=2):
            try:
                row = {k: raw[k] for k in ("fingerprint", "method", "dg")}
                row.update({k: int(raw[k]) for k in ("train_domain", "test_domain", "seed", "step")})
                row.update({m: float(raw[m]) for m in METRICS})
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{line}: {exc}") from exc
            rows.append(row)
    return rows


def aggregate(rows: list[dict]) -> dict[tuple[str, str, int], dict[int, dict[str, float]]]:
    """(method, dg, train_domain) -> test_domain -> metric averaged over steps, then over seeds."""
    per_run: dict[tuple, list[dict]] = defaultdict(list)
    for row in rows:
        per_run[row["fingerprint"]].append(row)
    cells: dict[tuple, dict[int, list[dict[str, float]]]] = defaultdict(lambda: defaultdict(list))
    for run in per_run.values():
        head = run[0]
        cells[(head["method"], head["dg"], head["train_domain"])][head["test_domain"]].append(
            {m: float(np.mean([r[m] for r in run])) for m in METRICS})
    return {key: {d: {m: float(np.mean([v[m] for v in seeds])) for m in METRICS}
                  for d, seeds in sorted(by_domain.items())}
            for key, by_domain in sorted(cells.items())}


def report_table(rows: list[dict]) -> tuple[list[str], list[list]]:
    """Rows = method/plugin, columns = metric per test domain."""
    table = aggregate(rows)
    domains = sorted({d for by_domain in table.values() for d in by_domain})
    header = ["method", "dg", "train_domain"] + [f"{m}_d{d}" for m in METRICS for d in domains]
    body = []
    for (method, dg, train), by_domain in table.items():
        body.append([method, dg, train] + [by_domain[d][m] if d in by_domain else "" for m in METRICS for d in domains])
    return header, body


def collect_results(root) -> list[dict]:
    root = Path(root)
    files = [root] if root.is_file() else sorted(root.rglob("results.csv"))
    rows = []
    for f in files:
        rows += read_results_csv(f)
    return rows


def write_report(header: list[str], body: list[list], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in body:
            writer.writerow([f"{v:.4f}" if isinstance(v, float) else v for v in row])
