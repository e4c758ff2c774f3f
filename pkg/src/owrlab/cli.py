"""owrlab command line: generate, validate, run, report, selftest.

Exit codes: 0 success, 1 invalid input (config, missing or malformed files), 2 runtime failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__, selftest
from .config import MANIFEST_FORMAT, ExperimentConfig, load_config
from .datagen import Dataset, apply_domain_dataset, build_validation_splits, generate_benchmark, read_dataset, \
    write_dataset
from .errors import ConfigurationError, OwrLabError, ParseError
from .eval.results import collect_results, report_table, write_report, write_results_csv
from .eval.runner import CellConfig, RunResult, run_experiment
from .eval.validation import STAGE1_PARAMS, STAGE2_PARAMS, validate_hyperparameters

log = logging.getLogger("owrlab")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def dataset_path(data_dir, domain_id: int) -> Path:
    return Path(data_dir) / f"domain_{domain_id}.owrd"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _load_domains(data_dir, domains) -> dict[int, Dataset]:
    out = {}
    for d in sorted(set(domains)):
        path = dataset_path(data_dir, d)
        if not path.is_file():
            raise ConfigurationError(f"dataset file not found: {path} (run `owrlab generate` first)")
        out[d] = read_dataset(path)
    return out


# generate -----------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = load_config(args.config, args.set)
    out = Path(args.output or cfg.data_dir)
    out.mkdir(parents=True, exist_ok=True)
    b = cfg.benchmark
    clean = generate_benchmark(b.num_classes, b.instances_per_class, b.samples_per_instance, b.seed,
                               b.image_size, b.channels)
    for d in b.domains:
        ds = apply_domain_dataset(clean, d.spec(), b.seed)
        write_dataset(ds, dataset_path(out, d.domain_id))
        log.info("wrote %s (%d samples)", dataset_path(out, d.domain_id), len(ds))
    (out / "benchmark.json").write_text(json.dumps(b.model_dump(mode="json"), indent=1))
    return EXIT_OK


# validate -----------------------------------------------------------------------

def validation_classes(cfg: ExperimentConfig) -> list[int]:
    """Base classes when there are enough for the split rules, otherwise every known class."""
    schedule = cfg.episode_schedule()
    base = list(schedule.base_classes)
    return base if len(base) >= 6 else list(schedule.known_classes)


def cmd_validate(args) -> int:
    cfg = load_config(args.config, args.set)
    entry = cfg.method(args.method)
    grids = cfg.validation.grids
    data = _load_domains(cfg.data_dir, [cfg.train_domain])[cfg.train_domain]
    classes = validation_classes(cfg)
    train_part, _ = data.of_classes(classes).split_by_instance()
    trials = build_validation_splits(classes, cfg.validation.trials, cfg.validation.seed)
    result = validate_hyperparameters(args.method, train_part, grids, trials, base=entry.resolve(),
                                      seed=cfg.validation.seed)
    for stage, scored in (("stage 1 (closed world)", result.stage1), ("stage 2 (OWR-H)", result.stage2)):
        for cand, score in scored:
            print(f"{stage} {cand}: {score:.4f}")
    winner = {k: getattr(result.config, k) for k in STAGE1_PARAMS + STAGE2_PARAMS}
    print(f"selected {winner}")
    raw = cfg.model_dump(mode="json")
    for m in raw["methods"]:
        if m["variant"] == args.method:
            m["params"] = {k: v for k, v in {**m["params"], **winner}.items() if v is not None}
    out = Path(args.output or Path(cfg.output_dir) / f"validated_{args.method}.yaml")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(yaml.safe_dump(raw, sort_keys=False))
    log.info("wrote %s", out)
    return EXIT_OK


# run ------------------------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(data_dir: str, domains: list[int]) -> None:
    _WORKER["datasets"] = _load_domains(data_dir, domains)


def _run_cell(cell: CellConfig, schedule, checkpoint_dir: str | None) -> dict[int, RunResult]:
    return run_experiment(cell, schedule, _WORKER["datasets"], checkpoint_dir)


def build_cells(cfg: ExperimentConfig) -> list[CellConfig]:
    return [CellConfig(m.resolve(), dg.kind, dict(dg.params), seed, cfg.train_domain, tuple(cfg.test_domains))
            for m in cfg.methods for dg in cfg.dg for seed in cfg.seeds]


def execute_run(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> list[RunResult]:
    """Run every (method, dg, seed) cell; write results.csv and manifest.json into ``out``."""
    started = time.perf_counter()
    domains = sorted({cfg.train_domain, *cfg.test_domains})
    for d in domains:
        if not dataset_path(cfg.data_dir, d).is_file():
            raise ConfigurationError(f"dataset file not found: {dataset_path(cfg.data_dir, d)} "
                                     f"(run `owrlab generate` first)")
    schedule = cfg.episode_schedule()
    cells = build_cells(cfg)
    out.mkdir(parents=True, exist_ok=True)

    def ckpt(cell: CellConfig) -> str:
        return str(out / "checkpoints" / f"{cell.method.variant}_{cell.dg}_s{cell.seed}_{cell.hyper_hash()}")

    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(cfg.data_dir, domains)) as pool:
            futures = [pool.submit(_run_cell, c, schedule, ckpt(c)) for c in cells]
            per_cell = [f.result() for f in futures]
    else:
        _init_worker(cfg.data_dir, domains)
        per_cell = []
        for c in cells:
            log.info("running %s", c.fingerprint(cfg.train_domain))
            per_cell.append(_run_cell(c, schedule, ckpt(c)))
    results = sorted((r for res in per_cell for r in res.values()), key=lambda r: r.fingerprint)
    write_results_csv(results, out / "results.csv")

    manifest = {
        "format": MANIFEST_FORMAT,
        "config": cfg.resolved(),
        "seeds": list(cfg.seeds),
        "schedule": {"base": list(schedule.base_classes), "incremental": [list(s) for s in schedule.incremental_steps],
                     "unknown": list(schedule.unknown_classes)},
        "datasets": {str(d): {"path": str(dataset_path(cfg.data_dir, d)),
                              "sha256": _sha256(dataset_path(cfg.data_dir, d))} for d in domains},
        "cells": {r.fingerprint: {"plugin": r.plugin_state} for r in results},
        "versions": {"owrlab": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return results


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    out = Path(args.output or cfg.output_dir)
    if args.jobs < 1:
        raise ConfigurationError("--jobs must be >= 1")
    results = execute_run(cfg, out, args.jobs)
    log.info("wrote %s (%d runs)", out / "results.csv", len(results))
    return EXIT_OK


# report ---------------------------------------------------------------------------

def cmd_report(args) -> int:
    src = Path(args.input)
    if not src.exists():
        raise ConfigurationError(f"results path not found: {src}")
    rows = collect_results(src)
    if not rows:
        raise ConfigurationError(f"no results.csv found under {src}")
    header, body = report_table(rows)
    write_report(header, body, args.output)
    owr_cols = [i for i, h in enumerate(header) if h.startswith("owr_h_")]
    print("  ".join(f"{header[i]:>9s}" for i in (0, 1)) + "".join(f"{header[i]:>10s}" for i in owr_cols))
    for row in body:
        print(f"{row[0]:>9s}  {row[1]:>9s}" + "".join(f"{row[i]:>10.4f}" if row[i] != "" else f"{'':>10s}"
                                                     for i in owr_cols))
    return EXIT_OK


def cmd_selftest(args) -> int:
    return EXIT_OK if selftest.run() else EXIT_RUNTIME


# dispatch -------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Usage errors count as invalid input."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="owrlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"owrlab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("-c", "--config", required=True, help="YAML config, or the manifest.json of a previous run")
        p.add_argument("--set", action="append", default=[], metavar="KEY.PATH=VALUE",
                       help="override a config key (repeatable)")
        return p

    p = with_config(sub.add_parser("generate", help="write the benchmark datasets for every configured domain"))
    p.add_argument("-o", "--output", help="output directory (default: data_dir from the config)")
    p.set_defaults(func=cmd_generate)

    p = with_config(sub.add_parser("validate", help="two-stage hyperparameter search for one method"))
    p.add_argument("--method", required=True, choices=("nno", "deepnno", "bdoc"))
    p.add_argument("-o", "--output", help="where to write the config with the selected values")
    p.set_defaults(func=cmd_validate)

    p = with_config(sub.add_parser("run", help="run every (method, dg, seed) cell"))
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("-o", "--output", help="run directory (default: output_dir from the config)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="aggregate results.csv files into a cross-domain table")
    p.add_argument("-i", "--input", required=True, help="run directory (searched recursively) or a results.csv")
    p.add_argument("-o", "--output", required=True, help="table CSV to write")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selftest", help="gradient and formula checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigurationError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OwrLabError, ArithmeticError, RuntimeError, ValueError, OSError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
