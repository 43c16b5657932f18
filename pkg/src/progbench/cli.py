"""``progbench`` command line: run, optimize, evaluate, report.

Exit codes: 0 success, 1 nothing to do / empty input, 2 user error,
3 internal error (or, for ``run``, at least one config failed).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .analysis import emit_plot_data
from .evaluation import evaluate
from .harness import (DatasetError, MatrixConfig, ProgramSpec, load_dataset_spec,
                      load_records, run_matrix)
from .lm import ConfigurationError, CostLedger, HttpLM, LM, PriceTable, Router, load_mock_script
from .optimizers import OPTIMIZER_IDS, load_optimized, run_optimizer
from .programs import ENVIRONMENTS, ProgramConfigError, build_program
from .retrieval import RetrievalError

log = logging.getLogger("progbench")

EXIT_OK, EXIT_EMPTY, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


def make_router(backend: str | None) -> Router:
    if not backend:
        raise UsageError("no backend configured; pass --backend mock:<path> or http:<url>")
    kind, _, target = backend.partition(":")
    if kind == "mock":
        path = Path(target)
        if not path.is_file():
            raise UsageError(f"mock script {path} not found")
        try:
            return load_mock_script(path)
        except (ValueError, KeyError) as exc:
            raise UsageError(f"bad mock script {path}: {exc}") from exc
    if kind == "http":
        return Router(fallback=HttpLM(target))
    raise UsageError(f"unknown backend {backend!r}; expected mock:<path> or http:<url>")


def _prices(path: Path | None) -> PriceTable | None:
    if path is None:
        return None
    try:
        return PriceTable.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read price table {path}: {exc}") from exc


def _load_config(args: argparse.Namespace) -> MatrixConfig:
    if not args.config:
        raise UsageError("--config is required")
    if not Path(args.config).is_file():
        raise UsageError(f"config {args.config} not found")
    cfg = MatrixConfig.load(args.config)
    if args.backend:
        cfg.backend = args.backend
    if args.price_table:
        cfg.price_table = Path(args.price_table)
    if args.concurrency is not None:
        cfg.concurrency = args.concurrency
    if args.seed is not None:
        cfg.seeds = [args.seed]
    if args.out:
        cfg.out = Path(args.out)
    for d in cfg.datasets:
        if not d.path.is_file():
            raise UsageError(f"dataset {d.path} not found")
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    if cfg.out is None:
        raise UsageError("--out is required")
    result = run_matrix(cfg.models, cfg.programs, cfg.optimizers, cfg.datasets, cfg.out, make_router(cfg.backend),
                        _prices(cfg.price_table), cfg.seeds, cfg.concurrency)
    for msg in result.skipped:
        print(msg)
    print(f"{len(result.records)} records ({result.executed} executed, {result.resumed} resumed, "
          f"{len(result.failed)} failed) in {cfg.out}")
    return EXIT_INTERNAL if result.failed else EXIT_OK


def _single(args: argparse.Namespace):
    cfg = _load_config(args)
    if args.dataset:
        matches = [d for d in cfg.datasets if (d.name or d.path.stem) == args.dataset]
        if not matches:
            raise UsageError(f"dataset {args.dataset!r} not in config")
        spec = matches[0]
    else:
        spec = cfg.datasets[0]
    model = args.model or cfg.models[0]
    ds = load_dataset_spec(spec)
    router = make_router(cfg.backend)
    if not router.has(model):
        raise UsageError(f"no backend for model {model!r}")
    prog_spec = next((p for p in cfg.programs if p.id == args.program or p.label == args.program),
                     ProgramSpec(args.program))
    tools = ENVIRONMENTS[spec.environment] if spec.environment else None
    program = build_program(prog_spec.id, ds.task, prog_spec.params, corpus=ds.corpus, tools=tools)
    ledger = CostLedger(_prices(cfg.price_table))
    lm = LM(model, router, ledger, seed=cfg.seeds[0])
    return cfg, ds, program, lm, ledger


def cmd_optimize(args: argparse.Namespace) -> int:
    if args.optimizer not in OPTIMIZER_IDS:
        raise UsageError(f"unknown optimizer {args.optimizer!r}; known: {', '.join(OPTIMIZER_IDS)}")
    try:
        overrides = json.loads(args.options) if args.options else {}
    except ValueError as exc:
        raise UsageError(f"--options is not valid JSON: {exc}") from exc
    if not isinstance(overrides, dict):
        raise UsageError("--options must be a JSON object")
    cfg, ds, program, lm, ledger = _single(args)
    overrides.setdefault("seed", cfg.seeds[0])
    try:
        optimized = run_optimizer(args.optimizer, program, ds.data.train, ds.data.validation, ds.metric, lm,
                                  overrides)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out or ".") / f"{program.program_id}.{args.optimizer}.json"
    optimized.save(out)
    snap = ledger.snapshot()
    score = "n/a" if optimized.validation_score is None else f"{100 * optimized.validation_score:.2f}"
    print(f"validation score: {score}")
    print(f"optimization cost: {snap['optimization'].cost}")
    print(out)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg, ds, program, lm, ledger = _single(args)
    if args.program_file:
        program = load_optimized(args.program_file, program)
    split = {"train": ds.data.train, "validation": ds.data.validation, "test": ds.data.test}[args.split]
    if not split:
        print(f"{args.split} split is empty")
        return EXIT_EMPTY
    res = evaluate(program, split, ds.metric, lm.with_phase("evaluation"), cfg.concurrency)
    print(f"score: {res.aggregate:.2f} over {len(split)} examples ({res.errors} errors)")
    print(f"inference cost: {ledger.snapshot()['evaluation'].cost}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    records_dir = Path(args.records)
    if not records_dir.is_dir():
        raise UsageError(f"records directory {records_dir} not found")
    records = load_records(records_dir)
    if not any(r.status == "ok" for r in records):
        print(f"no completed records in {records_dir}")
        return EXIT_EMPTY
    out = Path(args.out or records_dir / "report")
    for path in emit_plot_data(records, out):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="progbench", description="Benchmark language programs, optimizers and models on cost and quality.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="matrix config JSON")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--concurrency", type=int)
        p.add_argument("--backend", help="mock:<script.json> or http:<base url>")
        p.add_argument("--price-table", help="price table JSON")

    p = sub.add_parser("run", help="run the configuration matrix")
    common(p)
    p.set_defaults(func=cmd_run)

    for name, func in (("optimize", cmd_optimize), ("evaluate", cmd_evaluate)):
        p = sub.add_parser(name, help=f"{name} one program on one dataset")
        common(p)
        p.add_argument("--program", required=True)
        p.add_argument("--dataset", help="dataset name from the config (default: first)")
        p.add_argument("--model", help="model id (default: first in config)")
        if name == "optimize":
            p.add_argument("--optimizer", required=True)
            p.add_argument("--options", help="JSON object of optimizer option overrides")
        else:
            p.add_argument("--program-file", help="optimized program JSON to load")
            p.add_argument("--split", choices=("train", "validation", "test"), default="test")
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="write analysis CSVs from run records")
    p.add_argument("records", help="directory of run records")
    p.add_argument("--out", help="CSV output directory (default: <records>/report)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, DatasetError, ConfigurationError, ProgramConfigError, RetrievalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
