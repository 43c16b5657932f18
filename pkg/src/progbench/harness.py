"""Datasets, splits and the models x programs x optimizers x datasets run matrix."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path
from typing import Any, Mapping, Sequence

from .core import Example, Signature
from .evaluation import EvalResult, evaluate
from .lm import LM, ConfigurationError, CostLedger, PriceTable, Router
from .metrics import Metric, get_metric
from .optimizers import optimizer_config, run_optimizer
from .programs import ENVIRONMENTS, PROGRAMS, build_program
from .retrieval import Corpus, load_corpus

__all__ = ["Dataset", "DatasetError", "RunRecord", "MatrixResult", "load_dataset", "evaluate", "run_matrix",
           "ProgramSpec", "OptimizerSpec", "DatasetSpec", "MatrixConfig", "load_records"]

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    name: str
    examples: list[Example]
    metric_id: str
    input_fields: list[str]
    output_fields: list[str]
    split_sizes: tuple[int, int, int]
    seed: int

    def split(self, name: str) -> list[Example]:
        return [ex for ex in self.examples if ex.split == name]

    @property
    def train(self) -> list[Example]:
        return self.split("train")

    @property
    def validation(self) -> list[Example]:
        return self.split("validation")

    @property
    def test(self) -> list[Example]:
        return self.split("test")

    def signature(self, instruction: str = "") -> Signature:
        return Signature(self.name, instruction, self.input_fields, self.output_fields)


def parse_split(spec: str | Sequence[int]) -> tuple[int, int, int]:
    parts = [int(p) for p in spec.replace(",", "/").split("/")] if isinstance(spec, str) else [int(p) for p in spec]
    if len(parts) != 3 or any(p < 0 for p in parts):
        raise DatasetError(f"split spec must be three nonnegative sizes train/validation/test, got {spec!r}")
    return parts[0], parts[1], parts[2]


def load_dataset(path: str | Path, metric_id: str, split_spec: str | Sequence[int], seed: int = 0,
                 name: str | None = None) -> Dataset:
    """Read ``{"inputs": {...}, "outputs": {...}}`` JSONL, shuffle by ``seed``, then cut train/val/test.

    Examples beyond the requested split sizes are dropped; duplicates are kept.
    """
    path = Path(path)
    sizes = parse_split(split_spec)
    rows: list[dict[str, str]] = []
    inputs: dict[str, None] = {}
    outputs: dict[str, None] = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                ins, outs = row["inputs"], row["outputs"]
                if not isinstance(ins, dict) or not isinstance(outs, dict):
                    raise TypeError("inputs and outputs must be objects")
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed example ({exc})") from exc
            if set(ins) & set(outs):
                raise DatasetError(f"{path}:{lineno}: fields {sorted(set(ins) & set(outs))} are both input and output")
            inputs.update(dict.fromkeys(ins))
            outputs.update(dict.fromkeys(outs))
            rows.append({**{k: _text(v) for k, v in ins.items()}, **{k: _text(v) for k, v in outs.items()}})
    if sum(sizes) > len(rows):
        raise DatasetError(f"split {sizes} needs {sum(sizes)} examples but {path} has {len(rows)}")
    order = list(range(len(rows)))
    random.Random(seed).shuffle(order)
    labels = ["train"] * sizes[0] + ["validation"] * sizes[1] + ["test"] * sizes[2]
    examples = [Example(rows[i], origin="labeled", split=lab) for i, lab in zip(order, labels)]
    return Dataset(name or path.stem, examples, metric_id, list(inputs), list(outputs), sizes, seed)


def _text(value: Any) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return "\n".join(value)
    return json.dumps(value, sort_keys=True)


# --- run matrix --------------------------------------------------------------------


@dataclass(frozen=True)
class ProgramSpec:
    id: str
    params: Mapping[str, Any] = field(default_factory=dict)
    name: str | None = None

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if not self.params:
            return self.id
        return self.id + "(" + ",".join(f"{k}={v}" for k, v in sorted(self.params.items())) + ")"

    @classmethod
    def parse(cls, spec: str | Mapping[str, Any]) -> ProgramSpec:
        if isinstance(spec, str):
            return cls(spec)
        return cls(spec["id"], dict(spec.get("params", {})), spec.get("name"))


@dataclass(frozen=True)
class OptimizerSpec:
    id: str
    config: Mapping[str, Any] = field(default_factory=dict)
    name: str | None = None

    @property
    def label(self) -> str:
        return self.name or self.id

    @classmethod
    def parse(cls, spec: str | Mapping[str, Any]) -> OptimizerSpec:
        if isinstance(spec, str):
            return cls(spec)
        return cls(spec["id"], dict(spec.get("config", {})), spec.get("name"))


@dataclass
class DatasetSpec:
    path: Path
    metric: str
    split: tuple[int, int, int]
    name: str | None = None
    seed: int = 0
    instruction: str = ""
    corpus: Path | None = None
    environment: str | None = None
    metric_args: Mapping[str, str] = field(default_factory=dict)

    @classmethod
    def parse(cls, spec: Mapping[str, Any], base: Path = Path(".")) -> DatasetSpec:
        resolve = lambda p: p if Path(p).is_absolute() else base / p  # noqa: E731
        try:
            return cls(
                path=Path(resolve(spec["path"])),
                metric=spec.get("metric", "exact_match"),
                split=parse_split(spec["split"]),
                name=spec.get("name"),
                seed=int(spec.get("seed", 0)),
                instruction=spec.get("instruction", ""),
                corpus=Path(resolve(spec["corpus"])) if spec.get("corpus") else None,
                environment=spec.get("environment"),
                metric_args=dict(spec.get("metric_args", {})),
            )
        except KeyError as exc:
            raise DatasetError(f"dataset spec missing {exc}") from exc


@dataclass
class LoadedDataset:
    spec: DatasetSpec
    data: Dataset
    task: Signature
    metric: Metric
    corpus: Corpus | None
    digest: str


def load_dataset_spec(spec: DatasetSpec) -> LoadedDataset:
    data = load_dataset(spec.path, spec.metric, spec.split, spec.seed, spec.name)
    if not data.output_fields:
        raise DatasetError(f"{spec.path}: no output fields")
    task = data.signature(spec.instruction)
    args = dict(spec.metric_args)
    metric = get_metric(spec.metric, field=args.pop("field", data.output_fields[0]), **args)
    corpus = load_corpus(spec.corpus) if spec.corpus else None
    if spec.environment is not None and spec.environment not in ENVIRONMENTS:
        raise DatasetError(f"unknown environment {spec.environment!r}")
    digest = hashlib.sha256(spec.path.read_bytes()).hexdigest()[:16]
    return LoadedDataset(spec, data, task, metric, corpus, digest)


@dataclass
class RunRecord:
    config_id: str
    config: dict[str, Any]
    status: str
    per_example_scores: list[float] = field(default_factory=list)
    aggregate: float | None = None
    validation_score: float | None = None
    optimization_cost: str = "0.000000"
    inference_cost: str = "0.000000"
    lm_calls: int = 0
    errors: int = 0
    seed: int = 0
    started_at: str = ""
    finished_at: str = ""
    error: str | None = None

    @property
    def model(self) -> str:
        return self.config["model"]

    @property
    def program(self) -> str:
        return self.config["program"]["label"]

    @property
    def program_id(self) -> str:
        return self.config["program"]["id"]

    @property
    def optimizer(self) -> str:
        return self.config["optimizer"]["label"]

    @property
    def optimizer_id(self) -> str:
        return self.config["optimizer"]["id"]

    @property
    def dataset(self) -> str:
        return self.config["dataset"]["name"]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RunRecord:
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


def config_hash(config: Mapping[str, Any]) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_records(records_dir: str | Path) -> list[RunRecord]:
    out = []
    for path in sorted(Path(records_dir).glob("*.json")):
        out.append(RunRecord.from_dict(json.loads(path.read_text())))
    return out


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class MatrixResult:
    records: list[RunRecord]
    executed: int = 0
    resumed: int = 0
    skipped: list[str] = field(default_factory=list)

    @property
    def failed(self) -> list[RunRecord]:
        return [r for r in self.records if r.status != "ok"]


def run_config(model: str, program: ProgramSpec, optimizer: OptimizerSpec, ds: LoadedDataset, seed: int,
               router: Router, prices: PriceTable | None, concurrency: int,
               programs_dir: Path | None = None) -> tuple[RunRecord, EvalResult | None]:
    config = _config_dict(model, program, optimizer, ds, seed)
    cid = config_hash(config)
    record = RunRecord(cid, config, "failed", seed=seed, started_at=_now())
    ledger = CostLedger(prices)
    lm = LM(model, router, ledger, phase="optimization", seed=seed)
    try:
        tools = ENVIRONMENTS[ds.spec.environment] if ds.spec.environment else None
        prog = build_program(program.id, ds.task, program.params, corpus=ds.corpus, tools=tools)
        overrides = {"seed": seed, **optimizer.config}
        optimized = run_optimizer(optimizer.id, prog, ds.data.train, ds.data.validation, ds.metric, lm, overrides)
        if programs_dir is not None:
            optimized.save(programs_dir / f"{cid}.json")
        cfg = optimizer_config(optimizer.id, overrides)
        result = evaluate(optimized.program, ds.data.test, ds.metric, lm.with_phase("evaluation"), concurrency,
                          cfg.max_errors)
    except ConfigurationError:
        raise
    except Exception as exc:
        log.warning("config %s failed: %s: %s", cid, type(exc).__name__, exc)
        record.error = f"{type(exc).__name__}: {exc}"
        record.finished_at = _now()
        snap = ledger.snapshot()
        record.optimization_cost = str(snap["optimization"].cost)
        record.inference_cost = str(snap["evaluation"].cost)
        return record, None
    snap = ledger.snapshot()
    record.status = "ok"
    record.per_example_scores = list(result.scores)
    record.aggregate = result.aggregate
    record.validation_score = optimized.validation_score
    record.optimization_cost = str(snap["optimization"].cost)
    record.inference_cost = str(snap["evaluation"].cost)
    record.lm_calls = snap["optimization"].calls + snap["evaluation"].calls
    record.errors = result.errors
    record.finished_at = _now()
    return record, result


def _config_dict(model: str, program: ProgramSpec, optimizer: OptimizerSpec, ds: LoadedDataset,
                 seed: int) -> dict[str, Any]:
    return {
        "model": model,
        "program": {"id": program.id, "params": dict(program.params), "label": program.label},
        "optimizer": {"id": optimizer.id, "config": dict(optimizer.config), "label": optimizer.label},
        "dataset": {"name": ds.data.name, "metric": ds.spec.metric, "split": list(ds.spec.split),
                    "seed": ds.spec.seed, "digest": ds.digest},
        "seed": seed,
    }


def _invalid_reason(program: ProgramSpec, ds: LoadedDataset) -> str | None:
    cls = PROGRAMS.get(program.id)
    if cls is None:
        return f"unknown program {program.id!r}"
    if "corpus" in cls.requires and ds.corpus is None:
        return f"{program.id} needs a corpus but dataset {ds.data.name} has none"
    if "tools" in cls.requires and ds.spec.environment is None:
        return f"{program.id} needs tools but dataset {ds.data.name} has no environment"
    if ds.spec.split[2] == 0:
        return f"dataset {ds.data.name} has an empty test split"
    return None


def run_matrix(models: Sequence[str], programs: Sequence[ProgramSpec | str | Mapping[str, Any]],
               optimizers: Sequence[OptimizerSpec | str | Mapping[str, Any]],
               datasets: Sequence[DatasetSpec | LoadedDataset], out_dir: str | Path, router: Router,
               prices: PriceTable | None = None, seeds: Sequence[int] = (0,), concurrency: int = 1) -> MatrixResult:
    """Run every valid combination, writing ``out_dir/<config_hash>.json`` per config.

    Completed records already on disk are loaded instead of rerun; failed
    ones are retried. One config failing never stops the matrix.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    progs = [p if isinstance(p, ProgramSpec) else ProgramSpec.parse(p) for p in programs]
    opts = [o if isinstance(o, OptimizerSpec) else OptimizerSpec.parse(o) for o in optimizers]
    for o in opts:
        optimizer_config(o.id, o.config)
    for m in models:
        if not router.has(m):
            raise ConfigurationError(f"no backend for model {m!r}")
        if prices is not None:
            prices[m]
    loaded = [d if isinstance(d, LoadedDataset) else load_dataset_spec(d) for d in datasets]

    result = MatrixResult([])
    for ds in loaded:
        for model in models:
            for prog in progs:
                reason = _invalid_reason(prog, ds)
                if reason:
                    msg = f"skip {model} x {prog.label} on {ds.data.name}: {reason}"
                    if msg not in result.skipped:
                        log.info(msg)
                        result.skipped.append(msg)
                    continue
                for opt in opts:
                    for seed in seeds:
                        cid = config_hash(_config_dict(model, prog, opt, ds, seed))
                        path = out_dir / f"{cid}.json"
                        if path.exists():
                            existing = RunRecord.from_dict(json.loads(path.read_text()))
                            if existing.status == "ok":
                                result.records.append(existing)
                                result.resumed += 1
                                continue
                        log.info("run %s: %s / %s / %s / %s seed=%d", cid, model, prog.label, opt.label,
                                 ds.data.name, seed)
                        record, _ = run_config(model, prog, opt, ds, seed, router, prices, concurrency,
                                               out_dir / "programs")
                        write_atomic(path, record.to_json())
                        result.records.append(record)
                        result.executed += 1
    return result


@dataclass
class MatrixConfig:
    models: list[str]
    programs: list[ProgramSpec]
    optimizers: list[OptimizerSpec]
    datasets: list[DatasetSpec]
    price_table: Path | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    backend: str | None = None
    concurrency: int = 1
    out: Path | None = None

    @classmethod
    def load(cls, path: str | Path) -> MatrixConfig:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise DatasetError(f"cannot read matrix config {path}: {exc}") from exc
        base = path.parent
        resolve = lambda p: None if p is None else (Path(p) if Path(p).is_absolute() else base / p)  # noqa: E731
        backend = data.get("backend")
        if isinstance(backend, str) and backend.startswith("mock:"):
            backend = "mock:" + str(resolve(backend[len("mock:"):]))
        try:
            return cls(
                models=list(data["models"]),
                programs=[ProgramSpec.parse(p) for p in data["programs"]],
                optimizers=[OptimizerSpec.parse(o) for o in data.get("optimizers", ["none"])],
                datasets=[DatasetSpec.parse(d, base) for d in data["datasets"]],
                price_table=resolve(data.get("price_table")),
                seeds=[int(s) for s in data.get("seeds", [0])],
                backend=backend,
                concurrency=int(data.get("concurrency", 1)),
                out=resolve(data.get("out")),
            )
        except KeyError as exc:
            raise DatasetError(f"matrix config {path} missing {exc}") from exc


def cost_of(record: RunRecord) -> Decimal:
    return Decimal(record.inference_cost)
