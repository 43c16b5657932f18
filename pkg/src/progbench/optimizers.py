"""Prompt optimizers: few-shot bootstrapping, random search over demo sets,
instruction x demo search, and rule induction.

Every optimizer takes the student :class:`~progbench.lm.LM` and charges all
of its own spend to the ``optimization`` ledger phase. Validation-score
ties always go to the earliest candidate.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import random
import re
from dataclasses import asdict, dataclass, field, fields, replace
from decimal import Decimal
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .core import ContractError, Example, Signature, escape_value, parse_completion, render_prompt
from .evaluation import EvalResult, TooManyErrors, evaluate
from .lm import LM, ConfigurationError
from .metrics import Metric
from .programs import Program

log = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    max_bootstrapped_demos: int = 4
    max_labeled_demos: int = 2
    num_candidates: int = 8
    num_trials: int = 20
    num_rules: int = 10
    max_errors: int = 5000
    teacher_model: str | None = None
    proposer_model: str | None = None
    seed: int = 0
    concurrency: int = 1
    batch_size: int = 35
    batch_full_eval_steps: int = 5
    pass_threshold: float | None = None
    exhaustive_fallback: bool = True

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, int) and not isinstance(value, bool) and f.name != "seed" and value < 0:
                raise ValueError(f"{f.name} must be >= 0")
        if self.num_candidates < 1:
            raise ValueError("num_candidates must be >= 1")
        if self.batch_size < 1 or self.batch_full_eval_steps < 1:
            raise ValueError("batch_size and batch_full_eval_steps must be >= 1")

    def updated(self, **overrides: Any) -> OptimizerConfig:
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ValueError(f"unknown optimizer options {sorted(unknown)}")
        return replace(self, **overrides)


PRESETS: dict[str, OptimizerConfig] = {
    "bootstrap_fewshot": OptimizerConfig(max_errors=5000, max_labeled_demos=2),
    "bootstrap_random_search": OptimizerConfig(max_errors=5000, max_labeled_demos=2, concurrency=16,
                                               num_candidates=8),
    "mipro_lite": OptimizerConfig(max_errors=5000, concurrency=16, num_candidates=12, num_trials=20,
                                  max_bootstrapped_demos=4, max_labeled_demos=2),
    "mipro": OptimizerConfig(max_errors=5000, concurrency=16, num_candidates=12, num_trials=50,
                             max_bootstrapped_demos=4, max_labeled_demos=2, batch_size=35, batch_full_eval_steps=5),
    "rule_infer_lite": OptimizerConfig(max_errors=5000, num_candidates=10, num_rules=10, concurrency=8),
    "rule_infer": OptimizerConfig(max_errors=5000, num_candidates=10, num_rules=20, concurrency=8),
}


@dataclass(frozen=True)
class CandidateRecord:
    index: int
    score: float
    cost: Decimal
    provenance: str


@dataclass
class OptimizedProgram:
    program: Program
    optimizer: str
    config: OptimizerConfig
    validation_score: float | None = None
    candidates: list[CandidateRecord] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "optimizer": self.optimizer,
            "program": self.program.program_id,
            "params": self.program.params,
            "seed": self.config.seed,
            "config": asdict(self.config),
            "validation_score": self.validation_score,
            "modules": self.program.state(),
            "candidates": [{"index": c.index, "score": c.score, "cost": str(c.cost), "provenance": c.provenance}
                           for c in self.candidates],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path


def load_optimized(path: str | Path, program: Program) -> Program:
    """Apply a saved optimized-program file onto a freshly built ``program``."""
    data = json.loads(Path(path).read_text())
    if data.get("program") not in (None, program.program_id):
        raise ValueError(f"{path} was optimized for {data['program']!r}, not {program.program_id!r}")
    return program.load_state(data["modules"])


def _phase(lm: LM) -> LM:
    return lm.with_phase("optimization")


def _threshold(metric: Metric, cfg: OptimizerConfig) -> float:
    if cfg.pass_threshold is not None:
        return cfg.pass_threshold
    return 1.0 if metric.binary else 0.9


def _demo(values: Mapping[str, str], sig: Signature, origin: str) -> Example:
    return Example({k: str(values[k]) for k in sig.field_names if k in values}, origin=origin, split="train")


def _bootstrap(program: Program, trainset: Sequence[Example], metric: Metric, cfg: OptimizerConfig,
               teacher: LM, max_bootstrapped: int, max_labeled: int) -> tuple[Program, list[int]]:
    demos: dict[str, list[Example]] = {name: [] for name in program.predictors}
    used: list[int] = []
    errors = 0
    threshold = _threshold(metric, cfg)
    for idx, ex in enumerate(trainset):
        if all(len(d) >= max_bootstrapped for d in demos.values()):
            break
        try:
            out = program(ex.values, teacher)
            score = metric(ex, out, teacher).score
        except ConfigurationError:
            raise
        except Exception as exc:
            errors += 1
            log.debug("bootstrap example %d failed: %s", idx, exc)
            if errors > cfg.max_errors:
                raise OptimizationError(f"bootstrapping hit {errors} errors (max_errors={cfg.max_errors}); "
                                        f"last: {type(exc).__name__}: {exc}") from exc
            continue
        if score < threshold:
            continue
        seen: set[str] = set()
        for step in out.trace.steps:
            if step.module_id in seen or not step.prediction.parse_ok:
                continue
            seen.add(step.module_id)
            if len(demos[step.module_id]) < max_bootstrapped:
                sig = program.predictors[step.module_id].signature
                demos[step.module_id].append(_demo({**step.inputs, **step.prediction.outputs}, sig, "bootstrapped"))
        used.append(idx)

    rest = [ex for i, ex in enumerate(trainset) if i not in set(used)]
    updates = {}
    for name, pred in program.predictors.items():
        labeled = [_demo(ex.values, pred.signature, "labeled") for ex in rest if ex.is_demo_for(pred.signature)]
        updates[name] = replace(pred, demos=tuple(demos[name] + labeled[:max_labeled]))
    return program.with_predictors(updates), used


def bootstrap_fewshot(program: Program, trainset: Sequence[Example], metric: Metric, cfg: OptimizerConfig,
                      lm: LM) -> OptimizedProgram:
    """Keep metric-passing teacher traces as per-module demos, then top up with labeled examples."""
    lm = _phase(lm)
    teacher = lm.with_model(cfg.teacher_model) if cfg.teacher_model else lm
    compiled, _ = _bootstrap(program, trainset, metric, cfg, teacher, cfg.max_bootstrapped_demos,
                             cfg.max_labeled_demos)
    return OptimizedProgram(compiled, "bootstrap_fewshot", cfg)


def _demo_candidates(program: Program, trainset: Sequence[Example], metric: Metric, cfg: OptimizerConfig,
                     lm: LM) -> list[tuple[Program, str]]:
    """[as-given, labeled-only, bootstrapped over seed-shuffled trainsets...], ``num_candidates`` long."""
    teacher = lm.with_model(cfg.teacher_model) if cfg.teacher_model else lm
    out: list[tuple[Program, str]] = [(program, "zero-shot")]
    if cfg.num_candidates >= 2:
        labeled, _ = _bootstrap(program, trainset, metric, cfg, teacher, 0, cfg.max_labeled_demos)
        out.append((labeled, "labeled-only"))
    for i in range(2, cfg.num_candidates):
        shuffled = list(trainset)
        random.Random(cfg.seed * 10_007 + i).shuffle(shuffled)
        boot, _ = _bootstrap(program, shuffled, metric, cfg, teacher, cfg.max_bootstrapped_demos,
                             cfg.max_labeled_demos)
        out.append((boot, f"bootstrapped shuffle {i}"))
    return out


def first_max(scores: Sequence[float]) -> int:
    """Index of the highest score; earliest wins ties."""
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return best


def _score(program: Program, examples: Sequence[Example], metric: Metric, lm: LM,
           cfg: OptimizerConfig) -> EvalResult:
    try:
        return evaluate(program, examples, metric, lm, cfg.concurrency, cfg.max_errors)
    except TooManyErrors as exc:
        raise OptimizationError(str(exc)) from exc


def bootstrap_random_search(program: Program, trainset: Sequence[Example], valset: Sequence[Example],
                            metric: Metric, cfg: OptimizerConfig, lm: LM) -> OptimizedProgram:
    if not valset:
        raise ContractError("bootstrap_random_search needs a validation set")
    lm = _phase(lm)
    records = []
    candidates = _demo_candidates(program, trainset, metric, cfg, lm)
    for i, (cand, prov) in enumerate(candidates):
        res = _score(cand, valset, metric, lm, cfg)
        records.append(CandidateRecord(i, res.mean, res.cost, prov))
        log.info("random search candidate %d (%s): %.4f", i, prov, res.mean)
    best = first_max([r.score for r in records])
    return OptimizedProgram(candidates[best][0], "bootstrap_random_search", cfg, records[best].score, records)


# --- instruction proposal ----------------------------------------------------

PROPOSER_SIGNATURE = Signature(
    name="propose_instruction",
    instruction=("You are improving the instruction of one step of a language program. Read the step's fields, "
                 "its current instruction and some worked examples, then write a better instruction."),
    input_fields=[("fields", "input and output fields of the step"),
                  ("current_instruction", "the instruction used today"),
                  ("examples", "worked examples of the step")],
    output_fields=[("proposed_instruction", "a single improved instruction")],
)


def format_demos(sig: Signature, demos: Sequence[Example]) -> str:
    blocks = []
    for i, demo in enumerate(demos, 1):
        lines = [f"Example {i}"] + [f"{name}: {escape_value(demo.values.get(name, ''))}" for name in sig.field_names]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) if blocks else "(no examples)"


def _describe_fields(sig: Signature) -> str:
    return (f"inputs: {', '.join(sig.input_names)}; outputs: {', '.join(sig.output_names)}")


def propose_instructions(program: Program, demo_sets: Sequence[Mapping[str, Sequence[Example]]], proposer: LM,
                         num_candidates: int, seed: int = 0) -> dict[str, list[str]]:
    """Per module: the current instruction, then one proposer call per extra slot."""
    if num_candidates < 1:
        raise ValueError("num_candidates must be >= 1")
    rng = random.Random(seed)
    out: dict[str, list[str]] = {}
    for name, pred in program.predictors.items():
        cands = [pred.instruction]
        for slot in range(1, num_candidates):
            demos = rng.choice(list(demo_sets)).get(name, ()) if demo_sets else ()
            prompt = render_prompt(PROPOSER_SIGNATURE, [], {
                "fields": _describe_fields(pred.signature),
                "current_instruction": pred.instruction or "(none)",
                "examples": format_demos(pred.signature, demos),
            })
            completion = proposer(prompt, seed_offset=slot)
            parsed = parse_completion(PROPOSER_SIGNATURE, completion.text)
            text = parsed.outputs.get("proposed_instruction", "").strip() if parsed.parse_ok else ""
            if not text:
                log.info("proposer slot %d for %s unparseable; keeping the original instruction", slot, name)
                text = pred.instruction
            cands.append(text)
        out[name] = cands
    return out


# --- instruction x demo search -----------------------------------------------


class _CategoricalSampler:
    """Per-variable weights proportional to exp(mean observed score of each choice).

    Unobserved choices get the optimistic prior exp(1), so every choice is
    tried before the weights settle.
    """

    def __init__(self, sizes: Sequence[int], rng: random.Random) -> None:
        self.sizes = list(sizes)
        self.rng = rng
        self.obs: list[list[list[float]]] = [[[] for _ in range(n)] for n in sizes]

    def weights(self, var: int) -> list[float]:
        return [math.exp(math.fsum(o) / len(o)) if o else math.e for o in self.obs[var]]

    def sample(self) -> tuple[int, ...]:
        choice = []
        for var in range(len(self.sizes)):
            w = self.weights(var)
            x = self.rng.random() * math.fsum(w)
            acc, pick = 0.0, len(w) - 1
            for c, wc in enumerate(w):
                acc += wc
                if x < acc:
                    pick = c
                    break
            choice.append(pick)
        return tuple(choice)

    def observe(self, config: tuple[int, ...], score: float) -> None:
        for var, c in enumerate(config):
            self.obs[var][c].append(score)


def mipro(program: Program, trainset: Sequence[Example], valset: Sequence[Example], metric: Metric,
          cfg: OptimizerConfig, lm: LM) -> OptimizedProgram:
    """Search per-module (instruction, demo set) choices on validation minibatches.

    The baseline (as-given) configuration is fully evaluated first; every
    ``batch_full_eval_steps`` trials, and after the last one, the best
    configuration by mean minibatch score is fully evaluated. The result is
    the best fully evaluated configuration.
    """
    if not valset:
        raise ContractError("mipro needs a validation set")
    lm = _phase(lm)
    if cfg.num_trials == 0:
        return OptimizedProgram(program, "mipro", cfg)

    demo_progs = _demo_candidates(program, trainset, metric, cfg, lm)
    demo_sets = [{n: p.predictors[n].demos for n in program.predictors} for p, _ in demo_progs]
    proposer = lm.with_model(cfg.proposer_model or cfg.teacher_model) if (cfg.proposer_model or cfg.teacher_model) \
        else lm
    instructions = propose_instructions(program, demo_sets[1:] or demo_sets, proposer, cfg.num_candidates, cfg.seed)
    modules = list(program.predictors)
    # variables per module: instruction index, demo-set index
    sizes = [n for m in modules for n in (len(instructions[m]), len(demo_sets))]

    def configure(config: tuple[int, ...]) -> Program:
        updates = {}
        for j, m in enumerate(modules):
            ii, di = config[2 * j], config[2 * j + 1]
            pred = program.predictors[m]
            override = pred.instruction_override if ii == 0 else instructions[m][ii]
            updates[m] = replace(pred, instruction_override=override, demos=tuple(demo_sets[di][m]))
        return program.with_predictors(updates)

    def describe(config: tuple[int, ...]) -> str:
        return ", ".join(f"{m}: instruction {config[2 * j]}, demos {config[2 * j + 1]}" for j, m in enumerate(modules))

    baseline = tuple([0] * len(sizes))
    full: dict[tuple[int, ...], float] = {}
    records: list[CandidateRecord] = []

    def full_eval(config: tuple[int, ...]) -> None:
        res = _score(configure(config), valset, metric, lm, cfg)
        full[config] = res.mean
        records.append(CandidateRecord(len(records), res.mean, res.cost, describe(config)))

    full_eval(baseline)
    grid = math.prod(sizes)
    exhaustive = cfg.exhaustive_fallback and grid <= cfg.num_trials
    order = iter(itertools.product(*[range(n) for n in sizes])) if exhaustive else None
    sampler = _CategoricalSampler(sizes, random.Random(cfg.seed))
    minibatch: dict[tuple[int, ...], list[float]] = {}

    for trial in range(1, cfg.num_trials + 1):
        config = next(order, None) if order is not None else sampler.sample()
        if config is None:
            break
        if len(valset) <= cfg.batch_size:
            if config not in full:
                full_eval(config)
            score = full[config]
        else:
            batch = random.Random(cfg.seed * 1_000_003 + trial).sample(list(valset), cfg.batch_size)
            score = _score(configure(config), batch, metric, lm, cfg).mean
        minibatch.setdefault(config, []).append(score)
        sampler.observe(config, score)
        if trial % cfg.batch_full_eval_steps == 0 or trial == cfg.num_trials:
            leader = max(minibatch, key=lambda c: math.fsum(minibatch[c]) / len(minibatch[c]))
            if leader not in full:
                full_eval(leader)

    best = max(full, key=lambda c: full[c])  # dicts keep insertion order, so ties go to the earliest
    return OptimizedProgram(configure(best) if best != baseline else program, "mipro", cfg, full[best], records)


# --- rule induction ------------------------------------------------------------

RULE_SIGNATURE = Signature(
    name="induce_rules",
    instruction=("Study the task instruction and the successful worked examples. Write short, actionable rules "
                 "that explain what made these answers correct. Return a numbered list, one rule per line."),
    input_fields=[("task_instruction", "the task instruction"), ("examples", "successful worked examples"),
                  ("max_rules", "maximum number of rules")],
    output_fields=[("rules", "numbered list of rules")],
)

_NUMBERED = re.compile(r"^\s*\d+\s*[.)]\s*(\S.*?)\s*$")


def parse_rules(text: str, num_rules: int) -> list[str]:
    rules = [m.group(1) for line in text.splitlines() if (m := _NUMBERED.match(line))]
    return rules[:num_rules]


def induce_rules(demos: Sequence[Example], instruction: str, inducer: LM, num_rules: int, seed: int = 0,
                 signature: Signature | None = None) -> list[str]:
    """One inducer call; returns at most ``num_rules`` rules parsed from numbered lines."""
    if not demos:
        raise ContractError("induce_rules needs at least one demo")
    sig = signature
    examples = format_demos(sig, demos) if sig is not None else "\n\n".join(
        "\n".join(f"{k}: {escape_value(v)}" for k, v in d.values.items()) for d in demos)
    prompt = render_prompt(RULE_SIGNATURE, [], {"task_instruction": instruction or "(none)", "examples": examples,
                                                "max_rules": str(num_rules)})
    completion = inducer(prompt, seed_offset=seed)
    parsed = parse_completion(RULE_SIGNATURE, completion.text)
    body = parsed.outputs.get("rules", "") if parsed.parse_ok else completion.text
    return parse_rules(body, num_rules)


def rule_infer(program: Program, trainset: Sequence[Example], valset: Sequence[Example], metric: Metric,
               cfg: OptimizerConfig, lm: LM) -> OptimizedProgram:
    """Bootstrap demos, then try ``num_candidates`` freshly induced rule sets, keeping strict improvements."""
    if not valset:
        raise ContractError("rule_infer needs a validation set")
    lm = _phase(lm)
    inducer = lm.with_model(cfg.teacher_model) if cfg.teacher_model else lm
    best = bootstrap_fewshot(program, trainset, metric, cfg, lm).program
    res = _score(best, valset, metric, lm, cfg)
    mu_star = res.mean
    records = [CandidateRecord(0, mu_star, res.cost, "few-shot baseline")]
    for n in range(1, cfg.num_candidates + 1):
        updates = {}
        for name, pred in best.predictors.items():
            if not pred.demos:
                continue
            rules = induce_rules(pred.demos, pred.instruction, inducer, cfg.num_rules, seed=n,
                                 signature=pred.signature)
            updates[name] = replace(pred, rules=tuple(rules))
        cand = best.with_predictors(updates)
        res = _score(cand, valset, metric, lm, cfg)
        records.append(CandidateRecord(n, res.mean, res.cost, f"rules seed {n}"))
        log.info("rule candidate %d: %.4f (best %.4f)", n, res.mean, mu_star)
        if res.mean > mu_star:
            best, mu_star = cand, res.mean
    return OptimizedProgram(best, "rule_infer", cfg, mu_star, records)


# --- dispatch --------------------------------------------------------------------

OPTIMIZER_IDS = ("none", *PRESETS)
_RUNNERS: dict[str, Callable[..., OptimizedProgram]] = {
    "bootstrap_fewshot": lambda p, tr, va, m, c, lm: bootstrap_fewshot(p, tr, m, c, lm),
    "bootstrap_random_search": bootstrap_random_search,
    "mipro_lite": mipro,
    "mipro": mipro,
    "rule_infer_lite": rule_infer,
    "rule_infer": rule_infer,
}


def optimizer_config(optimizer_id: str, overrides: Mapping[str, Any] | None = None) -> OptimizerConfig:
    if optimizer_id == "none":
        base = OptimizerConfig()
    elif optimizer_id in PRESETS:
        base = PRESETS[optimizer_id]
    else:
        raise KeyError(f"unknown optimizer {optimizer_id!r}; known: {', '.join(OPTIMIZER_IDS)}")
    return base.updated(**dict(overrides or {}))


def run_optimizer(optimizer_id: str, program: Program, trainset: Sequence[Example], valset: Sequence[Example],
                  metric: Metric, lm: LM, overrides: Mapping[str, Any] | None = None) -> OptimizedProgram:
    cfg = optimizer_config(optimizer_id, overrides)
    if optimizer_id == "none":
        return OptimizedProgram(program, "none", cfg)
    result = _RUNNERS[optimizer_id](program, trainset, valset, metric, cfg, lm)
    result.optimizer = optimizer_id
    return result
