"""Scoring a program over an example set on a bounded worker pool."""

from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Sequence

from .core import Example
from .lm import LM, ConfigurationError
from .metrics import Metric
from .programs import Program, ProgramOutput

log = logging.getLogger(__name__)


class TooManyErrors(RuntimeError):
    pass


@dataclass
class EvalResult:
    scores: list[float]
    outputs: list[ProgramOutput | None]
    cost: Decimal
    lm_calls: int
    errors: int = 0
    error_messages: list[str] = field(default_factory=list)

    @property
    def aggregate(self) -> float:
        """100 x mean score; fsum makes it independent of completion order."""
        return 100.0 * math.fsum(self.scores) / len(self.scores) if self.scores else 0.0

    @property
    def mean(self) -> float:
        return math.fsum(self.scores) / len(self.scores) if self.scores else 0.0


def trace_cost(output: ProgramOutput, lm: LM) -> Decimal:
    if lm.ledger is None:
        return Decimal("0.000000")
    return sum((lm.ledger.price_call(step.model_id or lm.model_id, step.prediction.usage)
                for step in output.trace.steps), Decimal("0.000000"))


def evaluate(program: Program, examples: Sequence[Example], metric: Metric, lm: LM,
             concurrency: int = 1, max_errors: int | None = None) -> EvalResult:
    """Run ``program`` on every example; errors and parse failures score 0.

    Results are stored by example index, so the outcome does not depend on
    worker count or scheduling. Configuration errors are never swallowed.
    """
    if not examples:
        raise ValueError("evaluate needs at least one example")
    n = len(examples)
    scores = [0.0] * n
    outputs: list[ProgramOutput | None] = [None] * n
    costs = [Decimal("0.000000")] * n
    calls = [0] * n
    errors: list[str] = []
    lock = threading.Lock()
    abort = threading.Event()

    def run(i: int) -> None:
        if abort.is_set():
            return
        ex = examples[i]
        try:
            out = program(ex.values, lm)
            outputs[i] = out
            calls[i] = out.lm_calls
            costs[i] = trace_cost(out, lm)
            scores[i] = metric(ex, out, lm).score
        except (ConfigurationError, TooManyErrors):
            raise
        except Exception as exc:
            log.debug("example %d failed: %s", i, exc)
            with lock:
                errors.append(f"example {i}: {type(exc).__name__}: {exc}")
                if max_errors is not None and len(errors) > max_errors:
                    abort.set()

    if concurrency <= 1:
        for i in range(n):
            run(i)
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            for fut in [pool.submit(run, i) for i in range(n)]:
                fut.result()
    if abort.is_set():
        raise TooManyErrors(f"{len(errors)} errors exceed max_errors={max_errors}; first: {errors[0]}")
    return EvalResult(scores, outputs, sum(costs, Decimal("0.000000")), sum(calls), len(errors), sorted(errors))
