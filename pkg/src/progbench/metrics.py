"""Per-task scoring functions, each returning a score in [0, 1]."""

from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Callable, Iterable, Mapping

from .core import Signature, parse_completion, render_prompt

if TYPE_CHECKING:
    from .core import Example
    from .lm import LM
    from .programs import ProgramOutput


@dataclass(frozen=True)
class MetricResult:
    score: float
    detail: str | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"metric score {self.score} outside [0, 1]")


_WS = re.compile(r"\s+")
_TERMINAL_PUNCT = string.punctuation


def normalize_text(text: str) -> str:
    text = _WS.sub(" ", str(text).casefold().strip())
    return text.rstrip(_TERMINAL_PUNCT).strip()


def exact_match(pred: str, gold: str) -> MetricResult:
    return MetricResult(1.0 if normalize_text(pred) == normalize_text(gold) else 0.0)


_NUMBER = re.compile(r"-?\d{1,3}(?:,\d{3})+(?:\.\d+)?|-?\d+(?:\.\d+)?")


def _last_number(text: str) -> float | None:
    found = _NUMBER.findall(str(text))
    if not found:
        return None
    return float(found[-1].replace(",", ""))


def numeric_match(pred: str, gold: str) -> MetricResult:
    p, g = _last_number(pred), _last_number(gold)
    if p is None:
        return MetricResult(0.0, "no number in prediction")
    if g is None:
        return MetricResult(0.0, "no number in gold")
    if p.is_integer() and g.is_integer():
        return MetricResult(1.0 if int(p) == int(g) else 0.0, f"extracted {int(p)}")
    return MetricResult(1.0 if p == g else 0.0, f"extracted {p}")


def extract_boxed(text: str) -> str | None:
    """Content of the last, innermost balanced ``\\boxed{...}`` in ``text``."""
    text = str(text)
    start = text.rfind("\\boxed{")
    while start != -1:
        i = j = start + len("\\boxed{")
        depth = 1
        while j < len(text) and depth:
            depth += {"{": 1, "}": -1}.get(text[j], 0)
            j += 1
        if depth == 0:
            return text[i:j - 1]
        start = text.rfind("\\boxed{", 0, start)
    return None


def boxed_match(pred: str, gold: str) -> MetricResult:
    box = extract_boxed(pred)
    if box is None:
        return MetricResult(0.0, "no \\boxed{} in prediction")
    gold_box = extract_boxed(gold)
    target = gold_box if gold_box is not None else str(gold)
    strip = lambda s: _WS.sub("", s)  # noqa: E731
    return MetricResult(1.0 if strip(box) == strip(target) else 0.0, f"boxed {box!r}")


def rank_precision(ranked: Iterable[str], gold: Iterable[str]) -> MetricResult:
    gold = set(gold)
    if not gold:
        raise ValueError("rank_precision needs a non-empty gold set")
    top = list(ranked)[:len(gold)]
    return MetricResult(len(set(top) & gold) / len(gold))


JUDGE_SIGNATURE = Signature(
    name="semantic_f1_judge",
    instruction=("Compare the system response with the ground truth response. Estimate precision (the fraction "
                 "of the response's claims supported by the ground truth) and recall (the fraction of the ground "
                 "truth's claims covered by the response). Give each as a number between 0 and 1."),
    input_fields=[("question", "the original task input"), ("ground_truth", "reference response"),
                  ("system_response", "response to grade")],
    output_fields=[("precision", "number in [0, 1]"), ("recall", "number in [0, 1]")],
)


def _unit_number(text: str) -> float | None:
    m = re.search(r"-?\d+(?:\.\d+)?", text)
    if not m:
        return None
    value = float(m.group())
    return value if 0.0 <= value <= 1.0 else None


def semantic_f1(pred: str, gold: str, judge: LM, question: str = "") -> MetricResult:
    """Ask ``judge`` for precision/recall of ``pred`` against ``gold``; F1 is their harmonic mean."""
    prompt = render_prompt(JUDGE_SIGNATURE, [], {"question": question, "ground_truth": gold,
                                                 "system_response": pred})
    completion = judge(prompt)
    parsed = parse_completion(JUDGE_SIGNATURE, completion.text)
    if not parsed.parse_ok:
        return MetricResult(0.0, "judge output unparseable")
    p, r = _unit_number(parsed.outputs["precision"]), _unit_number(parsed.outputs["recall"])
    if p is None or r is None:
        return MetricResult(0.0, "judge output unparseable")
    if p + r == 0:
        return MetricResult(0.0, "precision=0 recall=0")
    return MetricResult(2 * p * r / (p + r), f"precision={p} recall={r}")


def hover_retrieval(retrieved: str | Iterable[str], supporting: Mapping[str, Iterable[str]]) -> MetricResult:
    """1.0 iff every supporting document has at least one fact inside the retrieved text."""
    if not supporting:
        raise ValueError("hover_retrieval needs at least one supporting document")
    text = retrieved if isinstance(retrieved, str) else "\n".join(retrieved)
    covered = [doc for doc, facts in supporting.items() if any(f and f in text for f in facts)]
    return MetricResult(1.0 if len(covered) == len(supporting) else 0.0, f"covered {len(covered)}/{len(supporting)}")


# --- task metrics over (example, program output) ---------------------------


def split_list(text: str) -> list[str]:
    """List-valued fields travel as newline-separated text."""
    return [line.strip() for line in str(text).splitlines() if line.strip()]


@dataclass(frozen=True)
class Metric:
    """Binds a scoring function to the prediction/gold fields of a task."""

    name: str
    pred_field: str
    gold_field: str
    binary: bool = True

    def __call__(self, example: Example, output: ProgramOutput, lm: LM | None = None) -> MetricResult:
        if not output.parse_ok:
            return MetricResult(0.0, "prediction failed to parse")
        pred = output.outputs.get(self.pred_field, "")
        gold = example.values.get(self.gold_field, "")
        return _SCORERS[self.name](pred, gold, example, lm, self)


def _judge(pred: str, gold: str, example: Example, lm: LM | None, metric: Metric) -> MetricResult:
    if lm is None:
        raise ValueError("semantic_f1 needs a judge LM")
    question = next((v for k, v in sorted(example.values.items()) if k != metric.gold_field), "")
    return semantic_f1(pred, gold, lm, question=question)


def _hover(pred: str, gold: Any, example: Example, lm: LM | None, metric: Metric) -> MetricResult:
    supporting = json.loads(gold) if isinstance(gold, str) else gold
    return hover_retrieval(pred, supporting)


_SCORERS: dict[str, Callable[..., MetricResult]] = {
    "exact_match": lambda p, g, *_: exact_match(p, g),
    "numeric_match": lambda p, g, *_: numeric_match(p, g),
    "boxed_match": lambda p, g, *_: boxed_match(p, g),
    "rank_precision": lambda p, g, *_: rank_precision(split_list(p), split_list(g)),
    "semantic_f1": _judge,
    "hover_retrieval": _hover,
}

_CONTINUOUS = {"rank_precision", "semantic_f1"}
METRIC_IDS = tuple(_SCORERS)


def get_metric(metric_id: str, field: str = "answer", gold_field: str | None = None,
               pred_field: str | None = None) -> Metric:
    if metric_id not in _SCORERS:
        raise KeyError(f"unknown metric {metric_id!r}; known: {', '.join(METRIC_IDS)}")
    if metric_id == "hover_retrieval":
        pred_field = pred_field or "retrieved"
    return Metric(metric_id, pred_field or field, gold_field or field, binary=metric_id not in _CONTINUOUS)
