"""Signatures, examples, predictions and traces, plus prompt rendering/parsing.

Prompts use a fixed label-per-line layout so that rendering is a pure
function and any completion can be parsed back without an LM in the loop::

    <instruction>
    - question: <description>
    - answer: <description>

    Rules:
    1. <rule>

    ---
    Question: <demo value>
    Answer: <demo value>

    ---
    Question: <live value>
    Answer:
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

ORIGINS = ("labeled", "bootstrapped")
SPLITS = ("train", "validation", "test")


class ContractError(ValueError):
    """A caller broke an operation's precondition."""


@dataclass(frozen=True)
class Field:
    name: str
    description: str = ""

    @property
    def label(self) -> str:
        return field_label(self.name)


def field_label(name: str) -> str:
    """Canonical prompt label for a field name: ``final_answer`` -> ``Final Answer``."""
    return " ".join(part[:1].upper() + part[1:] for part in name.split("_") if part)


def _as_fields(spec: Iterable[Field | str | tuple[str, str]]) -> tuple[Field, ...]:
    out = []
    for item in spec:
        if isinstance(item, Field):
            out.append(item)
        elif isinstance(item, str):
            out.append(Field(item))
        else:
            out.append(Field(*item))
    return tuple(out)


@dataclass(frozen=True)
class Signature:
    """Instruction plus ordered input and output fields of one LM step."""

    name: str
    instruction: str
    input_fields: tuple[Field, ...]
    output_fields: tuple[Field, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_fields", _as_fields(self.input_fields))
        object.__setattr__(self, "output_fields", _as_fields(self.output_fields))
        if not self.input_fields or not self.output_fields:
            raise ContractError(f"signature {self.name!r} needs at least one input and one output field")
        names = self.field_names
        if len(set(names)) != len(names):
            raise ContractError(f"signature {self.name!r} has duplicate field names: {names}")
        labels = [field_label(n) for n in names]
        if len(set(labels)) != len(labels):
            raise ContractError(f"signature {self.name!r} has clashing field labels: {labels}")

    @property
    def input_names(self) -> list[str]:
        return [f.name for f in self.input_fields]

    @property
    def output_names(self) -> list[str]:
        return [f.name for f in self.output_fields]

    @property
    def field_names(self) -> list[str]:
        return self.input_names + self.output_names

    def with_outputs(self, prepend: Iterable[Field | str | tuple[str, str]] = (), name: str | None = None) -> Signature:
        return Signature(
            name=name or self.name,
            instruction=self.instruction,
            input_fields=self.input_fields,
            output_fields=_as_fields(prepend) + self.output_fields,
        )

    def with_inputs(self, prepend: Iterable[Field | str | tuple[str, str]] = (),
                    append: Iterable[Field | str | tuple[str, str]] = (), name: str | None = None) -> Signature:
        return Signature(
            name=name or self.name,
            instruction=self.instruction,
            input_fields=_as_fields(prepend) + self.input_fields + _as_fields(append),
            output_fields=self.output_fields,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "instruction": self.instruction,
            "inputs": [[f.name, f.description] for f in self.input_fields],
            "outputs": [[f.name, f.description] for f in self.output_fields],
        }


@dataclass(frozen=True)
class Example:
    """A set of field values; demos are examples with every signature field filled."""

    values: Mapping[str, str]
    origin: str = "labeled"
    split: str = "train"

    def __post_init__(self) -> None:
        if self.origin not in ORIGINS:
            raise ContractError(f"unknown example origin {self.origin!r}")
        if self.split not in SPLITS:
            raise ContractError(f"unknown example split {self.split!r}")
        object.__setattr__(self, "values", dict(self.values))

    def __getitem__(self, key: str) -> str:
        return self.values[key]

    def __hash__(self) -> int:
        return hash((tuple(sorted(self.values.items())), self.origin, self.split))

    def inputs_for(self, sig: Signature) -> dict[str, str]:
        return {name: self.values[name] for name in sig.input_names if name in self.values}

    def is_demo_for(self, sig: Signature) -> bool:
        return all(str(self.values.get(name, "")).strip() for name in sig.field_names)

    def to_dict(self) -> dict[str, Any]:
        return {"values": dict(sorted(self.values.items())), "origin": self.origin, "split": self.split}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Example:
        return cls(values=data["values"], origin=data.get("origin", "labeled"), split=data.get("split", "train"))


Demo = Example


@dataclass(frozen=True)
class Usage:
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ContractError("token counts must be nonnegative")

    def __add__(self, other: Usage) -> Usage:
        return Usage(self.input_tokens + other.input_tokens, self.output_tokens + other.output_tokens)


@dataclass(frozen=True)
class Prediction:
    outputs: Mapping[str, str]
    raw_completion: str
    usage: Usage = Usage()
    parse_ok: bool = True

    def __post_init__(self) -> None:
        if not self.parse_ok and self.outputs:
            object.__setattr__(self, "outputs", {})

    def get(self, name: str, default: str = "") -> str:
        return self.outputs.get(name, default)


@dataclass(frozen=True)
class TraceStep:
    module_id: str
    inputs: Mapping[str, str]
    rendered_prompt: str
    prediction: Prediction
    model_id: str = ""


@dataclass
class Trace:
    steps: list[TraceStep] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def append(self, step: TraceStep) -> None:
        self.steps.append(step)

    @property
    def usage(self) -> Usage:
        total = Usage()
        for step in self.steps:
            total = total + step.prediction.usage
        return total


def escape_value(value: str) -> str:
    return str(value).replace("\r\n", "\n").replace("\n", "\\n")


def _field_guide(sig: Signature) -> list[str]:
    return [f"- {f.name}: {f.description}".rstrip() if f.description else f"- {f.name}" for f in
            sig.input_fields + sig.output_fields]


def render_prompt(sig: Signature, demos: Iterable[Example], inputs: Mapping[str, Any],
                  rules: Iterable[str] = (), instruction: str | None = None) -> str:
    """Render the prompt for one module call.

    ``instruction`` overrides ``sig.instruction`` when given (optimizers use it
    for proposed instructions). Demo values are newline-escaped; live input
    values are rendered verbatim.
    """
    missing = [name for name in sig.input_names if name not in inputs]
    if missing:
        raise ContractError(f"missing input field {missing[0]!r} for signature {sig.name!r}")

    text = sig.instruction if instruction is None else instruction
    blocks: list[str] = []
    head = ([text.strip()] if text.strip() else []) + _field_guide(sig)
    blocks.append("\n".join(head))

    rules = [r.strip() for r in rules if r and r.strip()]
    if rules:
        blocks.append("\n".join(["Rules:"] + [f"{i}. {r}" for i, r in enumerate(rules, 1)]))

    for demo in demos:
        lines = [f"{f.label}: {escape_value(demo.values.get(f.name, ''))}"
                 for f in sig.input_fields + sig.output_fields]
        blocks.append("---\n" + "\n".join(lines))

    live = [f"{f.label}: {inputs[f.name]}" for f in sig.input_fields]
    live.append(f"{sig.output_fields[0].label}:")
    blocks.append("---\n" + "\n".join(live))
    return "\n\n".join(blocks)


def parse_completion(sig: Signature, completion: str) -> Prediction:
    """Parse labeled output fields out of a completion.

    A field's value runs from its label to the next output label line. The
    first occurrence of each label wins. Never raises.
    """
    completion = completion or ""
    labels = {f.label: f.name for f in sig.output_fields}
    pattern = re.compile(r"^[ \t]*(" + "|".join(re.escape(lbl) for lbl in labels) + r"):[ \t]?(.*)$")
    found: dict[str, list[str]] = {}
    current: str | None = None
    for line in completion.splitlines():
        m = pattern.match(line)
        if m:
            name = labels[m.group(1)]
            if name in found:
                current = None
                continue
            current = name
            found[name] = [m.group(2)]
        elif current is not None:
            found[current].append(line)
    outputs = {name: "\n".join(parts).strip() for name, parts in found.items()}

    if not outputs and len(sig.output_fields) == 1:
        return Prediction({sig.output_names[0]: completion.strip()}, completion, parse_ok=True)
    if all(name in outputs for name in sig.output_names):
        return Prediction({n: outputs[n] for n in sig.output_names}, completion, parse_ok=True)
    return Prediction({}, completion, parse_ok=False)
