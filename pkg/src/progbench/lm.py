"""LM backends, usage metering and cost accounting.

Backends implement ``complete(LmRequest) -> Completion``. Programs never talk
to a backend directly; they go through an :class:`LM` client that routes by
model id and records every call in a :class:`CostLedger` under a phase
(``optimization`` or ``evaluation``).
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol

import httpx

from .core import Usage

log = logging.getLogger(__name__)

PHASES = ("optimization", "evaluation")
COST_QUANTUM = Decimal("0.000001")
_MILLION = Decimal(1_000_000)


class ConfigurationError(ValueError):
    """Unknown model, missing price entry or malformed backend config."""


class LMError(RuntimeError):
    retryable = False


class TransportError(LMError):
    retryable = True


class RateLimitError(LMError):
    retryable = True


@dataclass(frozen=True)
class LmRequest:
    model_id: str
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class Completion:
    text: str
    usage: Usage
    model_id: str = ""


def count_tokens(text: str) -> int:
    """Mock token count: whitespace-separated words."""
    return len(text.split())


class Backend(Protocol):
    def complete(self, req: LmRequest) -> Completion: ...


class MockBackend:
    """Base for deterministic in-process backends; counts calls thread-safely."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.calls = 0
        self.prompts: list[str] = []

    def respond(self, req: LmRequest) -> str:
        raise NotImplementedError

    def complete(self, req: LmRequest) -> Completion:
        text = self.respond(req)
        with self._lock:
            self.calls += 1
            self.prompts.append(req.prompt)
        return Completion(text, Usage(count_tokens(req.prompt), count_tokens(text)), req.model_id)

    def reset(self) -> None:
        with self._lock:
            self.calls = 0
            self.prompts = []


class ScriptedLM(MockBackend):
    """Exact-prompt lookup table, then ordered substring rules, then a default."""

    def __init__(self, table: Mapping[str, str] | None = None, default: str = "",
                 rules: Iterable[tuple[str | Iterable[str], str]] = ()) -> None:
        super().__init__()
        self.table = dict(table or {})
        self.default = default
        self.rules = [((needle,) if isinstance(needle, str) else tuple(needle), text) for needle, text in rules]

    def respond(self, req: LmRequest) -> str:
        if req.prompt in self.table:
            return self.table[req.prompt]
        for needles, text in self.rules:
            if all(n in req.prompt for n in needles):
                return text
        return self.default

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ScriptedLM:
        rules = []
        for rule in data.get("rules", []):
            rules.append((rule["contains"], rule["completion"]))
        return cls(table=data.get("table"), default=data.get("default", ""), rules=rules)


class FunctionalLM(MockBackend):
    """Completion computed by a pure function of the request."""

    def __init__(self, fn: Callable[[LmRequest], str]) -> None:
        super().__init__()
        self.fn = fn

    def respond(self, req: LmRequest) -> str:
        return self.fn(req)


def first_demo_answer(req: LmRequest, label: str = "Answer") -> str:
    """Echo the first ``<label>: value`` line that carries a value, else empty."""
    prefix = f"{label}:"
    for line in req.prompt.splitlines():
        if line.startswith(prefix) and line[len(prefix):].strip():
            return f"{prefix} {line[len(prefix):].strip()}"
    return ""


class HttpLM:
    """OpenAI-compatible chat-completions backend with bounded jittered retries."""

    def __init__(self, base_url: str, api_key_env: str = "OPENAI_API_KEY", timeout: float = 60.0,
                 max_attempts: int = 5, backoff_base: float = 1.0, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep, rng: random.Random | None = None) -> None:
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.api_key_env = api_key_env
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.client = client or httpx.Client(timeout=timeout)
        self.sleep = sleep
        self.rng = rng or random.Random()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env) if self.api_key_env else None
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _once(self, req: LmRequest) -> Completion:
        body = {
            "model": req.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "seed": req.seed,
        }
        try:
            resp = self.client.post(self.url, json=body, headers=self._headers())
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429:
            raise RateLimitError(f"rate limited: {resp.text[:200]}")
        if resp.status_code >= 500:
            raise TransportError(f"server error {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise LMError(f"request rejected {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"] or ""
            usage = data.get("usage") or {}
            return Completion(text, Usage(int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))),
                              req.model_id)
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise LMError(f"malformed completion response: {exc}") from exc

    def complete(self, req: LmRequest) -> Completion:
        for attempt in range(1, self.max_attempts + 1):
            try:
                return self._once(req)
            except LMError as exc:
                if not exc.retryable or attempt == self.max_attempts:
                    raise
                delay = self.backoff_base * 2 ** (attempt - 1)
                delay *= 0.5 + self.rng.random()
                log.warning("attempt %d/%d failed (%s); retrying in %.2fs", attempt, self.max_attempts, exc, delay)
                self.sleep(delay)
        raise AssertionError("unreachable")


class Router:
    """Maps model ids to backends."""

    def __init__(self, backends: Mapping[str, Backend] | None = None, fallback: Backend | None = None) -> None:
        self.backends = dict(backends or {})
        self.fallback = fallback

    def complete(self, req: LmRequest) -> Completion:
        backend = self.backends.get(req.model_id, self.fallback)
        if backend is None:
            raise ConfigurationError(f"unknown model {req.model_id!r}")
        return backend.complete(req)

    def has(self, model_id: str) -> bool:
        return model_id in self.backends or self.fallback is not None


def load_mock_script(path: str | Path) -> Router:
    """Build scripted mocks from JSON.

    Either one script for every model, ``{"default", "table", "rules"}``, or
    per-model scripts under ``{"models": {model_id: script}}``.
    """
    data = json.loads(Path(path).read_text())
    if "models" in data:
        return Router({mid: ScriptedLM.from_dict(s) for mid, s in data["models"].items()},
                      fallback=ScriptedLM.from_dict(data["fallback"]) if "fallback" in data else None)
    return Router(fallback=ScriptedLM.from_dict(data))


# --- pricing ---------------------------------------------------------------


@dataclass(frozen=True)
class Price:
    input_per_1m: Decimal
    output_per_1m: Decimal

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_per_1m", Decimal(str(self.input_per_1m)))
        object.__setattr__(self, "output_per_1m", Decimal(str(self.output_per_1m)))
        if self.input_per_1m < 0 or self.output_per_1m < 0:
            raise ConfigurationError("prices must be >= 0")


@dataclass(frozen=True)
class PriceTable:
    entries: Mapping[str, Price] = field(default_factory=dict)

    def __getitem__(self, model_id: str) -> Price:
        try:
            return self.entries[model_id]
        except KeyError:
            raise ConfigurationError(f"no price entry for model {model_id!r}") from None

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping[str, Any]]) -> PriceTable:
        return cls({mid: Price(Decimal(str(p["input_per_1m"])), Decimal(str(p["output_per_1m"])))
                    for mid, p in data.items()})

    @classmethod
    def load(cls, path: str | Path) -> PriceTable:
        return cls.from_dict(json.loads(Path(path).read_text()))


def compute_cost(usage: Usage, price: Price | None) -> Decimal:
    """Linear token pricing, quantized to 6 fractional digits."""
    if price is None:
        raise ConfigurationError("missing price entry")
    raw = (Decimal(usage.input_tokens) * price.input_per_1m
           + Decimal(usage.output_tokens) * price.output_per_1m) / _MILLION
    return raw.quantize(COST_QUANTUM, rounding=ROUND_HALF_EVEN)


# --- ledger ----------------------------------------------------------------


@dataclass(frozen=True)
class CallRecord:
    phase: str
    model_id: str
    usage: Usage
    cost: Decimal


@dataclass(frozen=True)
class PhaseTotals:
    input_tokens: int = 0
    output_tokens: int = 0
    cost: Decimal = Decimal("0.000000")
    calls: int = 0

    def add(self, usage: Usage, cost: Decimal) -> PhaseTotals:
        return PhaseTotals(self.input_tokens + usage.input_tokens, self.output_tokens + usage.output_tokens,
                           self.cost + cost, self.calls + 1)


class CostLedger:
    """Thread-safe per-phase token and cost accumulator.

    Without a price table, tokens are still metered and every call costs zero.
    """

    def __init__(self, prices: PriceTable | None = None) -> None:
        self.prices = prices
        self._lock = threading.Lock()
        self._totals = {phase: PhaseTotals() for phase in PHASES}
        self._log: list[CallRecord] = []

    def price_call(self, model_id: str, usage: Usage) -> Decimal:
        if self.prices is None:
            return Decimal("0.000000")
        return compute_cost(usage, self.prices[model_id])

    def record(self, phase: str, model_id: str, usage: Usage) -> Decimal:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        cost = self.price_call(model_id, usage)
        with self._lock:
            self._totals[phase] = self._totals[phase].add(usage, cost)
            self._log.append(CallRecord(phase, model_id, usage, cost))
        return cost

    def snapshot(self) -> dict[str, PhaseTotals]:
        with self._lock:
            return dict(self._totals)

    @property
    def calls(self) -> list[CallRecord]:
        with self._lock:
            return list(self._log)

    def total_cost(self) -> Decimal:
        snap = self.snapshot()
        return sum((t.cost for t in snap.values()), Decimal("0.000000"))


# --- client ----------------------------------------------------------------


@dataclass(frozen=True)
class LM:
    """A model handle: backend routing, sampling settings and ledger phase."""

    model_id: str
    backend: Backend
    ledger: CostLedger | None = None
    phase: str = "evaluation"
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: int = 0

    def __call__(self, prompt: str, seed_offset: int = 0) -> Completion:
        req = LmRequest(self.model_id, prompt, self.temperature, self.max_tokens, self.seed + seed_offset)
        completion = self.backend.complete(req)
        if self.ledger is not None:
            self.ledger.record(self.phase, self.model_id, completion.usage)
        if not completion.model_id:
            completion = replace(completion, model_id=self.model_id)
        return completion

    def with_phase(self, phase: str) -> LM:
        return replace(self, phase=phase)

    def with_model(self, model_id: str) -> LM:
        return replace(self, model_id=model_id)

    def with_seed(self, seed: int) -> LM:
        return replace(self, seed=seed)
