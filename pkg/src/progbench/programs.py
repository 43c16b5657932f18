"""Language-program architectures built from signature-bound predictors.

Every architecture makes a fixed, assertable number of LM calls:

===========================  ==========================
predict / cot / rag          1
gen_critic_ranker / fuser    2 * n_candidates + 1
simplified_baleen(_w_inst)   hops
multihop_summarize           hops
rag_based_rank               2
cot_based_vote               voters + 1
react                        <= max_steps
===========================  ==========================

Programs are immutable; optimizers derive new ones with
:meth:`Program.with_predictors` / :meth:`Program.load_state`.
"""

from __future__ import annotations

import copy
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Callable, ClassVar, Mapping

from .core import Example, Prediction, Signature, Trace, TraceStep, parse_completion, render_prompt
from .lm import LM
from .retrieval import Corpus, RetrievalError, retrieve_texts, search, tokenize

Tool = Callable[[str], str]
ToolSet = Mapping[str, Tool]


class ProgramConfigError(ValueError):
    """Bad architecture parameters or a missing resource (corpus, tools)."""


@dataclass(frozen=True)
class Predictor:
    name: str
    signature: Signature
    demos: tuple[Example, ...] = ()
    rules: tuple[str, ...] = ()
    instruction_override: str | None = None

    @property
    def instruction(self) -> str:
        return self.signature.instruction if self.instruction_override is None else self.instruction_override

    def render(self, inputs: Mapping[str, str]) -> str:
        return render_prompt(self.signature, self.demos, inputs, self.rules, instruction=self.instruction)

    def __call__(self, lm: LM, inputs: Mapping[str, str], trace: Trace, seed_offset: int = 0) -> Prediction:
        inputs = {name: str(inputs[name]) for name in self.signature.input_names if name in inputs}
        prompt = self.render(inputs)
        completion = lm(prompt, seed_offset=seed_offset)
        parsed = parse_completion(self.signature, completion.text)
        prediction = replace(parsed, usage=completion.usage)
        trace.append(TraceStep(self.name, inputs, prompt, prediction, completion.model_id or lm.model_id))
        return prediction


@dataclass
class ProgramOutput:
    outputs: dict[str, str]
    trace: Trace
    parse_ok: bool = True
    incidents: list[str] = field(default_factory=list)

    @property
    def lm_calls(self) -> int:
        return len(self.trace)


def _cot(sig: Signature, name: str | None = None) -> Signature:
    return sig.with_outputs([("reasoning", "think step by step before answering")], name=name)


def _format_candidates(cands: list[str], critiques: list[str] | None = None) -> str:
    lines = []
    for i, cand in enumerate(cands, 1):
        lines.append(f"[{i}] {cand}")
        if critiques is not None:
            lines.append(f"    critique: {critiques[i - 1]}")
    return "\n".join(lines)


def _format_passages(passages: list[str]) -> str:
    return "\n".join(f"[{i}] {p}" for i, p in enumerate(passages, 1)) if passages else "(none)"


def parse_permutation(text: str, n: int) -> list[int] | None:
    """Parse ``"2,1,3"`` into zero-based indices; None unless a permutation of 1..n."""
    nums = [int(x) for x in re.findall(r"\d+", text)]
    if sorted(nums) != list(range(1, n + 1)):
        return None
    return [x - 1 for x in nums]


class Program:
    """Base class; subclasses define predictors and :meth:`forward`."""

    program_id: ClassVar[str] = "program"
    requires: ClassVar[frozenset[str]] = frozenset()
    param_defaults: ClassVar[dict[str, Any]] = {}

    def __init__(self, task: Signature, corpus: Corpus | None = None,
                 tools: ToolSet | Callable[[], ToolSet] | None = None, **params: Any) -> None:
        unknown = set(params) - set(self.param_defaults)
        if unknown:
            raise ProgramConfigError(f"{self.program_id}: unknown parameters {sorted(unknown)}")
        if "corpus" in self.requires and corpus is None:
            raise ProgramConfigError(f"{self.program_id} needs a retrieval corpus")
        if "tools" in self.requires and tools is None:
            raise ProgramConfigError(f"{self.program_id} needs tools")
        self.task = task
        self.corpus = corpus
        self.tools = tools
        self.params = {**self.param_defaults, **params}
        for key in ("n_candidates", "hops", "voters", "max_steps", "k"):
            if key in self.params and (not isinstance(self.params[key], int) or self.params[key] < 1):
                raise ProgramConfigError(f"{self.program_id}: {key} must be an integer >= 1")
        self.predictors: dict[str, Predictor] = {p.name: p for p in self.build()}

    @property
    def answer_field(self) -> str:
        return self.task.output_names[0]

    def build(self) -> list[Predictor]:
        raise NotImplementedError

    def forward(self, inputs: Mapping[str, str], lm: LM, trace: Trace) -> ProgramOutput:
        raise NotImplementedError

    def __call__(self, inputs: Mapping[str, str], lm: LM) -> ProgramOutput:
        missing = [n for n in self.task.input_names if n not in inputs]
        if missing:
            raise ValueError(f"missing program input {missing[0]!r}")
        return self.forward(inputs, lm, Trace())

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.params})"

    # optimizers rebuild programs through these two methods only
    def with_predictors(self, updates: Mapping[str, Predictor]) -> Program:
        unknown = set(updates) - set(self.predictors)
        if unknown:
            raise KeyError(f"unknown predictors {sorted(unknown)}")
        clone = copy.copy(self)
        clone.predictors = {**self.predictors, **updates}
        return clone

    def state(self) -> dict[str, Any]:
        return {
            name: {
                "instruction": p.instruction,
                "instruction_override": p.instruction_override,
                "rules": list(p.rules),
                "demos": [d.to_dict() for d in p.demos],
            }
            for name, p in self.predictors.items()
        }

    def load_state(self, state: Mapping[str, Mapping[str, Any]]) -> Program:
        updates = {}
        for name, s in state.items():
            if name not in self.predictors:
                raise KeyError(f"state for unknown predictor {name!r}")
            updates[name] = replace(
                self.predictors[name],
                instruction_override=s.get("instruction_override"),
                rules=tuple(s.get("rules", ())),
                demos=tuple(Example.from_dict(d) for d in s.get("demos", ())),
            )
        return self.with_predictors(updates)

    def reset(self) -> Program:
        """The same architecture with every demo, rule and override removed."""
        return self.with_predictors({n: replace(p, demos=(), rules=(), instruction_override=None)
                                     for n, p in self.predictors.items()})

    def _task_inputs(self, inputs: Mapping[str, str]) -> dict[str, str]:
        return {n: str(inputs[n]) for n in self.task.input_names}

    def _query(self, inputs: Mapping[str, str]) -> str:
        return str(inputs[self.params.get("query_field") or self.task.input_names[0]])

    def _retrieve(self, query: str, k: int) -> list[str]:
        assert self.corpus is not None
        return retrieve_texts(self.corpus, query, k)


class Predict(Program):
    program_id = "predict"

    def build(self) -> list[Predictor]:
        return [Predictor("predict", self.task)]

    def forward(self, inputs, lm, trace):
        pred = self.predictors["predict"](lm, self._task_inputs(inputs), trace)
        return ProgramOutput(dict(pred.outputs), trace, pred.parse_ok)


class ChainOfThought(Program):
    program_id = "cot"

    def build(self) -> list[Predictor]:
        return [Predictor("cot", _cot(self.task))]

    def forward(self, inputs, lm, trace):
        pred = self.predictors["cot"](lm, self._task_inputs(inputs), trace)
        return ProgramOutput(dict(pred.outputs), trace, pred.parse_ok)


class _GeneratorCritic(Program):
    param_defaults = {"n_candidates": 5}

    def _critic_sig(self) -> Signature:
        return Signature("critic", "Identify the strengths and weaknesses of the candidate response.",
                         self.task.input_fields + (("candidate", "a candidate response"),),
                         [("critique", "strengths and weaknesses of the candidate")])

    def _candidate_text(self, pred: Prediction) -> str:
        if not pred.parse_ok:
            return "(unparseable response)"
        if len(self.task.output_fields) == 1:
            return pred.outputs[self.answer_field]
        return " | ".join(f"{n}={pred.outputs[n]}" for n in self.task.output_names)

    def _generate_and_critique(self, inputs, lm, trace):
        task_inputs = self._task_inputs(inputs)
        n = self.params["n_candidates"]
        gens = [self.predictors["generate"](lm, task_inputs, trace, seed_offset=i) for i in range(n)]
        texts = [self._candidate_text(g) for g in gens]
        critiques = []
        for i, text in enumerate(texts):
            crit = self.predictors["critic"](lm, {**task_inputs, "candidate": text}, trace, seed_offset=i)
            critiques.append(crit.outputs.get("critique", "") if crit.parse_ok else "(no critique)")
        return task_inputs, gens, texts, critiques


class GeneratorCriticRanker(_GeneratorCritic):
    program_id = "gen_critic_ranker"

    def build(self) -> list[Predictor]:
        ranker = Signature(
            "ranker", "Rank the candidate responses from best to worst using their critiques.",
            self.task.input_fields + (("candidates", "numbered candidates with critiques"),),
            [("ranking", "comma-separated candidate numbers, best first")])
        return [Predictor("generate", self.task), Predictor("critic", self._critic_sig()), Predictor("ranker", ranker)]

    def forward(self, inputs, lm, trace):
        task_inputs, gens, texts, critiques = self._generate_and_critique(inputs, lm, trace)
        ranked = self.predictors["ranker"](lm, {**task_inputs, "candidates": _format_candidates(texts, critiques)},
                                           trace)
        incidents = []
        order = parse_permutation(ranked.outputs.get("ranking", ""), len(gens)) if ranked.parse_ok else None
        if order is None:
            incidents.append(f"ranker output {ranked.raw_completion!r} is not a permutation; using generation order")
            order = list(range(len(gens)))
        best = gens[order[0]]
        outputs = dict(best.outputs)
        outputs["ranking"] = ",".join(str(i + 1) for i in order)
        return ProgramOutput(outputs, trace, best.parse_ok, incidents)


class GeneratorCriticFuser(_GeneratorCritic):
    program_id = "gen_critic_fuser"

    def build(self) -> list[Predictor]:
        fuser = Signature(
            "fuser", self.task.instruction + "\nCombine the candidate responses and their critiques into a single, "
            "high-quality response.",
            self.task.input_fields + (("candidates", "numbered candidates with critiques"),),
            self.task.output_fields)
        return [Predictor("generate", self.task), Predictor("critic", self._critic_sig()), Predictor("fuser", fuser)]

    def forward(self, inputs, lm, trace):
        task_inputs, _, texts, critiques = self._generate_and_critique(inputs, lm, trace)
        fused = self.predictors["fuser"](lm, {**task_inputs, "candidates": _format_candidates(texts, critiques)},
                                         trace)
        return ProgramOutput(dict(fused.outputs), trace, fused.parse_ok)


def _with_context(sig: Signature) -> Signature:
    return sig.with_inputs(prepend=[("context", "retrieved passages")])


class RAG(Program):
    program_id = "rag"
    requires = frozenset({"corpus"})
    param_defaults = {"k": 3, "query_field": None}

    def build(self) -> list[Predictor]:
        return [Predictor("generate_answer", _cot(_with_context(self.task), name="generate_answer"))]

    def forward(self, inputs, lm, trace):
        passages = self._retrieve(self._query(inputs), self.params["k"])
        pred = self.predictors["generate_answer"](
            lm, {"context": _format_passages(passages), **self._task_inputs(inputs)}, trace)
        return ProgramOutput(dict(pred.outputs), trace, pred.parse_ok)


class SimplifiedBaleen(Program):
    """Multi-hop RAG: hop 1 retrieves with the raw question, each later hop
    spends one call writing a new query, and one final call answers."""

    program_id = "simplified_baleen"
    requires = frozenset({"corpus"})
    param_defaults = {"hops": 2, "k": 3, "query_field": None}

    def build(self) -> list[Predictor]:
        query_sig = Signature("generate_query", "Write a search query that finds information still missing "
                              "for answering the question.",
                              _with_context(self.task).input_fields, [("query", "a search query")])
        return [Predictor("generate_query", query_sig),
                Predictor("generate_answer", _cot(_with_context(self.task), name="generate_answer"))]

    def forward(self, inputs, lm, trace):
        task_inputs = self._task_inputs(inputs)
        question = self._query(inputs)
        k = self.params["k"]
        passages = self._retrieve(question, k)
        incidents = []
        for _ in range(2, self.params["hops"] + 1):
            q = self.predictors["generate_query"](lm, {"context": _format_passages(passages), **task_inputs}, trace)
            query = q.outputs.get("query", "") if q.parse_ok else ""
            if not tokenize(query):
                incidents.append("generated query empty; reusing the question")
                query = question
            passages += [p for p in self._retrieve(query, k) if p not in passages]
        pred = self.predictors["generate_answer"](lm, {"context": _format_passages(passages), **task_inputs}, trace)
        outputs = dict(pred.outputs)
        return ProgramOutput(outputs, trace, pred.parse_ok, incidents)


CONDITIONAL_FORMAT_INSTRUCTION = (
    "When the answer is a person, respond entirely in lowercase.  When the answer is a place, ensure your "
    "response contains no punctuation.  When the answer is a date, end your response with “Peace!”. "
    "Never end your response with \"Peace!\" under other circumstances.  When the answer is none of the above "
    "categories respond in all caps."
)


class SimplifiedBaleenWithInst(SimplifiedBaleen):
    program_id = "simplified_baleen_with_inst"

    def build(self) -> list[Predictor]:
        query, answer = super().build()
        return [query, replace(answer, instruction_override=CONDITIONAL_FORMAT_INSTRUCTION)]

    def reset(self) -> Program:
        base = super().reset()
        answer = base.predictors["generate_answer"]
        return base.with_predictors({"generate_answer": replace(
            answer, instruction_override=CONDITIONAL_FORMAT_INSTRUCTION)})


class MultiHopSummarize(Program):
    """Each hop retrieves, then one call summarizes and proposes the next query.

    Output ``retrieved`` is every retrieved passage, in retrieval order,
    joined by blank lines.
    """

    program_id = "multihop_summarize"
    requires = frozenset({"corpus"})
    param_defaults = {"hops": 7, "k": 3, "query_field": None}

    def build(self) -> list[Predictor]:
        sig = Signature("summarize", "Summarize the passages relevant to the claim and write a refined search "
                        "query for information still missing.",
                        self.task.input_fields + (("previous_summary", "summary so far"),
                                                  ("passages", "retrieved passages")),
                        [("summary", "updated summary"), ("next_query", "refined search query")])
        return [Predictor("summarize", sig)]

    def forward(self, inputs, lm, trace):
        task_inputs = self._task_inputs(inputs)
        claim = self._query(inputs)
        query, summary = claim, ""
        retrieved: list[str] = []
        incidents = []
        for _ in range(self.params["hops"]):
            hop = self._retrieve(query, self.params["k"])
            retrieved += [p for p in hop if p not in retrieved]
            pred = self.predictors["summarize"](
                lm, {**task_inputs, "previous_summary": summary, "passages": _format_passages(hop)}, trace)
            if pred.parse_ok:
                summary = pred.outputs["summary"]
                query = pred.outputs["next_query"]
            if not tokenize(query):
                incidents.append("refined query empty; reusing the claim")
                query = claim
        return ProgramOutput({"retrieved": "\n\n".join(retrieved), "summary": summary}, trace, True, incidents)


class RAGBasedRank(Program):
    """Query generation, label retrieval, then one LM re-rank of the retrieved labels.

    The corpus holds candidate labels; the answer field is the ranked label
    list, newline separated.
    """

    program_id = "rag_based_rank"
    requires = frozenset({"corpus"})
    param_defaults = {"k": 10}

    def build(self) -> list[Predictor]:
        query_sig = Signature("generate_query", "Write a retrieval query describing the labels that apply.",
                              self.task.input_fields, [("query", "a search query")])
        rerank_sig = Signature("rerank", "Rank the candidate labels by how well they apply, most relevant first.",
                               self.task.input_fields + (("options", "numbered candidate labels"),),
                               [("ranking", "comma-separated option numbers, best first")])
        return [Predictor("generate_query", query_sig), Predictor("rerank", rerank_sig)]

    def forward(self, inputs, lm, trace):
        task_inputs = self._task_inputs(inputs)
        q = self.predictors["generate_query"](lm, task_inputs, trace)
        incidents = []
        query = q.outputs.get("query", "") if q.parse_ok else ""
        if not tokenize(query):
            incidents.append("generated query empty; using the raw input")
            query = " ".join(task_inputs.values())
        try:
            labels = [self.corpus.text(doc_id) for doc_id, _ in search(self.corpus, query, self.params["k"])]
        except RetrievalError:
            labels = [text for _, text in self.corpus.docs[:self.params["k"]]]
        ranked = self.predictors["rerank"](lm, {**task_inputs, "options": _format_candidates(labels)}, trace)
        order = parse_permutation(ranked.outputs.get("ranking", ""), len(labels)) if ranked.parse_ok else None
        if order is None:
            incidents.append("re-rank output is not a permutation; using retriever order")
            order = list(range(len(labels)))
        return ProgramOutput({self.answer_field: "\n".join(labels[i] for i in order)}, trace, True, incidents)


def majority_vote(answers: list[str]) -> str:
    """Most common answer; ties go to the answer given by the earliest voter."""
    counts = Counter(answers)
    best = max(counts.values())
    return next(a for a in answers if counts[a] == best)


class CoTBasedVote(Program):
    program_id = "cot_based_vote"
    param_defaults = {"voters": 3}

    def build(self) -> list[Predictor]:
        consolidate = Signature(
            "consolidate", self.task.instruction + "\nCritically assess the votes below and give the final answer.",
            self.task.input_fields + (("votes", "independent reasoned predictions"),),
            (("reasoning", "assessment of the votes"),) + self.task.output_fields)
        return [Predictor("vote", _cot(self.task, name="vote")), Predictor("consolidate", consolidate)]

    def forward(self, inputs, lm, trace):
        task_inputs = self._task_inputs(inputs)
        votes = [self.predictors["vote"](lm, task_inputs, trace, seed_offset=i) for i in range(self.params["voters"])]
        lines = []
        for i, v in enumerate(votes, 1):
            if v.parse_ok:
                lines.append(f"[{i}] reasoning: {v.outputs['reasoning']} ; answer: {v.outputs[self.answer_field]}")
            else:
                lines.append(f"[{i}] (unparseable vote)")
        final = self.predictors["consolidate"](lm, {**task_inputs, "votes": "\n".join(lines)}, trace)
        if final.parse_ok:
            return ProgramOutput(dict(final.outputs), trace, True)
        valid = [v for v in votes if v.parse_ok]
        if not valid:
            return ProgramOutput({}, trace, False, ["consolidation and all votes unparseable"])
        answer = majority_vote([v.outputs[self.answer_field] for v in valid])
        winner = next(v for v in valid if v.outputs[self.answer_field] == answer)
        return ProgramOutput(dict(winner.outputs), trace, True, ["consolidation unparseable; majority vote used"])


_ACTION = re.compile(r"^\s*([A-Za-z_][\w\-]*)\[(.*)\]\s*$", re.DOTALL)


def parse_action(text: str) -> tuple[str, str] | None:
    m = _ACTION.match(text or "")
    return (m.group(1), m.group(2)) if m else None


class ReAct(Program):
    """Thought/Action/Observation loop; actions are ``tool[arg]`` or ``finish[answer]``."""

    program_id = "react"
    requires = frozenset({"tools"})
    param_defaults = {"max_steps": 40}

    def build(self) -> list[Predictor]:
        sig = Signature(
            "react", self.task.instruction + "\nThink, then act. Reply with a Thought and an Action of the "
            "form tool[argument]; use finish[answer] when done.",
            self.task.input_fields + (("trajectory", "previous thoughts, actions and observations"),),
            [("thought", "reasoning about the next step"), ("action", "tool[argument] or finish[answer]")])
        return [Predictor("react", sig)]

    def _toolset(self) -> ToolSet:
        tools = self.tools() if callable(self.tools) else self.tools
        return dict(tools or {})

    def forward(self, inputs, lm, trace):
        task_inputs = self._task_inputs(inputs)
        tools = self._toolset()
        steps: list[str] = []
        observation = ""
        for step in range(1, self.params["max_steps"] + 1):
            trajectory = "\n".join(steps) if steps else "(empty)"
            pred = self.predictors["react"](lm, {**task_inputs, "trajectory": trajectory}, trace, seed_offset=step - 1)
            action = parse_action(pred.outputs.get("action", "")) if pred.parse_ok else None
            if action is None:
                observation = "Error: could not parse an action of the form tool[argument]"
            elif action[0] == "finish":
                return ProgramOutput({self.answer_field: action[1].strip(), "observation": observation}, trace, True)
            elif action[0] not in tools:
                observation = f"Error: unknown tool {action[0]!r}; available: {', '.join(sorted(tools)) or 'none'}"
            else:
                try:
                    observation = str(tools[action[0]](action[1]))
                except Exception as exc:  # tool failures are observations, not crashes
                    observation = f"Error: {type(exc).__name__}: {exc}"
            steps.append(f"Step {step} thought: {pred.outputs.get('thought', '')}\n"
                         f"Step {step} action: {pred.outputs.get('action', pred.raw_completion.strip())}\n"
                         f"Step {step} observation: {observation}")
        return ProgramOutput({"observation": observation}, trace, False, ["max_steps reached without finish"])


class CounterEnv:
    """Toy tool environment: an integer counter."""

    def __init__(self) -> None:
        self.value = 0

    def incr(self, arg: str = "") -> str:
        self.value += int(arg) if arg.strip() else 1
        return str(self.value)

    def get(self, arg: str = "") -> str:
        return str(self.value)

    def tools(self) -> dict[str, Tool]:
        return {"incr": self.incr, "get": self.get}


ENVIRONMENTS: dict[str, Callable[[], ToolSet]] = {"counter": lambda: CounterEnv().tools()}

PROGRAMS: dict[str, type[Program]] = {
    "baseline": Predict,
    "predict": Predict,
    "cot": ChainOfThought,
    "gen_critic_ranker": GeneratorCriticRanker,
    "gen_critic_fuser": GeneratorCriticFuser,
    "rag": RAG,
    "simplified_baleen": SimplifiedBaleen,
    "simplified_baleen_with_inst": SimplifiedBaleenWithInst,
    "multihop_summarize": MultiHopSummarize,
    "rag_based_rank": RAGBasedRank,
    "cot_based_vote": CoTBasedVote,
    "react": ReAct,
}


def build_program(program_id: str, task: Signature, params: Mapping[str, Any] | None = None,
                  corpus: Corpus | None = None, tools: ToolSet | Callable[[], ToolSet] | None = None) -> Program:
    try:
        cls = PROGRAMS[program_id]
    except KeyError:
        raise ProgramConfigError(f"unknown program {program_id!r}; known: {', '.join(PROGRAMS)}") from None
    return cls(task, corpus=corpus, tools=tools, **dict(params or {}))
