import pytest
from hypothesis import given, strategies as st

from progbench.core import Example, Trace
from progbench.lm import ScriptedLM
from progbench.metrics import (exact_match, extract_boxed, get_metric, numeric_match, rank_precision,
                               semantic_f1)
from progbench.programs import ProgramOutput

from conftest import make_lm
from metric_cases import CASES, JUDGE_CASES


@pytest.mark.parametrize("name,fn,expected", CASES, ids=[c[0] for c in CASES])
def test_worked_examples(name, fn, expected):
    assert fn().score == expected


@pytest.mark.parametrize("completion,expected", JUDGE_CASES)
def test_semantic_f1(completion, expected):
    backend = ScriptedLM(default=completion)
    res = semantic_f1("pred", "gold", make_lm(backend), question="q")
    assert res.score == pytest.approx(expected, abs=1e-6)
    assert backend.calls == 1


def test_semantic_f1_unparseable():
    res = semantic_f1("p", "g", make_lm(ScriptedLM(default="whatever")))
    assert res.score == 0.0 and "unparseable" in res.detail


def test_boxed_extraction():
    assert extract_boxed(r"\boxed{\frac{1}{2}}") == r"\frac{1}{2}"
    assert extract_boxed(r"\boxed{1} then \boxed{2}") == "2"
    assert extract_boxed(r"\boxed{unclosed") is None


def test_gold_boxed_is_extracted():
    assert extract_boxed(r"ans \boxed{ 3 / 4 }") == " 3 / 4 "
    assert numeric_match("1.50", "1.5").score == 1.0


def test_rank_precision_empty_gold():
    with pytest.raises(ValueError):
        rank_precision(["a"], set())


@given(st.text())
def test_exact_match_reflexive(s):
    assert exact_match(s, s).score == 1.0


def _out(outputs, ok=True):
    return ProgramOutput(outputs, Trace(), ok)


def test_metric_binding():
    m = get_metric("exact_match")
    ex = Example({"question": "q", "answer": "Paris"})
    assert m(ex, _out({"answer": "paris"})).score == 1.0
    assert m(ex, _out({}, ok=False)).score == 0.0


def test_rank_precision_binding_newline_lists():
    m = get_metric("rank_precision")
    assert not m.binary
    ex = Example({"text": "t", "answer": "a\nb"})
    assert m(ex, _out({"answer": "a\nc\nb"})).score == 0.5


def test_hover_binding_reads_json():
    m = get_metric("hover_retrieval", field="supporting")
    ex = Example({"claim": "c", "supporting": '{"A": ["f1"]}'})
    assert m(ex, _out({"retrieved": "... f1 ..."})).score == 1.0


def test_judge_binding_needs_lm():
    m = get_metric("semantic_f1")
    ex = Example({"question": "q", "answer": "a"})
    with pytest.raises(ValueError):
        m(ex, _out({"answer": "a"}))
    assert m(ex, _out({"answer": "a"}), make_lm(ScriptedLM(default="Precision: 1\nRecall: 1"))).score == 1.0


def test_unknown_metric():
    with pytest.raises(KeyError):
        get_metric("bleu")
