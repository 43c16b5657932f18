from __future__ import annotations

import json
import math
import re
from collections import Counter
from pathlib import Path

import pytest

from progbench.core import Signature
from progbench.lm import LM, CostLedger


QA = Signature("qa", "Answer the question.", [("question", "a question")], [("answer", "short answer")])


@pytest.fixture
def qa_sig() -> Signature:
    return QA


def make_lm(backend, model_id: str = "mock", ledger: CostLedger | None = None, **kw) -> LM:
    return LM(model_id, backend, ledger, **kw)


# --- independent oracles -------------------------------------------------------


def bm25_oracle(docs: list[tuple[str, str]], query: str, k1: float = 1.5, b: float = 0.75) -> dict[str, float]:
    """Brute-force BM25 straight from the formula, without an inverted index."""
    tok = lambda s: re.findall(r"[a-z0-9]+", s.lower())  # noqa: E731
    toks = {doc_id: tok(text) for doc_id, text in docs}
    n = len(docs)
    avgdl = sum(len(t) for t in toks.values()) / n or 1.0
    scores = {}
    for doc_id, words in toks.items():
        tf = Counter(words)
        s = 0.0
        for q in tok(query):
            df = sum(1 for w in toks.values() if q in w)
            if tf[q] == 0:
                continue
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            s += idf * tf[q] * (k1 + 1) / (tf[q] + k1 * (1 - b + b * len(words) / avgdl))
        scores[doc_id] = s
    return scores


def hull_oracle(pts: list[tuple[float, float]]) -> set[tuple[float, float]]:
    """O(n^2)/O(n^3) brute force: non-dominated points not on or under any chord of two others."""
    from fractions import Fraction as F
    uniq = sorted(set(pts))
    nd = [p for p in uniq if not any(
        (q[0] <= p[0] and q[1] >= p[1]) and (q[0] < p[0] or q[1] > p[1]) for q in uniq)]
    keep = set()
    for p in nd:
        under = False
        for a in nd:
            for c in nd:
                if a[0] < p[0] < c[0]:
                    chord = F(a[1]) + (F(p[0]) - F(a[0])) * (F(c[1]) - F(a[1])) / (F(c[0]) - F(a[0]))
                    if F(p[1]) <= chord:
                        under = True
        if not under:
            keep.add(p)
    return keep


def write_jsonl(path: Path, rows) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


# --- acceptance report -----------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
