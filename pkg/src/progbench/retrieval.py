"""In-memory BM25 index (k1=1.5, b=0.75, idf = ln(1 + (N - df + 0.5) / (df + 0.5)))."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

K1 = 1.5
B = 0.75

_TOKEN = re.compile(r"[a-z0-9]+")


class RetrievalError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class Corpus:
    docs: tuple[tuple[str, str], ...]
    index: Mapping[str, tuple[tuple[int, int], ...]]  # term -> ((doc position, tf), ...)
    doc_lengths: tuple[int, ...]
    avg_doc_length: float

    def __len__(self) -> int:
        return len(self.docs)

    def text(self, doc_id: str) -> str:
        return dict(self.docs)[doc_id]

    def idf(self, term: str) -> float:
        n = len(self.docs)
        df = len(self.index.get(term, ()))
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))


def build_index(docs: Iterable[tuple[str, str]] | Mapping[str, str]) -> Corpus:
    items = tuple((str(i), str(t)) for i, t in (docs.items() if isinstance(docs, Mapping) else docs))
    if not items:
        raise RetrievalError("cannot index an empty corpus")
    ids = [doc_id for doc_id, _ in items]
    if len(set(ids)) != len(ids):
        raise RetrievalError("duplicate doc ids in corpus")
    postings: dict[str, list[tuple[int, int]]] = {}
    lengths = []
    for pos, (_, text) in enumerate(items):
        tokens = tokenize(text)
        lengths.append(len(tokens))
        for term, tf in sorted(Counter(tokens).items()):
            postings.setdefault(term, []).append((pos, tf))
    index = {term: tuple(p) for term, p in sorted(postings.items())}
    return Corpus(items, index, tuple(lengths), sum(lengths) / len(lengths))


def search(corpus: Corpus, query: str, k: int) -> list[tuple[str, float]]:
    """Top-``k`` (doc_id, score), score descending, ties by ascending doc_id.

    Every document is scored, so ``min(k, N)`` results come back even when
    some of them share no term with the query. Repeated query terms count
    once per occurrence.
    """
    if k < 1:
        raise RetrievalError("k must be >= 1")
    terms = tokenize(query)
    if not terms:
        raise RetrievalError(f"query {query!r} has no searchable terms")
    scores = [0.0] * len(corpus.docs)
    avgdl = corpus.avg_doc_length or 1.0
    for term in terms:
        plist = corpus.index.get(term)
        if not plist:
            continue
        idf = corpus.idf(term)
        for pos, tf in plist:
            norm = K1 * (1.0 - B + B * corpus.doc_lengths[pos] / avgdl)
            scores[pos] += idf * tf * (K1 + 1.0) / (tf + norm)
    ranked = sorted(((corpus.docs[pos][0], s) for pos, s in enumerate(scores)), key=lambda r: (-r[1], r[0]))
    return ranked[:k]


def retrieve_texts(corpus: Corpus, query: str, k: int) -> list[str]:
    lookup = dict(corpus.docs)
    return [lookup[doc_id] for doc_id, _ in search(corpus, query, k)]


def load_corpus(path: str | Path) -> Corpus:
    """Read a JSONL corpus of ``{"id": ..., "text": ...}`` lines."""
    docs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                docs.append((str(row["id"]), str(row["text"])))
            except (ValueError, KeyError) as exc:
                raise RetrievalError(f"{path}:{lineno}: malformed corpus line ({exc})") from exc
    return build_index(docs)
