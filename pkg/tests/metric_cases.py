"""Worked metric examples shared by the unit and acceptance suites."""

from progbench.metrics import boxed_match, exact_match, hover_retrieval, numeric_match, rank_precision

CASES = [
    ("exact casefold", lambda: exact_match("Paris", "paris"), 1.0),
    ("exact mismatch", lambda: exact_match("yes", "no"), 0.0),
    ("exact normalized", lambda: exact_match(" yes.", "yes"), 1.0),
    ("numeric last number", lambda: numeric_match("The answer is 42.", "42"), 1.0),
    ("numeric commas", lambda: numeric_match("total = 1,234", "1234"), 1.0),
    ("numeric none", lambda: numeric_match("no numbers here", "7"), 0.0),
    ("boxed equal", lambda: boxed_match(r"so \boxed{3/4}", "3/4"), 1.0),
    ("boxed string not numeric", lambda: boxed_match(r"so \boxed{0.75}", "3/4"), 0.0),
    ("boxed missing", lambda: boxed_match("no box", "1"), 0.0),
    ("rp half", lambda: rank_precision(["a", "c", "b"], {"a", "b"}), 0.5),
    ("rp one", lambda: rank_precision(["a"], {"a"}), 1.0),
    ("rp zero", lambda: rank_precision(["c", "d"], {"a", "b"}), 0.0),
    ("hover 2 of 2", lambda: hover_retrieval("x fact1 y fact2", {"A": ["fact1"], "B": ["zzz", "fact2"]}), 1.0),
    ("hover 1 of 2", lambda: hover_retrieval("x fact1 y", {"A": ["fact1"], "B": ["fact2"]}), 0.0),
    ("hover empty", lambda: hover_retrieval("", {"A": ["fact1"]}), 0.0),
]

JUDGE_CASES = [
    ("Precision: 1.0\nRecall: 1.0", 1.0),
    ("Precision: 1.0\nRecall: 0.5", 2 * 0.5 / 1.5),
    ("Precision: 0\nRecall: 0", 0.0),
]
