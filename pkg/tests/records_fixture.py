"""Hand-built run records for the ranking and percentile statistics."""

from progbench.harness import RunRecord


def record(model, program, optimizer, score, cost="1.000000", dataset="d", status="ok"):
    config = {"model": model, "program": {"id": program, "params": {}, "label": program},
              "optimizer": {"id": optimizer, "config": {}, "label": optimizer},
              "dataset": {"name": dataset}, "seed": 0}
    return RunRecord(f"{model}-{program}-{optimizer}-{dataset}", config, status,
                     aggregate=score if status == "ok" else None, inference_cost=cost)


# two (dataset, program, model) groups, four optimizer settings each
EIGHT = [
    record("A", "cot", "none", 50.0), record("A", "cot", "bootstrap_fewshot", 60.0),
    record("A", "cot", "mipro", 62.0), record("A", "cot", "rule_infer", 61.0),
    record("B", "cot", "none", 40.0), record("B", "cot", "bootstrap_fewshot", 80.0),
    record("B", "cot", "mipro", 78.0), record("B", "cot", "rule_infer", 70.0),
]

# A: best 62, cutoff 60.14 -> mipro, rule_infer within; B: best 80, cutoff 77.6 -> bootstrap, mipro
EIGHT_RANKING = {"bootstrap_fewshot": (1, 1), "mipro": (1, 2), "rule_infer": (0, 1)}
# gains A: 20, 24, 22; B: 100, 95, 75. With n=2, nearest rank gives p10 = median = lower, p90 = upper.
EIGHT_PERCENTILES = {"bootstrap_fewshot": (20.0, 20.0, 100.0), "mipro": (24.0, 24.0, 95.0),
                     "rule_infer": (22.0, 22.0, 75.0)}
