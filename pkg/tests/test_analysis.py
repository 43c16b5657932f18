import random
from decimal import Decimal
from fractions import Fraction

import pytest

from progbench.analysis import (ParetoPoint, aggregate, emit_plot_data, gain_percentiles, gain_samples, group_of,
                                interpolate, mixture, mixture_weight, optimizer_ranking, pareto_front,
                                rank_groups, relative_gain, GainSample)

from conftest import hull_oracle
from records_fixture import EIGHT, EIGHT_PERCENTILES, EIGHT_RANKING, record


def pts(*pairs):
    return [ParetoPoint(c, s) for c, s in pairs]


def coords(front):
    return [(p.cost, p.score) for p in front]


@pytest.mark.parametrize("inp,expected", [
    ([(1, 0.5)], [(1, 0.5)]),
    ([(1, 0.5), (2, 0.7), (3, 0.6)], [(1, 0.5), (2, 0.7)]),
    ([(1, 0.2), (2, 0.3), (3, 0.9)], [(1, 0.2), (3, 0.9)]),
])
def test_front_examples(inp, expected):
    assert coords(pareto_front(pts(*inp))) == expected


def test_front_handles_zero_cost_and_duplicates():
    front = pareto_front(pts((0, 0.1), (0, 0.3), (1, 0.3), (2, 0.8)))
    assert coords(front) == [(0, 0.3), (2, 0.8)]


def test_collinear_middle_dropped():
    assert coords(pareto_front(pts((1, 1), (2, 2), (3, 3)))) == [(1, 1), (3, 3)]


def test_front_empty():
    with pytest.raises(ValueError):
        pareto_front([])


def test_front_matches_oracle_random():
    rng = random.Random(1)
    for _ in range(200):
        ps = [(rng.randint(0, 20), rng.randint(0, 20)) for _ in range(rng.randint(1, 10))]
        assert set(coords(pareto_front(pts(*ps)))) == hull_oracle(ps)


def test_mixture():
    a, b = ParetoPoint(1, 0.2), ParetoPoint(3, 0.9)
    assert mixture(a, b, 2) == pytest.approx(0.55)
    assert mixture(a, b, 1) == 0.2 and mixture(a, b, 3) == 0.9
    assert mixture_weight(a, b, 2) == 0.5
    with pytest.raises(ValueError):
        mixture(a, b, 4)
    with pytest.raises(ValueError):
        mixture(b, a, 2)


def test_interpolate_on_front():
    front = pareto_front(pts((1, 0.2), (3, 0.9), (5, 1.0)))
    assert interpolate(front, 2) == Fraction(0.2) + Fraction(1, 2) * (Fraction(0.9) - Fraction(0.2))
    assert interpolate(front, 10) == Fraction(1.0)


def test_aggregate():
    recs = [record("m", "cot", "none", 80.0, "1.000000", dataset="x"),
            record("m", "cot", "none", 60.0, "2.000000", dataset="y"),
            record("m", "rag", "none", 10.0, "1.000000", dataset="x")]
    out = aggregate(recs)
    assert list(out) == [("m", "cot", "none")]
    p = out[("m", "cot", "none")]
    assert (p.cost, p.score) == (Decimal(3), 70.0)
    single = aggregate(recs[:1])[("m", "cot", "none")]
    assert (single.cost, single.score) == (Decimal(1), 80.0)


def test_aggregate_ignores_failed():
    with pytest.raises(ValueError):
        aggregate([record("m", "cot", "none", 1.0, status="failed")])


@pytest.mark.parametrize("base,opt,expected", [(26.32, 76.32, 189.97), (50, 50, 0), (40, 30, -25)])
def test_relative_gain(base, opt, expected):
    assert relative_gain(base, opt) == pytest.approx(expected, abs=0.01)


def test_relative_gain_zero_baseline():
    assert relative_gain(0, 10) is None


def _samples(gains):
    return [GainSample("o", g, ("d", "p", str(i))) for i, g in enumerate(gains)]


def test_percentiles():
    assert gain_percentiles(_samples([80, -10, 10, 0, 5]))["o"] == (-10, 5, 80)
    assert gain_percentiles(_samples([7]))["o"] == (7, 7, 7)
    assert gain_percentiles(_samples([3, 1]))["o"] == (1, 1, 3)
    with pytest.raises(ValueError):
        gain_percentiles([])


def test_rank_groups():
    assert rank_groups([{"A": 0.80, "B": 0.785, "C": 0.70}]) == {"A": (1, 1), "B": (0, 1), "C": (0, 0)}
    assert rank_groups([{"A": 0.5, "B": 0.5}]) == {"A": (1, 1), "B": (1, 1)}
    assert rank_groups([{"A": 0.1}, {}]) == {"A": (1, 1)}


def test_eight_record_fixture():
    assert optimizer_ranking(EIGHT) == EIGHT_RANKING
    assert gain_percentiles(gain_samples(EIGHT)) == pytest.approx(EIGHT_PERCENTILES)


def test_groups():
    assert group_of("baseline", "none") == "Model"
    assert group_of("cot", "none") == "Model+Program"
    assert group_of("baseline", "mipro") == "Model+Optimizer"
    assert group_of("cot", "mipro") == "Model+Program+Optimizer"


def test_emit_plot_data(tmp_path):
    recs = [record("m", "baseline", "none", 10.0, "1.000000"), record("m2", "baseline", "none", 30.0, "2.000000"),
            record("m3", "baseline", "none", 35.0, "4.000000")] + EIGHT
    a = emit_plot_data(recs, tmp_path / "a")
    b = emit_plot_data(recs, tmp_path / "b")
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    names = {p.name for p in a}
    assert "front_model.csv" in names and "front_model_optimizer.csv" not in names
    rows = (tmp_path / "a" / "front_model.csv").read_text().splitlines()
    assert len(rows) == 4  # header + three hull points: slopes 20, 2.5 decreasing
    assert (tmp_path / "a" / "points.csv").read_text().splitlines()[0] == "config_id,group,cost,score"
