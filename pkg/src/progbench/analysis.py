"""Cost-quality fronts, randomized mixtures and optimizer statistics over run records.

Hull geometry is done in exact rational arithmetic on linear axes.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .harness import RunRecord

log = logging.getLogger(__name__)

GROUPS = ("Model", "Model+Program", "Model+Optimizer", "Model+Program+Optimizer")
BASELINE_PROGRAM = "baseline"
NO_OPTIMIZER = "none"


@dataclass(frozen=True)
class ParetoPoint:
    cost: Decimal | float | int
    score: float
    config_id: str = ""

    def __post_init__(self) -> None:
        if not (math.isfinite(float(self.cost)) and math.isfinite(float(self.score))):
            raise ValueError("pareto points must be finite")


@dataclass(frozen=True)
class GainSample:
    optimizer_id: str
    relative_gain: float
    key: tuple[str, str, str]  # (dataset, program, model)


def _q(x: Decimal | float | int) -> Fraction:
    return Fraction(x) if not isinstance(x, Decimal) else Fraction(x)


def _cross(o: ParetoPoint, a: ParetoPoint, b: ParetoPoint) -> Fraction:
    return (_q(a.cost) - _q(o.cost)) * (_q(b.score) - _q(o.score)) - \
        (_q(a.score) - _q(o.score)) * (_q(b.cost) - _q(o.cost))


def pareto_front(points: Iterable[ParetoPoint]) -> list[ParetoPoint]:
    """Upper-left convex hull: ascending cost, strictly increasing score, strictly concave.

    Equal-cost points collapse to the highest score (first one on exact ties).
    """
    pts = list(points)
    if not pts:
        raise ValueError("pareto_front needs at least one point")
    by_cost: dict[Fraction, ParetoPoint] = {}
    for p in pts:
        c = _q(p.cost)
        if c not in by_cost or _q(p.score) > _q(by_cost[c].score):
            by_cost[c] = p
    ordered = [by_cost[c] for c in sorted(by_cost)]
    rising = []
    for p in ordered:
        if not rising or _q(p.score) > _q(rising[-1].score):
            rising.append(p)
    hull: list[ParetoPoint] = []
    for p in rising:
        # pop while the last hull vertex is on or below the chord to p
        while len(hull) >= 2 and _cross(hull[-2], hull[-1], p) >= 0:
            hull.pop()
        hull.append(p)
    return hull


def interpolate(front: Sequence[ParetoPoint], cost: Decimal | float | int) -> Fraction:
    """Score achievable at ``cost`` by mixing adjacent front vertices; flat beyond the last vertex."""
    c = _q(cost)
    if c < _q(front[0].cost):
        raise ValueError("cost below the cheapest front vertex")
    for a, b in zip(front, front[1:]):
        if _q(a.cost) <= c <= _q(b.cost):
            return _mix(a, b, c)
    return _q(front[-1].score)


def _mix(a: ParetoPoint, b: ParetoPoint, budget: Fraction) -> Fraction:
    w = (budget - _q(a.cost)) / (_q(b.cost) - _q(a.cost))
    return _q(a.score) + w * (_q(b.score) - _q(a.score))


def mixture(a: ParetoPoint, b: ParetoPoint, budget: Decimal | float | int) -> float:
    """Expected score when spending ``budget`` on a randomized choice between ``a`` and ``b``."""
    if not _q(a.cost) < _q(b.cost):
        raise ValueError("mixture needs a.cost < b.cost")
    c = _q(budget)
    if not _q(a.cost) <= c <= _q(b.cost):
        raise ValueError(f"budget {budget} outside [{a.cost}, {b.cost}]")
    if c == _q(a.cost):
        return float(a.score)
    if c == _q(b.cost):
        return float(b.score)
    return float(_mix(a, b, c))


def mixture_weight(a: ParetoPoint, b: ParetoPoint, budget: Decimal | float | int) -> float:
    """Probability of running ``b`` under the mixture for ``budget``."""
    return float((_q(budget) - _q(a.cost)) / (_q(b.cost) - _q(a.cost)))


def group_of(program_id: str, optimizer_id: str) -> str:
    has_program = program_id != BASELINE_PROGRAM
    has_optimizer = optimizer_id != NO_OPTIMIZER
    return GROUPS[(1 if has_program else 0) + (2 if has_optimizer else 0)]


def _ok(records: Iterable[RunRecord]) -> list[RunRecord]:
    return [r for r in records if r.status == "ok" and r.aggregate is not None]


def aggregate(records: Iterable[RunRecord]) -> dict[tuple[str, str, str], ParetoPoint]:
    """One point per (model, program, optimizer) over every dataset in ``records``.

    Score is the unweighted mean of per-dataset aggregates, cost the sum of
    inference costs. Configs missing any dataset are dropped.
    """
    recs = _ok(records)
    if not recs:
        raise ValueError("aggregate needs at least one completed record")
    datasets = sorted({r.dataset for r in recs})
    by_config: dict[tuple[str, str, str], dict[str, RunRecord]] = defaultdict(dict)
    for r in recs:
        by_config[(r.model, r.program, r.optimizer)].setdefault(r.dataset, r)
    out = {}
    for key in sorted(by_config):
        per = by_config[key]
        missing = [d for d in datasets if d not in per]
        if missing:
            log.info("excluding %s from aggregate: no record for %s", "/".join(key), ", ".join(missing))
            continue
        score = math.fsum(per[d].aggregate for d in datasets) / len(datasets)
        cost = sum((Decimal(per[d].inference_cost) for d in datasets), Decimal("0"))
        out[key] = ParetoPoint(cost, score, "|".join(key))
    return out


def relative_gain(baseline_score: float, optimized_score: float) -> float | None:
    """Percent change over the baseline; None (missing) when the baseline is not positive."""
    if baseline_score <= 0:
        return None
    return 100.0 * (optimized_score - baseline_score) / baseline_score


def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    n = len(sorted_values)
    rank = max(1, math.ceil(pct * n / 100))
    return sorted_values[min(rank, n) - 1]


def gain_percentiles(samples: Iterable[GainSample]) -> dict[str, tuple[float, float, float]]:
    """(p10, median, p90) of relative gains per optimizer, nearest-rank."""
    by_opt: dict[str, list[float]] = defaultdict(list)
    for s in samples:
        by_opt[s.optimizer_id].append(s.relative_gain)
    if not by_opt:
        raise ValueError("gain_percentiles needs at least one sample")
    out = {}
    for opt in sorted(by_opt):
        vals = sorted(by_opt[opt])
        out[opt] = (nearest_rank(vals, 10), nearest_rank(vals, 50), nearest_rank(vals, 90))
    return out


def gain_samples(records: Iterable[RunRecord]) -> list[GainSample]:
    """Relative gain of each optimized record over the unoptimized run of the same (dataset, program, model)."""
    recs = _ok(records)
    base = {(r.dataset, r.program, r.model): r.aggregate for r in recs if r.optimizer_id == NO_OPTIMIZER}
    out = []
    for r in sorted(recs, key=lambda r: (r.dataset, r.program, r.model, r.optimizer)):
        if r.optimizer_id == NO_OPTIMIZER:
            continue
        key = (r.dataset, r.program, r.model)
        if key not in base:
            continue
        gain = relative_gain(base[key], r.aggregate)
        if gain is None:
            log.info("no relative gain for %s / %s: baseline score is 0", "/".join(key), r.optimizer)
            continue
        out.append(GainSample(r.optimizer, gain, key))
    return out


def optimizer_ranking(records: Iterable[RunRecord], tolerance: float = 0.03,
                      include_unoptimized: bool = False) -> dict[str, tuple[int, int]]:
    """Per optimizer: (groups where it is the top score, groups where it is within ``tolerance`` of top).

    Groups are (dataset, program, model); "within" is relative, score >= (1 - tolerance) * best.
    """
    groups: dict[tuple[str, str, str], dict[str, float]] = defaultdict(dict)
    for r in _ok(records):
        if r.optimizer_id == NO_OPTIMIZER and not include_unoptimized:
            continue
        groups[(r.dataset, r.program, r.model)][r.optimizer] = r.aggregate
    return rank_groups(groups.values(), tolerance)


def rank_groups(groups: Iterable[Mapping[str, float]], tolerance: float = 0.03) -> dict[str, tuple[int, int]]:
    top: dict[str, int] = defaultdict(int)
    within: dict[str, int] = defaultdict(int)
    keep = Fraction(1) - Fraction(str(tolerance))
    seen: set[str] = set()
    for scores in groups:
        if not scores:
            continue
        best = max(Fraction(s) for s in scores.values())
        for opt, s in scores.items():
            seen.add(opt)
            if Fraction(s) == best:
                top[opt] += 1
            if Fraction(s) >= keep * best:
                within[opt] += 1
    return {opt: (top[opt], within[opt]) for opt in sorted(seen)}


# --- CSV output --------------------------------------------------------------------


def slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def _csv(rows: Sequence[Sequence[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(x: object) -> str:
    if isinstance(x, float):
        return repr(round(x, 10))
    return str(x)


def emit_plot_data(records: Sequence[RunRecord], out: str | Path, tolerance: float = 0.03) -> list[Path]:
    """Write points.csv, front_<group>.csv, optimizer_rank.csv and gain_percentiles.csv.

    Points are per-config aggregates over all datasets present; row order
    is deterministic so reruns are byte-identical.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def write(name: str, rows: list[list[object]]) -> None:
        path = out / name
        path.write_text(_csv([[_fmt(c) for c in row] for row in rows]))
        written.append(path)

    recs = _ok(records)
    points = aggregate(recs) if recs else {}
    group_of_key = {}
    for r in recs:
        group_of_key[(r.model, r.program, r.optimizer)] = group_of(r.program_id, r.optimizer_id)
    rows: list[list[object]] = [["config_id", "group", "cost", "score"]]
    by_group: dict[str, list[ParetoPoint]] = defaultdict(list)
    for key, p in points.items():
        g = group_of_key[key]
        rows.append([p.config_id, g, p.cost, p.score])
        by_group[g].append(p)
    write("points.csv", rows)

    for g in GROUPS:
        if not by_group.get(g):
            log.info("no points for group %s; no front file", g)
            continue
        front = pareto_front(by_group[g])
        write(f"front_{slug(g)}.csv", [["config_id", "cost", "score"]] + [[p.config_id, p.cost, p.score]
                                                                          for p in front])

    ranking = optimizer_ranking(recs, tolerance)
    write("optimizer_rank.csv", [["optimizer", "top_count", "within_count"]] +
          [[opt, t, w] for opt, (t, w) in ranking.items()])

    samples = gain_samples(recs)
    pct = gain_percentiles(samples) if samples else {}
    counts: dict[str, int] = defaultdict(int)
    for s in samples:
        counts[s.optimizer_id] += 1
    write("gain_percentiles.csv", [["optimizer", "p10", "median", "p90", "n"]] +
          [[opt, a, b, c, counts[opt]] for opt, (a, b, c) in pct.items()])
    return written
