"""Direction metrics: hit ratio, per-class breakdown and earn points.

A record is a hit when the predicted direction equals the realised one; a
change ratio of exactly zero is realised as ``up``. Earn points add the
absolute index-point move of every hit, i.e. going long on predicted ups
and short on predicted downs. Overlapping horizons are not de-duplicated:
with ``q > 1`` consecutive anchors share market moves.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field

import numpy as np

from .data import stack_samples
from .errors import ContractError
from .models import DOWN, UP, labels_from_probabilities

EVAL_SCHEMA = "TRENDLAB-EVAL v1"


def actual_direction(change_ratio):
    return UP if change_ratio >= 0 else DOWN


@dataclass(frozen=True)
class PredictionRecord:
    anchor_date: object
    predicted: str
    actual: str
    change_ratio: float
    point_change: float | None = None

    def __post_init__(self):
        if self.predicted not in (UP, DOWN) or self.actual not in (UP, DOWN):
            raise ContractError(f"directions must be 'up' or 'down', got {self.predicted!r}/{self.actual!r}")
        if self.actual != actual_direction(self.change_ratio):
            raise ContractError(f"actual={self.actual} contradicts change ratio {self.change_ratio}")
        if self.point_change is not None and np.sign(self.point_change) != np.sign(self.change_ratio):
            raise ContractError("point change and change ratio disagree in sign")

    @property
    def hit(self):
        return self.predicted == self.actual

    def to_dict(self):
        d = self.anchor_date
        return {
            "anchor_date": d.isoformat() if hasattr(d, "isoformat") else d,
            "predicted": self.predicted,
            "actual": self.actual,
            "change_ratio": self.change_ratio,
            "point_change": self.point_change,
        }


def make_records(samples, predicted):
    return [
        PredictionRecord(s.anchor_date, str(p), actual_direction(s.change_ratio), s.change_ratio, s.point_change)
        for s, p in zip(samples, predicted)
    ]


def hit_ratio(records) -> float:
    if len(records) == 0:
        raise ContractError("hit ratio of an empty record set")
    return sum(1 for r in records if r.hit) / len(records)


def direction_hit_ratio(pred_up, change_ratios) -> float:
    """Array form of :func:`hit_ratio` used inside training loops."""
    pred_up = np.asarray(pred_up, dtype=bool)
    actual_up = np.asarray(change_ratios) >= 0
    if pred_up.size == 0:
        raise ContractError("hit ratio of an empty record set")
    return float(np.count_nonzero(pred_up == actual_up)) / pred_up.size


@dataclass(frozen=True)
class Breakdown:
    hit_ratio_positive: float | None
    hit_ratio_negative: float | None
    share_positive: float
    share_negative: float


def breakdown(records) -> Breakdown:
    """Hit ratio conditioned on the realised class; ``None`` for an absent class."""
    if len(records) == 0:
        raise ContractError("breakdown of an empty record set")
    pos = [r for r in records if r.actual == UP]
    neg = [r for r in records if r.actual == DOWN]
    n = len(records)
    return Breakdown(
        hit_ratio_positive=hit_ratio(pos) if pos else None,
        hit_ratio_negative=hit_ratio(neg) if neg else None,
        share_positive=len(pos) / n,
        share_negative=len(neg) / n,
    )


def earn_points(records) -> float:
    total = 0.0
    for r in records:
        if r.point_change is None:
            raise ContractError(f"record {r.anchor_date} has no point change")
        if r.hit:
            total += abs(r.point_change)
    return total


def max_points(records) -> float:
    total = 0.0
    for r in records:
        if r.point_change is None:
            raise ContractError(f"record {r.anchor_date} has no point change")
        total += abs(r.point_change)
    return total


@dataclass
class EvalReport:
    hit_ratio: float
    hit_ratio_positive: float | None
    hit_ratio_negative: float | None
    class_share_positive: float
    earn_points: float
    max_points: float
    n_samples: int
    records: list = field(default_factory=list)

    @classmethod
    def from_records(cls, records):
        b = breakdown(records)
        return cls(
            hit_ratio=hit_ratio(records),
            hit_ratio_positive=b.hit_ratio_positive,
            hit_ratio_negative=b.hit_ratio_negative,
            class_share_positive=b.share_positive,
            earn_points=earn_points(records),
            max_points=max_points(records),
            n_samples=len(records),
            records=list(records),
        )

    def summary(self):
        return {
            "hit_ratio": self.hit_ratio,
            "hit_ratio_positive": self.hit_ratio_positive,
            "hit_ratio_negative": self.hit_ratio_negative,
            "class_share_positive": self.class_share_positive,
            "earn_points": self.earn_points,
            "max_points": self.max_points,
            "n_samples": self.n_samples,
        }

    def to_dict(self):
        d = {"schema": EVAL_SCHEMA, **self.summary()}
        d["records"] = [r.to_dict() for r in self.records]
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self):
        def fmt(v):
            return "undefined" if v is None else f"{v:.4f}"

        share_neg = 1.0 - self.class_share_positive
        rows = [
            ("", "Dataset", "Model"),
            ("Positive", f"{self.class_share_positive:.4f}", fmt(self.hit_ratio_positive)),
            ("Negative", f"{share_neg:.4f}", fmt(self.hit_ratio_negative)),
            ("Total", "1.0000", fmt(self.hit_ratio)),
            ("Earn points", f"{self.max_points:.3f}", f"{self.earn_points:.3f}"),
        ]
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
                 for r in rows]
        lines.append(f"n_samples = {self.n_samples}")
        return "\n".join(lines)


def evaluate(model, samples) -> EvalReport:
    if not samples:
        raise ContractError("evaluate() needs at least one sample")
    X, _, _ = stack_samples(samples)
    predicted = labels_from_probabilities(model.predict_proba(X))
    return EvalReport.from_records(make_records(samples, predicted))


def report_from_dict(d) -> EvalReport:
    if d.get("schema") != EVAL_SCHEMA:
        raise ContractError(f"not a {EVAL_SCHEMA} document")
    records = [PredictionRecord(dt.date.fromisoformat(r["anchor_date"]), r["predicted"], r["actual"], r["change_ratio"],
                                r["point_change"]) for r in d["records"]]
    return EvalReport(d["hit_ratio"], d["hit_ratio_positive"], d["hit_ratio_negative"],
                      d["class_share_positive"], d["earn_points"], d["max_points"], d["n_samples"], records)
