"""Lookback x prediction-day sweeps over model kinds.

The default grid uses lookbacks 5, 10, 15, 20, 30 and 60 trading days.
Lookbacks of up to 10 days are paired with every horizon from 1 to the
lookback; longer lookbacks with the next day and then whole weeks
(5, 10, ...) up to the lookback length.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace

from .data import AlignedPanel, SplitSpec, make_samples, split
from .errors import ConfigurationError, TrendlabError
from .evaluation import EVAL_SCHEMA
from .models import ModelConfig
from .training import RunSpec, TrainConfig, repeat_runs

PAPER_LOOKBACKS = (5, 10, 15, 20, 30, 60)


def prediction_grid(lookback):
    if lookback < 1:
        raise ConfigurationError("lookback must be >= 1")
    if lookback <= 10:
        return list(range(1, lookback + 1))
    qs = [1] + list(range(5, lookback + 1, 5))
    if qs[-1] != lookback:
        qs.append(lookback)
    return qs


def paper_grid(lookbacks=PAPER_LOOKBACKS):
    return [(p, q) for p in lookbacks for q in prediction_grid(p)]


def parse_grid(text):
    """Parse a grid spec.

    ``paper`` gives the default grid. Otherwise items are separated by
    ``;`` or whitespace: ``60`` expands to that lookback's default horizons,
    ``60:40`` is one cell, ``60:1,5,40`` a list and ``10:1-5`` a range.
    """
    text = text.strip()
    if text == "paper":
        return paper_grid()
    cells = []
    for item in re.split(r"[;\s]+", text):
        if not item:
            continue
        try:
            if ":" not in item:
                for p in item.split(","):
                    cells.extend((int(p), q) for q in prediction_grid(int(p)))
                continue
            p_txt, q_txt = item.split(":", 1)
            p = int(p_txt)
            for part in q_txt.split(","):
                if "-" in part:
                    a, b = part.split("-", 1)
                    cells.extend((p, q) for q in range(int(a), int(b) + 1))
                else:
                    cells.append((p, int(part)))
        except ValueError:
            raise ConfigurationError(f"cannot parse grid item {item!r}") from None
    if not cells:
        raise ConfigurationError("empty grid")
    for p, q in cells:
        if p < 1 or q < 1:
            raise ConfigurationError(f"grid cell p={p}, q={q} must be positive")
    return cells


@dataclass
class SweepTable:
    cells: list = field(default_factory=list)
    repeats: int = 1

    def to_dict(self):
        return {"schema": EVAL_SCHEMA, "kind": "sweep", "repeats": self.repeats, "cells": self.cells}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self):
        head = ["model", "p", "q", "status", "n_test", "hit_ratio"]
        if self.repeats > 1:
            head.append("std")
        rows = [head]
        for c in self.cells:
            hr = "-" if c["mean_hit_ratio"] is None else f"{c['mean_hit_ratio']:.4f}"
            row = [c["kind"], str(c["lookback"]), str(c["horizon"]), c["status"], str(c["n_test"]), hr]
            if self.repeats > 1:
                row.append("-" if c["std_hit_ratio"] is None else f"{c['std_hit_ratio']:.4f}")
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows)

    def ok_cells(self):
        return [c for c in self.cells if c["status"] == "ok"]


def sweep(grid, kinds, panel: AlignedPanel, split_spec: SplitSpec, train_config: TrainConfig,
          model_overrides=None, repeats=1, jobs=1, skip_initial=False) -> SweepTable:
    """Train a fresh model for every ``(kind, p, q)`` cell and score its test set.

    Cells whose windows cannot be cut or split are kept in the table with
    status ``infeasible``; cells whose every run fails are ``failed``.
    """
    overrides = dict(model_overrides or {})
    cells, specs, slots = [], [], []
    for kind in kinds:
        for p, q in grid:
            cell = {"kind": kind, "lookback": p, "horizon": q, "status": "ok", "n_train": 0, "n_val": 0,
                    "n_test": 0, "mean_hit_ratio": None, "std_hit_ratio": None, "runs": [], "note": ""}
            cells.append(cell)
            try:
                mcfg = ModelConfig(kind, p, panel.n_factors, **overrides).validate()
                samples = make_samples(panel, p, q, skip_initial=skip_initial)
                tr, va, te = split(samples, split_spec)
            except (TrendlabError, ValueError) as exc:
                cell["status"] = "infeasible"
                cell["note"] = str(exc)
                continue
            cell["n_train"], cell["n_val"], cell["n_test"] = len(tr), len(va), len(te)
            specs.append(RunSpec(mcfg, replace(train_config), tr, va, te, name=f"{kind}/p{p}/q{q}"))
            slots.append(cell)
    if specs:
        for cell, agg in zip(slots, repeat_runs(specs, repeats, jobs=jobs)):
            cell["runs"] = agg["runs"]
            cell["mean_hit_ratio"] = agg["mean_hit_ratio"]
            cell["std_hit_ratio"] = agg["std_hit_ratio"]
            if agg["n_ok"] == 0:
                cell["status"] = "failed"
                cell["note"] = agg["runs"][0].get("error", "")
    return SweepTable(cells, repeats)
