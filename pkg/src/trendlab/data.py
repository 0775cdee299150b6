"""From close-price CSVs to aligned return panels and supervised windows.

Returns use the new close as denominator,
``r[t+1] = (close[t+1] - close[t]) / close[t+1]``, with ``r[0] = 0``.
The label horizon uses the usual relative change,
``trend = (close[a+q] - close[a]) / close[a]``, and a trend of exactly zero
belongs to the up class.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ConfigurationError, DimensionError, ParseError, ValidationError

log = logging.getLogger(__name__)

PANEL_MAGIC = "TRENDLAB-PANEL v1"
DOWN = (1.0, 0.0)
UP = (0.0, 1.0)


def parse_date(value) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value).strip())
    except ValueError:
        raise ValueError(f"not an ISO-8601 date: {value!r}") from None


@dataclass(frozen=True)
class PriceSeries:
    index_id: str
    dates: tuple
    closes: np.ndarray

    def __post_init__(self):
        closes = np.asarray(self.closes, dtype=np.float64)
        object.__setattr__(self, "closes", closes)
        object.__setattr__(self, "dates", tuple(self.dates))
        if len(self.dates) != closes.shape[0]:
            raise ValidationError(f"{self.index_id}: {len(self.dates)} dates for {closes.shape[0]} closes")
        for a, b in zip(self.dates, self.dates[1:]):
            if not a < b:
                raise ValidationError(f"{self.index_id}: dates not strictly increasing at {b}")
        bad = np.flatnonzero(~(closes > 0) | ~np.isfinite(closes))
        if bad.size:
            d = self.dates[bad[0]]
            raise ValidationError(f"{self.index_id}: close on {d} must be positive, got {closes[bad[0]]}")
        closes.setflags(write=False)

    def __len__(self):
        return len(self.dates)

    def restrict(self, dates) -> PriceSeries:
        keep = set(dates)
        idx = [i for i, d in enumerate(self.dates) if d in keep]
        return PriceSeries(self.index_id, [self.dates[i] for i in idx], self.closes[idx])


def load_csv(path, index_id=None) -> PriceSeries:
    """Read a ``date,close`` file; rows may be in any order."""
    path = Path(path)
    index_id = index_id or path.stem
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["date", "close"]:
            raise ParseError(f"header must be exactly 'date,close', got {header!r}", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", path, lineno)
            try:
                d = dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise ParseError(f"bad date {row[0]!r}", path, lineno) from None
            try:
                c = float(row[1].strip())
            except ValueError:
                raise ParseError(f"bad close {row[1]!r}", path, lineno) from None
            if not math.isfinite(c):
                raise ParseError(f"non-finite close {row[1]!r}", path, lineno)
            rows.append((d, c, lineno))
    rows.sort(key=lambda r: r[0])
    for (d0, _, l0), (d1, _, l1) in zip(rows, rows[1:]):
        if d0 == d1:
            raise ValidationError(f"{path}: duplicate date {d1} on lines {l0} and {l1}")
    for d, c, lineno in rows:
        if c <= 0:
            raise ValidationError(f"{path}:{lineno}: close on {d} must be positive, got {c}")
    return PriceSeries(index_id, [r[0] for r in rows], [r[1] for r in rows])


def write_csv(series: PriceSeries, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("date,close\n")
        for d, c in zip(series.dates, series.closes):
            fh.write(f"{d.isoformat()},{float(c)!r}\n")


def compute_returns(series) -> np.ndarray:
    closes = series.closes if isinstance(series, PriceSeries) else np.asarray(series, dtype=np.float64)
    if closes.shape[0] < 2:
        raise DimensionError("need at least two closes to form returns")
    r = np.zeros_like(closes)
    r[1:] = (closes[1:] - closes[:-1]) / closes[1:]
    return r


@dataclass(frozen=True)
class AlignedPanel:
    """Daily returns of every factor on the target's trading calendar.

    ``filled_cells`` lists the ``(date, factor_id)`` cells where a factor had
    no close on a target trading day and its previous return was carried.
    """

    dates: tuple
    returns: np.ndarray
    target_close: np.ndarray
    factor_ids: tuple
    target_id: str = "target"
    filled_cells: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "factor_ids", tuple(self.factor_ids))
        object.__setattr__(self, "filled_cells", tuple(tuple(c) for c in self.filled_cells))
        R = np.asarray(self.returns, dtype=np.float64)
        C = np.asarray(self.target_close, dtype=np.float64)
        if R.ndim != 2 or R.shape[0] != len(self.dates) or C.shape != (len(self.dates),):
            raise ValidationError("panel rows, dates and target closes disagree in length")
        if R.shape[1] != len(self.factor_ids):
            raise ValidationError("panel columns and factor ids disagree")
        if not np.all(np.isfinite(R)) or not np.all(C > 0):
            raise ValidationError("panel has missing or invalid cells")
        R.setflags(write=False)
        C.setflags(write=False)
        object.__setattr__(self, "returns", R)
        object.__setattr__(self, "target_close", C)

    @property
    def n_days(self):
        return len(self.dates)

    @property
    def n_factors(self):
        return len(self.factor_ids)

    def __eq__(self, other):
        if not isinstance(other, AlignedPanel):
            return NotImplemented
        return (self.dates == other.dates and self.factor_ids == other.factor_ids
                and self.target_id == other.target_id and self.filled_cells == other.filled_cells
                and np.array_equal(self.returns, other.returns)
                and np.array_equal(self.target_close, other.target_close))


def _aligned_returns(series: PriceSeries, calendar, start):
    """Returns of ``series`` on ``calendar[start:]`` plus indices of carried cells."""
    on_cal = set(calendar)
    closes = {d: c for d, c in zip(series.dates, series.closes) if d in on_cal}
    last = None
    for d in sorted(closes):
        if d > calendar[start]:
            break
        last = closes[d]
    out = np.zeros(len(calendar) - start)
    filled = []
    prev_r = 0.0
    for k, d in enumerate(calendar[start:]):
        c = closes.get(d)
        if k == 0:
            prev_r = 0.0
        elif c is None:
            filled.append(k)
        else:
            prev_r = (c - last) / c
        if c is not None:
            last = c
        out[k] = prev_r
    return out, filled


def align(target: PriceSeries, factors, include_target=True) -> AlignedPanel:
    """Put every factor on the target's trading calendar.

    Factor days the target did not trade are dropped and the next retained
    return is measured against the factor's last retained close. A target
    day with no factor close carries the factor's previous return forward.
    Rows before every series has been observed are cut, so the first row is
    the initial zero return.
    """
    calendar = target.dates
    on_cal = set(calendar)
    series = ([target] if include_target else []) + list(factors)
    if not series:
        raise AlignmentError("nothing to align: no factors and target excluded")
    firsts = []
    for s in series:
        retained = [d for d in s.dates if d in on_cal]
        if not retained:
            raise AlignmentError(f"factor {s.index_id} shares no trading day with {target.index_id}")
        firsts.append(retained[0])
    start_date = max(firsts)
    start = calendar.index(start_date)
    if len(calendar) - start < 2:
        raise AlignmentError("fewer than two fully covered trading days")
    if start:
        log.info("dropping %d leading target days before full factor coverage", start)
    cols, filled = [], []
    used = set()
    ids = []
    for s in series:
        fid = s.index_id
        while fid in used:
            fid += "_"
        used.add(fid)
        ids.append(fid)
        r, holes = _aligned_returns(s, calendar, start)
        cols.append(r)
        filled.extend((calendar[start + k], fid) for k in holes)
    filled.sort(key=lambda c: (c[0], ids.index(c[1])))
    return AlignedPanel(
        dates=calendar[start:],
        returns=np.column_stack(cols),
        target_close=target.closes[start:],
        factor_ids=ids,
        target_id=target.index_id,
        filled_cells=[(d.isoformat(), f) for d, f in filled],
    )


@dataclass(frozen=True)
class Sample:
    window: np.ndarray
    label: tuple
    change_ratio: float
    anchor_date: dt.date
    target_date: dt.date
    anchor_close: float = 1.0
    target_close: float = 1.0

    @property
    def point_change(self):
        return self.target_close - self.anchor_close

    @property
    def up(self):
        return self.label == UP


def label_for(change_ratio) -> tuple:
    return DOWN if change_ratio < 0 else UP


def make_samples(panel: AlignedPanel, p: int, q: int, skip_initial=False) -> list:
    """One sample per anchor ``a`` with ``p - 1 <= a <= T - 1 - q``.

    ``skip_initial`` starts windows after the artificial ``r[0]`` row.
    """
    if p < 1 or q < 1:
        raise ConfigurationError(f"lookback and horizon must be >= 1, got p={p}, q={q}")
    first = p - 1 + (1 if skip_initial else 0)
    last = panel.n_days - 1 - q
    if last < first:
        warnings.warn(f"panel of {panel.n_days} days is too short for p={p}, q={q}; no samples",
                      stacklevel=2)
        return []
    R, C = panel.returns, panel.target_close
    out = []
    for a in range(first, last + 1):
        w = R[a - p + 1 : a + 1].copy()
        w.setflags(write=False)
        trend = (C[a + q] - C[a]) / C[a]
        out.append(Sample(
            window=w,
            label=label_for(trend),
            change_ratio=float(trend),
            anchor_date=panel.dates[a],
            target_date=panel.dates[a + q],
            anchor_close=float(C[a]),
            target_close=float(C[a + q]),
        ))
    return out


@dataclass(frozen=True)
class SplitSpec:
    train_range: tuple = (dt.date(2000, 1, 1), dt.date(2016, 12, 31))
    test_range: tuple = (dt.date(2017, 1, 1), dt.date(2018, 7, 31))
    validation_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        tr = tuple(parse_date(d) for d in self.train_range)
        te = tuple(parse_date(d) for d in self.test_range)
        object.__setattr__(self, "train_range", tr)
        object.__setattr__(self, "test_range", te)
        if tr[0] > tr[1] or te[0] > te[1]:
            raise ConfigurationError("date range start after its end")
        if not tr[1] < te[0]:
            raise ConfigurationError(f"training range must end before the test range starts ({tr[1]} >= {te[0]})")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigurationError("validation_fraction must lie in (0, 1)")

    def to_dict(self):
        return {
            "train_range": [d.isoformat() for d in self.train_range],
            "test_range": [d.isoformat() for d in self.test_range],
            "validation_fraction": self.validation_fraction,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["train_range"]), tuple(d["test_range"]),
                   float(d.get("validation_fraction", 0.3)), int(d.get("seed", 0)))


def split(samples, spec: SplitSpec):
    """Walk-forward split into ``(train, validation, test)``.

    Test samples are anchored inside the test range. The training pool needs
    anchor and label horizon inside the training range; it is shuffled with
    ``spec.seed`` and ``floor(n * validation_fraction)`` go to validation.
    """
    (tr0, tr1), (te0, te1) = spec.train_range, spec.test_range
    test = [s for s in samples if te0 <= s.anchor_date <= te1]
    pool = [s for s in samples if tr0 <= s.anchor_date <= tr1 and s.target_date <= tr1]
    if not test:
        raise ConfigurationError(f"no test samples anchored in {te0}..{te1}")
    if not pool:
        raise ConfigurationError(f"no training samples fully inside {tr0}..{tr1}")
    order = np.random.default_rng(spec.seed).permutation(len(pool))
    n_val = int(math.floor(len(pool) * spec.validation_fraction + 1e-9))
    if n_val < 1 or n_val >= len(pool):
        raise ConfigurationError(f"training pool of {len(pool)} is too small for a validation split")
    val = [pool[i] for i in order[:n_val]]
    train = [pool[i] for i in order[n_val:]]
    return train, val, test


def stack_samples(samples):
    """Arrays ``(windows, labels, change_ratios)`` for a list of samples."""
    X = np.stack([s.window for s in samples])
    Y = np.array([s.label for s in samples], dtype=np.float64)
    cr = np.array([s.change_ratio for s in samples], dtype=np.float64)
    return X, Y, cr


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthConfig:
    """Regime-switching index plus correlated factor indexes.

    The target follows a two-state Markov drift; factors share a fraction
    ``correlation`` of the target's shocks and of its drift, so past windows
    carry information about the coming trend.
    """

    n_days: int = 2000
    n_factors: int = 4
    start_date: dt.date = dt.date(2000, 1, 3)
    drifts: tuple = (-0.0015, 0.0015)
    vol: float = 0.01
    switch_prob: float = 0.02
    correlation: float = 0.5
    factor_vol: float = 0.01
    missing_prob: float = 0.0
    start_price: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "start_date", parse_date(self.start_date))
        if self.n_days < 2:
            raise ConfigurationError("synthetic series need at least 2 days")
        if self.n_factors < 0:
            raise ConfigurationError("number of factors must be nonnegative")
        if not -1.0 <= self.correlation <= 1.0:
            raise ConfigurationError("correlation must lie in [-1, 1]")
        if self.vol < 0 or self.factor_vol < 0 or not 0 <= self.switch_prob <= 1:
            raise ConfigurationError("volatilities and switch probability must be nonnegative")
        if not 0 <= self.missing_prob < 1:
            raise ConfigurationError("missing_prob must lie in [0, 1)")


def business_days(start, n):
    start = np.busday_offset(np.datetime64(parse_date(start)), 0, roll="forward")
    days = np.busday_offset(start, np.arange(n))
    return [d.astype(dt.date) for d in days]


def synthesize(config: SynthConfig, seed: int):
    """Return ``(target, factors)`` price series, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    n, F = config.n_days, config.n_factors
    dates = business_days(config.start_date, n)
    regime = np.empty(n, dtype=np.int64)
    regime[0] = rng.integers(len(config.drifts))
    flips = rng.random(n) < config.switch_prob
    for t in range(1, n):
        regime[t] = (regime[t - 1] + 1) % len(config.drifts) if flips[t] else regime[t - 1]
    drift = np.asarray(config.drifts, dtype=np.float64)[regime]
    shocks = rng.normal(size=n)
    target_lr = drift + config.vol * shocks
    target_lr[0] = 0.0
    target = PriceSeries("target", dates, config.start_price * np.exp(np.cumsum(target_lr)))
    rho = config.correlation
    ratio = config.factor_vol / config.vol if config.vol > 0 else 1.0
    factors = []
    for k in range(F):
        own = rng.normal(size=n)
        lr = rho * ratio * drift + config.factor_vol * (rho * shocks + math.sqrt(1 - rho * rho) * own)
        lr[0] = 0.0
        closes = config.start_price * np.exp(np.cumsum(lr))
        keep = rng.random(n) >= config.missing_prob
        keep[0] = True
        idx = np.flatnonzero(keep)
        factors.append(PriceSeries(f"factor{k + 1}", [dates[i] for i in idx], closes[idx]))
    return target, factors


def separable_samples(n, p, F, noise=0.0005, scale=0.01, q=1, seed=0, start=dt.date(2000, 1, 3)):
    """Independent windows whose label is the sign of the window mean plus noise.

    Anchors are consecutive business days, so walk-forward splits by date
    work as on real data.
    """
    rng = np.random.default_rng(seed)
    days = business_days(start, n + q)
    out = []
    for k in range(n):
        w = rng.normal(scale=scale, size=(p, F))
        w.setflags(write=False)
        close = 100.0 * (1.0 + w.mean() + noise * rng.normal())
        cr = float((close - 100.0) / 100.0)
        out.append(Sample(w, label_for(cr), cr, days[k], days[k + q], 100.0, float(close)))
    return out


# ---------------------------------------------------------------------------
# panel cache


def save_panel(panel: AlignedPanel, path, extra=None):
    meta = {
        "target_id": panel.target_id,
        "factor_ids": list(panel.factor_ids),
        "n_rows": panel.n_days,
        "filled_cells": [list(c) for c in panel.filled_cells],
    }
    if extra:
        meta["extra"] = extra
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(PANEL_MAGIC + "\n")
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        fh.write(",".join(["date", "target_close", *panel.factor_ids]) + "\n")
        for d, c, row in zip(panel.dates, panel.target_close, panel.returns):
            fh.write(",".join([d.isoformat(), repr(float(c)), *(repr(float(v)) for v in row)]) + "\n")


def load_panel(path) -> AlignedPanel:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        magic = fh.readline().rstrip("\n")
        if magic != PANEL_MAGIC:
            raise ParseError(f"not a panel cache (header {magic!r})", path, 1)
        try:
            meta = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad metadata: {exc}", path, 2) from None
        header = fh.readline().rstrip("\n").split(",")
        if header[:2] != ["date", "target_close"] or header[2:] != meta["factor_ids"]:
            raise ParseError("column header does not match metadata", path, 3)
        dates, closes, rows = [], [], []
        for lineno, line in enumerate(fh, start=4):
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(header):
                raise ParseError(f"expected {len(header)} fields", path, lineno)
            try:
                dates.append(dt.date.fromisoformat(parts[0]))
                closes.append(float(parts[1]))
                rows.append([float(v) for v in parts[2:]])
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
    if len(dates) != meta["n_rows"]:
        raise ParseError(f"expected {meta['n_rows']} rows, found {len(dates)}", path)
    return AlignedPanel(dates, np.array(rows, dtype=np.float64).reshape(len(dates), -1), closes,
                        meta["factor_ids"], meta["target_id"], [tuple(c) for c in meta["filled_cells"]])


def panel_from_csvs(target_csv, factor_csvs, include_target=True):
    target = load_csv(target_csv)
    factors = [load_csv(f) for f in factor_csvs]
    return align(target, factors, include_target=include_target)


@dataclass
class DataConfig:
    """Where the panel comes from and how windows are cut."""

    lookback: int = 10
    horizon: int = 19
    panel: str | None = None
    target_csv: str | None = None
    factor_csvs: list = field(default_factory=list)
    include_target: bool = True
    skip_initial: bool = False

    def to_dict(self):
        return {
            "lookback": self.lookback, "horizon": self.horizon, "panel": self.panel,
            "target_csv": self.target_csv, "factor_csvs": list(self.factor_csvs),
            "include_target": self.include_target, "skip_initial": self.skip_initial,
        }

    def load_panel(self) -> AlignedPanel:
        if self.panel:
            return load_panel(self.panel)
        if self.target_csv:
            return panel_from_csvs(self.target_csv, self.factor_csvs, self.include_target)
        raise ConfigurationError("data source missing: give a panel cache or a target CSV")
