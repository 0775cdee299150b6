"""Attention traces: capture, CSV export and standalone SVG bar charts."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .data import stack_samples
from .errors import ContractError, UnsupportedModelError
from .evaluation import actual_direction
from .models import AttentionTrace, labels_from_probabilities

CSV_HEADER = ["anchor_date", "axis", "position", "label", "weight"]


@dataclass
class TraceEntry:
    anchor_date: object
    trace: AttentionTrace
    predicted: str
    actual: str
    change_ratio: float


@dataclass
class TraceArchive:
    checkpoint_id: str
    entries: list = field(default_factory=list)
    factor_labels: list = field(default_factory=list)
    time_labels: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def top(self, k):
        return TraceArchive(self.checkpoint_id, self.entries[:k] if k else list(self.entries),
                            self.factor_labels, self.time_labels)


def time_labels(lookback):
    return [str(i - (lookback - 1)) for i in range(lookback)]


def record_traces(model, samples, checkpoint_id="", factor_labels=None, batch_size=256):
    """Forward every sample, keep its attention weights, sort by |change ratio|.

    The sort is stable, so ties keep sample order.
    """
    if not model.supports_attention:
        raise UnsupportedModelError(f"model kind {model.kind!r} has no attention weights")
    c = model.config
    F, p = c.n_factors, c.lookback
    labels = list(factor_labels) if factor_labels is not None else [f"f{i}" for i in range(F)]
    if len(labels) != F:
        raise ContractError(f"{len(labels)} factor labels for {F} factors")
    entries = []
    if samples:
        X, _, _ = stack_samples(samples)
        for s0 in range(0, len(X), batch_size):
            probs, fa, ta = model.forward_batch(X[s0 : s0 + batch_size])
            preds = labels_from_probabilities(probs.data)
            for j, s in enumerate(samples[s0 : s0 + batch_size]):
                tr = AttentionTrace(fa[j].copy(), ta[j].copy(), s.anchor_date)
                entries.append(TraceEntry(s.anchor_date, tr, str(preds[j]), actual_direction(s.change_ratio),
                                          s.change_ratio))
    entries.sort(key=lambda e: -abs(e.change_ratio))
    return TraceArchive(checkpoint_id, entries, labels, time_labels(p))


def _fmt_date(d):
    return d.isoformat() if hasattr(d, "isoformat") else str(d)


def export_csv(archive: TraceArchive, path):
    """One row per (sample, axis, position); time rows first, then factors."""
    if not archive.entries:
        raise ContractError("nothing to export: empty trace archive")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for e in archive.entries:
            d = _fmt_date(e.anchor_date)
            for i, (lab, v) in enumerate(zip(archive.time_labels, e.trace.time_alpha)):
                w.writerow([d, "time", i, lab, repr(float(v))])
            for i, (lab, v) in enumerate(zip(archive.factor_labels, e.trace.factor_alpha)):
                w.writerow([d, "factor", i, lab, repr(float(v))])
    return Path(path)


def read_trace_csv(path):
    """Parse an exported CSV back into ``[(anchor, {"time": w, "factor": w}, labels)]``."""
    out, index = [], {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != CSV_HEADER:
            raise ContractError(f"{path}: unexpected trace CSV header")
        for row in reader:
            anchor, axis, pos, lab, weight = row
            if anchor not in index:
                index[anchor] = len(out)
                out.append((anchor, {"time": [], "factor": []}, {"time": [], "factor": []}))
            _, weights, labels = out[index[anchor]]
            if int(pos) != len(weights[axis]):
                raise ContractError(f"{path}: positions out of order for {anchor}/{axis}")
            weights[axis].append(float(weight))
            labels[axis].append(lab)
    return [(a, {k: np.array(v) for k, v in w.items()}, l) for a, w, l in out]


def render_bars(weights, labels, path, title="", xlabel=""):
    """Write a bar chart of ``weights`` as a self-contained SVG file.

    Bar heights are proportional to the weights (the largest fills the plot
    height) and each bar carries its value. Output bytes depend only on the
    arguments.
    """
    weights = [float(w) for w in np.asarray(weights, dtype=np.float64).reshape(-1)]
    labels = [str(l) for l in labels]
    if len(labels) != len(weights):
        raise ContractError(f"{len(labels)} labels for {len(weights)} bars")
    if not weights:
        raise ContractError("no bars to render")
    if any(w < 0 for w in weights):
        raise ContractError("bar weights must be nonnegative")
    n = len(weights)
    bar, gap, left, right, top, plot_h, bottom = 28.0, 8.0, 60.0, 20.0, 40.0, 240.0, 90.0
    width = left + n * (bar + gap) + right
    height = top + plot_h + bottom
    peak = max(weights) or 1.0
    base = top + plot_h
    parts = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.1f}" height="{height:.1f}" '
        f'viewBox="0 0 {width:.1f} {height:.1f}" font-family="sans-serif">',
        f'<rect x="0" y="0" width="{width:.1f}" height="{height:.1f}" fill="#ffffff"/>',
        f'<text x="{width / 2:.1f}" y="22.0" font-size="14" text-anchor="middle">{escape(title)}</text>',
        f'<line x1="{left:.1f}" y1="{base:.1f}" x2="{width - right:.1f}" y2="{base:.1f}" stroke="#000000"/>',
        f'<line x1="{left:.1f}" y1="{top:.1f}" x2="{left:.1f}" y2="{base:.1f}" stroke="#000000"/>',
        f'<text x="{left - 6:.1f}" y="{top + 4:.1f}" font-size="10" text-anchor="end">{peak:.4f}</text>',
        f'<text x="{left - 6:.1f}" y="{base + 4:.1f}" font-size="10" text-anchor="end">0</text>',
        f'<text x="16.0" y="{top + plot_h / 2:.1f}" font-size="11" text-anchor="middle" '
        f'transform="rotate(-90 16.0 {top + plot_h / 2:.1f})">weight</text>',
    ]
    for i, (w, lab) in enumerate(zip(weights, labels)):
        x = left + gap / 2 + i * (bar + gap)
        h = plot_h * w / peak
        cx = x + bar / 2
        parts.append(f'<rect class="bar" x="{x:.4f}" y="{base - h:.4f}" width="{bar:.4f}" height="{h:.4f}" '
                     f'fill="#4c72b0" data-weight="{w!r}"/>')
        parts.append(f'<text x="{cx:.4f}" y="{base - h - 4:.4f}" font-size="8" text-anchor="middle">{w:.3f}</text>')
        parts.append(f'<text x="{cx:.4f}" y="{base + 12:.4f}" font-size="9" text-anchor="end" '
                     f'transform="rotate(-45 {cx:.4f} {base + 12:.4f})">{escape(lab)}</text>')
    if xlabel:
        parts.append(f'<text x="{width / 2:.1f}" y="{height - 8:.1f}" font-size="11" '
                     f'text-anchor="middle">{escape(xlabel)}</text>')
    parts.append("</svg>")
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
    return path


def image_name(anchor_date, axis):
    return f"{_fmt_date(anchor_date)}_{axis}.svg"


def render_entry(archive: TraceArchive, entry: TraceEntry, out_dir):
    """Render both axes of one entry; returns the two paths (time, factor)."""
    out_dir = Path(out_dir)
    d = _fmt_date(entry.anchor_date)
    suffix = f" {d} (change {entry.change_ratio:+.4f}, predicted {entry.predicted})"
    t = render_bars(entry.trace.time_alpha, archive.time_labels, out_dir / image_name(d, "time"),
                    "time attention" + suffix, "day offset from anchor")
    f = render_bars(entry.trace.factor_alpha, archive.factor_labels, out_dir / image_name(d, "factor"),
                    "factor attention" + suffix, "factor")
    return t, f
