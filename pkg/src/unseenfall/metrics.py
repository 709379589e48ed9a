"""Confusion counts, TPR/FPR/gmean, results CSV and sweep plots.

Falls are the positive class throughout.
"""
from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass, fields
from xml.sax.saxutils import escape

from .errors import InputError, UndefinedMetricError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise InputError("confusion counts must be >= 0")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class EvalMetrics:
    tpr: float
    fpr: float
    tnr: float
    gmean: float


def _is_fall(v) -> bool:
    if isinstance(v, str):
        if v not in ("fall", "normal"):
            raise InputError(f"unknown label {v!r}")
        return v == "fall"
    return bool(v)


def confusion(predictions, labels) -> ConfusionCounts:
    predictions, labels = list(predictions), list(labels)
    if len(predictions) != len(labels):
        raise InputError(f"{len(predictions)} predictions but {len(labels)} labels")
    if not labels:
        raise InputError("nothing to count")
    tp = fp = tn = fn = 0
    for p, y in zip(predictions, labels):
        p, y = _is_fall(p), _is_fall(y)
        if y:
            tp, fn = tp + p, fn + (not p)
        else:
            fp, tn = fp + p, tn + (not p)
    return ConfusionCounts(tp, fp, tn, fn)


def gmean(counts: ConfusionCounts) -> EvalMetrics:
    """Rates and their geometric mean ``sqrt(TPR * (1 - FPR))``."""
    if counts.tp + counts.fn < 1:
        raise UndefinedMetricError("TPR is undefined: no fall windows in the evaluation set")
    if counts.fp + counts.tn < 1:
        raise UndefinedMetricError("FPR is undefined: no normal windows in the evaluation set")
    tpr = counts.tp / (counts.tp + counts.fn)
    fpr = counts.fp / (counts.fp + counts.tn)
    return EvalMetrics(tpr, fpr, 1.0 - fpr, math.sqrt(tpr * (1.0 - fpr)))


def evaluate(predictions, labels) -> EvalMetrics:
    return gmean(confusion(predictions, labels))


# -- results table ---------------------------------------------------------


@dataclass
class ResultRow:
    method: str
    arch: str
    view: str
    rho: float
    omega: float | None
    fold: str
    tpr: float
    fpr: float
    gmean: float


RESULT_COLUMNS = tuple(f.name for f in fields(ResultRow))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def export_results_csv(rows, path):
    rows = list(rows)
    if not rows:
        raise InputError("no result rows to export")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in rows:
            w.writerow([_fmt(v) for v in astuple(r)])


def read_results_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(
                ResultRow(
                    method=rec["method"],
                    arch=rec["arch"],
                    view=rec["view"],
                    rho=float(rec["rho"]),
                    omega=float(rec["omega"]) if rec["omega"] else None,
                    fold=rec["fold"],
                    tpr=float(rec["tpr"]),
                    fpr=float(rec["fpr"]),
                    gmean=float(rec["gmean"]),
                )
            )
    return out


# -- SVG -------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
_PANELS = (("tpr", "TPR"), ("fpr", "FPR"), ("gmean", "gmean"))


def sweep_series(rows) -> dict:
    """Mean rows grouped by method label, each a list of (rho, row) sorted by rho."""
    series = {}
    labels = {(r.method, r.arch, r.view) for r in rows if r.fold == "mean"}
    qualify = len({l[1:] for l in labels}) > 1
    for r in rows:
        if r.fold != "mean":
            continue
        label = f"{r.method} ({r.arch}, {r.view})" if qualify else r.method
        series.setdefault(label, []).append((r.rho, r))
    for pts in series.values():
        pts.sort(key=lambda p: p[0])
    return series


def export_sweep_svg(rows, path, title="rho sweep"):
    """Three panels (TPR, FPR, gmean against rho on a log axis), one line per method."""
    series = sweep_series(list(rows))
    if not series:
        raise InputError("no mean rows to plot")
    rhos = sorted({rho for pts in series.values() for rho, _ in pts})
    if rhos[0] <= 0:
        raise InputError("rho must be > 0 for a log axis")
    lo, hi = math.log10(rhos[0]), math.log10(rhos[-1])
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5

    pw, ph, ml, mt, gap = 260, 200, 50, 40, 40
    legend_h = 18 * len(series) + 10
    width = ml + 3 * (pw + gap)
    height = mt + ph + 50 + legend_h

    def sx(rho, ox):
        return ox + (math.log10(rho) - lo) / (hi - lo) * pw

    def sy(v):
        return mt + (1.0 - v) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<text x="{width / 2:.1f}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>',
    ]
    for p, (key, name) in enumerate(_PANELS):
        ox = ml + p * (pw + gap)
        out.append(f'<g class="panel" id="panel-{key}">')
        out.append(f'<rect x="{ox}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
        for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
            y = sy(tick)
            out.append(f'<line x1="{ox - 4}" y1="{y:.2f}" x2="{ox}" y2="{y:.2f}" stroke="#333"/>')
            out.append(f'<text x="{ox - 6}" y="{y + 4:.2f}" text-anchor="end">{tick:g}</text>')
        for rho in rhos:
            x = sx(rho, ox)
            out.append(f'<line x1="{x:.2f}" y1="{mt + ph}" x2="{x:.2f}" y2="{mt + ph + 4}" stroke="#333"/>')
        for dec in range(math.ceil(lo), math.floor(hi) + 1):
            x = sx(10.0**dec, ox)
            out.append(f'<text x="{x:.2f}" y="{mt + ph + 16}" text-anchor="middle">{10.0 ** dec:g}</text>')
        out.append(f'<text x="{ox + pw / 2}" y="{mt + ph + 32}" text-anchor="middle">rho (log scale)</text>')
        out.append(
            f'<text x="{ox - 36}" y="{mt + ph / 2}" text-anchor="middle" '
            f'transform="rotate(-90 {ox - 36} {mt + ph / 2})">{name}</text>'
        )
        for i, (label, pts) in enumerate(series.items()):
            coords = " ".join(f"{sx(rho, ox):.2f},{sy(getattr(r, key)):.2f}" for rho, r in pts)
            color = _PALETTE[i % len(_PALETTE)]
            out.append(
                f'<polyline data-method="{escape(label)}" points="{coords}" fill="none" '
                f'stroke="{color}" stroke-width="1.5"/>'
            )
        out.append("</g>")
    ly = mt + ph + 50
    out.append('<g class="legend">')
    for i, label in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        y = ly + 18 * i
        out.append(f'<line x1="{ml}" y1="{y}" x2="{ml + 24}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{ml + 30}" y="{y + 4}">{escape(label)}</text>')
    out.append("</g>")
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
