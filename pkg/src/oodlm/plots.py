"""Dependency-free SVG charts for suite reports.

Hand-rolled rather than pulling in matplotlib: the outputs are three simple
chart shapes (bars with whiskers, line curves, grouped bars) and the files
need to be diffable text.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

from .util import write_atomic

_W, _H = 640, 400
_MARGIN = {"left": 64, "right": 20, "top": 40, "bottom": 72}
_PALETTE = (
    "#4878b0",
    "#ee854a",
    "#6acc64",
    "#d65f5f",
    "#956cb4",
    "#8c613c",
    "#dc7ec0",
    "#797979",
)


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 2.5, 5, 10):
        if mag * mult >= raw:
            step = mag * mult
            break
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12:
        ticks.append(round(t, 10))
        t += step
    return ticks


def _fmt(v: float) -> str:
    if v == int(v) and abs(v) < 1e6:
        return str(int(v))
    return f"{v:.3g}"


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
            f'<rect width="{_W}" height="{_H}" fill="white"/>',
            f'<text x="{_W / 2}" y="22" text-anchor="middle" font-size="15">'
            f"{escape(title)}</text>",
        ]
        self.x0 = _MARGIN["left"]
        self.x1 = _W - _MARGIN["right"]
        self.y0 = _H - _MARGIN["bottom"]
        self.y1 = _MARGIN["top"]
        if xlabel:
            self.parts.append(
                f'<text x="{(self.x0 + self.x1) / 2}" y="{_H - 10}" '
                f'text-anchor="middle">{escape(xlabel)}</text>'
            )
        if ylabel:
            cy = (self.y0 + self.y1) / 2
            self.parts.append(
                f'<text x="16" y="{cy}" text-anchor="middle" '
                f'transform="rotate(-90 16 {cy})">{escape(ylabel)}</text>'
            )

    def set_ylim(self, lo: float, hi: float):
        self.ylo, self.yhi = lo, hi
        for t in _nice_ticks(lo, hi):
            if not lo <= t <= hi:
                continue
            y = self.sy(t)
            self.parts.append(
                f'<line x1="{self.x0}" y1="{y:.1f}" x2="{self.x1}" y2="{y:.1f}" '
                f'stroke="#dddddd" stroke-width="1"/>'
            )
            self.parts.append(
                f'<text x="{self.x0 - 6}" y="{y + 4:.1f}" text-anchor="end">'
                f"{_fmt(t)}</text>"
            )

    def sy(self, v: float) -> float:
        frac = (v - self.ylo) / (self.yhi - self.ylo)
        return self.y0 - frac * (self.y0 - self.y1)

    def axes(self):
        self.parts.append(
            f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x1}" y2="{self.y0}" '
            f'stroke="black" stroke-width="1"/>'
        )
        self.parts.append(
            f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x0}" y2="{self.y1}" '
            f'stroke="black" stroke-width="1"/>'
        )

    def finish(self) -> str:
        return "\n".join(self.parts + ["</svg>"])


def _ylim(values, pad: float = 0.08) -> tuple:
    values = [v for v in values if v is not None and np.isfinite(v)]
    if not values:
        return 0.0, 1.0
    lo, hi = min(values), max(values)
    lo = min(lo, 0.0)
    span = (hi - lo) or 1.0
    return lo, hi + pad * span


def svg_bar_chart(
    labels,
    means,
    stds=None,
    title: str = "",
    ylabel: str = "",
    colors=None,
    path=None,
) -> str:
    """Vertical bars with optional +-1 std whiskers."""
    n = len(labels)
    stds = stds if stds is not None else [None] * n
    tops = [m + (s or 0.0) for m, s in zip(means, stds) if m is not None]
    c = _Canvas(title, "", ylabel)
    c.set_ylim(*_ylim(tops + [m for m in means if m is not None]))
    c.axes()
    span = c.x1 - c.x0
    slot = span / n
    width = slot * 0.62
    for i, (label, mean, std) in enumerate(zip(labels, means, stds)):
        cx = c.x0 + (i + 0.5) * slot
        color = (colors or _PALETTE)[i % len(colors or _PALETTE)]
        if mean is not None:
            y = c.sy(mean)
            base = c.sy(max(c.ylo, 0.0))
            top = min(y, base)
            c.parts.append(
                f'<rect x="{cx - width / 2:.1f}" y="{top:.1f}" width="{width:.1f}" '
                f'height="{abs(base - y):.1f}" fill="{color}"/>'
            )
            if std:
                lo, hi = c.sy(mean - std), c.sy(mean + std)
                c.parts.append(
                    f'<line x1="{cx:.1f}" y1="{lo:.1f}" x2="{cx:.1f}" y2="{hi:.1f}" '
                    f'stroke="black" stroke-width="1.5"/>'
                )
                for yy in (lo, hi):
                    c.parts.append(
                        f'<line x1="{cx - 5:.1f}" y1="{yy:.1f}" x2="{cx + 5:.1f}" '
                        f'y2="{yy:.1f}" stroke="black" stroke-width="1.5"/>'
                    )
        else:
            c.parts.append(
                f'<text x="{cx:.1f}" y="{c.sy(c.yhi / 2):.1f}" text-anchor="middle" '
                f'fill="#999999">n/a</text>'
            )
        c.parts.append(
            f'<text x="{cx:.1f}" y="{c.y0 + 14:.1f}" text-anchor="end" '
            f'transform="rotate(-30 {cx:.1f} {c.y0 + 14:.1f})">{escape(str(label))}</text>'
        )
    svg = c.finish()
    if path is not None:
        write_atomic(path, svg)
    return svg


def svg_line_chart(
    x,
    series: dict,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    path=None,
) -> str:
    """One polyline per named series over a shared x grid."""
    x = list(x)
    c = _Canvas(title, xlabel, ylabel)
    all_y = [v for ys in series.values() for v in ys if v is not None and np.isfinite(v)]
    c.set_ylim(*_ylim(all_y))
    c.axes()
    xlo, xhi = min(x), max(x)
    span = (xhi - xlo) or 1.0

    def sx(v):
        return c.x0 + (v - xlo) / span * (c.x1 - c.x0)

    for t in _nice_ticks(xlo, xhi):
        if not xlo <= t <= xhi:
            continue
        c.parts.append(
            f'<text x="{sx(t):.1f}" y="{c.y0 + 16}" text-anchor="middle">{_fmt(t)}</text>'
        )
    legend_y = c.y1 + 4
    for i, (name, ys) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(
            f"{sx(xv):.1f},{c.sy(yv):.1f}"
            for xv, yv in zip(x, ys)
            if yv is not None and np.isfinite(yv)
        )
        c.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"/>'
        )
        lx = c.x0 + 10
        c.parts.append(
            f'<line x1="{lx}" y1="{legend_y + 14 * i}" x2="{lx + 18}" '
            f'y2="{legend_y + 14 * i}" stroke="{color}" stroke-width="2"/>'
        )
        c.parts.append(
            f'<text x="{lx + 24}" y="{legend_y + 14 * i + 4}">{escape(str(name))}</text>'
        )
    svg = c.finish()
    if path is not None:
        write_atomic(path, svg)
    return svg


def svg_grouped_bars(
    group_labels,
    series: dict,
    title: str = "",
    ylabel: str = "",
    path=None,
) -> str:
    """Bars grouped by label, one color per named series."""
    n_groups = len(group_labels)
    names = list(series)
    c = _Canvas(title, "", ylabel)
    all_v = [v for vs in series.values() for v in vs if v is not None]
    c.set_ylim(*_ylim(all_v))
    c.axes()
    slot = (c.x1 - c.x0) / n_groups
    width = slot * 0.8 / max(len(names), 1)
    for gi, label in enumerate(group_labels):
        left = c.x0 + gi * slot + slot * 0.1
        for si, name in enumerate(names):
            v = series[name][gi]
            if v is None:
                continue
            color = _PALETTE[si % len(_PALETTE)]
            y = c.sy(v)
            base = c.sy(max(c.ylo, 0.0))
            c.parts.append(
                f'<rect x="{left + si * width:.1f}" y="{min(y, base):.1f}" '
                f'width="{width:.1f}" height="{abs(base - y):.1f}" fill="{color}"/>'
            )
        cx = c.x0 + (gi + 0.5) * slot
        c.parts.append(
            f'<text x="{cx:.1f}" y="{c.y0 + 14}" text-anchor="end" '
            f'transform="rotate(-30 {cx:.1f} {c.y0 + 14})">{escape(str(label))}</text>'
        )
    legend_y = c.y1 + 4
    for si, name in enumerate(names):
        color = _PALETTE[si % len(_PALETTE)]
        lx = c.x0 + 10
        c.parts.append(
            f'<rect x="{lx}" y="{legend_y + 14 * si - 8}" width="10" height="10" '
            f'fill="{color}"/>'
        )
        c.parts.append(
            f'<text x="{lx + 16}" y="{legend_y + 14 * si + 2}">{escape(str(name))}</text>'
        )
    svg = c.finish()
    if path is not None:
        write_atomic(path, svg)
    return svg


# -- report-aware helpers ------------------------------------------------


def _report_rows(report) -> dict:
    """Normalize a SuiteReport or its JSON dict to {name: (acc_by_seed, error)}."""
    rows = report["rows"] if isinstance(report, dict) else report.rows
    out = {}
    for name, row in rows.items():
        if isinstance(row, dict):
            out[name] = (row.get("acc_by_seed") or {}, row.get("error"))
        else:
            out[name] = (row.acc_by_seed(), row.error)
    return out


def _report_sweep(report) -> dict:
    return report.get("sweep", {}) if isinstance(report, dict) else report.sweep


def plot_accuracy_bars(report, path=None, title: str = "hypothesis accuracy") -> str:
    """Mean accuracy per hypothesis with across-seed std whiskers."""
    labels, means, stds = [], [], []
    for name, (acc_by_seed, error) in _report_rows(report).items():
        labels.append(name)
        if error is not None or not acc_by_seed:
            means.append(None)
            stds.append(None)
            continue
        vals = list(acc_by_seed.values())
        means.append(float(np.mean(vals)))
        stds.append(float(np.std(vals)) if len(vals) > 1 else 0.0)
    return svg_bar_chart(labels, means, stds, title=title, ylabel="accuracy", path=path)


def plot_lambda_sweep(report, path=None, title: str = "log-linear weight sweep") -> str:
    """Per-seed accuracy curves over the interpolation weight grid."""
    sweep = _report_sweep(report)
    if not sweep:
        raise ValueError("report has no sweep data")
    grid = sweep["grid"]
    series = {f"seed {s}": accs for s, accs in sweep["acc_by_seed"].items()}
    if len(series) > 1:
        mat = np.array(list(sweep["acc_by_seed"].values()), dtype=np.float64)
        series["mean"] = mat.mean(axis=0).tolist()
    return svg_line_chart(
        grid, series, title=title, xlabel="global weight", ylabel="accuracy", path=path
    )


def plot_noise_comparison(
    reports: dict,
    hypotheses=("local", "global", "unigram"),
    path=None,
    title: str = "train-time noise",
) -> str:
    """Mean accuracy of selected hypotheses across noise conditions."""
    group_labels = list(hypotheses)
    series = {}
    for cond, report in reports.items():
        rows = _report_rows(report)
        vals = []
        for h in hypotheses:
            entry = rows.get(h)
            if entry is None or entry[1] is not None or not entry[0]:
                vals.append(None)
            else:
                vals.append(float(np.mean(list(entry[0].values()))))
        series[cond] = vals
    return svg_grouped_bars(group_labels, series, title=title, ylabel="accuracy", path=path)
