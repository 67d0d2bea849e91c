"""Static SVG figures derived from stat reports.

Plots are derived views, never primary data: every series drawn into an
SVG is also written to a CSV of the same stem, and the SVG text itself
is deterministic for a given report set.  Fixed canvas, fixed float
formatting, no timestamps, no external assets.

For each tracker in the report set there is one line plot and one box
plot per statistic per coordinate.  Line plots put the statistic over
its natural axis (frame for timestep rows, age for track-age rows) with
one polyline per report, which in a speed sweep means one line per
playback speed.  Box plots summarize the same included values as one
box per report: median line, mean marker, quartile box, Tukey whiskers.
"""

from __future__ import annotations

import math
from pathlib import Path

from .stats import BoxSummary, StatReport, summarize_box

# canvas geometry in px
_W, _H = 640, 400
_ML, _MR, _MT, _MB = 64, 18, 36, 48

_PALETTE = ("#2a6fb0", "#c03a2b", "#2e8b57", "#8a5fbf", "#b8860b", "#4f5b66")


def _num(v: float) -> str:
    """Stable short decimal for SVG coordinates."""
    s = f"{v:.2f}"
    s = s.rstrip("0").rstrip(".")
    return s if s not in ("", "-0") else "0"


def _csv_num(v: float) -> str:
    return f"{float(v):.10g}"


def ticks(lo: float, hi: float, want: int = 5) -> list[float]:
    """Round tick positions covering [lo, hi] at a 1/2/5 step."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return [0.0]
    if hi <= lo:
        pad = 0.5 if lo == 0 else abs(lo) * 0.5
        lo, hi = lo - pad, hi + pad
    raw = (hi - lo) / max(want, 2)
    mag = 10.0 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1.0, 2.0, 5.0, 10.0) if raw <= m * mag)
    # integer multiples of the step, so long axes do not accumulate error
    first = math.ceil(lo / step - 1e-9)
    last = math.floor(hi / step + 1e-9)
    return [0.0 if i == 0 else i * step for i in range(first, last + 1)]


def _tick_label(value: float, step: float) -> str:
    decimals = max(0, -math.floor(math.log10(step) + 1e-9))
    return f"{value:.{decimals}f}"


def _span(values) -> tuple[float, float]:
    lo = min(values)
    hi = max(values)
    # keep zero in frame when the data is one-signed; sign is meaning here
    if lo > 0:
        lo = 0.0
    if hi < 0:
        hi = 0.0
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


class _Canvas:
    """Accumulates SVG elements on the fixed plot canvas."""

    def __init__(self, title: str, xlabel: str, ylabel: str):
        self.parts: list[str] = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}" font-family="DejaVu Sans, sans-serif">',
            f'<rect width="{_W}" height="{_H}" fill="white"/>',
            f'<text x="{_W / 2:.0f}" y="20" font-size="14" text-anchor="middle">'
            f"{title}</text>",
            f'<text x="{(_ML + _W - _MR) / 2:.0f}" y="{_H - 10}" font-size="12" '
            f'text-anchor="middle">{xlabel}</text>',
            f'<text x="14" y="{(_MT + _H - _MB) / 2:.0f}" font-size="12" '
            f'text-anchor="middle" transform="rotate(-90 14 {(_MT + _H - _MB) / 2:.0f})">'
            f"{ylabel}</text>",
        ]

    def x_px(self, v: float) -> float:
        lo, hi = self.xr
        return _ML + (v - lo) / (hi - lo) * (_W - _ML - _MR)

    def y_px(self, v: float) -> float:
        lo, hi = self.yr
        return _H - _MB - (v - lo) / (hi - lo) * (_H - _MT - _MB)

    def set_ranges(self, xr: tuple[float, float], yr: tuple[float, float]) -> None:
        self.xr = xr
        self.yr = yr
        xt = ticks(*xr)
        yt = ticks(*yr)
        xstep = xt[1] - xt[0] if len(xt) > 1 else 1.0
        ystep = yt[1] - yt[0] if len(yt) > 1 else 1.0
        for t in xt:
            px = self.x_px(t)
            self.parts.append(
                f'<line x1="{_num(px)}" y1="{_MT}" x2="{_num(px)}" y2="{_H - _MB}" '
                f'stroke="#dddddd" stroke-width="1"/>'
            )
            self.parts.append(
                f'<text x="{_num(px)}" y="{_H - _MB + 16}" font-size="11" '
                f'text-anchor="middle">{_tick_label(t, xstep)}</text>'
            )
        for t in yt:
            py = self.y_px(t)
            self.parts.append(
                f'<line x1="{_ML}" y1="{_num(py)}" x2="{_W - _MR}" y2="{_num(py)}" '
                f'stroke="#dddddd" stroke-width="1"/>'
            )
            self.parts.append(
                f'<text x="{_ML - 6}" y="{_num(py + 4)}" font-size="11" '
                f'text-anchor="end">{_tick_label(t, ystep)}</text>'
            )
        self.parts.append(
            f'<rect x="{_ML}" y="{_MT}" width="{_W - _ML - _MR}" '
            f'height="{_H - _MT - _MB}" fill="none" stroke="#444444"/>'
        )

    def legend(self, labels: list[str]) -> None:
        x = _W - _MR - 150
        y = _MT + 10
        for i, label in enumerate(labels):
            color = _PALETTE[i % len(_PALETTE)]
            self.parts.append(
                f'<line x1="{x}" y1="{y + 16 * i}" x2="{x + 22}" y2="{y + 16 * i}" '
                f'stroke="{color}" stroke-width="2"/>'
            )
            self.parts.append(
                f'<text x="{x + 28}" y="{y + 16 * i + 4}" font-size="11">{label}</text>'
            )

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def line_figure(
    title: str, xlabel: str, ylabel: str, series: list[tuple[str, list, list]]
) -> str:
    """SVG line plot; ``series`` is a list of (label, xs, ys)."""
    canvas = _Canvas(title, xlabel, ylabel)
    all_x = [x for _, xs, _ in series for x in xs]
    all_y = [y for _, _, ys in series for y in ys]
    xr = (min(all_x), max(all_x)) if all_x else (0.0, 1.0)
    if xr[0] == xr[1]:
        xr = (xr[0] - 0.5, xr[1] + 0.5)
    canvas.set_ranges(xr, _span(all_y) if all_y else (0.0, 1.0))
    for i, (_, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(
            f"{_num(canvas.x_px(x))},{_num(canvas.y_px(y))}" for x, y in zip(xs, ys)
        )
        if len(xs) == 1:
            canvas.parts.append(
                f'<circle cx="{_num(canvas.x_px(xs[0]))}" cy="{_num(canvas.y_px(ys[0]))}" '
                f'r="3" fill="{color}"/>'
            )
        elif pts:
            canvas.parts.append(
                f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
            )
    canvas.legend([label for label, _, _ in series])
    return canvas.render()


def box_figure(title: str, ylabel: str, boxes: list[tuple[str, BoxSummary]]) -> str:
    """SVG box plot, one Tukey box per labeled group."""
    canvas = _Canvas(title, "", ylabel)
    lo = min(min(b.whisker_lo, b.mean) for _, b in boxes)
    hi = max(max(b.whisker_hi, b.mean) for _, b in boxes)
    canvas.set_ranges((0.0, float(len(boxes))), _span([lo, hi]))
    half = 0.28
    for i, (label, b) in enumerate(boxes):
        cx = i + 0.5
        color = _PALETTE[i % len(_PALETTE)]
        x0, x1 = canvas.x_px(cx - half), canvas.x_px(cx + half)
        xm = canvas.x_px(cx)
        yq1, yq3 = canvas.y_px(b.q1), canvas.y_px(b.q3)
        ylo, yhi = canvas.y_px(b.whisker_lo), canvas.y_px(b.whisker_hi)
        ymed, ymean = canvas.y_px(b.median), canvas.y_px(b.mean)
        cap = (x1 - x0) * 0.25
        canvas.parts.extend(
            [
                f'<line x1="{_num(xm)}" y1="{_num(ylo)}" x2="{_num(xm)}" y2="{_num(yq1)}" stroke="{color}"/>',
                f'<line x1="{_num(xm)}" y1="{_num(yq3)}" x2="{_num(xm)}" y2="{_num(yhi)}" stroke="{color}"/>',
                f'<line x1="{_num(xm - cap)}" y1="{_num(ylo)}" x2="{_num(xm + cap)}" y2="{_num(ylo)}" stroke="{color}"/>',
                f'<line x1="{_num(xm - cap)}" y1="{_num(yhi)}" x2="{_num(xm + cap)}" y2="{_num(yhi)}" stroke="{color}"/>',
                f'<rect x="{_num(x0)}" y="{_num(yq3)}" width="{_num(x1 - x0)}" '
                f'height="{_num(yq1 - yq3)}" fill="{color}" fill-opacity="0.15" stroke="{color}"/>',
                f'<line x1="{_num(x0)}" y1="{_num(ymed)}" x2="{_num(x1)}" y2="{_num(ymed)}" '
                f'stroke="{color}" stroke-width="2"/>',
                f'<path d="M {_num(xm)} {_num(ymean - 4)} L {_num(xm + 4)} {_num(ymean)} '
                f'L {_num(xm)} {_num(ymean + 4)} L {_num(xm - 4)} {_num(ymean)} Z" '
                f'fill="{color}"/>',
                f'<text x="{_num(xm)}" y="{_H - _MB + 16}" font-size="11" '
                f'text-anchor="middle">{label}</text>',
            ]
        )
    return canvas.render()


def _line_csv(series: list[tuple[str, list, list]]) -> str:
    rows = ["series,x,y"]
    for label, xs, ys in series:
        rows.extend(f"{label},{_csv_num(x)},{_csv_num(y)}" for x, y in zip(xs, ys))
    return "\n".join(rows) + "\n"


def _box_csv(boxes: list[tuple[str, BoxSummary]]) -> str:
    rows = ["series,median,mean,q1,q3,whisker_lo,whisker_hi"]
    for label, b in boxes:
        cells = (b.median, b.mean, b.q1, b.q3, b.whisker_lo, b.whisker_hi)
        rows.append(label + "," + ",".join(_csv_num(v) for v in cells))
    return "\n".join(rows) + "\n"


# statistic extractors: name -> (axis, row list attr, value function)
_TIMESTEP_STATS = {
    "mu_u": lambda r: r.mu[0],
    "mu_v": lambda r: r.mu[1],
    "kappa_u": lambda r: r.kappa[0],
    "kappa_v": lambda r: r.kappa[1],
    "sigma_uu": lambda r: None if r.sigma is None else r.sigma[0, 0],
    "sigma_vv": lambda r: None if r.sigma is None else r.sigma[1, 1],
}
_AGE_STATS = {
    "nu_u": lambda r: r.nu[0],
    "nu_v": lambda r: r.nu[1],
    "eta_u": lambda r: r.eta[0],
    "eta_v": lambda r: r.eta[1],
    "phi_uu": lambda r: None if r.phi is None else r.phi[0, 0],
    "phi_vv": lambda r: None if r.phi is None else r.phi[1, 1],
}


def _series_labels(reports: list[StatReport]) -> list[str]:
    motions = {r.motion for r in reports}
    if len(motions) > 1:
        return [f"{r.motion} s{r.speed}" for r in reports]
    return [f"speed {r.speed}" for r in reports]


def _stat_series(reports, labels, rows_of, key_of, value_of):
    series = []
    for label, report in zip(labels, reports):
        pairs = [
            (key_of(row), value_of(row))
            for row in rows_of(report)
            if row.included and value_of(row) is not None
        ]
        if pairs:
            series.append((label, [p[0] for p in pairs], [p[1] for p in pairs]))
    return series


def figures_for_reports(
    reports: list[StatReport],
) -> dict[str, tuple[str, str]]:
    """Builds every figure for the given reports: name -> (svg, csv).

    Reports are grouped by tracker; within a tracker the series order
    follows ascending speed.  Figures whose every series is empty are
    omitted rather than drawn blank.
    """
    out: dict[str, tuple[str, str]] = {}
    trackers = sorted({r.tracker for r in reports})
    for tracker in trackers:
        group = sorted(
            (r for r in reports if r.tracker == tracker),
            key=lambda r: (r.motion, r.speed),
        )
        labels = _series_labels(group)
        specs = [
            (name, lambda r: r.timestep, lambda row: row.frame, fn, "frame t", "px")
            for name, fn in _TIMESTEP_STATS.items()
        ] + [
            (name, lambda r: r.age, lambda row: row.age, fn, "age k", "px")
            for name, fn in _AGE_STATS.items()
        ]
        for name, rows_of, key_of, value_of, xlabel, unit in specs:
            ylabel = f"{name} [{unit}2]" if name.startswith(("sigma", "phi")) else f"{name} [{unit}]"
            series = _stat_series(group, labels, rows_of, key_of, value_of)
            if series:
                title = f"{tracker}: {name}"
                out[f"{tracker}_{name}_line"] = (
                    line_figure(title, xlabel, ylabel, series),
                    _line_csv(series),
                )
                boxes = [(label, summarize_box(ys)) for label, _, ys in series]
                out[f"{tracker}_{name}_box"] = (
                    box_figure(title, ylabel, boxes),
                    _box_csv(boxes),
                )
        ratio_series = [
            (label, [r.frame for r in rep.outliers], [r.ratio for r in rep.outliers])
            for label, rep in zip(labels, group)
            if rep.outliers
        ]
        if ratio_series:
            out[f"{tracker}_outlier_ratio_line"] = (
                line_figure(f"{tracker}: outlier ratio", "frame t", "f1 / F_prev", ratio_series),
                _line_csv(ratio_series),
            )
            boxes = [(label, summarize_box(ys)) for label, _, ys in ratio_series]
            out[f"{tracker}_outlier_ratio_box"] = (
                box_figure(f"{tracker}: outlier ratio", "f1 / F_prev", boxes),
                _box_csv(boxes),
            )
        life_series = []
        for label, rep in zip(labels, group):
            counts = rep.lifetime.counts
            if counts:
                keys = sorted(counts)
                life_series.append((label, keys, [counts[k] for k in keys]))
        if life_series:
            out[f"{tracker}_lifetimes_line"] = (
                line_figure(f"{tracker}: lifetimes", "lifetime [frames]", "tracks", life_series),
                _line_csv(life_series),
            )
    return out


def write_figures(reports: list[StatReport], outdir) -> list[str]:
    """Writes all figures (SVG + CSV pairs) into ``outdir``; returns names."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    figures = figures_for_reports(reports)
    for name in sorted(figures):
        svg, csv = figures[name]
        (outdir / f"{name}.svg").write_text(svg)
        (outdir / f"{name}.csv").write_text(csv)
    return sorted(figures)
