"""CSV and SVG output for error tables."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

from .montecarlo import ErrorTable

RESULTS_HEADER = ["solver", "param", "mean_steps", "error_p", "stderr", "divergences"]
ORDERS_HEADER = ["solver", "points", "order", "slope", "intercept", "residual", "order_vs_resolution", "excluded"]

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def fmt(x) -> str:
    """Round-trip float formatting with ``.`` as decimal separator, locale-independent."""
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def results_csv(table: ErrorTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULTS_HEADER)
    for r in table.rows:
        w.writerow([r.solver, r.candidate.param_str(), fmt(r.mean_steps), fmt(r.error_p), fmt(r.stderr), r.divergences])
    return buf.getvalue()


def orders_csv(table: ErrorTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ORDERS_HEADER)
    for solver, fit in table.fits.items():
        res = table.resolution_fits.get(solver)
        excluded = ";".join(f"{fmt(x)}:{fmt(e)}" for x, e in fit.excluded)
        w.writerow([solver, fit.n_points, fmt(fit.order), fmt(fit.slope), fmt(fit.intercept), fmt(fit.residual),
                    fmt(res.order) if res else "nan", excluded])
    return buf.getvalue()


def _nice_range(values):
    lo, hi = math.floor(min(values)), math.ceil(max(values))
    if lo == hi:
        hi += 1
    return lo, hi


def loglog_svg(table: ErrorTable, title: str = "") -> str:
    """Hand-built SVG: log2(error) against log2(mean steps), one polyline per solver."""
    series = {}
    for r in table.rows:
        if r.divergences == 0 and r.error_p > 0 and math.isfinite(r.error_p):
            series.setdefault(r.solver, []).append((math.log2(r.mean_steps), math.log2(r.error_p)))
    W, H = 640, 480
    left, right, top, bottom = 70, 170, 40, 60
    pw, ph = W - left - right, H - top - bottom
    xs = [x for pts in series.values() for x, _ in pts] or [0.0, 1.0]
    ys = [y for pts in series.values() for _, y in pts] or [0.0, 1.0]
    x0, x1 = _nice_range(xs)
    y0, y1 = _nice_range(ys)

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (y1 - y) / (y1 - y0) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
        'font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{left + pw / 2:.1f}" y="22" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for k in range(x0, x1 + 1):
        X = px(k)
        out.append(f'<line x1="{X:.1f}" y1="{top + ph}" x2="{X:.1f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<line x1="{X:.1f}" y1="{top}" x2="{X:.1f}" y2="{top + ph}" stroke="#dddddd"/>')
        out.append(f'<text x="{X:.1f}" y="{top + ph + 20}" text-anchor="middle">2^{k}</text>')
    for k in range(y0, y1 + 1):
        Y = py(k)
        out.append(f'<line x1="{left - 5}" y1="{Y:.1f}" x2="{left}" y2="{Y:.1f}" stroke="black"/>')
        out.append(f'<line x1="{left}" y1="{Y:.1f}" x2="{left + pw}" y2="{Y:.1f}" stroke="#dddddd"/>')
        out.append(f'<text x="{left - 8}" y="{Y + 4:.1f}" text-anchor="end">2^{k}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{H - 15}" text-anchor="middle">mean number of steps</text>')
    out.append(f'<text x="18" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {top + ph / 2:.1f})">L^p error at T (p={fmt(table.p)})</text>')
    for i, (solver, pts) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = sorted(pts)
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in pts:
            out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3.5" fill="{color}"/>')
        ly = top + 20 + 22 * i
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 36}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        label = solver
        if solver in table.fits:
            label += f" ({table.fits[solver].order:.2f})"
        out.append(f'<text x="{left + pw + 42}" y="{ly + 4}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_results(table: ErrorTable, out_dir, title: str = "") -> list:
    """Write results.csv, orders.csv and loglog.svg; returns the written paths."""
    if not table.rows:
        raise ValueError("empty error table")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "results.csv": results_csv(table),
        "orders.csv": orders_csv(table),
        "loglog.svg": loglog_svg(table, title),
    }
    written = []
    for name, text in files.items():
        path = out / name
        path.write_text(text, encoding="utf-8")
        written.append(path)
    return written
