"""Self-contained log-log SVG plots: decade gridlines, one polyline per series,
optional per-point markers and dashed fitted power laws."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 440
MARGIN = dict(left=78, right=170, top=36, bottom=56)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _range(values):
    lo, hi = math.log10(min(values)), math.log10(max(values))
    pad = 0.05 * max(hi - lo, 0.2)
    return lo - pad, hi + pad


def _fmt(x):
    return format(x, ".6g")


def loglog_svg(series, title="", xlabel="", ylabel="", markers=None, fits=None) -> str:
    """Render series {name: (xs, ys)} on log-log axes.

    ``markers`` maps a name to extra (xs, ys) scatter points drawn in the
    series colour; ``fits`` maps a name to (slope, intercept) of
    log10(y) = slope * log10(x) + intercept, drawn dashed over the x range.
    Nonpositive values are skipped.
    """
    markers = markers or {}
    fits = fits or {}
    xs_all, ys_all = [], []
    for d in list(series.values()) + list(markers.values()):
        for x, y in zip(*d):
            if x > 0 and y > 0 and math.isfinite(x) and math.isfinite(y):
                xs_all.append(x)
                ys_all.append(y)
    if not xs_all:
        raise ValueError("nothing to plot")
    x0, x1 = _range(xs_all)
    y0, y1 = _range(ys_all)
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(x):
        return MARGIN["left"] + (math.log10(x) - x0) / (x1 - x0) * pw

    def py(y):
        return MARGIN["top"] + (y1 - math.log10(y)) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<g id="axes" data-xmin="{_fmt(10 ** x0)}" data-xmax="{_fmt(10 ** x1)}" '
           f'data-ymin="{_fmt(10 ** y0)}" data-ymax="{_fmt(10 ** y1)}">',
           f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
           f'fill="none" stroke="black"/>']
    # gridlines: decades solid, 2..9 multiples faint
    for lo, hi, axis in ((x0, x1, "x"), (y0, y1, "y")):
        for k in range(math.floor(lo), math.ceil(hi) + 1):
            for m in range(1, 10):
                v = m * 10.0 ** k
                if not lo <= math.log10(v) <= hi:
                    continue
                major = m == 1
                style = 'stroke="#bbbbbb"' if major else 'stroke="#eeeeee"'
                cls = "grid-major" if major else "grid-minor"
                if axis == "x":
                    p = px(v)
                    out.append(f'<line class="{cls}" x1="{p:.2f}" y1="{MARGIN["top"]}" x2="{p:.2f}" '
                               f'y2="{MARGIN["top"] + ph}" {style}/>')
                    if major or hi - lo < 1.2:
                        out.append(f'<text x="{p:.2f}" y="{MARGIN["top"] + ph + 16}" '
                                   f'text-anchor="middle">{_fmt(v)}</text>')
                else:
                    p = py(v)
                    out.append(f'<line class="{cls}" x1="{MARGIN["left"]}" y1="{p:.2f}" '
                               f'x2="{MARGIN["left"] + pw}" y2="{p:.2f}" {style}/>')
                    if major:
                        out.append(f'<text x="{MARGIN["left"] - 6}" y="{p + 4:.2f}" '
                                   f'text-anchor="end">1e{k}</text>')
    out.append("</g>")
    for t, (name, (xs, ys)) in enumerate(series.items()):
        color = PALETTE[t % len(PALETTE)]
        pts = [(px(x), py(y)) for x, y in zip(xs, ys) if x > 0 and y > 0 and math.isfinite(y)]
        coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
        out.append(f'<polyline class="series" data-name="{escape(name)}" points="{coords}" '
                   f'fill="none" stroke="{color}" stroke-width="2"/>')
        for a, b in pts:
            out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3" fill="{color}"/>')
        if name in markers:
            for x, y in zip(*markers[name]):
                if x > 0 and y > 0 and math.isfinite(y):
                    out.append(f'<circle class="marker" cx="{px(x):.2f}" cy="{py(y):.2f}" r="2" '
                               f'fill="none" stroke="{color}"/>')
        label = escape(name)
        if name in fits and all(math.isfinite(v) for v in fits[name]):
            s, c = fits[name]
            xa, xb = min(xs), max(xs)
            ya, yb = 10 ** (s * math.log10(xa) + c), 10 ** (s * math.log10(xb) + c)
            out.append(f'<line class="fit" data-name="{label}" data-slope="{_fmt(s)}" '
                       f'x1="{px(xa):.2f}" y1="{py(ya):.2f}" x2="{px(xb):.2f}" y2="{py(yb):.2f}" '
                       f'stroke="{color}" stroke-dasharray="5,4"/>')
            label += f" ({s:.2f})"
        ly = MARGIN["top"] + 14 + 18 * t
        lx = MARGIN["left"] + pw + 12
        out.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 24}" y="{ly}">{label}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="20" text-anchor="middle" '
               f'font-size="14">{escape(title)}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN["top"] + ph / 2:.1f})">{escape(ylabel)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def convergence_svg(rows, slope_rows) -> str:
    """Geometric mean over seeds per (kind, L), seed scatter, mean-slope fit lines."""
    kinds = list(dict.fromkeys(r.algorithm for r in rows))
    series, markers, fits = {}, {}, {}
    for k in kinds:
        good = [r for r in rows if r.algorithm == k and r.valid and r.grad_diff > 0]
        Ls = sorted({r.L for r in good})
        if not Ls:
            continue
        gm = [float(np.exp(np.mean([np.log(r.grad_diff) for r in good if r.L == L]))) for L in Ls]
        series[k] = (Ls, gm)
        markers[k] = ([r.L for r in good], [r.grad_diff for r in good])
        s = [v for a, _, v in slope_rows if a == k and math.isfinite(v)]
        if s:
            slope = float(np.mean(s))
            icpt = float(np.mean(np.log10(gm)) - slope * np.mean(np.log10(Ls)))
            fits[k] = (slope, icpt)
    return loglog_svg(series, "gradient difference at (L/2, L/2, L/2)", "L",
                      "|grad u(2L) - grad u(L)|", markers, fits)


def growth_svg(rows) -> str:
    r = [row.r for row in rows]
    series = {"phi_l2": (r, [row.phi_l2 for row in rows]),
              "psi_fluct / sqrt(r)": (r, [row.psi_fluct / math.sqrt(row.r) for row in rows])}
    return loglog_svg(series, "corrector growth", "r", "box average")
