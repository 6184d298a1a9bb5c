"""Minimal deterministic SVG charts: power curves and rate histograms.

Figures are plain text SVG built with fixed-precision coordinates, so a
rerun on the same inputs produces byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

from .census import StudyGroup, Village

PALETTE = ("#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377")

_PANEL_W = 220
_PANEL_H = 170
_MARGIN_L = 56
_MARGIN_T = 46
_GAP = 26


def _f(v: float) -> str:
    return f"{v:.2f}"


class _Svg:
    def __init__(self, width: float, height: float):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" '
            f'height="{_f(height)}" viewBox="0 0 {_f(width)} {_f(height)}" '
            f'font-family="Helvetica, Arial, sans-serif">'
        ]

    def line(self, x1, y1, x2, y2, stroke="#000000", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
            f'stroke="{stroke}" stroke-width="{_f(width)}"{d}/>'
        )

    def polyline(self, points, stroke, width=1.6):
        pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in points)
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{stroke}" '
            f'stroke-width="{_f(width)}"/>'
        )

    def circle(self, x, y, r, fill):
        self.parts.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(r)}" fill="{fill}"/>')

    def rect(self, x, y, w, h, fill, opacity=1.0):
        self.parts.append(
            f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" '
            f'fill="{fill}" fill-opacity="{_f(opacity)}"/>'
        )

    def text(self, x, y, s, size=10, anchor="middle", fill="#000000"):
        self.parts.append(
            f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}" '
            f'fill="{fill}">{s}</text>'
        )

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _panel_axes(svg: _Svg, x0, y0, xs, title):
    svg.rect(x0, y0, _PANEL_W, _PANEL_H, "#f7f7f7")
    svg.text(x0 + _PANEL_W / 2, y0 - 6, title, size=10)
    for frac in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
        y = y0 + _PANEL_H * (1 - frac)
        svg.line(x0, y, x0 + _PANEL_W, y, stroke="#dddddd", width=0.6)
        svg.text(x0 - 6, y + 3, f"{frac:.1f}", size=8, anchor="end")
    for x_val in xs:
        px = x0 + _PANEL_W * (x_val - xs[0]) / (xs[-1] - xs[0] if xs[-1] != xs[0] else 1)
        svg.line(px, y0 + _PANEL_H, px, y0 + _PANEL_H + 3, stroke="#555555", width=0.8)
        svg.text(px, y0 + _PANEL_H + 13, str(x_val), size=8)
    # target power reference
    y_ref = y0 + _PANEL_H * (1 - 0.8)
    svg.line(x0, y_ref, x0 + _PANEL_W, y_ref, stroke="#888888", width=0.9, dash="4,3")


def write_power_figure(
    rows: list[dict],
    method: str,
    icc: float,
    path: str | Path,
    title: str | None = None,
) -> None:
    """Power vs arm size, one line per effect size, panels by rate x coefficient set.

    ``rows`` are results-file records; null (zero effect) rows are skipped.
    Columns are control-arm rates, panel rows are coefficient sets, and a
    dashed reference marks 80% power.
    """
    data = [
        r
        for r in rows
        if r["method"] == method and abs(r["icc"] - icc) < 1e-9 and r["delta_r"] > 0.0
    ]
    if not data:
        raise ValueError(f"no power rows for method '{method}' at icc {icc:g}")

    pi0s = sorted({r["pi0"] for r in data})
    coefs = sorted({r["coef_set"] for r in data})
    deltas = sorted({r["delta_r"] for r in data})
    ns = sorted({r["n"] for r in data})

    width = _MARGIN_L + len(pi0s) * (_PANEL_W + _GAP)
    height = _MARGIN_T + len(coefs) * (_PANEL_H + _GAP + 22) + 30
    svg = _Svg(width, height)
    svg.text(
        width / 2,
        16,
        title or f"Power of {method} at one-sided level 0.05 (ICC {icc:g})",
        size=12,
    )

    for ci, coef in enumerate(coefs):
        for pi, pi0 in enumerate(pi0s):
            x0 = _MARGIN_L + pi * (_PANEL_W + _GAP)
            y0 = _MARGIN_T + ci * (_PANEL_H + _GAP + 22)
            _panel_axes(svg, x0, y0, ns, f"control rate {pi0:g}, set {coef}")
            for di, delta in enumerate(deltas):
                pts = []
                for r in sorted(
                    (
                        r
                        for r in data
                        if r["pi0"] == pi0 and r["coef_set"] == coef and r["delta_r"] == delta
                    ),
                    key=lambda r: r["n"],
                ):
                    px = x0 + _PANEL_W * (r["n"] - ns[0]) / (ns[-1] - ns[0] if ns[-1] != ns[0] else 1)
                    py = y0 + _PANEL_H * (1 - r["rejection_rate"])
                    pts.append((px, py))
                if pts:
                    color = PALETTE[di % len(PALETTE)]
                    svg.polyline(pts, color)
                    for px, py in pts:
                        svg.circle(px, py, 2.0, color)

    legend_y = height - 12
    lx = _MARGIN_L
    for di, delta in enumerate(deltas):
        color = PALETTE[di % len(PALETTE)]
        svg.line(lx, legend_y - 4, lx + 18, legend_y - 4, stroke=color, width=2)
        svg.text(lx + 22, legend_y, f"reduction {delta:g}", size=9, anchor="start")
        lx += 110
    svg.text(width / 2, height - 26, "villages per arm", size=10)

    Path(path).write_text(svg.render())


def write_rate_histogram(census: list[Village], path: str | Path, bins: int = 20) -> None:
    """Baseline unvaccinated-rate histogram, one colored series per arm."""
    width = 520.0
    height = 300.0
    x0, y0, pw, ph = 50.0, 40.0, 440.0, 220.0
    svg = _Svg(width, height)
    svg.text(width / 2, 18, "Baseline village rates of unvaccinated children by arm", size=12)

    groups = [
        (StudyGroup.GROUP1_CONTROL, PALETTE[0], "control"),
        (StudyGroup.GROUP2_INTERVENTION, PALETTE[1], "intervention"),
    ]
    counts = {}
    peak = 1
    for group, _, _ in groups:
        rates = [v.baseline_rate for v in census if v.group is group]
        hist = [0] * bins
        for r in rates:
            hist[min(int(r * bins), bins - 1)] += 1
        counts[group] = hist
        peak = max(peak, max(hist) if hist else 1)

    bw = pw / bins / 2
    for gi, (group, color, label) in enumerate(groups):
        for b, c in enumerate(counts[group]):
            if c == 0:
                continue
            h = ph * c / peak
            svg.rect(x0 + (2 * b + gi) * bw, y0 + ph - h, bw, h, color, opacity=0.85)
        svg.rect(x0 + pw - 150, y0 + 8 + gi * 16, 10, 10, color)
        svg.text(x0 + pw - 135, y0 + 17 + gi * 16, label, size=9, anchor="start")

    svg.line(x0, y0 + ph, x0 + pw, y0 + ph, stroke="#000000", width=1)
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        px = x0 + pw * frac
        svg.line(px, y0 + ph, px, y0 + ph + 4, stroke="#000000", width=0.8)
        svg.text(px, y0 + ph + 16, f"{frac:.2f}", size=9)
    svg.text(x0 + pw / 2, height - 10, "baseline rate", size=10)
    Path(path).write_text(svg.render())
