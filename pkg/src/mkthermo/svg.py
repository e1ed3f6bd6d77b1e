"""Minimal deterministic SVG plots (no rendering dependency).

Coordinates are printed with a fixed number of decimals so figures are
byte-stable and diff cleanly.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _num(x: float) -> str:
    return f"{x:.2f}"


def _tick_label(v: float) -> str:
    return f"{v:.3g}"


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return ticks


class Figure:
    """One set of axes.  ``xlog``/``ylog`` select logarithmic axes."""

    def __init__(self, title: str = "", xlabel: str = "", ylabel: str = "",
                 width: int = 640, height: int = 440, xlog: bool = False, ylog: bool = False,
                 equal_aspect: bool = False):
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.width, self.height = width, height
        self.xlog, self.ylog = xlog, ylog
        self.equal_aspect = equal_aspect
        self.margin = (70, 20, 40, 55)  # left, right, top, bottom
        self.items: list[tuple] = []
        self.legend: list[tuple[str, str]] = []
        self._x: list[float] = []
        self._y: list[float] = []

    # -- data --------------------------------------------------------------
    def _track(self, x, y):
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        ok = np.isfinite(x) & np.isfinite(y)
        if self.xlog:
            ok &= x > 0
        if self.ylog:
            ok &= y > 0
        self._x.extend(x[ok].tolist())
        self._y.extend(y[ok].tolist())

    def line(self, x, y, color=COLORS[0], width=1.5, dash: str | None = None, label=None,
             css_class: str | None = None):
        self._track(x, y)
        self.items.append(("line", np.asarray(x, float), np.asarray(y, float), color, width, dash,
                           css_class))
        if label:
            self.legend.append((label, color))

    def scatter(self, x, y, color=COLORS[0], radius=3.0, label=None, xerr=None, yerr=None):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        self._track(x, y)
        if yerr is not None:
            yerr = np.asarray(yerr, float)
            self._track(x, y + np.nan_to_num(yerr))
        if xerr is not None:
            xerr = np.asarray(xerr, float)
            self._track(x + np.nan_to_num(xerr), y)
        self.items.append(("scatter", x, y, color, radius, xerr, yerr))
        if label:
            self.legend.append((label, color))

    def band(self, x, lower, upper, color=COLORS[1], opacity=0.25, label=None):
        self._track(x, lower)
        self._track(x, upper)
        self.items.append(("band", np.asarray(x, float), np.asarray(lower, float),
                           np.asarray(upper, float), color, opacity))
        if label:
            self.legend.append((label, color))

    def bars(self, edges, counts, color=COLORS[0], label=None):
        edges = np.asarray(edges, float)
        counts = np.asarray(counts, float)
        self._track(edges[:-1], counts)
        self._track(edges[1:], counts)
        self.items.append(("bars", edges, counts, color))
        if label:
            self.legend.append((label, color))

    def arrow(self, x0, y0, x1, y1, color=COLORS[2], label=None):
        self._track([x0, x1], [y0, y1])
        self.items.append(("arrow", x0, y0, x1, y1, color))
        if label:
            self.legend.append((label, color))

    # -- rendering ---------------------------------------------------------
    def _limits(self):
        xs = np.array(self._x) if self._x else np.array([0.0, 1.0])
        ys = np.array(self._y) if self._y else np.array([0.0, 1.0])
        lims = []
        for v, log in ((xs, self.xlog), (ys, self.ylog)):
            lo, hi = float(v.min()), float(v.max())
            if log:
                lo, hi = math.log10(lo), math.log10(hi)
            if hi == lo:
                lo, hi = lo - 0.5, hi + 0.5
            pad = 0.05 * (hi - lo)
            lims.append((lo - pad, hi + pad))
        (x0, x1), (y0, y1) = lims
        if self.equal_aspect:
            pw, ph = self._plot_size()
            sx, sy = (x1 - x0) / pw, (y1 - y0) / ph
            s = max(sx, sy)
            cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            x0, x1 = cx - s * pw / 2, cx + s * pw / 2
            y0, y1 = cy - s * ph / 2, cy + s * ph / 2
        return x0, x1, y0, y1

    def _plot_size(self):
        left, right, top, bottom = self.margin
        return self.width - left - right, self.height - top - bottom

    def to_svg(self) -> str:
        left, right, top, bottom = self.margin
        pw, ph = self._plot_size()
        x0, x1, y0, y1 = self._limits()

        def tx(v):
            v = np.asarray(v, float)
            if self.xlog:
                with np.errstate(divide="ignore", invalid="ignore"):
                    v = np.log10(v)
            return left + (v - x0) / (x1 - x0) * pw

        def ty(v):
            v = np.asarray(v, float)
            if self.ylog:
                with np.errstate(divide="ignore", invalid="ignore"):
                    v = np.log10(v)
            return top + ph - (v - y0) / (y1 - y0) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
               f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">',
               f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="white"/>',
               f'<defs><clipPath id="plot"><rect x="{left}" y="{top}" width="{pw}" '
               f'height="{ph}"/></clipPath></defs>']
        out.append('<g clip-path="url(#plot)">')
        for item in self.items:
            out.extend(self._render(item, tx, ty))
        out.append("</g>")
        out.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" '
                   'stroke="black"/>')
        out.extend(self._axes(tx, ty, x0, x1, y0, y1))
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def _polyline(self, px, py, color, width, dash=None, fill="none", opacity=None,
                  css_class=None):
        ok = np.isfinite(px) & np.isfinite(py)
        pts = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(px[ok], py[ok]))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        if css_class:
            extra += f' class="{escape(css_class)}"'
        if opacity is not None:
            extra += f' fill-opacity="{opacity}"'
        tag = "polygon" if fill != "none" else "polyline"
        stroke = "none" if fill != "none" else color
        return (f'<{tag} points="{pts}" fill="{fill}" stroke="{stroke}" '
                f'stroke-width="{width}"{extra}/>')

    def _render(self, item, tx, ty):
        kind = item[0]
        if kind == "line":
            _, x, y, color, width, dash, css_class = item
            return [self._polyline(tx(x), ty(y), color, width, dash, css_class=css_class)]
        if kind == "band":
            _, x, lo, hi, color, opacity = item
            px = np.concatenate([tx(x), tx(x)[::-1]])
            py = np.concatenate([ty(hi), ty(lo)[::-1]])
            return [self._polyline(px, py, color, 0, fill=color, opacity=opacity)]
        if kind == "bars":
            _, edges, counts, color = item
            xs = np.repeat(edges, 2)[1:-1]
            ys = np.repeat(counts, 2)
            return [self._polyline(tx(xs), ty(ys), color, 1.0)]
        if kind == "arrow":
            _, a, b, c, d, color = item
            return [f'<line x1="{_num(float(tx(a)))}" y1="{_num(float(ty(b)))}" '
                    f'x2="{_num(float(tx(c)))}" y2="{_num(float(ty(d)))}" stroke="{color}" '
                    'stroke-width="2"/>',
                    f'<circle cx="{_num(float(tx(c)))}" cy="{_num(float(ty(d)))}" r="3" '
                    f'fill="{color}"/>']
        _, x, y, color, radius, xerr, yerr = item
        px, py = tx(x), ty(y)
        out = []
        for i in range(len(x)):
            if not (np.isfinite(px[i]) and np.isfinite(py[i])):
                continue
            if yerr is not None and np.isfinite(yerr[i]):
                out.append(f'<line x1="{_num(px[i])}" y1="{_num(float(ty(y[i] - yerr[i])))}" '
                           f'x2="{_num(px[i])}" y2="{_num(float(ty(y[i] + yerr[i])))}" '
                           f'stroke="{color}"/>')
            if xerr is not None and np.isfinite(xerr[i]):
                out.append(f'<line x1="{_num(float(tx(x[i] - xerr[i])))}" y1="{_num(py[i])}" '
                           f'x2="{_num(float(tx(x[i] + xerr[i])))}" y2="{_num(py[i])}" '
                           f'stroke="{color}"/>')
            out.append(f'<circle cx="{_num(px[i])}" cy="{_num(py[i])}" r="{radius}" '
                       f'fill="{color}"/>')
        return out

    def _axes(self, tx, ty, x0, x1, y0, y1):
        left, right, top, bottom = self.margin
        pw, ph = self._plot_size()
        out = []
        for v in _nice_ticks(x0, x1):
            val = 10**v if self.xlog else v
            px = float(tx(val))
            out.append(f'<line x1="{_num(px)}" y1="{top + ph}" x2="{_num(px)}" '
                       f'y2="{top + ph + 5}" stroke="black"/>')
            out.append(f'<text x="{_num(px)}" y="{top + ph + 18}" font-size="11" '
                       f'text-anchor="middle">{_tick_label(val)}</text>')
        for v in _nice_ticks(y0, y1):
            val = 10**v if self.ylog else v
            py = float(ty(val))
            out.append(f'<line x1="{left - 5}" y1="{_num(py)}" x2="{left}" y2="{_num(py)}" '
                       'stroke="black"/>')
            out.append(f'<text x="{left - 8}" y="{_num(py + 4)}" font-size="11" '
                       f'text-anchor="end">{_tick_label(val)}</text>')
        out.append(f'<text x="{left + pw / 2}" y="{self.height - 12}" font-size="13" '
                   f'text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text x="16" y="{top + ph / 2}" font-size="13" text-anchor="middle" '
                   f'transform="rotate(-90 16 {top + ph / 2})">{escape(self.ylabel)}</text>')
        out.append(f'<text x="{left + pw / 2}" y="{top - 14}" font-size="14" '
                   f'text-anchor="middle">{escape(self.title)}</text>')
        for i, (label, color) in enumerate(self.legend):
            y = top + 16 + 16 * i
            out.append(f'<rect x="{left + pw - 160}" y="{y - 9}" width="10" height="10" '
                       f'fill="{color}"/>')
            out.append(f'<text x="{left + pw - 145}" y="{y}" font-size="11" '
                       f'class="legend">{escape(label)}</text>')
        return out

    def save(self, path):
        from .fileio import write_text

        return write_text(path, self.to_svg())
