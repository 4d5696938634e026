"""Static SVG figures: trajectory overlays on plateau shading, control staircases."""

from __future__ import annotations

import math
from html import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
SHADE = ("#f2f2f2", "#dcdcdc")


class _Axes:
    """Linear map from a data box onto a pixel rectangle (y axis pointing up)."""

    def __init__(self, left, top, width, height, xlim, ylim):
        self.left, self.top, self.width, self.height = left, top, width, height
        self.xlim = _widen(xlim)
        self.ylim = _widen(ylim)

    def px(self, x):
        x0, x1 = self.xlim
        return self.left + (np.asarray(x, dtype=float) - x0) / (x1 - x0) * self.width

    def py(self, y):
        y0, y1 = self.ylim
        return self.top + self.height - (np.asarray(y, dtype=float) - y0) / (y1 - y0) * self.height

    def clip_id(self, name):
        return (f'<clipPath id="{name}"><rect x="{self.left:.2f}" y="{self.top:.2f}" '
                f'width="{self.width:.2f}" height="{self.height:.2f}"/></clipPath>')


def _widen(lim):
    lo, hi = float(lim[0]), float(lim[1])
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return (-1.0, 1.0)
    if hi - lo < 1e-9:
        return (lo - 0.5, hi + 0.5)
    pad = 0.05 * (hi - lo)
    return (lo - pad, hi + pad)


def _ticks(lo, hi, count=5):
    span = hi - lo
    raw = span / max(count, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step) + 1)]


def _fmt(v):
    return f"{v:.6g}"


def _frame(ax: _Axes, xlabel, ylabel):
    out = [f'<rect x="{ax.left:.2f}" y="{ax.top:.2f}" width="{ax.width:.2f}" height="{ax.height:.2f}" '
           'fill="none" stroke="#333"/>']
    bottom = ax.top + ax.height
    for t in _ticks(*ax.xlim):
        x = float(ax.px(t))
        out.append(f'<line x1="{x:.2f}" y1="{bottom:.2f}" x2="{x:.2f}" y2="{bottom + 4:.2f}" stroke="#333"/>')
        out.append(f'<text x="{x:.2f}" y="{bottom + 16:.2f}" font-size="10" text-anchor="middle">{_fmt(t)}</text>')
    for t in _ticks(*ax.ylim):
        y = float(ax.py(t))
        out.append(f'<line x1="{ax.left - 4:.2f}" y1="{y:.2f}" x2="{ax.left:.2f}" y2="{y:.2f}" stroke="#333"/>')
        out.append(f'<text x="{ax.left - 6:.2f}" y="{y + 3:.2f}" font-size="10" text-anchor="end">{_fmt(t)}</text>')
    out.append(f'<text x="{ax.left + ax.width / 2:.2f}" y="{bottom + 32:.2f}" font-size="12" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="{ax.left - 40:.2f}" y="{ax.top + ax.height / 2:.2f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 {ax.left - 40:.2f} {ax.top + ax.height / 2:.2f})">{escape(ylabel)}</text>')
    return out


def _polyline(ax: _Axes, xs, ys, color, width=1.6, dash=None):
    pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(ax.px(xs), ax.py(ys)))
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'


# -- plateau shading ----------------------------------------------------------


def vertical_bands(xlim, width):
    """``(x0, x1, parity)`` for every band ``[k w, (k+1) w)`` meeting ``xlim``."""
    lo, hi = xlim
    k0, k1 = math.floor(lo / width), math.floor(hi / width)
    if k1 - k0 > 400:
        return []
    return [(k * width, (k + 1) * width, k % 2) for k in range(k0, k1 + 1)]


def _band_shapes(ax: _Axes, width):
    out = []
    for a, b, parity in vertical_bands(ax.xlim, width):
        x0, x1 = float(ax.px(max(a, ax.xlim[0]))), float(ax.px(min(b, ax.xlim[1])))
        out.append(f'<rect class="plateau" x="{x0:.2f}" y="{ax.top:.2f}" width="{x1 - x0:.2f}" '
                   f'height="{ax.height:.2f}" fill="{SHADE[parity]}"/>')
    return out


def _ellipse_shapes(ax: _Axes, center, weights, levels):
    # level sets ||X - center||_weights = k are ellipses with semi-axes k / a_i
    sx = ax.width / (ax.xlim[1] - ax.xlim[0])
    sy = ax.height / (ax.ylim[1] - ax.ylim[0])
    cx, cy = float(ax.px(center[0])), float(ax.py(center[1]))
    out = []
    for k in sorted(levels, reverse=True):
        out.append(f'<ellipse class="plateau" cx="{cx:.2f}" cy="{cy:.2f}" rx="{k / weights[0] * sx:.2f}" '
                   f'ry="{k / weights[1] * sy:.2f}" fill="{SHADE[k % 2]}" stroke="#bbb" stroke-width="0.5"/>')
    return out


def _levels_needed(ax: _Axes, center, weights, limit=60):
    corners = [(x, y) for x in ax.xlim for y in ax.ylim]
    far = max(math.hypot(weights[0] * (x - center[0]), weights[1] * (y - center[1])) for x, y in corners)
    return list(range(1, min(limit, math.ceil(far)) + 1))


def plateau_shapes(spec, ax: _Axes) -> list[str]:
    """Shading of the exact Mayer plateaus in the state plane of a known benchmark."""
    p = spec.params
    if spec.name == "harmonic_oscillator":
        return _band_shapes(ax, 1.0)
    if spec.name == "zermelo_one":
        return _band_shapes(ax, 10.0)
    if spec.name == "zermelo_two":
        out = []
        for c, w in ((p["A"], p["alpha"]), (p["B"], p["beta"])):
            out += _ellipse_shapes(ax, c, w, _levels_needed(ax, c, w))
        return out
    if spec.name == "lotka_volterra":
        c, w = p["Xbar"], p["alpha"]
        return _ellipse_shapes(ax, c, w, _levels_needed(ax, c, w))
    return []


# -- figures ------------------------------------------------------------------


STATE_LABELS = {
    "harmonic_oscillator": ("position x", "velocity v"),
    "zermelo_one": ("x", "y"),
    "zermelo_two": ("x", "y"),
    "lotka_volterra": ("prey x", "predator y"),
}


def overlay_svg(spec, records, title: str = "", width: int = 720, height: int = 640) -> str:
    """Trajectories of several runs over the plateau shading, controls underneath."""
    records = list(records)
    margin_l, margin_r, gap = 70, 160, 60
    top_h = int(0.6 * (height - 3 * gap))
    bot_h = height - 3 * gap - top_h
    plot_w = width - margin_l - margin_r

    states = [np.asarray(r.states) for r in records]
    allx = np.concatenate([s[:, 0] for s in states]) if states else np.zeros(1)
    ally = np.concatenate([s[:, 1] for s in states]) if states else np.zeros(1)
    ax_state = _Axes(margin_l, gap, plot_w, top_h, (allx.min(), allx.max()), (ally.min(), ally.max()))
    t = np.arange(spec.steps + 1) * spec.dt
    controls = [np.asarray(r.controls) for r in records]
    u_all = np.concatenate([c[:, 0] for c in controls]) if controls else np.zeros(1)
    lower = _Axes(margin_l, 2 * gap + top_h, plot_w, bot_h, (t[0], t[-1]), (u_all.min(), u_all.max()))

    xl, yl = STATE_LABELS.get(spec.name, ("state 0", "state 1"))
    body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif">',
            f"<defs>{ax_state.clip_id('state')}{lower.clip_id('ctrl')}</defs>",
            f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        body.append(f'<text x="{width / 2:.1f}" y="24" font-size="15" text-anchor="middle">{escape(title)}</text>')

    body.append('<g clip-path="url(#state)">')
    body += plateau_shapes(spec, ax_state)
    for k, s in enumerate(states):
        body.append(_polyline(ax_state, s[:, 0], s[:, 1], PALETTE[k % len(PALETTE)]))
    if states:
        x0 = states[0][0]
        body.append(f'<circle cx="{float(ax_state.px(x0[0])):.2f}" cy="{float(ax_state.py(x0[1])):.2f}" r="3.5" '
                    'fill="black"/>')
    body.append("</g>")
    body += _frame(ax_state, xl, yl)

    body.append('<g clip-path="url(#ctrl)">')
    for k, c in enumerate(controls):
        # zero-order hold: each control is constant on [t_k, t_{k+1})
        xs = np.repeat(t, 2)[1:-1]
        ys = np.repeat(c[:, 0], 2)
        body.append(_polyline(lower, xs, ys, PALETTE[k % len(PALETTE)], width=1.2))
    body.append("</g>")
    body += _frame(lower, "time t", "control u" if spec.m == 1 else "thrust u")

    lx = margin_l + plot_w + 16
    for k, r in enumerate(records):
        y = gap + 14 + 36 * k
        body.append(f'<line x1="{lx}" y1="{y}" x2="{lx + 22}" y2="{y}" stroke="{PALETTE[k % len(PALETTE)]}" '
                    'stroke-width="3"/>')
        body.append(f'<text x="{lx + 28}" y="{y + 4}" font-size="11">{escape(r.method)}</text>')
        body.append(f'<text x="{lx + 28}" y="{y + 18}" font-size="10" fill="#555">'
                    f'J = {r.true_objective:.4g}</text>')
    body.append("</svg>")
    return "\n".join(body) + "\n"


def scan_svg(scan, center=None, title: str = "", size: int = 520) -> str:
    """Heat map of ``log10(mu)`` over a scan grid."""
    margin = 60
    ax = _Axes(margin, margin, size - 2 * margin, size - 2 * margin,
               (scan.xs[0], scan.xs[-1]), (scan.ys[0], scan.ys[-1]))
    ax.xlim = (float(scan.xs[0]), float(scan.xs[-1]))
    ax.ylim = (float(scan.ys[0]), float(scan.ys[-1]))
    if ax.xlim[1] <= ax.xlim[0] or ax.ylim[1] <= ax.ylim[0]:
        ax.xlim, ax.ylim = _widen(ax.xlim), _widen(ax.ylim)
    logmu = np.log10(np.maximum(scan.mu, 1e-16))
    lo, hi = float(logmu.min()), float(logmu.max())
    span = hi - lo if hi > lo else 1.0

    def cell_edges(v):
        if v.size == 1:
            return np.array([v[0] - 0.5, v[0] + 0.5])
        mid = 0.5 * (v[1:] + v[:-1])
        return np.concatenate([[v[0] - (mid[0] - v[0])], mid, [v[-1] + (v[-1] - mid[-1])]])

    ex, ey = cell_edges(np.asarray(scan.xs)), cell_edges(np.asarray(scan.ys))
    body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif">',
            f"<defs>{ax.clip_id('scan')}</defs>", f'<rect width="{size}" height="{size}" fill="white"/>']
    if title:
        body.append(f'<text x="{size / 2:.1f}" y="24" font-size="15" text-anchor="middle">{escape(title)}</text>')
    body.append('<g clip-path="url(#scan)">')
    for i in range(scan.ys.size):
        for j in range(scan.xs.size):
            level = (logmu[i, j] - lo) / span
            shade = int(255 - 200 * level)
            x0, x1 = float(ax.px(ex[j])), float(ax.px(ex[j + 1]))
            y0, y1 = float(ax.py(ey[i + 1])), float(ax.py(ey[i]))
            body.append(f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{x1 - x0:.2f}" height="{y1 - y0:.2f}" '
                        f'fill="rgb(255,{shade},{shade})"/>')
    if center is not None:
        body.append(f'<circle cx="{float(ax.px(center[0])):.2f}" cy="{float(ax.py(center[1])):.2f}" r="4" '
                    'fill="black"/>')
    body.append("</g>")
    body += _frame(ax, "x", "y")
    body.append(f'<text x="{margin}" y="{size - 8}" font-size="10">log10(mu) from {lo:.2f} to {hi:.2f}</text>')
    body.append("</svg>")
    return "\n".join(body) + "\n"
