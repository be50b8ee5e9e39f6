"""Self-contained SVG rendering of information-plane curves.

Output bytes depend only on the input points. Marker color encodes the
logged epoch's position in the run on log scale, interpolated through a fixed
five-stop gradient from dark purple (first epoch) to yellow (last epoch).
"""

import math
from xml.sax.saxutils import escape

from ibmcr.experiment import curves_by_layer

GRADIENT = ((68, 1, 84), (59, 82, 139), (33, 145, 140), (94, 201, 98), (253, 231, 37))
LAYER_STROKES = ("#444444", "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2")

WIDTH, HEIGHT = 640, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 64, 150, 24, 56


def gradient_color(t):
    """Hex color at position t in [0, 1] along GRADIENT."""
    t = min(max(t, 0.0), 1.0) * (len(GRADIENT) - 1)
    i = min(int(t), len(GRADIENT) - 2)
    f = t - i
    rgb = [round(a + (b - a) * f) for a, b in zip(GRADIENT[i], GRADIENT[i + 1])]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def epoch_color(epoch, first, last):
    if last <= first:
        return gradient_color(1.0)
    return gradient_color((math.log1p(epoch) - math.log1p(first)) / (math.log1p(last) - math.log1p(first)))


def _fmt(v):
    return f"{v:.2f}"


def _ticks(lo, hi, n=6):
    step = (hi - lo) / (n - 1)
    return [lo + k * step for k in range(n)]


def render_svg(points, layer_widths=None, title=""):
    """One polyline per layer over (I(X;T), I(T;Y)) in bits."""
    if not points:
        raise ValueError("no points to plot")
    layers = curves_by_layer(points)
    epochs = sorted({p.epoch for p in points})
    first, last = epochs[0], epochs[-1]
    x_max = max(1.0, math.ceil(max(p.mi_xt_bits for p in points)))
    y_max = max(1.0, math.ceil(max(p.mi_ty_bits for p in points) * 10) / 10)
    pw = WIDTH - MARGIN_L - MARGIN_R
    ph = HEIGHT - MARGIN_T - MARGIN_B

    def sx(v):
        return MARGIN_L + pw * v / x_max

    def sy(v):
        return MARGIN_T + ph * (1.0 - v / y_max)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" style="fill:#ffffff"/>',
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" '
        'style="fill:none;stroke:#000000;stroke-width:1"/>',
    ]
    for v in _ticks(0.0, x_max):
        out.append(f'<line x1="{_fmt(sx(v))}" y1="{MARGIN_T + ph}" x2="{_fmt(sx(v))}" '
                   f'y2="{MARGIN_T + ph + 4}" style="stroke:#000000"/>')
        out.append(f'<text x="{_fmt(sx(v))}" y="{MARGIN_T + ph + 16}" text-anchor="middle">{v:g}</text>')
    for v in _ticks(0.0, y_max):
        out.append(f'<line x1="{MARGIN_L - 4}" y1="{_fmt(sy(v))}" x2="{MARGIN_L}" '
                   f'y2="{_fmt(sy(v))}" style="stroke:#000000"/>')
        out.append(f'<text x="{MARGIN_L - 6}" y="{_fmt(sy(v) + 4)}" text-anchor="end">{v:.2g}</text>')
    out.append(f'<text x="{MARGIN_L + pw / 2:.1f}" y="{HEIGHT - 16}" text-anchor="middle">I(X;T) [bits]</text>')
    out.append(f'<text x="16" y="{MARGIN_T + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {MARGIN_T + ph / 2:.1f})">I(T;Y) [bits]</text>')
    if title:
        out.append(f'<text x="{MARGIN_L + pw / 2:.1f}" y="16" text-anchor="middle">{escape(title)}</text>')

    for layer, curve in layers.items():
        stroke = LAYER_STROKES[layer % len(LAYER_STROKES)]
        coords = " ".join(f"{_fmt(sx(p.mi_xt_bits))},{_fmt(sy(p.mi_ty_bits))}" for p in curve)
        out.append(f'<polyline class="layer" data-layer="{layer}" points="{coords}" '
                   f'style="fill:none;stroke:{stroke};stroke-width:1;stroke-opacity:0.6"/>')
        for p in curve:
            out.append(f'<circle class="marker" cx="{_fmt(sx(p.mi_xt_bits))}" cy="{_fmt(sy(p.mi_ty_bits))}" '
                       f'r="3" style="fill:{epoch_color(p.epoch, first, last)};stroke:none"/>')

    lx = WIDTH - MARGIN_R + 14
    for k, layer in enumerate(layers):
        y = MARGIN_T + 14 + 16 * k
        stroke = LAYER_STROKES[layer % len(LAYER_STROKES)]
        width = f" (width {layer_widths[layer]})" if layer_widths and layer < len(layer_widths) else ""
        out.append(f'<line x1="{lx}" y1="{y - 4}" x2="{lx + 18}" y2="{y - 4}" style="stroke:{stroke};stroke-width:2"/>')
        out.append(f'<text x="{lx + 22}" y="{y}">layer {layer}{width}</text>')
    gy = MARGIN_T + 14 + 16 * len(layers) + 10
    out.append(f'<text x="{lx}" y="{gy}">epoch {first}..{last}</text>')
    for k in range(11):
        out.append(f'<rect x="{lx + 10 * k}" y="{gy + 6}" width="10" height="8" '
                   f'style="fill:{gradient_color(k / 10)};stroke:none"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(points, path, layer_widths=None, title=""):
    svg = render_svg(points, layer_widths, title)
    with open(path, "w", newline="\n") as f:
        f.write(svg)
