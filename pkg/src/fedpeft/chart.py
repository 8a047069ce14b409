"""Static grouped-bar SVG of scenario accuracies from a comparison CSV.

The SVG is written by hand with fixed number formatting, so equal input
gives byte-identical output.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

from .evaluation import SCENARIOS, read_table_csv

COLORS = {"single": "#9e9ac8", "centralized": "#3182bd", "federated": "#31a354"}
LABELS = {"single": "Single-institution", "centralized": "Centralized", "federated": "Federated"}
BAR_W, GAP, PAD_L, PAD_B, PAD_T, HEIGHT = 22, 18, 56, 48, 40, 240


class ChartError(ValueError):
    pass


def parse_rows(text):
    rows = read_table_csv(text)
    if not rows:
        raise ChartError("comparison CSV has no data rows")
    out = []
    for i, r in enumerate(rows, 2):
        missing = [c for c in ("peft", *SCENARIOS) if c not in r or r[c] in (None, "")]
        if missing:
            raise ChartError(f"line {i}: missing column(s) {missing}")
        try:
            vals = {s: float(r[s]) for s in SCENARIOS}
        except ValueError:
            raise ChartError(f"line {i}: accuracy is not a number") from None
        if not all(0.0 <= v <= 1.0 for v in vals.values()):
            raise ChartError(f"line {i}: accuracy outside [0, 1]")
        label = " / ".join(x for x in (r.get("model", ""), r["peft"]) if x)
        out.append((label, vals))
    return out


def render_svg(rows, title="Accuracy by scenario"):
    group_w = len(SCENARIOS) * BAR_W + GAP
    width = PAD_L + len(rows) * group_w + 160
    height = PAD_T + HEIGHT + PAD_B
    y0 = PAD_T + HEIGHT
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<text x="{PAD_L}" y="20" font-size="13">{escape(title)}</text>',
    ]
    for tick in range(6):
        v = tick / 5
        y = y0 - v * HEIGHT
        parts.append(f'<line x1="{PAD_L - 4}" y1="{y:.1f}" x2="{width - 160}" y2="{y:.1f}" stroke="#ddd"/>')
        parts.append(f'<text x="{PAD_L - 8}" y="{y + 4:.1f}" text-anchor="end">{v:.1f}</text>')
    for g, (label, vals) in enumerate(rows):
        x = PAD_L + GAP / 2 + g * group_w
        parts.append(f'<g class="group" data-label="{escape(label)}">')
        for j, s in enumerate(SCENARIOS):
            h = vals[s] * HEIGHT
            parts.append(f'<rect x="{x + j * BAR_W:.1f}" y="{y0 - h:.1f}" width="{BAR_W - 2}" '
                         f'height="{h:.1f}" fill="{COLORS[s]}"><title>{escape(label)} {s}: '
                         f'{vals[s]:.4f}</title></rect>')
        parts.append(f'<text x="{x + len(SCENARIOS) * BAR_W / 2:.1f}" y="{y0 + 16}" '
                     f'text-anchor="middle">{escape(label)}</text>')
        parts.append("</g>")
    lx = width - 150
    for j, s in enumerate(SCENARIOS):
        ly = PAD_T + j * 18
        parts.append(f'<rect x="{lx}" y="{ly}" width="12" height="12" fill="{COLORS[s]}"/>')
        parts.append(f'<text x="{lx + 18}" y="{ly + 10}">{LABELS[s]}</text>')
    parts.append(f'<line x1="{PAD_L}" y1="{y0}" x2="{width - 160}" y2="{y0}" stroke="#333"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def chart_from_csv(text, title="Accuracy by scenario"):
    return render_svg(parse_rows(text), title)
