"""CSV and SVG report emission.

Strict formatting contract: header line, `\\n` endings, floats fixed to six
decimals (no locale), integers plain, undefined metrics emitted as "nan".
All writes go through a temp file + rename.
"""

from __future__ import annotations

import math
import os


def format_value(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def write_csv(path: str, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def write_pca_svg(path: str, rows, size: int = 480) -> None:
    """Scatter of (class, kind, pc1, pc2, ...) rows; real dark, generated light."""
    pts = [(int(c), str(kind), float(x), float(y)) for c, kind, x, y, *_ in rows]
    xs = [p[2] for p in pts] or [0.0]
    ys = [p[3] for p in pts] or [0.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    span_x = (x1 - x0) or 1.0
    span_y = (y1 - y0) or 1.0
    pad = 20

    def sx(x):
        return pad + (x - x0) / span_x * (size - 2 * pad)

    def sy(y):
        return size - pad - (y - y0) / span_y * (size - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white" stroke="#444"/>',
        '<text x="10" y="14" font-size="11" fill="#444">'
        "pc1 (x) vs pc2 (y); dark = real, light = generated</text>",
    ]
    for cls, kind, x, y in pts:
        hue = (cls * 36) % 360
        light = 40 if kind == "real" else 72
        parts.append(
            f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" '
            f'fill="hsl({hue},65%,{light}%)"/>'
        )
    parts.append("</svg>")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")
    os.replace(tmp, path)
