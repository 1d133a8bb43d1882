"""Machine-readable outputs: scan CSV/JSON, learn reports, and native SVG
figures (no plotting dependency chain)."""

from __future__ import annotations

import json
from typing import Optional, Sequence

import numpy as np

__all__ = ["write_scan_csv", "write_polygon_json", "render_svg", "SvgLayer"]


def write_scan_csv(path, scan) -> None:
    with open(path, "w") as f:
        f.write(scan.to_csv())


def write_polygon_json(path, scan) -> None:
    with open(path, "w") as f:
        json.dump(scan.polygon_json(), f, indent=1)


class SvgLayer:
    """One drawable layer: a polygon outline/fill or a point cloud."""

    def __init__(self, name: str, color: str, polygon: Optional[np.ndarray] = None,
                 points: Optional[np.ndarray] = None, opacity: float = 0.35):
        self.name = name
        self.color = color
        self.polygon = polygon
        self.points = points
        self.opacity = opacity


def render_svg(path, layers: Sequence[SvgLayer], bounds=None, size: int = 640) -> None:
    """Layered SVG rendering of polygons and point clouds in data space."""
    xs, ys = [], []
    for layer in layers:
        for arr in (layer.polygon, layer.points):
            if arr is not None and len(arr):
                xs.extend(np.asarray(arr)[:, 0])
                ys.extend(np.asarray(arr)[:, 1])
    if bounds is None:
        if not xs:
            bounds = (-1.0, 1.0, -1.0, 1.0)
        else:
            pad_x = 0.05 * (max(xs) - min(xs) + 1e-9)
            pad_y = 0.05 * (max(ys) - min(ys) + 1e-9)
            bounds = (min(xs) - pad_x, max(xs) + pad_x,
                      min(ys) - pad_y, max(ys) + pad_y)
    x0, x1, y0, y1 = bounds
    span_x = max(x1 - x0, 1e-9)
    span_y = max(y1 - y0, 1e-9)
    scale = size / max(span_x, span_y)

    def to_px(p):
        return ((p[0] - x0) * scale, (y1 - p[1]) * scale)

    width = span_x * scale
    height = span_y * scale
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
             f'height="{height:.0f}" viewBox="0 0 {width:.2f} {height:.2f}">']
    parts.append(f'<rect width="{width:.2f}" height="{height:.2f}" fill="white"/>')
    for layer in layers:
        if layer.polygon is not None and len(layer.polygon) >= 3:
            pts = " ".join(f"{px:.2f},{py:.2f}" for px, py in
                           (to_px(p) for p in layer.polygon))
            parts.append(
                f'<polygon points="{pts}" fill="{layer.color}" '
                f'fill-opacity="{layer.opacity}" stroke="{layer.color}" '
                f'stroke-width="1.5"><title>{layer.name}</title></polygon>')
        if layer.points is not None and len(layer.points):
            group = [f'<g fill="{layer.color}" fill-opacity="{layer.opacity}">']
            for p in layer.points:
                px, py = to_px(p)
                group.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="2"/>')
            group.append("</g>")
            parts.append("".join(group))
    legend_y = 16
    for layer in layers:
        parts.append(f'<rect x="8" y="{legend_y - 10}" width="12" height="12" '
                     f'fill="{layer.color}" fill-opacity="0.8"/>')
        parts.append(f'<text x="24" y="{legend_y}" font-size="12" '
                     f'font-family="sans-serif">{layer.name}</text>')
        legend_y += 16
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts))
