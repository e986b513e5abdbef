"""Minimal deterministic line plots rendered straight to raster images.

No text, no external plotting dependency: a white canvas, axis frame, one
Bresenham polyline per series, and a legend swatch per series in the top
right.  Output bytes depend only on the input values.
"""

from __future__ import annotations

import numpy as np

from vservo.scene import write_ppm

__all__ = ["line_plot", "PALETTE"]

PALETTE = np.array(
    [
        [31, 119, 180],
        [255, 127, 14],
        [44, 160, 44],
        [214, 39, 40],
        [148, 103, 189],
        [140, 86, 75],
        [227, 119, 194],
        [127, 127, 127],
    ],
    dtype=np.uint8,
)

_MARGIN = 24


def _draw_line(canvas: np.ndarray, x0: int, y0: int, x1: int, y1: int, color) -> None:
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    h, w, _ = canvas.shape
    while True:
        if 0 <= y0 < h and 0 <= x0 < w:
            canvas[y0, x0] = color
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def line_plot(series: list[tuple[str, np.ndarray]], path, width: int = 480, height: int = 320) -> None:
    """Render named y-series (x = sample index) and write a PPM file."""
    canvas = np.full((height, width, 3), 255, dtype=np.uint8)
    x0, x1 = _MARGIN, width - _MARGIN
    y0, y1 = height - _MARGIN, _MARGIN  # y grows upward in data space

    # Axis frame.
    frame = np.array([0, 0, 0], dtype=np.uint8)
    _draw_line(canvas, x0, y0, x1, y0, frame)
    _draw_line(canvas, x0, y0, x0, y1, frame)

    ys = [np.asarray(v, dtype=np.float64) for _, v in series if len(v)]
    if ys:
        ymax = max(float(np.max(v)) for v in ys)
        ymin = min(0.0, min(float(np.min(v)) for v in ys))
        if ymax <= ymin:
            ymax = ymin + 1.0
        xmax = max(len(v) for v in ys) - 1 or 1

        for k, (_, values) in enumerate(series):
            values = np.asarray(values, dtype=np.float64)
            if len(values) == 0:
                continue
            color = PALETTE[k % len(PALETTE)]
            px = x0 + np.round((np.arange(len(values)) / xmax) * (x1 - x0)).astype(int)
            py = y0 - np.round((values - ymin) / (ymax - ymin) * (y0 - y1)).astype(int)
            for i in range(len(values) - 1):
                _draw_line(canvas, px[i], py[i], px[i + 1], py[i + 1], color)
            if len(values) == 1:
                canvas[py[0], px[0]] = color
            # Legend swatch.
            swy = y1 + 10 * k
            canvas[swy : swy + 6, x1 - 14 : x1 - 2] = color

    write_ppm(canvas, path)
