"""PNG heatmaps of scalar fields with the tumour boundary drawn on top."""

from __future__ import annotations

import numpy as np
from matplotlib import colormaps
from PIL import Image, ImageDraw

from .grid import TumourRegion, boundary_walk

BOUNDARY_RGB = (255, 255, 255)


def colorize(values: np.ndarray, palette: str = "viridis") -> np.ndarray:
    """Linear map of ``[min, max]`` onto the palette; a flat field maps to
    the palette's lowest colour."""
    values = np.asarray(values, dtype=float)
    if not np.isfinite(values).all():
        raise ValueError("cannot render a field with non-finite values")
    lo, hi = float(values.min()), float(values.max())
    t = np.zeros_like(values) if hi == lo else (values - lo) / (hi - lo)
    rgba = colormaps[palette](t, bytes=True)
    return rgba[..., :3]


def node_pixel(node, shape, scale: int) -> tuple[int, int]:
    """Centre pixel ``(x, y)`` of a node's block; ``x2`` points up."""
    i, j = node
    return i * scale + scale // 2, (shape[1] - 1 - j) * scale + scale // 2


def render_heatmap(field: np.ndarray, out_path, palette: str = "viridis",
                   region: TumourRegion | None = None, scale: int = 4) -> Image.Image:
    """Nearest-neighbour upscaled heatmap; ``x1`` runs left to right and
    ``x2`` bottom to top. The boundary is drawn as a white polyline through
    consecutive 8-adjacent boundary nodes."""
    rgb = colorize(field, palette)
    # rows of the image are x2 from the top
    img_arr = np.flipud(np.transpose(rgb, (1, 0, 2)))
    img_arr = np.repeat(np.repeat(img_arr, scale, axis=0), scale, axis=1)
    img = Image.fromarray(np.ascontiguousarray(img_arr), mode="RGB")
    if region is not None and region.boundary:
        draw = ImageDraw.Draw(img)
        walk = boundary_walk(region)
        for a, b in zip(walk, walk[1:]):
            if max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1:
                draw.line([node_pixel(a, field.shape, scale), node_pixel(b, field.shape, scale)],
                          fill=BOUNDARY_RGB, width=1)
        for node in walk:
            draw.point(node_pixel(node, field.shape, scale), fill=BOUNDARY_RGB)
    img.save(out_path, format="PNG")
    return img
