"""Relevance heatmaps: patch-grid finalization, upsampling, serialization.

A finalized map keeps two views: `patch_grid` (the min-max-normalized
sqrt(n) x sqrt(n) map before upsampling) and `values` (the bilinear
pixel-resolution map, rescaled to attain exactly 0 and 1). A constant
patch map degenerates to all zeros instead of dividing by ~0.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

DEGENERATE_EPS = 1e-12


@dataclass
class Heatmap:
    values: np.ndarray                 # [S, S] in [0, 1]
    patch_grid: np.ndarray             # [g, g] pre-upsampling map
    method: str = ""
    layer_range: list[int] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def to_json_dict(self) -> dict:
        s = self.values.shape
        return {
            "method": self.method,
            "layer_range": list(self.layer_range),
            "patch_grid": self.patch_grid.tolist(),
            "W": int(s[1]),
            "H": int(s[0]),
            "values": self.values.tolist(),
        }

    def to_png_bytes(self) -> bytes:
        """8-bit grayscale PNG at image resolution."""
        gray = np.clip(np.round(self.values * 255.0), 0, 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(gray, mode="L").save(buf, format="PNG")
        return buf.getvalue()


def minmax_normalize(x: np.ndarray) -> np.ndarray:
    """Min-max to [0, 1]; constant input (range < 1e-12) maps to all zeros."""
    lo, hi = float(np.min(x)), float(np.max(x))
    if hi - lo < DEGENERATE_EPS:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def upsample_bilinear(grid: np.ndarray, size: int) -> np.ndarray:
    """Bilinear [g, g] -> [size, size], corners aligned to corner patches."""
    g = grid.shape[0]
    if g == 1:
        return np.full((size, size), grid[0, 0], dtype=grid.dtype)
    coords = np.linspace(0.0, g - 1.0, size)
    i0 = np.clip(np.floor(coords).astype(int), 0, g - 2)
    frac = coords - i0
    rows = grid[i0] * (1.0 - frac)[:, None] + grid[i0 + 1] * frac[:, None]
    out = rows[:, i0] * (1.0 - frac)[None, :] + rows[:, i0 + 1] * frac[None, :]
    return out


def finalize_patch_map(patch_values: np.ndarray, image_size: int,
                       method: str = "", layer_range=()) -> Heatmap:
    """Reshape patch relevances to the grid, normalize, upsample, rescale.

    `patch_values` is the flat n-vector of patch relevances (CLS already
    removed). n must be a perfect square.
    """
    flat = np.asarray(patch_values, dtype=np.float64).reshape(-1)
    g = math.isqrt(flat.size)
    if g * g != flat.size:
        raise ValueError(f"patch count {flat.size} is not a perfect square")
    patch_grid = minmax_normalize(flat.reshape(g, g))
    up = upsample_bilinear(patch_grid, image_size)
    # resampling does not hit the patch extrema exactly; rescale so the
    # pixel map attains 0 and 1 (all-zeros stays all-zeros)
    values = minmax_normalize(up)
    return Heatmap(values=values, patch_grid=patch_grid,
                   method=method, layer_range=list(layer_range))


def background_suppress(map_query: Heatmap, map_empty: Heatmap, threshold: float = 0.8) -> Heatmap:
    """Zero pixels where the empty-prompt map exceeds `threshold` (strict >).

    No re-normalization afterwards: values stay comparable pre/post.
    """
    if map_query.values.shape != map_empty.values.shape:
        raise ValueError("heatmap shapes differ")
    if not (0.0 < threshold <= 1.0):
        raise ValueError("threshold must be in (0, 1]")
    values = np.where(map_empty.values > threshold, 0.0, map_query.values)
    patch = np.where(map_empty.patch_grid > threshold, 0.0, map_query.patch_grid)
    return Heatmap(values=values, patch_grid=patch,
                   method=map_query.method + "+bg_suppress",
                   layer_range=list(map_query.layer_range))
