"""Heatmap finalization: normalization bounds, degenerate maps, upsampling
against a per-pixel naive oracle, serialization determinism, and empty-prompt
suppression."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from legrad import heatmap as hm
from legrad.fixtures import stream


def naive_bilinear(grid, size):
    """Align-corners bilinear, one output pixel at a time."""
    g = grid.shape[0]
    out = np.zeros((size, size))
    for oy in range(size):
        for ox in range(size):
            if g == 1:
                out[oy, ox] = grid[0, 0]
                continue
            fy = oy * (g - 1) / (size - 1)
            fx = ox * (g - 1) / (size - 1)
            y0, x0 = int(np.floor(fy)), int(np.floor(fx))
            y1, x1 = min(y0 + 1, g - 1), min(x0 + 1, g - 1)
            dy, dx = fy - y0, fx - x0
            out[oy, ox] = (grid[y0, x0] * (1 - dy) * (1 - dx)
                           + grid[y0, x1] * (1 - dy) * dx
                           + grid[y1, x0] * dy * (1 - dx)
                           + grid[y1, x1] * dy * dx)
    return out


class TestMinMax:
    def test_basic(self):
        out = hm.minmax_normalize(np.array([2.0, 4.0, 6.0]))
        np.testing.assert_allclose(out, [0.0, 0.5, 1.0])

    def test_constant_becomes_zeros(self):
        np.testing.assert_array_equal(hm.minmax_normalize(np.full((3, 3), 5.0)),
                                      np.zeros((3, 3)))

    def test_near_constant_becomes_zeros(self):
        x = np.full(4, 1.0)
        x[0] += 1e-13  # below the degeneracy cutoff
        np.testing.assert_array_equal(hm.minmax_normalize(x), np.zeros(4))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2,
                    max_size=30))
    def test_range_property(self, vals):
        x = np.array(vals)
        out = hm.minmax_normalize(x)
        assert out.min() >= 0.0 and out.max() <= 1.0
        if x.max() - x.min() >= 1e-12:
            assert out.min() == 0.0 and out.max() == 1.0


class TestUpsample:
    @pytest.mark.parametrize("g,size", [(2, 8), (4, 16), (3, 12), (1, 8)])
    def test_matches_naive_oracle(self, g, size):
        grid = stream(13, "up.grid").uniform(-2.0, 3.0, (g, g))
        got = hm.upsample_bilinear(grid, size)
        np.testing.assert_allclose(got, naive_bilinear(grid, size), atol=1e-12)

    def test_corners_preserved(self):
        grid = stream(14, "up.corner").uniform(0.0, 1.0, (4, 4))
        out = hm.upsample_bilinear(grid, 16)
        assert out[0, 0] == pytest.approx(grid[0, 0], abs=1e-12)
        assert out[0, -1] == pytest.approx(grid[0, -1], abs=1e-12)
        assert out[-1, 0] == pytest.approx(grid[-1, 0], abs=1e-12)
        assert out[-1, -1] == pytest.approx(grid[-1, -1], abs=1e-12)

    def test_values_within_input_hull(self):
        grid = stream(15, "up.hull").uniform(-1.0, 2.0, (5, 5))
        out = hm.upsample_bilinear(grid, 20)
        assert out.min() >= grid.min() - 1e-12
        assert out.max() <= grid.max() + 1e-12


class TestFinalize:
    def test_full_pipeline_bounds(self):
        patch = stream(16, "fin.patch").uniform(0.0, 4.0, (16,))
        h = hm.finalize_patch_map(patch, 16, method="legrad", layer_range=[2, 3])
        assert h.values.shape == (16, 16)
        assert h.patch_grid.shape == (4, 4)
        assert h.values.min() == 0.0 and h.values.max() == 1.0
        assert h.patch_grid.min() == 0.0 and h.patch_grid.max() == 1.0

    def test_constant_patch_map_all_zeros(self):
        h = hm.finalize_patch_map(np.full(16, 3.3), 16)
        np.testing.assert_array_equal(h.values, np.zeros((16, 16)))
        np.testing.assert_array_equal(h.patch_grid, np.zeros((4, 4)))

    def test_non_square_patch_count_rejected(self):
        with pytest.raises(ValueError):
            hm.finalize_patch_map(np.zeros(15), 16)

    def test_json_schema(self):
        patch = stream(17, "fin.json").uniform(0.0, 1.0, (4,))
        h = hm.finalize_patch_map(patch, 8, method="legrad", layer_range=[1])
        d = h.to_json_dict()
        assert set(d) == {"method", "layer_range", "patch_grid", "W", "H",
                          "values"}
        assert d["W"] == d["H"] == 8
        assert len(d["values"]) == 8 and len(d["values"][0]) == 8
        json.dumps(d)  # serializable

    def test_png_deterministic(self):
        patch = stream(18, "fin.png").uniform(0.0, 1.0, (16,))
        h = hm.finalize_patch_map(patch, 16)
        assert h.to_png_bytes() == h.to_png_bytes()
        assert h.to_png_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


class TestBackgroundSuppress:
    def test_hand_example(self):
        q = hm.Heatmap(values=np.array([[0.9, 0.4], [1.0, 0.0]]),
                       patch_grid=np.zeros((1, 1)), method="legrad",
                       layer_range=[1])
        e = hm.Heatmap(values=np.array([[0.9, 0.5], [0.3, 0.81]]),
                       patch_grid=np.zeros((1, 1)), method="legrad",
                       layer_range=[1])
        out = hm.background_suppress(q, e, threshold=0.8)
        # strictly greater: 0.9 > 0.8 zeroed, 0.81 > 0.8 zeroed, 0.8 kept
        np.testing.assert_array_equal(out.values, [[0.0, 0.4], [1.0, 0.0]])
        assert out.method == "legrad+bg_suppress"

    def test_threshold_boundary_is_strict(self):
        q = hm.Heatmap(values=np.ones((1, 1)), patch_grid=np.zeros((1, 1)),
                       method="legrad", layer_range=[1])
        e = hm.Heatmap(values=np.full((1, 1), 0.8), patch_grid=np.zeros((1, 1)),
                       method="legrad", layer_range=[1])
        out = hm.background_suppress(q, e, threshold=0.8)
        np.testing.assert_array_equal(out.values, [[1.0]])

    def test_no_renormalization(self):
        q = hm.Heatmap(values=np.array([[0.25, 0.5]]),
                       patch_grid=np.zeros((1, 1)), method="legrad",
                       layer_range=[1])
        e = hm.Heatmap(values=np.array([[0.9, 0.0]]),
                       patch_grid=np.zeros((1, 1)), method="legrad",
                       layer_range=[1])
        out = hm.background_suppress(q, e)
        np.testing.assert_array_equal(out.values, [[0.0, 0.5]])
