"""Core gradient and pipeline checks.

The analytic attention gradient is validated three independent ways:
central finite differences over every attention entry, algebraic
properties (linearity, scale behavior, structural zeros), and a naive
loop re-implementation of the reduction steps.
"""

import math

import numpy as np
import pytest

from legrad import explain as ex
from legrad import fixtures, model
from legrad.heatmap import Heatmap


def make_trace(bundle, seed=0):
    tensor = fixtures.random_image_tensor(bundle, seed=seed)
    z0 = model.embed(tensor, bundle.weights, bundle.config, dtype=bundle.dtype)
    return z0, model.forward_trace(z0, bundle.weights, bundle.config)


class TestGradientFidelity:
    @pytest.mark.parametrize("idx", range(len(fixtures.BATTERY_CONFIGS)))
    def test_battery_config(self, idx):
        cfg = fixtures.BATTERY_CONFIGS[idx]
        for flavor_seed, kwargs in ((100 + idx, {}),
                                    (200 + idx,
                                     dict(classifier_kind="text_embeddings",
                                          with_proj=True,
                                          pooler_extras=cfg["pooling"]
                                          == "attn_pooler"))):
            bundle = fixtures.make_tiny_vit(seed=flavor_seed, **cfg, **kwargs)
            report = fixtures.run_fd_battery(bundle, seed=flavor_seed)
            assert report["max_rel_err"] < 1e-4, (cfg, kwargs, report)

    def test_sign_flip_fails_battery(self, tiny_cls):
        def broken(trace, layer, query, bundle):
            g = ex.grad_attention(trace, layer, query, bundle)
            return ex.AttnGradient(layer=g.layer, grad=-g.grad)

        report = fixtures.run_fd_battery(tiny_cls, grad_fn=broken)
        assert report["max_rel_err"] > 1e-2

    def test_epsilon_halving_stable(self, tiny_cls):
        # Richardson-style check: the FD estimate is step-size converged
        z0, _ = make_trace(tiny_cls, seed=2)
        query = ex.Query(tiny_cls.classifier, 0)
        g1 = ex.fd_grad_attention(tiny_cls, z0, 2, query, epsilon=1e-4)
        g2 = ex.fd_grad_attention(tiny_cls, z0, 2, query, epsilon=5e-5)
        assert np.abs(g1 - g2).max() < 1e-6

    def test_cls_gradient_rows_beyond_query_are_zero(self, tiny_cls):
        # the class token reads only row 0 of A @ V; other rows cannot move it
        _, trace = make_trace(tiny_cls, seed=3)
        query = ex.Query(tiny_cls.classifier, 1)
        for layer in (1, 2, 3):
            g = ex.grad_attention(trace, layer, query, tiny_cls).grad
            assert g.shape == (2, 17, 17)
            np.testing.assert_array_equal(g[:, 1:, :], 0.0)
            assert np.abs(g[:, 0, :]).max() > 0.0

    def test_pooler_gradient_shape(self, tiny_pooler):
        _, trace = make_trace(tiny_pooler, seed=4)
        query = ex.Query(tiny_pooler.classifier, 0)
        g = ex.grad_attention(trace, 2, query, tiny_pooler).grad
        assert g.shape == (2, 1, 16)


class TestAlgebraicProperties:
    def _with_columns(self, bundle, matrix):
        clf = model.Classifier(matrix=matrix,
                               labels=[f"c{i}" for i in range(matrix.shape[1])],
                               kind="learned_head")
        return clf

    def test_linearity_in_classifier_column(self, tiny_cls):
        _, trace = make_trace(tiny_cls, seed=5)
        d = tiny_cls.config.width
        c1 = fixtures.stream(51, "lin.c1").uniform(-1, 1, (d,))
        c2 = fixtures.stream(52, "lin.c2").uniform(-1, 1, (d,))
        mat = np.stack([c1, c2, c1 + c2], axis=1)
        clf = self._with_columns(tiny_cls, mat)
        g = [ex.grad_attention(trace, 2, ex.Query(clf, i), tiny_cls).grad
             for i in range(3)]
        np.testing.assert_allclose(g[0] + g[1], g[2], atol=1e-12)

    def test_power_of_two_scale_bitwise(self, tiny_cls):
        # relu/mean/minmax commute exactly with exponent-shift scalings
        z0, trace = make_trace(tiny_cls, seed=6)
        d = tiny_cls.config.width
        col = fixtures.stream(53, "scale.col").uniform(-1, 1, (d,))
        for alpha in (2.0, 0.5, 4.0):
            clf_a = self._with_columns(tiny_cls, col[:, None])
            clf_b = self._with_columns(tiny_cls, (alpha * col)[:, None])
            ha = ex.merge_layers(
                [ex.layer_explanation(
                    ex.grad_attention(trace, l, ex.Query(clf_a, 0), tiny_cls))
                 for l in (2, 3)], tiny_cls.config.image_size)
            hb = ex.merge_layers(
                [ex.layer_explanation(
                    ex.grad_attention(trace, l, ex.Query(clf_b, 0), tiny_cls))
                 for l in (2, 3)], tiny_cls.config.image_size)
            np.testing.assert_array_equal(ha.values, hb.values)

    def test_odd_scale_close(self, tiny_cls):
        _, trace = make_trace(tiny_cls, seed=7)
        d = tiny_cls.config.width
        col = fixtures.stream(54, "scale.odd").uniform(-1, 1, (d,))
        clf_a = self._with_columns(tiny_cls, col[:, None])
        clf_b = self._with_columns(tiny_cls, (3.0 * col)[:, None])
        ga = ex.grad_attention(trace, 2, ex.Query(clf_a, 0), tiny_cls).grad
        gb = ex.grad_attention(trace, 2, ex.Query(clf_b, 0), tiny_cls).grad
        np.testing.assert_allclose(3.0 * ga, gb, rtol=1e-12, atol=1e-15)


class TestReduction:
    def test_layer_explanation_hand_example(self):
        grad = np.array([[[1.0, -2.0], [3.0, 4.0]]])  # h=1, 2x2
        e = ex.layer_explanation(ex.AttnGradient(layer=1, grad=grad))
        np.testing.assert_allclose(e.values, [2.0, 2.0])

    def test_layer_explanation_matches_naive_loops(self, tiny_cls):
        _, trace = make_trace(tiny_cls, seed=8)
        query = ex.Query(tiny_cls.classifier, 2)
        g = ex.grad_attention(trace, 3, query, tiny_cls)
        h, rows, cols = g.grad.shape
        naive = np.zeros(cols)
        for j in range(cols):
            acc = 0.0
            for hh in range(h):
                for i in range(rows):
                    acc += max(g.grad[hh, i, j], 0.0)
            naive[j] = acc / (h * rows)
        np.testing.assert_allclose(ex.layer_explanation(g).values, naive,
                                   atol=1e-15)

    def test_pooler_divisor_is_heads_times_one_row(self, tiny_pooler):
        _, trace = make_trace(tiny_pooler, seed=9)
        query = ex.Query(tiny_pooler.classifier, 0)
        g = ex.grad_attention(trace, 2, query, tiny_pooler)
        expected = np.maximum(g.grad, 0.0).sum(axis=(0, 1)) / g.grad.shape[0]
        np.testing.assert_allclose(ex.layer_explanation(g).values, expected,
                                   atol=1e-15)

    def test_single_layer_reduction_identity(self, tiny_cls):
        tensor = fixtures.random_image_tensor(tiny_cls, seed=10)
        query = ex.Query(tiny_cls.classifier, 0)
        num_layers = tiny_cls.config.layers
        merged = ex.legrad(tiny_cls, tensor, query, layer_range=[num_layers])
        _, trace = make_trace(tiny_cls, seed=10)
        single = ex.finalize_single_layer(
            ex.layer_explanation(
                ex.grad_attention(trace, num_layers, query, tiny_cls)),
            tiny_cls.config.image_size)
        np.testing.assert_array_equal(merged.values, single.values)
        np.testing.assert_array_equal(merged.patch_grid, single.patch_grid)

    def test_merge_is_unweighted_mean_over_included_layers(self, tiny_cls):
        _, trace = make_trace(tiny_cls, seed=11)
        query = ex.Query(tiny_cls.classifier, 0)
        exps = [ex.layer_explanation(ex.grad_attention(trace, l, query, tiny_cls))
                for l in (1, 3)]
        merged = ex.merge_layers(exps, tiny_cls.config.image_size)
        naive = (exps[0].values[1:] + exps[1].values[1:]) / 2.0
        from legrad.heatmap import finalize_patch_map
        expect = finalize_patch_map(naive, tiny_cls.config.image_size)
        np.testing.assert_allclose(merged.values, expect.values, atol=1e-15)
        assert merged.layer_range == [1, 3]


class TestLayerScore:
    def test_final_layer_equals_prediction_score_cls(self, tiny_cls):
        tensor = fixtures.random_image_tensor(tiny_cls, seed=12)
        _, trace = make_trace(tiny_cls, seed=12)
        for c in range(3):
            query = ex.Query(tiny_cls.classifier, c)
            s = ex.layer_score(trace, tiny_cls.config.layers, query, tiny_cls)
            p = ex.prediction_score(tiny_cls, tensor, query)
            assert s.value == pytest.approx(p, abs=1e-12)

    def test_final_layer_equals_prediction_score_text(self, tiny_text):
        tensor = fixtures.random_image_tensor(tiny_text, seed=13)
        _, trace = make_trace(tiny_text, seed=13)
        query = ex.Query(tiny_text.classifier, 1)
        s = ex.layer_score(trace, tiny_text.config.layers, query, tiny_text)
        p = ex.prediction_score(tiny_text, tensor, query)
        assert s.value == pytest.approx(p, abs=1e-12)

    def test_intermediate_scores_differ(self, tiny_cls):
        _, trace = make_trace(tiny_cls, seed=14)
        query = ex.Query(tiny_cls.classifier, 0)
        scores = [ex.layer_score(trace, l, query, tiny_cls).value
                  for l in range(1, 4)]
        assert len(set(scores)) == 3


class TestLayerRanges:
    @pytest.mark.parametrize("num_layers,expected", [
        (12, [8, 9, 10, 11, 12]),
        (24, [15, 16, 17, 18, 19, 20, 21, 22, 23, 24]),
        (1, [1]),
        (5, [4, 5]),
        (2, [2]),
    ])
    def test_default_range(self, num_layers, expected):
        assert ex.default_layer_range(num_layers) == expected

    def test_resolve_specs(self):
        assert ex.resolve_layer_spec(None, 12) == [8, 9, 10, 11, 12]
        assert ex.resolve_layer_spec("last40%", 12) == [8, 9, 10, 11, 12]
        assert ex.resolve_layer_spec("all", 3) == [1, 2, 3]
        assert ex.resolve_layer_spec("3,1,2", 3) == [1, 2, 3]
        assert ex.resolve_layer_spec("2,2", 3) == [2]
        assert ex.resolve_layer_spec([3], 3) == [3]

    def test_resolve_errors(self):
        with pytest.raises(ex.LayerRangeError):
            ex.resolve_layer_spec("0,1", 3)
        with pytest.raises(ex.LayerRangeError):
            ex.resolve_layer_spec("4", 3)
        with pytest.raises(ex.LayerRangeError):
            ex.resolve_layer_spec("", 3)
        with pytest.raises(ex.LayerRangeError):
            ex.resolve_layer_spec("a,b", 3)


class TestQueries:
    def test_exactly_one_source(self, tiny_cls):
        with pytest.raises(ex.QueryError):
            ex.resolve_query(tiny_cls)
        with pytest.raises(ex.QueryError):
            ex.resolve_query(tiny_cls, label="class_0", class_index=1)

    def test_label_case_insensitive(self, tiny_cls):
        q = ex.resolve_query(tiny_cls, label="CLASS_1")
        assert q.class_index == 1

    def test_unknown_label_suggests(self, tiny_cls):
        with pytest.raises(ex.QueryError, match="class_0"):
            ex.resolve_query(tiny_cls, label="clas_0")

    def test_index_bounds(self, tiny_cls):
        with pytest.raises(ex.QueryError):
            ex.resolve_query(tiny_cls, class_index=3)

    def test_embedding_query(self, tiny_text):
        q = ex.resolve_query(tiny_text, embedding="empty_prompt")
        assert q.classifier.num_classes == 1
        assert np.linalg.norm(q.column) == pytest.approx(1.0, abs=1e-9)

    def test_unknown_embedding(self, tiny_cls):
        with pytest.raises(ex.QueryError, match="empty_prompt"):
            ex.resolve_query(tiny_cls, embedding="nonexistent")


class TestEndToEnd:
    def naive_finalize(self, patch, size):
        g = int(round(math.sqrt(patch.size)))
        grid = patch.reshape(g, g)
        lo, hi = grid.min(), grid.max()
        grid = np.zeros_like(grid) if hi - lo < 1e-12 else (grid - lo) / (hi - lo)
        up = np.zeros((size, size))
        for oy in range(size):
            for ox in range(size):
                if g == 1:
                    up[oy, ox] = grid[0, 0]
                    continue
                fy, fx = oy * (g - 1) / (size - 1), ox * (g - 1) / (size - 1)
                y0, x0 = int(fy), int(fx)
                y1, x1 = min(y0 + 1, g - 1), min(x0 + 1, g - 1)
                dy, dx = fy - y0, fx - x0
                up[oy, ox] = (grid[y0, x0] * (1 - dy) * (1 - dx)
                              + grid[y0, x1] * (1 - dy) * dx
                              + grid[y1, x0] * dy * (1 - dx)
                              + grid[y1, x1] * dy * dx)
        lo, hi = up.min(), up.max()
        return np.zeros_like(up) if hi - lo < 1e-12 else (up - lo) / (hi - lo)

    @pytest.mark.parametrize("pooling", ["cls_token", "attn_pooler"])
    def test_equation_chain_fd_oracle(self, pooling):
        # the whole pipeline driven by NUMERIC gradients must reproduce legrad
        bundle = fixtures.make_tiny_vit(layers=2, heads=2, width=16, seed=61,
                                        pooling=pooling)
        tensor = fixtures.random_image_tensor(bundle, seed=61)
        z0 = model.embed(tensor, bundle.weights, bundle.config)
        query = ex.Query(bundle.classifier, 0)
        layers = [1, 2]

        per_layer = []
        for layer in layers:
            g = ex.fd_grad_attention(bundle, z0, layer, query)
            h, rows, cols = g.shape
            e = np.maximum(g, 0.0).sum(axis=(0, 1)) / (h * rows)
            per_layer.append(e[1:] if rows == cols else e)
        merged = np.mean(np.stack(per_layer), axis=0)
        oracle = self.naive_finalize(merged, bundle.config.image_size)

        got = ex.legrad(bundle, tensor, query, layer_range=layers)
        assert np.abs(got.values - oracle).max() < 1e-3

    def test_legrad_deterministic(self, tiny_cls):
        tensor = fixtures.random_image_tensor(tiny_cls, seed=15)
        query = ex.Query(tiny_cls.classifier, 0)
        h1 = ex.legrad(tiny_cls, tensor, query)
        h2 = ex.legrad(tiny_cls, tensor, query)
        np.testing.assert_array_equal(h1.values, h2.values)

    def test_default_range_used(self, tiny_cls):
        tensor = fixtures.random_image_tensor(tiny_cls, seed=16)
        query = ex.Query(tiny_cls.classifier, 0)
        h = ex.legrad(tiny_cls, tensor, query)
        assert h.layer_range == [2, 3]  # ceil(0.4 * 3) = 2 trailing layers

    def test_dispatcher_unknown_method(self, tiny_cls):
        tensor = fixtures.random_image_tensor(tiny_cls, seed=17)
        with pytest.raises(ValueError, match="unknown method"):
            ex.explain(tiny_cls, tensor, "saliency",
                       ex.Query(tiny_cls.classifier, 0))

    def test_suppress_background_needs_empty_embedding(self, tiny_cls):
        bundle = fixtures.make_tiny_vit(layers=2, heads=2, width=16, seed=62)
        bundle.extra_embeddings.clear()
        tensor = fixtures.random_image_tensor(bundle, seed=18)
        with pytest.raises(ex.QueryError):
            ex.explain(bundle, tensor, "legrad", ex.Query(bundle.classifier, 0),
                       suppress_background=True)

    def test_heatmap_invariants_all_methods(self, tiny_cls, tiny_pooler):
        for bundle in (tiny_cls, tiny_pooler):
            tensor = fixtures.random_image_tensor(bundle, seed=19)
            query = ex.Query(bundle.classifier, 0)
            for method in ex.METHODS:
                h = ex.explain(bundle, tensor, method, query)
                assert isinstance(h, Heatmap)
                s = bundle.config.image_size
                assert h.values.shape == (s, s)
                assert h.values.min() == 0.0
                assert h.values.max() == 1.0 or not h.values.any()
                assert h.method == method
