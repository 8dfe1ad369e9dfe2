import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from graphloc import numcore as nc
from graphloc.errors import EmptyVideoError, ShapeError
from graphloc.graph import build_affinity, build_graph, drop_weak_edges, graph_conv, row_normalize, weak_edge_mask

import oracles


class TestAffinity:
    def test_single_segment(self):
        np.testing.assert_allclose(build_affinity(nc.constant([[0.3, -2.0]])).value, [[1.0]])

    def test_identical_rows(self):
        g = build_affinity(nc.constant([[1.0, 2.0, 0.5]] * 3)).value
        np.testing.assert_allclose(g, np.ones((3, 3)), atol=1e-12)

    def test_analytic_offdiagonals(self):
        phi = np.zeros((3, 5))
        phi[0, 0] = phi[1, 1] = 1.0
        phi[2, :2] = 1.0
        g = build_affinity(nc.constant(phi)).value
        r = 1 / math.sqrt(2)
        np.testing.assert_allclose(g, [[1, 0, r], [0, 1, r], [r, r, 1]], atol=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyVideoError):
            build_affinity(nc.constant(np.zeros((0, 3))))


class TestEdgeDrop:
    def test_midpoint(self):
        g = np.array([[0.9, 0.1], [0.5, 0.9]])
        np.testing.assert_array_equal(drop_weak_edges(nc.constant(g)).value, [[0.9, 0.0], [0.5, 0.9]])

    def test_constant_graph_unchanged(self):
        g = np.full((3, 3), 0.4)
        np.testing.assert_array_equal(drop_weak_edges(nc.constant(g)).value, g)

    def test_threshold_on_magnitude(self):
        # |.| spans [0.2, 1.0] -> cut at 0.6; -0.8 survives on magnitude
        g = np.array([[-0.8, 0.2], [0.2, 1.0]])
        np.testing.assert_array_equal(drop_weak_edges(nc.constant(g)).value, [[-0.8, 0.0], [0.0, 1.0]])

    def test_signed_variant_drops_negatives(self):
        g = np.array([[-0.8, 0.2], [0.2, 1.0]])
        np.testing.assert_array_equal(weak_edge_mask(g, signed=True), [[False, True], [True, True]])

    def test_non_square(self):
        with pytest.raises(ShapeError):
            weak_edge_mask(np.ones((2, 3)))

    def test_mask_is_constant_for_gradients(self, rng):
        g = nc.parameter(rng.uniform(-1, 1, (4, 4)))
        with nc.Tape() as tape:
            loss = nc.sum_(drop_weak_edges(g))
        grads = nc.backward(tape, loss, {"g": g})
        np.testing.assert_array_equal(grads["g"], weak_edge_mask(g.value).astype(float))

    @given(arrays(np.float64, st.tuples(st.integers(1, 8), st.just(8)),
                  elements=st.floats(-1, 1, allow_nan=False)))
    def test_keeps_the_maximum(self, x):
        g = x[:, : x.shape[0]]
        out = drop_weak_edges(nc.constant(g)).value
        big = np.unravel_index(np.argmax(np.abs(g)), g.shape)
        assert out[big] == g[big]
        assert np.all((out == 0) | (out == g))

    def test_matches_brute_force_oracle(self, rng):
        for _ in range(50):
            l = int(rng.integers(1, 13))
            g = rng.uniform(-1, 1, (l, l))
            np.testing.assert_array_equal(drop_weak_edges(nc.constant(g)).value, np.array(oracles.edge_drop(g.tolist())))


class TestRowNormalize:
    def test_positive_row(self):
        np.testing.assert_allclose(row_normalize(nc.constant([[2.0, 1.0, 1.0]] * 3)).value[0], [0.5, 0.25, 0.25])

    def test_signed_entries_divide_by_abs_sum(self):
        g = np.array([[1.0, -1.0, 2.0], [0, 1, 0], [0, 0, 1.0]])
        np.testing.assert_allclose(row_normalize(nc.constant(g)).value[0], [0.25, -0.25, 0.5])

    def test_zero_row_becomes_self_edge(self):
        g = np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 0.0], [3.0, 0.0, 1.0]])
        out = row_normalize(nc.constant(g)).value
        np.testing.assert_array_equal(out[1], [0.0, 1.0, 0.0])

    @given(arrays(np.float64, (5, 5), elements=st.floats(-3, 3, allow_nan=False)))
    def test_abs_rows_sum_to_one(self, g):
        out = row_normalize(nc.constant(g)).value
        np.testing.assert_allclose(np.abs(out).sum(axis=1), 1.0, atol=1e-9)

    def test_gradient(self, rng):
        w = nc.constant(rng.standard_normal((4, 4)))
        g = rng.uniform(-1, 1, (4, 4))
        g[2] = 0.0
        report = nc.check_gradients(lambda p: nc.sum_(nc.mul(row_normalize(p["g"]), w)), {"g": nc.parameter(g)},
                                    indices={"g": [(i, j) for i in (0, 1, 3) for j in range(4)]})
        assert report["g"] < 1e-6


class TestGraphConv:
    def test_identity_graph_is_linear_layer(self, rng):
        x, w = rng.standard_normal((5, 4)), rng.standard_normal((4, 3))
        z = graph_conv(nc.constant(np.eye(5)), nc.constant(x), nc.constant(w)).value
        np.testing.assert_array_equal(z, x @ w)

    def test_mean_graph_gives_identical_rows(self, rng):
        x, w = rng.standard_normal((4, 3)), rng.standard_normal((3, 2))
        z = graph_conv(nc.constant(np.full((4, 4), 0.25)), nc.constant(x), nc.constant(w)).value
        np.testing.assert_allclose(z - z[0], 0.0, atol=1e-15)

    def test_associativity(self, rng):
        g, x, w = rng.standard_normal((4, 4)), rng.standard_normal((4, 6)), rng.standard_normal((6, 3))
        z = graph_conv(nc.constant(g), nc.constant(x), nc.constant(w)).value
        np.testing.assert_allclose(z, (g @ x) @ w, atol=1e-10)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            graph_conv(nc.constant(np.eye(3)), nc.constant(np.ones((4, 2))), nc.constant(np.ones((2, 2))))
        with pytest.raises(ShapeError):
            graph_conv(nc.constant(np.eye(4)), nc.constant(np.ones((4, 2))), nc.constant(np.ones((3, 2))))


def test_build_graph_triplet(rng):
    phi = nc.constant(rng.standard_normal((6, 4)))
    t = build_graph(phi)
    np.testing.assert_array_equal(t.masked.value, t.raw.value * weak_edge_mask(t.raw.value))
    np.testing.assert_allclose(np.abs(t.normalized.value).sum(axis=1), 1.0)
    # diagonal cosines are maximal so self-edges always survive
    assert np.all(np.diag(t.masked.value) > 0)
    no_drop = build_graph(phi, drop_edges=False)
    np.testing.assert_array_equal(no_drop.masked.value, no_drop.raw.value)
