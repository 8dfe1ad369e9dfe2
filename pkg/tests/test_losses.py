import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from graphloc import numcore as nc
from graphloc.errors import ContractError, DegenerateVideoError, ShapeError
from graphloc.losses import (casl_features, casl_pair, compute_k, cosine_distance, l1_sparsity, label_vector,
                             mil_loss, mil_video_loss, total_loss)
from graphloc.model import forward, init_params

import oracles
from conftest import small_config


class TestK:
    @pytest.mark.parametrize("l, d, k", [(32, 8, 4), (5, 8, 1), (10, 1, 10), (1, 1, 1)])
    def test_formula(self, l, d, k):
        assert compute_k(l, d) == k


class TestMil:
    def test_uniform_two_class(self):
        loss = mil_loss([nc.constant(np.zeros((6, 2)))], [{0}], 8)
        assert loss.item() == pytest.approx(math.log(2), abs=1e-12)

    @pytest.mark.parametrize("c", [2, 5, 20])
    def test_uniform_any_c(self, c):
        assert mil_loss([nc.constant(np.full((4, c), 0.3))], [{0}], 2).item() == pytest.approx(-math.log(1 / c),
                                                                                             abs=1e-9)

    def test_multilabel_weighting(self, rng):
        s = rng.uniform(-1, 1, (9, 2))
        pooled = [np.sort(s[:, j])[::-1][:3].mean() for j in range(2)]
        p = np.exp(pooled) / np.exp(pooled).sum()
        expected = 0.5 * -math.log(p[0]) + 0.5 * -math.log(p[1])
        assert mil_video_loss(nc.constant(s), {0, 1}, 3).item() == pytest.approx(expected, abs=1e-12)

    def test_tanh_floor(self):
        s = np.array([[1.0, -1.0]] * 8)
        assert mil_video_loss(nc.constant(s), {0}, 8).item() == pytest.approx(0.12693, abs=1e-5)
        p1 = math.e ** 2 / (math.e ** 2 + 1)
        assert p1 == pytest.approx(0.8808, abs=1e-4)

    def test_matches_scalar_oracle(self, rng):
        for _ in range(20):
            l, c = int(rng.integers(1, 20)), int(rng.integers(2, 6))
            s = rng.uniform(-1, 1, (l, c))
            y = (rng.random(c) < 0.4).astype(float)
            y[rng.integers(c)] = 1.0
            d = int(rng.choice([1, 2, 4, 8]))
            ours = mil_video_loss(nc.constant(s), y, d).item()
            assert ours == pytest.approx(oracles.mil_video(s.tolist(), y.tolist(), d), abs=1e-12)

    def test_batch_mean(self, rng):
        a, b = nc.constant(rng.uniform(-1, 1, (5, 3))), nc.constant(rng.uniform(-1, 1, (7, 3)))
        both = mil_loss([a, b], [{0}, {2}], [1, 8]).item()
        assert both == pytest.approx((mil_video_loss(a, {0}, 1).item() + mil_video_loss(b, {2}, 8).item()) / 2)

    def test_empty_labels(self):
        with pytest.raises(ContractError):
            mil_video_loss(nc.constant(np.zeros((3, 2))), set(), 1)

    def test_indicator_labels(self):
        np.testing.assert_array_equal(label_vector(np.array([0.0, 1.0, 1.0]), 3), [0, 1, 1])
        np.testing.assert_array_equal(label_vector([2], 3), [0, 0, 1])


class TestL1:
    def test_identity(self):
        assert l1_sparsity(nc.constant(np.eye(3))).item() == pytest.approx(1 / 3)

    @pytest.mark.parametrize("l", [1, 2, 4, 7])
    def test_identity_is_one_over_l(self, l):
        assert l1_sparsity(nc.constant(np.eye(l))).item() == pytest.approx(1 / l, abs=1e-15)

    def test_all_ones(self):
        assert l1_sparsity(nc.constant(np.ones((4, 4)))).item() == 1.0

    def test_signed(self):
        assert l1_sparsity(nc.constant([[1.0, -0.5], [-0.5, 1.0]])).item() == 0.75

    def test_non_square(self):
        with pytest.raises(ShapeError):
            l1_sparsity(nc.constant(np.ones((2, 3))))


class TestCaslFeatures:
    def test_one_hot_attention(self):
        f = nc.constant([[1.0, 2.0], [3.0, 4.0]])
        # a huge score gap makes the time softmax one-hot
        s = nc.constant([[500.0], [-500.0]])
        fg, bg = casl_features(f, s, 0)
        np.testing.assert_allclose(fg.value, [[1.0, 2.0]])
        np.testing.assert_allclose(bg.value, [[3.0, 4.0]])

    def test_uniform_attention(self):
        fg, bg = casl_features(nc.constant(np.eye(2)), nc.constant(np.zeros((2, 1))), 0)
        np.testing.assert_allclose(fg.value, [[0.5, 0.5]])
        np.testing.assert_allclose(bg.value, [[0.5, 0.5]])

    def test_weighted_sum_oracle(self, rng):
        f, s = rng.standard_normal((3, 4)), rng.uniform(-1, 1, (3, 2))
        fg, bg = casl_features(nc.constant(f), nc.constant(s), 1)
        att = oracles.softmax(s[:, 1].tolist())
        np.testing.assert_allclose(fg.value[0], oracles.weighted_sum(att, f.tolist()), atol=1e-12)
        np.testing.assert_allclose(bg.value[0], oracles.weighted_sum([1 - a for a in att], f.tolist()), atol=1e-12)

    def test_class_axis_attention(self, rng):
        s = rng.uniform(-1, 1, (4, 3))
        f = rng.standard_normal((4, 2))
        fg, _ = casl_features(nc.constant(f), nc.constant(s), 2, "class")
        att = np.exp(s) / np.exp(s).sum(axis=1, keepdims=True)
        np.testing.assert_allclose(fg.value[0], att[:, 2] @ f, atol=1e-12)

    def test_single_segment(self):
        with pytest.raises(DegenerateVideoError):
            casl_features(nc.constant([[1.0, 2.0]]), nc.constant([[0.5]]), 0)


class TestCaslPair:
    @staticmethod
    def hinge(fg_j, bg_j, fg_k, bg_k):
        from graphloc.losses import casl_hinge
        return casl_hinge(*(nc.constant(v) for v in (fg_j, bg_j, fg_k, bg_k))).item()

    def test_ideal_separation(self):
        f, b = [1.0, 0.0], [0.0, 1.0]
        assert self.hinge(f, b, f, b) == pytest.approx(0.0, abs=1e-9)

    def test_full_collapse(self):
        v = [0.3, 0.7]
        assert self.hinge(v, v, v, v) == pytest.approx(1.0, abs=1e-9)

    def test_cosine_distance_range(self):
        assert cosine_distance(nc.constant([1.0, 0]), nc.constant([0, 1.0])).item() == pytest.approx(0.5)
        assert cosine_distance(nc.constant([1.0, 0]), nc.constant([-1.0, 0])).item() == pytest.approx(1.0)

    def test_scalar_oracle(self, rng):
        for _ in range(20):
            lj, lk = int(rng.integers(2, 8)), int(rng.integers(2, 8))
            fj, fk = rng.standard_normal((lj, 5)), rng.standard_normal((lk, 5))
            sj, sk = rng.uniform(-1, 1, (lj, 3)), rng.uniform(-1, 1, (lk, 3))
            ours = casl_pair(*(nc.constant(a) for a in (fj, sj, fk, sk)), 1).item()
            ref = oracles.casl_pair(fj.tolist(), sj.tolist(), fk.tolist(), sk.tolist(), 1)
            assert ours == pytest.approx(ref, abs=1e-12)

    @settings(max_examples=50)
    @given(arrays(np.float64, (3, 4), elements=st.floats(-3, 3, allow_nan=False)),
           arrays(np.float64, (4, 4), elements=st.floats(-3, 3, allow_nan=False)))
    def test_bounded(self, fj, fk):
        # each hinge is at most 1 - 0 + 0.5, so a pair is bounded by 3
        sj, sk = np.tanh(fj[:, :2]), np.tanh(fk[:, :2])
        v = casl_pair(nc.constant(fj), nc.constant(sj), nc.constant(fk), nc.constant(sk), 0).item()
        assert 0.0 <= v <= 3.0

    def test_labels_must_share_class(self, rng):
        f, s = nc.constant(rng.standard_normal((3, 2))), nc.constant(rng.uniform(-1, 1, (3, 2)))
        with pytest.raises(ContractError):
            casl_pair(f, s, f, s, 1, labels_j={0, 1}, labels_k={0})


class TestTotal:
    def outputs(self, cfg, rng, lengths=(5, 6, 4)):
        params = init_params(cfg, rng)
        return [forward(rng.standard_normal((l, cfg.input_dim)), params, cfg, "eval") for l in lengths]

    def test_all_disabled(self, rng):
        cfg = small_config(use_l1=False, use_mil=False, casl_target="off")
        total, br = total_loss(self.outputs(cfg, rng), [{0}, {0}, {1}], [(0, 1, 0)], cfg, 8)
        assert total.item() == 0.0 and br.total == 0.0

    def test_only_l1_identity_graph(self):
        cfg = small_config(use_mil=False, casl_target="off")
        out = SimpleNamespace(affinity=SimpleNamespace(raw=nc.constant(np.eye(4))))
        total, br = total_loss([out], [{0}], [], cfg, 8)
        assert total.item() == 0.25 and br.l1 == 0.25

    def test_sum_of_components(self, rng):
        cfg = small_config()
        outs = self.outputs(cfg, rng)
        labels, pairs = [{0}, {0, 2}, {2}], [(0, 1, 0), (1, 2, 2)]
        total, br = total_loss(outs, labels, pairs, cfg, 2)
        mil = mil_loss([o.scores for o in outs], labels, 2).item()
        l1 = np.mean([np.abs(o.affinity.raw.value).sum() / o.affinity.raw.rows ** 2 for o in outs])
        casl = np.mean([oracles.casl_pair(outs[j].phi_out.value.tolist(), outs[j].scores.value.tolist(),
                                          outs[k].phi_out.value.tolist(), outs[k].scores.value.tolist(), c)
                        for j, k, c in pairs])
        assert br.mil == pytest.approx(mil, abs=1e-12)
        assert br.l1 == pytest.approx(l1, abs=1e-12)
        assert br.casl == pytest.approx(casl, abs=1e-12)
        assert total.item() == pytest.approx(mil + l1 + casl, abs=1e-12)

    def test_no_pairs_no_casl(self, rng):
        cfg = small_config()
        _, br = total_loss(self.outputs(cfg, rng), [{0}, {1}, {2}], [], cfg, 8)
        assert br.casl == 0.0

    def test_graph_output_target(self, rng):
        cfg = small_config(casl_target="graph_output")
        outs = self.outputs(cfg, rng)
        _, br = total_loss(outs, [{0}, {0}, {1}], [(0, 1, 0)], cfg, 8)
        ref = oracles.casl_pair(outs[0].z.value.tolist(), outs[0].scores.value.tolist(),
                                outs[1].z.value.tolist(), outs[1].scores.value.tolist(), 0)
        assert br.casl == pytest.approx(ref, abs=1e-12)
