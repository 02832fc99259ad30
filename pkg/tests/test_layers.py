"""Forward contracts and finite-difference gradients for every layer."""

import math

import numpy as np
import pytest

from fragmenta.errors import InvalidInputError
from fragmenta.neural import autodiff as ad
from fragmenta.neural import layers as nn
from fragmenta.neural.autodiff import Tensor, grad_check


def _randomize_biases(module, rng, scale=0.1):
    """Keep preactivations off the rectifier kink during finite differences."""
    for name, p in module.parameters().items():
        if ".b" in name or name.endswith("b"):
            p.data = rng.normal(0, scale, size=p.data.shape)


class TestPatchEmbedders:
    def test_zero_patches_zero_bias_gives_zero(self):
        rng = np.random.default_rng(0)
        emb = nn.PatchEmbedder(1, [5], 8, 7, rng)
        out = emb.forward(np.zeros((4, 7, 7)))
        assert np.abs(out.data).max() == 0.0

    def test_identical_patches_identical_rows(self):
        rng = np.random.default_rng(1)
        emb = nn.PatchEmbedder(3, [6, 6], 8, 7, rng)
        patch = rng.random((1, 3, 7, 7))
        stacked = np.repeat(patch, 5, axis=0)
        out = emb.forward(stacked).data
        assert np.allclose(out, out[0])

    def test_contour_embedder_gradients(self):
        rng = np.random.default_rng(2)
        emb = nn.PatchEmbedder(1, [4], 6, 5, rng)
        _randomize_biases(emb, rng)
        patches = (rng.random((5, 5, 5)) < 0.4).astype(float)
        err = grad_check(lambda: ad.tensor_sum(ad.sigmoid(emb.forward(patches))),
                         list(emb.parameters().values()))
        assert err < 1e-4

    def test_texture_embedder_gradients(self):
        rng = np.random.default_rng(3)
        emb = nn.PatchEmbedder(3, [4, 4], 6, 7, rng)
        _randomize_biases(emb, rng)
        patches = rng.random((3, 3, 7, 7))
        err = grad_check(lambda: ad.tensor_sum(ad.sigmoid(emb.forward(patches))),
                         list(emb.parameters().values()))
        assert err < 1e-4


class TestGcnLayer:
    def test_zero_weights_identity(self):
        rng = np.random.default_rng(4)
        h = Tensor(rng.normal(size=(9, 5)))
        out = nn.gcn_layer(h, 2, Tensor(np.zeros((5, 5))), Tensor(np.zeros(5)))
        assert np.array_equal(out.data, h.data)

    def test_constant_field_stays_constant(self):
        rng = np.random.default_rng(5)
        w = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=(4,)), requires_grad=True)
        row = rng.normal(size=(1, 4))
        h = Tensor(np.repeat(row, 10, axis=0))
        out = nn.gcn_layer(h, 3, w, b).data
        assert np.allclose(out, out[0])

    def test_gradients(self):
        rng = np.random.default_rng(6)
        h = Tensor(rng.normal(size=(8, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(4, 4)) * 0.5, requires_grad=True)
        b = Tensor(rng.normal(size=(4,)) * 0.1, requires_grad=True)
        mask = np.array([1, 1, 1, 1, 1, 1, 0, 0], float)
        err = grad_check(
            lambda: ad.tensor_sum(ad.sigmoid(nn.gcn_layer(h, 2, w, b, mask))), [h, w, b])
        assert err < 1e-4

    def test_masked_rows_stay_zero(self):
        rng = np.random.default_rng(7)
        h = Tensor(rng.normal(size=(6, 3)) * np.array([1, 1, 1, 1, 0, 0])[:, None])
        w = Tensor(rng.normal(size=(3, 3)))
        b = Tensor(rng.normal(size=(3,)))
        mask = np.array([1, 1, 1, 1, 0, 0], float)
        out = nn.gcn_layer(h, 2, w, b, mask).data
        assert np.abs(out[4:]).max() == 0.0


class TestSelfGatedFusion:
    def test_zero_gate_params_average(self):
        rng = np.random.default_rng(8)
        f_t = Tensor(rng.normal(size=(6, 4)))
        f_c = Tensor(rng.normal(size=(6, 4)))
        fused, gate = nn.self_gated_fusion(f_t, f_c, Tensor(np.zeros((8, 4))), Tensor(np.zeros(4)))
        assert np.allclose(gate.data, 0.5)
        assert np.allclose(fused.data, (f_t.data + f_c.data) / 2)

    def test_saturated_gate_selects_texture(self):
        rng = np.random.default_rng(9)
        f_t = Tensor(rng.normal(size=(5, 3)))
        f_c = Tensor(rng.normal(size=(5, 3)))
        fused, _ = nn.self_gated_fusion(f_t, f_c, Tensor(np.zeros((6, 3))),
                                        Tensor(np.full(3, 20.0)))
        assert np.allclose(fused.data, f_t.data, atol=1e-8)

    def test_gate_strictly_inside_unit_interval(self):
        rng = np.random.default_rng(10)
        fusion = nn.GatedFusion(5, rng)
        _, gate = fusion.forward(Tensor(rng.normal(size=(7, 5))), Tensor(rng.normal(size=(7, 5))))
        assert (gate.data > 0).all() and (gate.data < 1).all()

    def test_convex_combination(self):
        rng = np.random.default_rng(11)
        fusion = nn.GatedFusion(4, rng)
        f_t = Tensor(rng.normal(size=(6, 4)))
        f_c = Tensor(rng.normal(size=(6, 4)))
        fused, _ = fusion.forward(f_t, f_c)
        lo = np.minimum(f_t.data, f_c.data)
        hi = np.maximum(f_t.data, f_c.data)
        assert (fused.data >= lo - 1e-12).all() and (fused.data <= hi + 1e-12).all()

    def test_gradients_both_branches(self):
        rng = np.random.default_rng(12)
        fusion = nn.GatedFusion(3, rng)
        f_t = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        f_c = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        params = [f_t, f_c] + list(fusion.parameters().values())
        err = grad_check(lambda: ad.tensor_sum(ad.sigmoid(fusion.forward(f_t, f_c)[0])), params)
        assert err < 1e-4


class TestSimilarityAndDualSoftmax:
    def test_basis_rows_give_scaled_identity(self):
        eye = np.zeros((8, 64))
        eye[np.arange(8), np.arange(8)] = 1.0
        logits = nn.similarity_logits(Tensor(eye), Tensor(eye)).data
        assert np.allclose(logits, np.eye(8) / 8.0)

    def test_orthogonal_rows_zero(self):
        a = np.zeros((3, 16))
        b = np.zeros((4, 16))
        a[:, :3] = np.eye(3)
        b[:, 3:7] = np.eye(4)
        assert np.abs(nn.similarity_logits(Tensor(a), Tensor(b)).data).max() == 0.0

    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(13)
        fm, fn = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
        got = nn.similarity_logits(Tensor(fm), Tensor(fn)).data
        for i in range(4):
            for j in range(5):
                expect = sum(fm[i, d] * fn[j, d] for d in range(3)) / math.sqrt(3)
                assert got[i, j] == pytest.approx(expect, rel=1e-12)

    def test_dual_softmax_1x1(self):
        assert nn.dual_softmax(Tensor([[3.7]])).data[0, 0] == 1.0

    def test_dual_softmax_uniform_2x2(self):
        assert np.allclose(nn.dual_softmax(Tensor(np.zeros((2, 2)))).data, 0.25)

    def test_dual_softmax_matches_direct_evaluation(self):
        rng = np.random.default_rng(14)
        s = rng.normal(size=(5, 7))
        got = nn.dual_softmax(Tensor(s)).data
        e = np.exp(s)
        expect = (e / e.sum(axis=0, keepdims=True)) * (e / e.sum(axis=1, keepdims=True))
        assert np.abs(got - expect).max() < 1e-12
        assert (got > 0).all() and (got <= 1).all()

    def test_factor_normalizations(self):
        rng = np.random.default_rng(15)
        p_col, p_row = nn.dual_softmax_factors(Tensor(rng.normal(size=(6, 9))))
        assert np.allclose(p_col.data.sum(axis=0), 1.0)
        assert np.allclose(p_row.data.sum(axis=1), 1.0)

    def test_dominant_mutual_max_preserved(self):
        rng = np.random.default_rng(16)
        for _ in range(50):
            s = rng.normal(size=(8, 10))
            i, j = rng.integers(0, 8), rng.integers(0, 10)
            s[i, j] = max(s[i].max(), s[:, j].max()) + 5.0  # clear mutual max
            out = nn.dual_softmax(Tensor(s)).data
            assert out[i].argmax() == j
            assert out[:, j].argmax() == i

    def test_gradient_through_chain(self):
        rng = np.random.default_rng(17)
        logits = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        err = grad_check(lambda: ad.tensor_sum(ad.power(nn.dual_softmax(logits), 2.0)), [logits])
        assert err < 1e-4


class TestLinearAttention:
    def _params(self, d, rng):
        enc = nn.LinearAttentionEncoder(d, 1, rng)
        return enc, {nm: enc._params[f"layer0.{nm}"]
                     for nm in ("wq", "bq", "wk", "bk", "wv", "bv", "w1", "b1", "w2", "b2")}

    def test_single_position_attends_to_itself(self):
        rng = np.random.default_rng(18)
        enc, params = self._params(4, rng)
        x = Tensor(rng.normal(size=(1, 4)))
        out = nn.linear_attention_layer(x, None, params)
        # with one key, attention returns exactly its value row
        q = ad.elu_plus_one(nn.affine(x, params["wq"], params["bq"])).data
        v = nn.affine(x, params["wv"], params["bv"]).data
        k = ad.elu_plus_one(nn.affine(x, params["wk"], params["bk"])).data
        attn = (q @ (k.T @ v)) / (q @ k.T.sum(axis=1, keepdims=True))
        assert np.allclose(attn, v, atol=1e-12)
        assert np.all(np.isfinite(out.data))

    def test_kernel_trick_associativity(self):
        rng = np.random.default_rng(19)
        enc, params = self._params(5, rng)
        x = rng.normal(size=(9, 5))
        q = ad.elu_plus_one(nn.affine(Tensor(x), params["wq"], params["bq"])).data
        k = ad.elu_plus_one(nn.affine(Tensor(x), params["wk"], params["bk"])).data
        v = nn.affine(Tensor(x), params["wv"], params["bv"]).data
        left = q @ (k.T @ v)
        right = (q @ k.T) @ v
        assert np.abs(left - right).max() < 1e-9

    def test_masked_keys_excluded(self):
        rng = np.random.default_rng(20)
        enc, params = self._params(4, rng)
        x = rng.normal(size=(6, 4))
        mask = np.array([1, 1, 1, 1, 0, 0], float)
        out_masked = nn.linear_attention_layer(Tensor(x), mask, params).data
        out_trunc = nn.linear_attention_layer(Tensor(x[:4]), None, params).data
        assert np.allclose(out_masked[:4], out_trunc, atol=1e-12)
        assert np.abs(out_masked[4:]).max() == 0.0

    def test_all_masked_rejected(self):
        rng = np.random.default_rng(21)
        enc, params = self._params(3, rng)
        with pytest.raises(InvalidInputError):
            nn.linear_attention_layer(Tensor(rng.normal(size=(3, 3))), np.zeros(3), params)

    def test_gradients(self):
        rng = np.random.default_rng(22)
        enc = nn.LinearAttentionEncoder(4, 2, rng)
        x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        mask = np.array([1, 1, 1, 1, 0], float)
        params = [x] + list(enc.parameters().values())
        err = grad_check(lambda: ad.tensor_sum(ad.sigmoid(enc.forward(x, mask))), params)
        assert err < 1e-4


class TestSearchHead:
    def test_output_dimension(self):
        rng = np.random.default_rng(23)
        head = nn.SearchHead(6, 128, rng)
        out = head.forward(Tensor(rng.normal(size=(9, 6))), Tensor(rng.normal(size=(9, 6))))
        assert out.data.shape == (128,)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(24)
        head = nn.SearchHead(5, 16, rng)
        f_c = rng.normal(size=(8, 5))
        f_t = rng.normal(size=(8, 5))
        mask = np.array([1, 1, 1, 1, 1, 1, 0, 0], float)
        base = head.forward(Tensor(f_c), Tensor(f_t), mask).data
        perm = rng.permutation(8)
        permuted = head.forward(Tensor(f_c[perm]), Tensor(f_t[perm]), mask[perm]).data
        assert np.allclose(base, permuted, atol=1e-12)

    def test_all_masked_rejected(self):
        rng = np.random.default_rng(25)
        head = nn.SearchHead(4, 8, rng)
        with pytest.raises(InvalidInputError):
            head.forward(Tensor(rng.normal(size=(3, 4))),
                         Tensor(rng.normal(size=(3, 4))), np.zeros(3))

    def test_gradients(self):
        rng = np.random.default_rng(26)
        head = nn.SearchHead(4, 6, rng)
        _ = [p for n, p in head.parameters().items()]
        f_c = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        f_t = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
        mask = np.array([1, 1, 1, 0, 1], float)
        params = [f_c, f_t] + list(head.parameters().values())
        err = grad_check(
            lambda: ad.tensor_sum(ad.sigmoid(head.forward(f_c, f_t, mask))), params)
        assert err < 1e-4
