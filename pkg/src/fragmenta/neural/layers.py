"""Differentiable building blocks: patch embedders, ring-graph message
passing, self-gated fusion, the similarity head, kernelized linear
attention, and the global search head.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import InvalidInputError
from . import autodiff as ad
from .autodiff import Tensor


def he_normal(rng, shape, fan_in):
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


class Module:
    """Parameter bookkeeping: registered tensors plus child modules."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, "Module"] = {}

    def _register(self, name: str, array) -> Tensor:
        t = Tensor(array, requires_grad=True)
        self._params[name] = t
        return t

    def _add_child(self, name: str, child: "Module") -> "Module":
        self._children[name] = child
        return child

    def parameters(self) -> dict[str, Tensor]:
        out = dict(self._params)
        for cname, child in self._children.items():
            for pname, p in child.parameters().items():
                out[f"{cname}.{pname}"] = p
        return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, w), b)


def conv3x3(x: Tensor, w: Tensor, b: Tensor, cols: Tensor | None = None) -> Tensor:
    """Valid 3x3 convolution over (M, C, H, W); returns (M, C_out, H-2, W-2).

    ``cols`` may carry precomputed sliding-window columns for a constant
    input (they never change between steps)."""
    m, c, h, wd = x.shape
    oh, ow = h - 2, wd - 2
    if cols is None:
        cols = ad.conv_cols(x)
    y = affine(cols, w, b)
    c_out = w.shape[1]
    y = ad.reshape(y, (m, oh, ow, c_out))
    return ad.permute(y, (0, 3, 1, 2))


class PatchEmbedder(Module):
    """Per-point patch encoder: 3x3 conv stack, global average pool, then
    an affine map to the feature width. Point-wise independent."""

    def __init__(self, c_in: int, conv_channels: list[int], d_out: int, patch: int, rng):
        super().__init__()
        self.conv_channels = list(conv_channels)
        c = c_in
        size = patch
        for i, c_out in enumerate(self.conv_channels):
            self._register(f"conv{i}.w", he_normal(rng, (c * 9, c_out), c * 9))
            self._register(f"conv{i}.b", np.zeros(c_out))
            c = c_out
            size -= 2
            if size < 1:
                raise InvalidInputError("patch too small for the conv stack")
        self._register("fc.w", he_normal(rng, (c, d_out), c))
        self._register("fc.b", np.zeros(d_out))

    def forward(self, patches, cache: dict | None = None, cache_key: str = "") -> Tensor:
        x = patches if isinstance(patches, Tensor) else Tensor(np.asarray(patches, dtype=np.float64))
        if x.ndim == 3:  # single-channel (M, P, P)
            m, p, _ = x.shape
            x = ad.reshape(x, (m, 1, p, p))
        for i in range(len(self.conv_channels)):
            cols = None
            constant_input = x._vjp is None and not x.requires_grad
            if constant_input and cache is not None:
                key = (cache_key, i)
                data = cache.get(key)
                if data is None:
                    data = ad.conv_cols(x).data
                    cache[key] = data
                cols = Tensor(data)
            x = conv3x3(x, self._params[f"conv{i}.w"], self._params[f"conv{i}.b"], cols)
            x = ad.leaky_relu(x, 0.2)
        m, c, h, w = x.shape
        pooled = ad.mul(ad.tensor_sum(x, axis=(2, 3)), 1.0 / (h * w))
        return affine(pooled, self._params["fc.w"], self._params["fc.b"])


def gcn_layer(h: Tensor, k: int, w: Tensor, b: Tensor, mask=None) -> Tensor:
    """Residual mean-aggregation layer over the cyclic ring graph:
    h + act(W * mean(neighborhood including self) + b), slope-0.2 rectifier.
    Masked nodes are excluded from every mean and stay zero."""
    agg = ad.ring_mean(h, k, mask)
    upd = ad.leaky_relu(affine(agg, w, b), 0.2)
    out = ad.add(h, upd)
    if mask is not None:
        out = ad.mul(out, np.asarray(mask, dtype=np.float64).reshape(-1, 1))
    return out


class RingGCN(Module):
    def __init__(self, d: int, n_layers: int, k: int, rng):
        super().__init__()
        self.n_layers = n_layers
        self.k = k
        for i in range(n_layers):
            self._register(f"layer{i}.w", he_normal(rng, (d, d), d))
            self._register(f"layer{i}.b", np.zeros(d))

    def forward(self, h: Tensor, mask=None) -> Tensor:
        for i in range(self.n_layers):
            h = gcn_layer(h, self.k, self._params[f"layer{i}.w"], self._params[f"layer{i}.b"], mask)
        return h


def self_gated_fusion(f_t: Tensor, f_c: Tensor, w_g: Tensor, b_g: Tensor):
    """Sigmoid-gated convex combination of texture and contour features.

    Returns (fused, gate); gate entries are strictly inside (0, 1) so the
    fused row is a per-coordinate convex mix of the two inputs.
    """
    gate = ad.sigmoid(affine(ad.concat([f_t, f_c], axis=1), w_g, b_g))
    fused = ad.add(ad.mul(gate, f_t), ad.mul(ad.add(ad.mul(gate, -1.0), 1.0), f_c))
    return fused, gate


class GatedFusion(Module):
    def __init__(self, d: int, rng):
        super().__init__()
        self._register("w", he_normal(rng, (2 * d, d), 2 * d))
        self._register("b", np.zeros(d))

    def forward(self, f_t: Tensor, f_c: Tensor):
        return self_gated_fusion(f_t, f_c, self._params["w"], self._params["b"])


def similarity_logits(f_m: Tensor, f_n: Tensor) -> Tensor:
    """Scaled dot-product score matrix: (f_m @ f_n^T) / sqrt(D)."""
    d = f_m.shape[1]
    if f_n.shape[1] != d:
        raise InvalidInputError("feature widths differ")
    return ad.mul(ad.matmul(f_m, ad.transpose(f_n)), 1.0 / math.sqrt(d))


def dual_softmax_factors(logits: Tensor):
    """Column-wise and row-wise softmax factors with detached max shifts."""
    col_max = logits.data.max(axis=0, keepdims=True)
    e0 = ad.exp(ad.add(logits, -col_max))
    p_col = ad.div(e0, ad.tensor_sum(e0, axis=0, keepdims=True))
    row_max = logits.data.max(axis=1, keepdims=True)
    e1 = ad.exp(ad.add(logits, -row_max))
    p_row = ad.div(e1, ad.tensor_sum(e1, axis=1, keepdims=True))
    return p_col, p_row


def dual_softmax(logits: Tensor) -> Tensor:
    """Product of the column-wise and row-wise softmax normalizations.

    Fused primitive with a closed-form backward pass (the sum of the two
    softmax vector-Jacobian products); bitwise equal on the forward path
    to composing ``dual_softmax_factors``."""
    z = logits if isinstance(logits, Tensor) else Tensor(logits)
    e0 = np.exp(z.data - z.data.max(axis=0, keepdims=True))
    p_col = e0 / e0.sum(axis=0, keepdims=True)
    e1 = np.exp(z.data - z.data.max(axis=1, keepdims=True))
    p_row = e1 / e1.sum(axis=1, keepdims=True)
    out = p_col * p_row

    def vjp(g):
        g_col = g * p_row
        g_row = g * p_col
        gz_col = p_col * (g_col - (p_col * g_col).sum(axis=0, keepdims=True))
        gz_row = p_row * (g_row - (p_row * g_row).sum(axis=1, keepdims=True))
        return (gz_col + gz_row,)

    return ad._make(out, (z,), vjp)


def linear_attention_layer(x: Tensor, mask, params: dict[str, Tensor]) -> Tensor:
    """Single-head kernelized attention with feature map elu(x)+1, a
    residual add, and a residual two-layer feed-forward block.

    Keys at masked positions are excluded; masked rows of the output are
    zeroed so padding never leaks downstream.
    """
    maskv = np.ones(x.shape[0]) if mask is None else np.asarray(mask, dtype=np.float64).reshape(-1)
    if maskv.sum() < 1:
        raise InvalidInputError("attention needs at least one valid position")
    mcol = maskv[:, None]
    q = ad.elu_plus_one(affine(x, params["wq"], params["bq"]))
    k = ad.mul(ad.elu_plus_one(affine(x, params["wk"], params["bk"])), mcol)
    v = affine(x, params["wv"], params["bv"])
    kv = ad.matmul(ad.transpose(k), v)                       # (D, D)
    k_sum = ad.transpose(ad.tensor_sum(k, axis=0, keepdims=True))  # (D, 1)
    attn = ad.div(ad.matmul(q, kv), ad.matmul(q, k_sum))
    h = ad.add(x, attn)
    ff = affine(ad.leaky_relu(affine(h, params["w1"], params["b1"]), 0.2), params["w2"], params["b2"])
    out = ad.add(h, ff)
    return ad.mul(out, mcol)


class LinearAttentionEncoder(Module):
    def __init__(self, d: int, n_layers: int, rng):
        super().__init__()
        self.n_layers = n_layers
        for i in range(n_layers):
            for nm in ("wq", "wk", "wv", "w1", "w2"):
                self._register(f"layer{i}.{nm}", he_normal(rng, (d, d), d))
            for nm in ("bq", "bk", "bv", "b1", "b2"):
                self._register(f"layer{i}.{nm}", np.zeros(d))

    def forward(self, x: Tensor, mask=None) -> Tensor:
        for i in range(self.n_layers):
            params = {nm: self._params[f"layer{i}.{nm}"]
                      for nm in ("wq", "bq", "wk", "bk", "wv", "bv", "w1", "b1", "w2", "b2")}
            x = linear_attention_layer(x, mask, params)
        return x


def search_head(f_c_enc: Tensor, f_t_enc: Tensor, mask, params: dict[str, Tensor]) -> Tensor:
    """Global descriptor head: channel-wise concat, per-point affine,
    masked mean over valid points, affine to the search width."""
    maskv = np.ones(f_c_enc.shape[0]) if mask is None else np.asarray(mask, dtype=np.float64).reshape(-1)
    count = float(maskv.sum())
    if count < 1:
        raise InvalidInputError("search head needs at least one valid point")
    z = ad.concat([f_c_enc, f_t_enc], axis=1)
    z = ad.leaky_relu(affine(z, params["wp"], params["bp"]), 0.2)
    pooled = ad.mul(ad.tensor_sum(ad.mul(z, maskv[:, None]), axis=0, keepdims=True), 1.0 / count)
    out = affine(pooled, params["wo"], params["bo"])
    return ad.reshape(out, (out.shape[1],))


class SearchHead(Module):
    def __init__(self, d: int, d_out: int, rng):
        super().__init__()
        self._register("wp", he_normal(rng, (2 * d, 2 * d), 2 * d))
        self._register("bp", np.zeros(2 * d))
        self._register("wo", he_normal(rng, (2 * d, d_out), 2 * d))
        self._register("bo", np.zeros(d_out))

    def forward(self, f_c_enc: Tensor, f_t_enc: Tensor, mask=None) -> Tensor:
        return search_head(f_c_enc, f_t_enc, mask, self._params)
