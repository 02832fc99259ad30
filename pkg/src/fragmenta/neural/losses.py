"""Training objectives: the focal correspondence loss and the
multi-positive contrastive retrieval loss."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidBatchError, InvalidInputError
from . import autodiff as ad
from .autodiff import Tensor

_PROB_CLAMP = 1e-12


def focal_matching_loss(s: Tensor, s_gt, beta1: float = 0.55, gamma: float = 8.0) -> Tensor:
    """Focal loss over a dense match-probability matrix.

    L = -sum( b1 * (1-S)^g * log(S) * GT  +  b2 * S^g * log(1-S) * (1-GT) )
    with b2 = 1 - b1, natural logs, and S clamped away from {0, 1}.
    Fused primitive: forward and the closed-form gradient are each one
    vectorized numpy expression (this sits on the M x M hot path).
    """
    s = s if isinstance(s, Tensor) else Tensor(s)
    gt = np.asarray(s_gt, dtype=np.float64)
    if gt.shape != s.shape:
        raise InvalidInputError(f"shape mismatch: {s.shape} vs {gt.shape}")
    beta2 = 1.0 - beta1
    inside = (s.data > _PROB_CLAMP) & (s.data < 1.0 - _PROB_CLAMP)
    sc = np.clip(s.data, _PROB_CLAMP, 1.0 - _PROB_CLAMP)
    one_minus = 1.0 - sc
    log_s = np.log(sc)
    log_1ms = np.log(one_minus)
    pow_pos = one_minus ** gamma
    pow_neg = sc ** gamma
    value = -np.sum(beta1 * pow_pos * log_s * gt + beta2 * pow_neg * log_1ms * (1.0 - gt))

    def vjp(g):
        d_pos = -gamma * (one_minus ** (gamma - 1.0)) * log_s + pow_pos / sc
        d_neg = gamma * (sc ** (gamma - 1.0)) * log_1ms - pow_neg / one_minus
        grad = -(beta1 * gt * d_pos + beta2 * (1.0 - gt) * d_neg)
        return (np.asarray(g) * grad * inside,)

    return ad._make(np.asarray(value), (s,), vjp)


def info_nce_loss(embeddings: Tensor, positive_pairs, temperature: float = 0.12) -> Tensor:
    """Symmetric multi-positive InfoNCE over cosine similarities.

    Every row acts as an anchor (so each unordered pair contributes in
    both directions); per anchor the loss is
    -log( sum_pos exp(sim/t) / sum_{k != anchor} exp(sim/t) ), averaged
    over anchors. Anchors must have at least one in-batch positive and one
    negative.
    """
    n = embeddings.shape[0]
    if n < 2:
        raise InvalidBatchError("contrastive batch needs at least 2 embeddings")
    pos = np.zeros((n, n))
    for i, j in positive_pairs:
        if i == j:
            raise InvalidBatchError("a fragment cannot be its own positive")
        pos[i, j] = pos[j, i] = 1.0
    non_self = 1.0 - np.eye(n)
    if np.any(pos.sum(axis=1) < 1):
        raise InvalidBatchError("every anchor needs at least one positive in the batch")
    if np.any((non_self - pos).sum(axis=1) < 1):
        raise InvalidBatchError("every anchor needs at least one negative in the batch")

    sq_norms = ad.tensor_sum(ad.mul(embeddings, embeddings), axis=1, keepdims=True)
    if np.any(sq_norms.data <= 0):
        raise InvalidInputError("zero embedding cannot be normalized")
    normed = ad.div(embeddings, ad.power(sq_norms, 0.5))
    sim = ad.mul(ad.matmul(normed, ad.transpose(normed)), 1.0 / temperature)

    shift = np.where(non_self > 0, sim.data, -np.inf).max(axis=1, keepdims=True)
    e = ad.mul(ad.exp(ad.add(sim, -shift)), non_self)
    denom = ad.tensor_sum(e, axis=1)
    numer = ad.tensor_sum(ad.mul(e, pos), axis=1)
    per_anchor = ad.add(ad.log(denom), ad.mul(ad.log(numer), -1.0))
    return ad.mul(ad.tensor_sum(per_anchor), 1.0 / n)
