"""Two-step optimization: focal-loss training of the matching stack,
then contrastive training of the searching head over a frozen backbone."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidBatchError, InvalidInputError, TrainingDivergence
from . import autodiff as ad
from . import layers as nn
from .autodiff import Tensor
from .losses import focal_matching_loss, info_nce_loss
from .model import (
    FragmentInputs,
    MatchingModel,
    ModelConfig,
    SearchingModel,
    parameter_checksum,
)

log = logging.getLogger(__name__)

_DIVERGENCE_FACTOR = 10.0
_DIVERGENCE_PATIENCE = 50


class Adam:
    """Adam with bias correction (beta 0.9/0.999, eps 1e-8)."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for key, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * (g * g)
            update = (self.m[key] / bc1) / (np.sqrt(self.v[key] / bc2) + self.eps)
            p.data = p.data - lr * update


def cosine_lr(step: int, total_steps: int, lr0: float, floor_ratio: float = 0.01) -> float:
    """Cosine annealing from lr0 down to lr0 * floor_ratio."""
    if total_steps <= 1:
        return lr0
    floor = lr0 * floor_ratio
    frac = min(step, total_steps - 1) / (total_steps - 1)
    return floor + 0.5 * (lr0 - floor) * (1.0 + math.cos(math.pi * frac))


def smooth_trace(raw: list[float], alpha: float = 0.9) -> list[float]:
    """Monotone-smoothed view of a loss trace: EMA then running minimum."""
    out: list[float] = []
    ema = None
    best = math.inf
    for value in raw:
        ema = value if ema is None else alpha * ema + (1.0 - alpha) * value
        best = min(best, ema)
        out.append(best)
    return out


@dataclass
class PairSample:
    """One training pair: encoded inputs for both fragments plus the dense
    ground-truth match matrix (already remapped through truncation)."""

    inputs_m: FragmentInputs
    inputs_n: FragmentInputs
    s_gt: np.ndarray
    id_m: int = -1
    id_n: int = -1


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    smoothed: list[float] = field(default_factory=list)
    steps: int = 0


def _check_divergence(loss: float, initial: float, streak: int, trace: list[float]) -> int:
    if not math.isfinite(loss) or loss > _DIVERGENCE_FACTOR * initial:
        streak += 1
    else:
        streak = 0
    if streak >= _DIVERGENCE_PATIENCE:
        raise TrainingDivergence(
            f"loss {loss:.4g} stayed above {_DIVERGENCE_FACTOR}x the initial "
            f"{initial:.4g} for {streak} steps (trace length {len(trace)})")
    return streak


def train_matching(pairs: list[PairSample], model: MatchingModel, cfg: ModelConfig,
                   rng, epochs: int | None = None) -> TrainResult:
    """Step one: optimize backbone + fusion + similarity with the focal loss.

    Batches of ``cfg.batch_match`` pairs, Adam at cfg.lr under cosine
    annealing. Raises TrainingDivergence when the loss stays above 10x the
    initial value for 50 consecutive steps.
    """
    if not pairs:
        raise InvalidInputError("training needs at least one pair")
    epochs = cfg.epochs_match if epochs is None else epochs
    batch = max(1, cfg.batch_match)
    steps_per_epoch = math.ceil(len(pairs) / batch)
    total_steps = epochs * steps_per_epoch
    opt = Adam(model.parameters(), cfg.lr)
    result = TrainResult()
    initial = None
    streak = 0
    for epoch in range(epochs):
        order = rng.permutation(len(pairs))
        for b in range(steps_per_epoch):
            chunk = order[b * batch:(b + 1) * batch]
            opt.zero_grad()
            # fragments recur across the batch's pairs: fuse each once and
            # let backward flow through the shared subgraph
            fused_cache: dict[int, object] = {}

            def fused_of(inputs):
                node = fused_cache.get(id(inputs))
                if node is None:
                    node = model.fused(inputs)[0]
                    fused_cache[id(inputs)] = node
                return node

            total = None
            for idx in chunk:
                sample = pairs[idx]
                sim = nn.dual_softmax(nn.similarity_logits(
                    fused_of(sample.inputs_m), fused_of(sample.inputs_n)))
                loss = focal_matching_loss(sim, sample.s_gt, cfg.beta1, cfg.gamma)
                total = loss if total is None else ad.add(total, loss)
            total = ad.mul(total, 1.0 / len(chunk))
            value = total.item()
            total.backward()
            opt.step(cosine_lr(result.steps, total_steps, cfg.lr, cfg.lr_floor_ratio))
            result.losses.append(value)
            result.steps += 1
            if initial is None:
                initial = max(value, 1e-12)
            try:
                streak = _check_divergence(value, initial, streak, result.losses)
            except TrainingDivergence as exc:
                exc.result = result
                raise
        log.debug("matching epoch %d/%d loss %.5g", epoch + 1, epochs, result.losses[-1])
    result.smoothed = smooth_trace(result.losses)
    return result


def _searching_batches(n_fragments: int, pair_index: list[tuple[int, int]],
                       batch_size: int, rng) -> list[list[int]]:
    """Assemble batches from whole pairs; every included fragment keeps at
    least one in-batch positive."""
    order = rng.permutation(len(pair_index))
    batches: list[list[int]] = []
    current: list[int] = []
    seen: set[int] = set()
    for idx in order:
        a, b = pair_index[idx]
        for f in (a, b):
            if f not in seen:
                seen.add(f)
                current.append(f)
        if len(current) >= min(batch_size, n_fragments):
            batches.append(current)
            current, seen = [], set()
    if len(current) >= 4:
        batches.append(current)
    if not batches:
        batches.append(current)
    return batches


def train_searching(fragment_features: dict[int, tuple[np.ndarray, np.ndarray]],
                    gt_pairs: list[tuple[int, int]],
                    matching_model: MatchingModel,
                    searching_model: SearchingModel,
                    cfg: ModelConfig, rng,
                    epochs: int | None = None) -> TrainResult:
    """Step two: train the searching head with InfoNCE over a frozen
    backbone. ``fragment_features`` maps fragment id to constant post-GCN
    (contour, texture) feature arrays; backbone parameters are asserted
    unchanged on exit.
    """
    if not gt_pairs:
        raise InvalidInputError("searching training needs at least one positive pair")
    epochs = cfg.epochs_search if epochs is None else epochs
    ids = sorted(fragment_features)
    id_pos = {fid: i for i, fid in enumerate(ids)}
    adjacency = {frozenset((a, b)) for a, b in gt_pairs}
    pair_index = [(id_pos[a], id_pos[b]) for a, b in gt_pairs]

    frozen_before = parameter_checksum(matching_model.parameters())
    opt = Adam(searching_model.parameters(), cfg.lr)
    result = TrainResult()
    initial = None
    streak = 0
    batches_per_epoch = max(1, math.ceil(2 * len(pair_index) / max(4, min(cfg.batch_search, len(ids)))))
    total_steps = epochs * batches_per_epoch
    for epoch in range(epochs):
        for members in _searching_batches(len(ids), pair_index, cfg.batch_search, rng):
            positives = [
                (a, b) for a in range(len(members)) for b in range(a + 1, len(members))
                if frozenset((ids[members[a]], ids[members[b]])) in adjacency
            ]
            if not positives:
                continue
            opt.zero_grad()
            rows = []
            for pos in members:
                f_c, f_t = fragment_features[ids[pos]]
                vec = searching_model.embed(f_c, f_t)
                rows.append(ad.reshape(vec, (1, cfg.d_search)))
            emb = ad.concat(rows, axis=0)
            try:
                loss = info_nce_loss(emb, positives, cfg.temperature)
            except InvalidBatchError:
                continue
            value = loss.item()
            loss.backward()
            opt.step(cosine_lr(result.steps, total_steps, cfg.lr, cfg.lr_floor_ratio))
            result.losses.append(value)
            result.steps += 1
            if initial is None:
                initial = max(value, 1e-12)
            try:
                streak = _check_divergence(value, initial, streak, result.losses)
            except TrainingDivergence as exc:
                exc.result = result
                raise
        log.debug("searching epoch %d/%d loss %.5g", epoch + 1, epochs,
                  result.losses[-1] if result.losses else float("nan"))
    if not result.losses:
        raise InvalidBatchError("no valid contrastive batch could be formed")
    frozen_after = parameter_checksum(matching_model.parameters())
    if frozen_before != frozen_after:
        raise AssertionError("backbone parameters changed during searching training")
    result.smoothed = smooth_trace(result.losses)
    return result
