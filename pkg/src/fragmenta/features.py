"""Glue between datasets and the neural stack: per-fragment input
encoding, backbone feature computation, and training-pair assembly."""

from __future__ import annotations

import numpy as np

from .neural.model import (
    FragmentInputs,
    MatchingModel,
    ModelConfig,
    build_fragment_inputs,
    gt_similarity_matrix,
)
from .neural.training import PairSample
from .tearing import FragmentRecord, PairGroundTruth


def fragment_inputs(frag: FragmentRecord, cfg: ModelConfig) -> FragmentInputs:
    return build_fragment_inputs(frag.pixels, frag.mask, frag.contour, cfg)


def encode_fragments(fragments: dict[int, FragmentRecord], cfg: ModelConfig
                     ) -> dict[int, FragmentInputs]:
    return {fid: fragment_inputs(fragments[fid], cfg) for fid in sorted(fragments)}


def fused_features(model: MatchingModel, inputs: FragmentInputs) -> np.ndarray:
    """Per-point fused features as a constant array (inference path)."""
    fused, _ = model.fused(inputs)
    return fused.data


def backbone_features(model: MatchingModel, inputs: FragmentInputs
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Post-GCN (contour, texture) features as constant arrays."""
    f_c, f_t = model.backbone(inputs)
    return f_c.data, f_t.data


def make_pair_samples(fragments: dict[int, FragmentRecord],
                      pairs: list[PairGroundTruth],
                      encoded: dict[int, FragmentInputs]) -> list[PairSample]:
    """Training pairs with ground-truth matrices remapped through any
    contour truncation; pairs left with fewer than 2 matches are dropped."""
    samples = []
    for pair in pairs:
        enc_m = encoded[pair.id_m]
        enc_n = encoded[pair.id_n]
        gt = gt_similarity_matrix(
            pair.matches, enc_m.original_length, enc_n.original_length,
            enc_m.kept, enc_n.kept)
        if gt.sum() < 2:
            continue
        samples.append(PairSample(enc_m, enc_n, gt, pair.id_m, pair.id_n))
    return samples
