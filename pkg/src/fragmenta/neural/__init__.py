"""Desk-scale differentiable feature stack with verified gradients."""

from .autodiff import Tensor, grad_check  # noqa: F401
from .layers import (  # noqa: F401
    GatedFusion,
    LinearAttentionEncoder,
    PatchEmbedder,
    RingGCN,
    SearchHead,
    dual_softmax,
    dual_softmax_factors,
    gcn_layer,
    linear_attention_layer,
    search_head,
    self_gated_fusion,
    similarity_logits,
)
from .losses import focal_matching_loss, info_nce_loss  # noqa: F401
from .model import (  # noqa: F401
    FragmentInputs,
    MatchingModel,
    ModelConfig,
    SearchingModel,
    apply_checkpoint,
    build_fragment_inputs,
    gt_similarity_matrix,
    load_checkpoint,
    parameter_checksum,
    save_checkpoint,
)
from .training import (  # noqa: F401
    Adam,
    PairSample,
    TrainResult,
    cosine_lr,
    train_matching,
    train_searching,
)
