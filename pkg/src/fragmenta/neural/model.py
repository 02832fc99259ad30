"""Model assembly: configuration, per-fragment input building, the
matching and searching networks, and the binary checkpoint format."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .. import codec
from ..codec import ContourEncoding, PadPolicy
from ..errors import ConfigError, FormatError, InvalidInputError
from . import autodiff as ad
from .autodiff import Tensor
from . import layers as nn
from .losses import focal_matching_loss


@dataclass
class ModelConfig:
    """Network and training hyperparameters.

    Defaults are desk-scale (small stacks that train on one CPU core);
    ``paper_scale()`` switches the stack depths to the full-size variant.
    """

    d_feat: int = 64
    d_search: int = 128
    gcn_layers: int = 4
    ring_k: int = 8
    attn_layers: int = 2
    beta1: float = 0.55
    gamma: float = 8.0
    temperature: float = 0.12
    lr: float = 0.001
    schedule: str = "cosine"
    batch_match: int = 20
    batch_search: int = 175
    contour_mode: str = "edge_only"
    l_max_match: int = 2900
    l_max_search: int = 1408
    patch_size: int = 7
    texture_patch_size: int = 7
    conv_channels: int = 16
    epochs_match: int = 220
    epochs_search: int = 150
    lr_floor_ratio: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.beta1 < 1.0:
            raise ConfigError("beta1 must lie in (0, 1)")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        for name in ("d_feat", "d_search", "gcn_layers", "ring_k", "attn_layers",
                     "batch_match", "batch_search", "l_max_match", "l_max_search",
                     "patch_size", "conv_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        ContourEncoding(self.contour_mode)  # validates the name

    @classmethod
    def paper_scale(cls, **overrides) -> "ModelConfig":
        overrides.setdefault("gcn_layers", 14)
        overrides.setdefault("attn_layers", 5)
        return cls(**overrides)

    @property
    def encoding(self) -> ContourEncoding:
        return ContourEncoding(self.contour_mode)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def with_overrides(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


@dataclass
class FragmentInputs:
    """Constant per-fragment model inputs.

    ``kept`` maps encoder rows back to original contour indices whenever
    the contour was longer than the configured cap. ``cache`` holds
    derived constants (first-conv columns) reused across training steps.
    """

    contour_patches: np.ndarray  # (M, C, P, P) float64
    texture_patches: np.ndarray  # (M, 3, P, P) float64
    kept: np.ndarray             # (M,) int64 indices into the raw contour
    original_length: int
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def length(self) -> int:
        return self.contour_patches.shape[0]


def build_fragment_inputs(pixels, mask, contour, cfg: ModelConfig,
                          l_max: Optional[int] = None) -> FragmentInputs:
    """Encode one fragment's rasters into network-ready patch stacks."""
    cp = codec.encode_contour_patches(contour, mask, cfg.patch_size, cfg.encoding)
    tp = codec.crop_texture_patches(pixels, mask, contour, cfg.texture_patch_size)
    cpatch = cp.patches.astype(np.float64)
    if cpatch.ndim == 3:
        cpatch = cpatch[:, None, :, :]
    tpatch = np.transpose(tp.patches.astype(np.float64), (0, 3, 1, 2))
    m = cpatch.shape[0]
    cap = cfg.l_max_match if l_max is None else l_max
    if m > cap:
        item = codec.pad_or_truncate(np.arange(m, dtype=np.float64)[:, None], cap, PadPolicy.TRUNCATE)
        kept = item.kept_indices
        cpatch = cpatch[kept]
        tpatch = tpatch[kept]
    else:
        kept = np.arange(m, dtype=np.int64)
    return FragmentInputs(cpatch, tpatch, kept, m)


def gt_similarity_matrix(matches, m_len: int, n_len: int,
                         kept_m=None, kept_n=None) -> np.ndarray:
    """Dense binary ground-truth match matrix, remapped through any
    truncation index tables."""
    if kept_m is None and kept_n is None:
        gt = np.zeros((m_len, n_len))
        for i, j in matches:
            gt[i, j] = 1.0
        return gt
    kept_m = np.arange(m_len) if kept_m is None else np.asarray(kept_m)
    kept_n = np.arange(n_len) if kept_n is None else np.asarray(kept_n)
    pos_m = {int(v): p for p, v in enumerate(kept_m)}
    pos_n = {int(v): p for p, v in enumerate(kept_n)}
    gt = np.zeros((len(kept_m), len(kept_n)))
    for i, j in matches:
        pi, pj = pos_m.get(int(i)), pos_n.get(int(j))
        if pi is not None and pj is not None:
            gt[pi, pj] = 1.0
    return gt


class MatchingModel(nn.Module):
    """Backbone (patch embedders + ring GCN stacks) plus gated fusion."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        c_in = 2 if cfg.encoding is ContourEncoding.EDGE_PLUS_INSIDE_OUTSIDE else 1
        cc = cfg.conv_channels
        self._add_child("emb_c", nn.PatchEmbedder(c_in, [cc], cfg.d_feat, cfg.patch_size, rng))
        self._add_child("emb_t", nn.PatchEmbedder(3, [cc, cc], cfg.d_feat, cfg.texture_patch_size, rng))
        self._add_child("gcn_c", nn.RingGCN(cfg.d_feat, cfg.gcn_layers, cfg.ring_k, rng))
        self._add_child("gcn_t", nn.RingGCN(cfg.d_feat, cfg.gcn_layers, cfg.ring_k, rng))
        self._add_child("fusion", nn.GatedFusion(cfg.d_feat, rng))

    def backbone(self, inputs: FragmentInputs, mask=None):
        """Post-GCN contour and texture features, each (M, d_feat)."""
        f_c = self._children["gcn_c"].forward(
            self._children["emb_c"].forward(inputs.contour_patches, inputs.cache, "c"), mask)
        f_t = self._children["gcn_t"].forward(
            self._children["emb_t"].forward(inputs.texture_patches, inputs.cache, "t"), mask)
        return f_c, f_t

    def fused(self, inputs: FragmentInputs, mask=None):
        f_c, f_t = self.backbone(inputs, mask)
        return self._children["fusion"].forward(f_t, f_c)

    def pair_similarity(self, inputs_m: FragmentInputs, inputs_n: FragmentInputs) -> Tensor:
        fm, _ = self.fused(inputs_m)
        fn, _ = self.fused(inputs_n)
        return nn.dual_softmax(nn.similarity_logits(fm, fn))

    def pair_loss(self, inputs_m: FragmentInputs, inputs_n: FragmentInputs, s_gt) -> Tensor:
        sim = self.pair_similarity(inputs_m, inputs_n)
        return focal_matching_loss(sim, s_gt, self.cfg.beta1, self.cfg.gamma)


class SearchingModel(nn.Module):
    """Retrieval head: per-branch linear-attention encoders, concat fusion,
    per-point affine, masked mean, and the final projection."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        self._add_child("enc_c", nn.LinearAttentionEncoder(cfg.d_feat, cfg.attn_layers, rng))
        self._add_child("enc_t", nn.LinearAttentionEncoder(cfg.d_feat, cfg.attn_layers, rng))
        self._add_child("head", nn.SearchHead(cfg.d_feat, cfg.d_search, rng))

    def embed(self, f_c, f_t, mask=None) -> Tensor:
        """Global descriptor from (possibly constant) backbone features."""
        f_c = f_c if isinstance(f_c, Tensor) else Tensor(np.asarray(f_c, dtype=np.float64))
        f_t = f_t if isinstance(f_t, Tensor) else Tensor(np.asarray(f_t, dtype=np.float64))
        if f_c.shape[0] == 0:
            raise InvalidInputError("cannot embed an empty fragment")
        if f_c.shape[0] > self.cfg.l_max_search:
            item = codec.pad_or_truncate(
                np.arange(f_c.shape[0], dtype=np.float64)[:, None],
                self.cfg.l_max_search, PadPolicy.TRUNCATE)
            kept = item.kept_indices
            f_c = Tensor(f_c.data[kept])
            f_t = Tensor(f_t.data[kept])
            mask = None if mask is None else np.asarray(mask)[kept]
        e_c = self._children["enc_c"].forward(f_c, mask)
        e_t = self._children["enc_t"].forward(f_t, mask)
        return self._children["head"].forward(e_c, e_t, mask)


# checkpoint container -----------------------------------------------------

_CKPT_MAGIC = b"PRNG"
_CKPT_VERSION = 1


def save_checkpoint(path, params: dict) -> None:
    """Flat binary container: named float64 parameter table."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", _CKPT_MAGIC, _CKPT_VERSION, len(params)))
        for name, value in params.items():
            arr = np.ascontiguousarray(
                value.data if isinstance(value, Tensor) else value, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != _CKPT_MAGIC:
            raise FormatError(f"{path}: not a parameter checkpoint")
        _, version, count = struct.unpack("<4sII", head)
        if version != _CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            size = int(np.prod(shape)) if shape else 1
            out[name] = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape).copy()
    return out


def apply_checkpoint(model: nn.Module, loaded: dict[str, np.ndarray]) -> None:
    """Load values into a model's parameters; any shape mismatch or
    missing/unknown name is rejected."""
    params = model.parameters()
    if set(params) != set(loaded):
        missing = set(params) - set(loaded)
        extra = set(loaded) - set(params)
        raise FormatError(f"parameter name mismatch (missing={sorted(missing)}, extra={sorted(extra)})")
    for name, tensor in params.items():
        if tensor.data.shape != loaded[name].shape:
            raise FormatError(
                f"shape mismatch for {name}: {loaded[name].shape} vs {tensor.data.shape}")
        tensor.data = loaded[name].astype(np.float64)


def parameter_checksum(params: dict) -> str:
    """Stable digest of parameter names and exact float64 payloads."""
    digest = hashlib.sha256()
    for name in sorted(params):
        value = params[name]
        arr = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value, dtype="<f8")
        digest.update(name.encode("utf-8"))
        digest.update(str(arr.shape).encode())
        digest.update(arr.tobytes())
    return digest.hexdigest()
