"""Global retrieval: embed every fragment to a 128-d descriptor, build
the full cosine-similarity matrix, and rank candidate partners."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidInputError
from .features import backbone_features, fragment_inputs
from .neural.model import MatchingModel, ModelConfig, SearchingModel

log = logging.getLogger(__name__)

_BLOCK = 256


@dataclass
class EmbeddingIndex:
    matrix: np.ndarray       # (N, dim) float64
    ids: list[int]
    normalized: bool = False

    def row_of(self, fragment_id: int) -> int:
        return self.ids.index(fragment_id)


def embed_all(fragments: dict, matching_model: MatchingModel,
              searching_model: SearchingModel, cfg: ModelConfig) -> EmbeddingIndex:
    """Run codec -> backbone -> searching head for every fragment and
    L2-normalize the rows. Fragments with an empty contour are skipped
    with a warning."""
    rows, ids = [], []
    for fid in sorted(fragments):
        frag = fragments[fid]
        if len(frag.contour) == 0:
            log.warning("fragment %d skipped: empty contour", fid)
            continue
        inputs = fragment_inputs(frag, cfg)
        f_c, f_t = backbone_features(matching_model, inputs)
        vec = searching_model.embed(f_c, f_t).data
        rows.append(vec)
        ids.append(fid)
    if not rows:
        raise InvalidInputError("no fragments could be embedded")
    matrix = np.stack(rows)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise InvalidInputError("zero embedding cannot be normalized")
    return EmbeddingIndex(matrix / norms, ids, normalized=True)


def cosine_similarity_matrix(index: EmbeddingIndex) -> np.ndarray:
    """Full N x N cosine similarity, computed in row blocks; exactly
    symmetric with a unit diagonal."""
    if not index.normalized:
        raise InvalidInputError("index must be normalized")
    v = index.matrix
    n = len(v)
    out = np.empty((n, n))
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        out[start:stop] = v[start:stop] @ v.T
    out = np.minimum(out, out.T)  # exact symmetry regardless of blocking
    np.fill_diagonal(out, 1.0)
    return out


def _ranked_neighbors(sims_row: np.ndarray, ids: np.ndarray, self_pos: int) -> np.ndarray:
    mask = np.ones(len(ids), dtype=bool)
    mask[self_pos] = False
    cand_ids = ids[mask]
    cand_sims = sims_row[mask]
    order = np.lexsort((cand_ids, -cand_sims))
    return cand_ids[order]


def top_k(index: EmbeddingIndex, query_id: int, k: int,
          sims: np.ndarray | None = None) -> list[int]:
    """The k most similar fragments to the query, excluding the query
    itself; ties break toward the smaller fragment id."""
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    sims = cosine_similarity_matrix(index) if sims is None else sims
    pos = index.row_of(query_id)
    ranked = _ranked_neighbors(sims[pos], np.asarray(index.ids), pos)
    return ranked[:k].tolist()


def rank_table(index: EmbeddingIndex) -> dict[int, list[int]]:
    """Full neighbor ranking for every fragment (self excluded)."""
    sims = cosine_similarity_matrix(index)
    ids = np.asarray(index.ids)
    return {
        int(ids[pos]): _ranked_neighbors(sims[pos], ids, pos).tolist()
        for pos in range(len(ids))
    }


def retrieve_candidate_pairs(index: EmbeddingIndex, k: int) -> list[tuple[int, int]]:
    """Union over queries of their top-k neighbors, deduplicated as
    unordered pairs and sorted."""
    sims = cosine_similarity_matrix(index)
    pairs = set()
    for pos, fid in enumerate(index.ids):
        for other in top_k(index, fid, k, sims):
            pairs.add((min(fid, other), max(fid, other)))
    return sorted(pairs)


_FSIX_MAGIC = b"FSIX"
_FSIX_VERSION = 1


def save_index(path, index: EmbeddingIndex) -> None:
    """Binary index: header, id table, then row-major float32 payload."""
    mat = np.ascontiguousarray(index.matrix, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", _FSIX_MAGIC, _FSIX_VERSION, mat.shape[0], mat.shape[1]))
        fh.write(np.asarray(index.ids, dtype="<i8").tobytes())
        fh.write(mat.tobytes())


def load_index(path) -> EmbeddingIndex:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16 or head[:4] != _FSIX_MAGIC:
            raise FormatError(f"{path}: not an embedding index")
        _, version, n, dim = struct.unpack("<4sIII", head)
        if version != _FSIX_VERSION:
            raise FormatError(f"{path}: unsupported index version {version}")
        ids = np.frombuffer(fh.read(8 * n), dtype="<i8").tolist()
        mat = np.frombuffer(fh.read(4 * n * dim), dtype="<f4").reshape(n, dim)
    matrix = mat.astype(np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return EmbeddingIndex(matrix / norms, [int(i) for i in ids], normalized=True)
