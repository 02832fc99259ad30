"""Dataset directory format: per-fragment RGBA rasters, a JSON manifest
with fragments/pairs/splits, and the generator config snapshot.

Writes are atomic (temp file + rename) and byte-deterministic for a fixed
(images, config, seed) triple.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import DataError, FormatError
from .geometry import OrderedContour, Point2, RigidTransform2D
from .tearing import FragmentRecord, GeneratorConfig, PairGroundTruth

MANIFEST_VERSION = "1.0"
SPLIT_NAMES = ("train", "val", "test")
SPLIT_WEIGHTS = (5, 1, 4)


def _atomic_write(path, data: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode("utf-8")


def assign_splits(image_ids, seed: int) -> dict[int, str]:
    """Partition source images into train/val/test at 5:1:4 by largest
    remainder, after a seeded shuffle. No image spans splits."""
    ids = sorted(int(i) for i in image_ids)
    rng = np.random.default_rng(np.uint64(seed) ^ np.uint64(0x5EED5EED))
    order = [ids[i] for i in rng.permutation(len(ids))]
    n = len(ids)
    total = sum(SPLIT_WEIGHTS)
    quotas = [n * w / total for w in SPLIT_WEIGHTS]
    counts = [int(q) for q in quotas]
    remainders = sorted(
        range(3), key=lambda i: (quotas[i] - counts[i], SPLIT_WEIGHTS[i]), reverse=True)
    for i in remainders[: n - sum(counts)]:
        counts[i] += 1
    out: dict[int, str] = {}
    cursor = 0
    for name, count in zip(SPLIT_NAMES, counts):
        for img in order[cursor:cursor + count]:
            out[img] = name
        cursor += count
    return out


@dataclass
class Dataset:
    root: str
    fragments: dict[int, FragmentRecord]
    pairs: list[PairGroundTruth]
    splits: dict[int, str]              # fragment id -> split name
    image_splits: dict[int, str]        # source image id -> split name
    generator_config: GeneratorConfig
    seed: int = 0
    manifest: dict = field(default_factory=dict)

    def fragment_ids(self, split: str | None = None) -> list[int]:
        ids = sorted(self.fragments)
        if split is None:
            return ids
        return [i for i in ids if self.splits[i] == split]

    def gt_pairs(self, split: str | None = None) -> list[PairGroundTruth]:
        if split is None:
            return list(self.pairs)
        return [p for p in self.pairs if self.splits[p.id_m] == split]


def _fragment_entry(frag: FragmentRecord, split: str) -> dict:
    return {
        "id": int(frag.id),
        "source_image_id": int(frag.source_image_id),
        "split": split,
        "offset": [float(frag.offset.x), float(frag.offset.y)],
        "size": [int(frag.width), int(frag.height)],
        "area": int(frag.area),
        "contour": np.asarray(frag.contour.points, dtype=np.float64).ravel().tolist(),
        "file": f"fragments/{int(frag.id)}.png",
    }


def _pair_entry(pair: PairGroundTruth, split: str) -> dict:
    return {
        "id_m": int(pair.id_m),
        "id_n": int(pair.id_n),
        "split": split,
        "matches": np.asarray(pair.matches, dtype=np.int64).ravel().tolist(),
        "transform": {
            "theta": float(pair.gt_transform.theta),
            "tx": float(pair.gt_transform.tx),
            "ty": float(pair.gt_transform.ty),
        },
        "overlap": float(pair.overlap_proportion),
        "difficulty": pair.difficulty,
    }


def write_dataset(root, per_image: dict[int, tuple[list[FragmentRecord], list[PairGroundTruth]]],
                  cfg: GeneratorConfig, seed: int) -> dict:
    """Write a corpus directory from per-image generation results.

    Fragment ids are renumbered globally (ordered by image, then by local
    id) so every id is unique across the corpus.
    """
    os.makedirs(os.path.join(root, "fragments"), exist_ok=True)
    image_splits = assign_splits(per_image.keys(), seed)
    frag_entries, pair_entries = [], []
    next_id = 0
    for image_id in sorted(per_image):
        frags, pairs = per_image[image_id]
        split = image_splits[image_id]
        remap: dict[int, int] = {}
        for frag in frags:
            remap[frag.id] = next_id
            renumbered = FragmentRecord(
                id=next_id, pixels=frag.pixels, mask=frag.mask, offset=frag.offset,
                contour=frag.contour, source_image_id=image_id)
            frag_entries.append(_fragment_entry(renumbered, split))
            rgba = np.zeros((frag.height, frag.width, 4), dtype=np.uint8)
            rgba[:, :, :3] = frag.pixels
            rgba[:, :, 3] = frag.mask.astype(np.uint8) * 255
            path = os.path.join(root, "fragments", f"{next_id}.png")
            tmp = f"{path}.tmp"
            Image.fromarray(rgba, "RGBA").save(tmp, format="PNG")
            os.replace(tmp, path)
            next_id += 1
        for pair in pairs:
            moved = PairGroundTruth(
                remap[pair.id_m], remap[pair.id_n], pair.matches,
                pair.gt_transform, pair.overlap_proportion, pair.difficulty)
            pair_entries.append(_pair_entry(moved, split))

    manifest = {
        "format_version": MANIFEST_VERSION,
        "corpus_seed": int(seed),
        "image_splits": {str(k): v for k, v in image_splits.items()},
        "fragments": frag_entries,
        "pairs": pair_entries,
    }
    _validate_manifest(manifest)
    _atomic_write(os.path.join(root, "manifest.json"), _json_bytes(manifest))
    config_doc = {"format_version": MANIFEST_VERSION, "generator": cfg.to_dict(), "seed": int(seed)}
    _atomic_write(os.path.join(root, "config.json"), _json_bytes(config_doc))
    return manifest


def _validate_manifest(manifest: dict) -> None:
    frag_ids = {f["id"] for f in manifest["fragments"]}
    if len(frag_ids) != len(manifest["fragments"]):
        raise DataError("duplicate fragment ids in manifest")
    for pair in manifest["pairs"]:
        if pair["id_m"] not in frag_ids or pair["id_n"] not in frag_ids:
            raise DataError(f"pair ({pair['id_m']}, {pair['id_n']}) references missing fragments")
        if len(pair["matches"]) < 4 or len(pair["matches"]) % 2:
            raise DataError("pair matches must hold at least two index pairs")


def _check_version(doc: dict, path) -> None:
    version = str(doc.get("format_version", ""))
    if version.split(".")[0] != MANIFEST_VERSION.split(".")[0]:
        raise FormatError(f"{path}: unsupported format version {version!r}")


def load_dataset(root) -> Dataset:
    manifest_path = os.path.join(root, "manifest.json")
    config_path = os.path.join(root, "config.json")
    if not os.path.exists(manifest_path):
        raise DataError(f"{root}: manifest.json not found")
    with open(manifest_path, "rb") as fh:
        manifest = json.load(fh)
    _check_version(manifest, manifest_path)
    with open(config_path, "rb") as fh:
        config_doc = json.load(fh)
    _check_version(config_doc, config_path)
    cfg = GeneratorConfig.from_dict(config_doc["generator"])

    fragments: dict[int, FragmentRecord] = {}
    splits: dict[int, str] = {}
    for entry in manifest["fragments"]:
        path = os.path.join(root, entry["file"])
        rgba = np.asarray(Image.open(path).convert("RGBA"))
        contour = OrderedContour(
            np.asarray(entry["contour"], dtype=np.float64).reshape(-1, 2),
            enforce_orientation=False)
        frag = FragmentRecord(
            id=int(entry["id"]),
            pixels=np.ascontiguousarray(rgba[:, :, :3]),
            mask=rgba[:, :, 3] > 127,
            offset=Point2(*entry["offset"]),
            contour=contour,
            source_image_id=int(entry["source_image_id"]),
        )
        fragments[frag.id] = frag
        splits[frag.id] = entry["split"]

    pairs = []
    for entry in manifest["pairs"]:
        matches = np.asarray(entry["matches"], dtype=np.int64).reshape(-1, 2)
        tf = RigidTransform2D(**entry["transform"])
        pairs.append(PairGroundTruth(
            int(entry["id_m"]), int(entry["id_n"]), matches, tf,
            float(entry["overlap"]), entry["difficulty"]))

    image_splits = {int(k): v for k, v in manifest.get("image_splits", {}).items()}
    return Dataset(
        root=str(root), fragments=fragments, pairs=pairs, splits=splits,
        image_splits=image_splits, generator_config=cfg,
        seed=int(manifest.get("corpus_seed", 0)), manifest=manifest)


def generate_corpus(images: dict[int, np.ndarray], cfg: GeneratorConfig, root) -> dict:
    """Tear every image (seed xor image id per stream) and write the corpus."""
    from .tearing import generate

    per_image = {}
    for image_id in sorted(images):
        rng = np.random.default_rng(np.uint64(cfg.seed) ^ np.uint64(image_id))
        per_image[image_id] = generate(images[image_id], cfg, rng, image_id)
    return write_dataset(root, per_image, cfg, cfg.seed)
