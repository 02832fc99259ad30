"""End-to-end command line: generate, train, search, match, evaluate.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from itertools import combinations

import numpy as np
from PIL import Image

from .config import RunConfig, load_run_config
from .dataset_io import Dataset, generate_corpus, load_dataset
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    FragmentaError,
    NoModelError,
    TrainingDivergence,
)
from .features import backbone_features, encode_fragments, fused_features, make_pair_samples
from .geometry import RigidTransform2D
from .matching import match_pair
from .metrics import MatchEval, stratified_report
from .neural.model import (
    MatchingModel,
    ModelConfig,
    SearchingModel,
    apply_checkpoint,
    load_checkpoint,
    parameter_checksum,
    save_checkpoint,
)
from .neural.training import TrainResult, train_matching, train_searching
from .render import write_pair_overlay
from .searching import embed_all, rank_table, retrieve_candidate_pairs, save_index
from .util import stream_rng, write_json_atomic

log = logging.getLogger("fragmenta")

REPORT_VERSION = "1.0"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4
_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")


def _load_images(images_dir) -> dict[int, np.ndarray]:
    if not os.path.isdir(images_dir):
        raise DataError(f"image directory not found: {images_dir}")
    names = sorted(n for n in os.listdir(images_dir)
                   if n.lower().endswith(_IMAGE_EXTS))
    images: dict[int, np.ndarray] = {}
    for name in names:
        path = os.path.join(images_dir, name)
        try:
            images[len(images)] = np.asarray(Image.open(path).convert("RGB"))
        except Exception as exc:  # unreadable file: skip with warning
            log.warning("skipping unreadable image %s (%s)", path, exc)
    if not images:
        raise DataError(f"no usable images in {images_dir}")
    return images


def cmd_generate(args, run: RunConfig) -> int:
    images = _load_images(args.images)
    manifest = generate_corpus(images, run.generator, args.out)
    n_pairs = len(manifest["pairs"])
    log.info("wrote %d fragments / %d pairs from %d images to %s",
             len(manifest["fragments"]), n_pairs, len(images), args.out)
    return EXIT_OK


def _write_trace_csv(path, result: TrainResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "smoothed"])
        for step, (raw, smooth) in enumerate(zip(result.losses, result.smoothed or result.losses)):
            writer.writerow([step, repr(raw), repr(smooth)])


def _train_subset(dataset: Dataset):
    ids = dataset.fragment_ids("train")
    fragments = {i: dataset.fragments[i] for i in ids}
    pairs = dataset.gt_pairs("train")
    if not pairs:
        raise DataError("train split holds no ground-truth pairs")
    return fragments, pairs


def cmd_train(args, run: RunConfig) -> int:
    dataset = load_dataset(args.dataset)
    fragments, pairs = _train_subset(dataset)
    os.makedirs(args.out, exist_ok=True)
    encoded = encode_fragments(fragments, run.model)
    samples = make_pair_samples(fragments, pairs, encoded)
    if not samples:
        raise DataError("no usable training pairs after encoding")

    matching_model = MatchingModel(run.model, stream_rng(run.seed, "init-matching"))
    searching_model = SearchingModel(run.model, stream_rng(run.seed, "init-searching"))

    try:
        res_m = train_matching(samples, matching_model, run.model,
                               stream_rng(run.seed, "train-matching"),
                               epochs=args.epochs_match)
    except TrainingDivergence as exc:
        partial = getattr(exc, "result", None)
        if partial is not None:
            partial.smoothed = partial.smoothed or partial.losses
            _write_trace_csv(os.path.join(args.out, "loss_matching.csv"), partial)
        raise
    save_checkpoint(os.path.join(args.out, "matching.ckpt"), matching_model.parameters())
    _write_trace_csv(os.path.join(args.out, "loss_matching.csv"), res_m)

    feats = {fid: backbone_features(matching_model, encoded[fid]) for fid in sorted(encoded)}
    gt_pairs = [(p.id_m, p.id_n) for p in pairs]
    try:
        res_s = train_searching(feats, gt_pairs, matching_model, searching_model,
                                run.model, stream_rng(run.seed, "train-searching"),
                                epochs=args.epochs_search)
    except TrainingDivergence as exc:
        partial = getattr(exc, "result", None)
        if partial is not None:
            partial.smoothed = partial.smoothed or partial.losses
            _write_trace_csv(os.path.join(args.out, "loss_searching.csv"), partial)
        raise
    save_checkpoint(os.path.join(args.out, "searching.ckpt"), searching_model.parameters())
    _write_trace_csv(os.path.join(args.out, "loss_searching.csv"), res_s)

    write_json_atomic(os.path.join(args.out, "train_meta.json"), {
        "format_version": REPORT_VERSION,
        "model": run.model.to_dict(),
        "seed": run.seed,
        "backbone_checksum": parameter_checksum(matching_model.parameters()),
        "matching_steps": res_m.steps,
        "searching_steps": res_s.steps,
    })
    log.info("training done: matching %d steps (loss %.4g -> %.4g), searching %d steps",
             res_m.steps, res_m.losses[0], res_m.losses[-1], res_s.steps)
    return EXIT_OK


def _load_models(checkpoint_dir, run: RunConfig
                 ) -> tuple[MatchingModel, SearchingModel, ModelConfig]:
    meta_path = os.path.join(checkpoint_dir, "train_meta.json")
    if not os.path.exists(meta_path):
        raise DataError(f"missing checkpoint metadata: {meta_path}")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if str(meta.get("format_version", "")).split(".")[0] != REPORT_VERSION.split(".")[0]:
        raise FormatError(f"{meta_path}: unsupported format version")
    cfg = ModelConfig.from_dict(meta["model"])
    matching_model = MatchingModel(cfg, stream_rng(meta.get("seed", 0), "init-matching"))
    searching_model = SearchingModel(cfg, stream_rng(meta.get("seed", 0), "init-searching"))
    apply_checkpoint(matching_model, load_checkpoint(os.path.join(checkpoint_dir, "matching.ckpt")))
    apply_checkpoint(searching_model, load_checkpoint(os.path.join(checkpoint_dir, "searching.ckpt")))
    return matching_model, searching_model, cfg


def _split_fragments(dataset: Dataset, split: str):
    ids = dataset.fragment_ids(None if split == "all" else split)
    if not ids:
        raise DataError(f"split {split!r} holds no fragments")
    return {i: dataset.fragments[i] for i in ids}


def cmd_search(args, run: RunConfig) -> int:
    dataset = load_dataset(args.dataset)
    matching_model, searching_model, cfg = _load_models(args.checkpoints, run)
    fragments = _split_fragments(dataset, args.split)
    os.makedirs(args.out, exist_ok=True)
    index = embed_all(fragments, matching_model, searching_model, cfg)
    save_index(os.path.join(args.out, "index.fsix"), index)
    table = rank_table(index)
    write_json_atomic(os.path.join(args.out, "rank_table.json"), {
        "format_version": REPORT_VERSION,
        "split": args.split,
        "ids": index.ids,
        "neighbors": {str(k): v for k, v in table.items()},
    })
    candidates = retrieve_candidate_pairs(index, run.top_k)
    write_json_atomic(os.path.join(args.out, "candidates.json"), {
        "format_version": REPORT_VERSION,
        "split": args.split,
        "k": run.top_k,
        "pairs": [list(p) for p in candidates],
    })
    log.info("indexed %d fragments; %d candidate pairs at top-%d",
             len(index.ids), len(candidates), run.top_k)
    return EXIT_OK


def _resolve_pairs(args, dataset: Dataset, fragments) -> list[tuple[int, int]]:
    if args.pairs == "gt":
        return [(p.id_m, p.id_n) for p in dataset.gt_pairs(None if args.split == "all" else args.split)]
    if args.pairs == "all":
        return list(combinations(sorted(fragments), 2))
    if not args.candidates:
        raise ConfigError("--pairs candidates requires --candidates FILE")
    with open(args.candidates, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if str(doc.get("format_version", "")).split(".")[0] != REPORT_VERSION.split(".")[0]:
        raise FormatError(f"{args.candidates}: unsupported format version")
    pairs = [tuple(int(v) for v in p) for p in doc["pairs"]]
    unknown = {i for p in pairs for i in p} - set(fragments)
    if unknown:
        raise DataError(f"candidates reference fragments outside the split: {sorted(unknown)[:10]}")
    return pairs


def cmd_match(args, run: RunConfig) -> int:
    dataset = load_dataset(args.dataset)
    matching_model, _, cfg = _load_models(args.checkpoints, run)
    fragments = _split_fragments(dataset, args.split)
    pair_list = _resolve_pairs(args, dataset, fragments)

    from .features import fragment_inputs

    cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def features_of(fid: int):
        """Fused features plus the contour rows they correspond to."""
        if fid not in cache:
            frag = fragments[fid]
            enc = fragment_inputs(frag, cfg)
            fused = fused_features(matching_model, enc)
            cache[fid] = (fused, frag.contour.points[enc.kept], enc.kept)
        return cache[fid]

    entries = []
    for id_m, id_n in pair_list:
        rng = stream_rng(run.seed, f"ransac-{id_m}-{id_n}")
        entry = {"id_m": id_m, "id_n": id_n, "ok": False, "transform": None,
                 "inliers": 0, "score": 0.0, "correspondences": []}
        try:
            fused_m, pts_m, kept_m = features_of(id_m)
            fused_n, pts_n, kept_n = features_of(id_n)
            result = match_pair(fused_m, fused_n, pts_m, pts_n,
                                run.inference, rng, id_m, id_n)
            corr = result.correspondences
            if run.inference.corr_cap and not args.no_corr_cap:
                corr = corr[: run.inference.corr_cap]
            entry.update({
                "ok": True,
                "transform": {"theta": result.transform.theta,
                              "tx": result.transform.tx, "ty": result.transform.ty},
                "inliers": int(result.inlier_count),
                "score": float(result.match_score),
                "correspondences": [[int(kept_m[int(i)]), int(kept_n[int(j)]), float(s)]
                                    for i, j, s in corr],
            })
        except NoModelError as exc:
            entry["error"] = str(exc)
        entries.append(entry)

    write_json_atomic(args.out, {
        "format_version": REPORT_VERSION,
        "split": args.split,
        "seed": run.seed,
        "inference": run.inference.to_dict(),
        "pairs": entries,
    })
    ok = sum(1 for e in entries if e["ok"])
    log.info("matched %d/%d pairs -> %s", ok, len(entries), args.out)
    return EXIT_OK


def _report_csv(path, report_dict: dict) -> None:
    strata = report_dict["strata"]
    columns = sorted({key for block in strata.values() for key in block})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stratum"] + columns)
        for name in ("High", "Medium", "Low", "All"):
            if name in strata:
                writer.writerow([name] + [strata[name].get(c) for c in columns])


def cmd_evaluate(args, run: RunConfig) -> int:
    dataset = load_dataset(args.dataset)
    with open(args.match_report, "r", encoding="utf-8") as fh:
        report_doc = json.load(fh)
    if str(report_doc.get("format_version", "")).split(".")[0] != REPORT_VERSION.split(".")[0]:
        raise FormatError(f"{args.match_report}: unsupported format version")
    split = report_doc.get("split", "test")
    gt_pairs = dataset.gt_pairs(None if split == "all" else split)
    known = set(dataset.fragments)
    bad = [e for e in report_doc["pairs"]
           if e["id_m"] not in known or e["id_n"] not in known]
    if bad:
        sample = [(e["id_m"], e["id_n"]) for e in bad[:5]]
        raise DataError(f"match report references unknown fragments, e.g. {sample}")

    by_key = {(e["id_m"], e["id_n"]): e for e in report_doc["pairs"]}
    table = None
    if args.rank_table:
        with open(args.rank_table, "r", encoding="utf-8") as fh:
            table_doc = json.load(fh)
        if str(table_doc.get("format_version", "")).split(".")[0] != REPORT_VERSION.split(".")[0]:
            raise FormatError(f"{args.rank_table}: unsupported format version")
        table = {int(k): [int(v) for v in vs] for k, vs in table_doc["neighbors"].items()}

    pairs_meta, evals, skipped = [], [], 0
    for pair in gt_pairs:
        entry = by_key.get((pair.id_m, pair.id_n)) or by_key.get((pair.id_n, pair.id_m))
        if entry is None:
            skipped += 1
            continue
        est = None
        if entry["ok"]:
            flipped = (entry["id_m"], entry["id_n"]) != (pair.id_m, pair.id_n)
            est = RigidTransform2D(**entry["transform"])
            if flipped:
                est = est.inverse()
        frag_m = dataset.fragments[pair.id_m]
        frag_n = dataset.fragments[pair.id_n]
        pairs_meta.append(((pair.id_m, pair.id_n), pair.difficulty))
        evals.append(MatchEval(
            est=est,
            gt=pair.gt_transform,
            matched_points_n=frag_n.contour.points[pair.matches[:, 1]],
            contour_n=frag_n.contour.points,
            area_m=frag_m.area,
            area_n=frag_n.area,
            difficulty=pair.difficulty,
        ))
    if table is not None:
        usable = set(table)
        pairs_meta_r = [(p, d) for p, d in pairs_meta if p[0] in usable and p[1] in usable]
    else:
        pairs_meta_r = pairs_meta

    report = stratified_report(pairs_meta, evals, rank_table=table, tau_rr=run.tau_rr,
                               fragment_count=len(dataset.fragment_ids(
                                   None if split == "all" else split)))
    if table is not None and len(pairs_meta_r) != len(pairs_meta):
        log.warning("%d GT pairs lack rank-table entries", len(pairs_meta) - len(pairs_meta_r))

    os.makedirs(args.out, exist_ok=True)
    doc = {"format_version": REPORT_VERSION, "split": split,
           "skipped_gt_pairs": skipped, **report.to_dict()}
    write_json_atomic(os.path.join(args.out, "report.json"), doc)
    _report_csv(os.path.join(args.out, "report.csv"), doc)

    if run.render_samples > 0:
        overlay_dir = os.path.join(args.out, "overlays")
        os.makedirs(overlay_dir, exist_ok=True)
        rendered = 0
        for (ids, _), ev in zip(pairs_meta, evals):
            if rendered >= run.render_samples:
                break
            entry = by_key.get(ids) or by_key.get((ids[1], ids[0]))
            corr = np.asarray(entry.get("correspondences", [])) if entry else None
            frag_m = dataset.fragments[ids[0]]
            frag_n = dataset.fragments[ids[1]]
            write_pair_overlay(
                os.path.join(overlay_dir, f"pair_{ids[0]}_{ids[1]}.svg"),
                frag_m.contour, frag_n.contour, ev.est, ev.gt, corr)
            rendered += 1

    for name in ("High", "Medium", "Low", "All"):
        block = doc["strata"][name]
        log.info("%-6s pairs=%-4s rr=%s hd=%s re=%s nte=%s recall@5=%s",
                 name, block["pairs"], block["rr"], block["hd"], block["re"],
                 block["nte"], block.get("recall@5"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fragmenta",
        description="Tear images into fragment datasets, then search and match the pieces.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="root seed override")
    common.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="tear images into a dataset")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common], help="two-step training")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs-match", type=int, default=None)
    p.add_argument("--epochs-search", type=int, default=None)

    p = sub.add_parser("search", parents=[common], help="embed fragments and rank pairs")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--top-k", type=int, default=None)

    p = sub.add_parser("match", parents=[common], help="point correspondences + transforms")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", default="gt", choices=["gt", "candidates", "all"])
    p.add_argument("--candidates", help="candidates.json from the search step")
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--no-corr-cap", action="store_true",
                   help="write full correspondence lists")

    p = sub.add_parser("evaluate", parents=[common], help="metric suite + overlays")
    p.add_argument("--dataset", required=True)
    p.add_argument("--match-report", required=True)
    p.add_argument("--rank-table", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--tau-rr", type=float, default=None)
    p.add_argument("--render-samples", type=int, default=None)
    return parser


_DISPATCH = {
    "generate": cmd_generate,
    "train": cmd_train,
    "search": cmd_search,
    "match": cmd_match,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        run = load_run_config(
            getattr(args, "config", None),
            seed=getattr(args, "seed", None),
            top_k=getattr(args, "top_k", None),
            tau_rr=getattr(args, "tau_rr", None),
            render_samples=getattr(args, "render_samples", None),
        )
        return _DISPATCH[args.command](args, run)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except TrainingDivergence as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGENCE
    except (DataError, FormatError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except FragmentaError as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
