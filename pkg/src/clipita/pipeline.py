"""End-to-end steps behind the CLI subcommands.

Each step reads its inputs, writes its outputs and returns a small summary
dict. Reports are deterministic; wall-clock metadata goes to a separate
``<report>.meta.json`` sidecar.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from clipita import encoders as E
from clipita import evaluation as V
from clipita.augment import read_image
from clipita.config import RunConfig
from clipita.data import agreement as A
from clipita.data import filters as F
from clipita.data.fetch import fetch_images, is_remote
from clipita.data.manifest import CaptionRecord, load_manifest, split_dataset, write_manifest
from clipita.optim import PairSet, TrainResult, to_unit, train

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Input data is missing or malformed."""


def write_meta(report: str | Path, **extra) -> None:
    meta = {"written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"), **extra}
    Path(str(report) + ".meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))


def _write_lines(path: Path, records: Sequence[dict], footer: str) -> None:
    body = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    path.write_text(body + f"# {footer}\n", encoding="utf-8")


def rebase_refs(records: Sequence[CaptionRecord], src: str | Path, dst: str | Path) -> list[CaptionRecord]:
    """Rewrite relative local image refs of a manifest at ``src`` so they stay
    valid from a manifest written to ``dst``."""
    src_dir = Path(src).resolve().parent
    dst_dir = Path(dst).resolve().parent
    if src_dir == dst_dir:
        return list(records)
    out = []
    for rec in records:
        ref = rec.image_ref
        if not is_remote(ref) and not Path(ref).is_absolute():
            ref = Path(os.path.relpath(src_dir / ref, dst_dir)).as_posix()
            rec = dataclasses.replace(rec, image_ref=ref)
        out.append(rec)
    return out


# ------------------------------------------------------------------ clean

def cmd_clean(manifest: str | Path, out: str | Path, report: str | Path, cfg: RunConfig) -> dict:
    records = load_manifest(manifest)
    propn = F.filter_propn(records, cfg.filters.propn_threshold)
    lang = F.filter_non_italian(propn.kept, F.bundled_profiles(), cfg.filters.min_lang_score)
    write_manifest(out, rebase_refs(lang.kept, manifest, out))
    n = len(records)
    lines = [
        {"filter": "propn", "removed": len(propn.removed), "fraction": round(len(propn.removed) / n, 4) if n else 0.0},
        {"filter": "language", "removed": len(lang.removed), "fraction": round(len(lang.removed) / n, 4) if n else 0.0},
        {"filter": "total", "input": n, "kept": len(lang.kept)},
    ]
    lines += [{"removed_id": r.id, "by": "propn"} for r in propn.removed]
    lines += [{"removed_id": r.id, "by": "language"} for r in lang.removed]
    _write_lines(Path(report), lines,
                 f"{n} records: {len(propn.removed)} removed by PROPN filter, "
                 f"{len(lang.removed)} by language filter, {len(lang.kept)} kept")
    write_meta(report, command="clean")
    return {"input": n, "propn_removed": len(propn.removed), "lang_removed": len(lang.removed),
            "kept": len(lang.kept)}


# ------------------------------------------------------------------ fetch

def cmd_fetch(manifest: str | Path, dest: str | Path, out: str | Path, report: str | Path,
              cfg: RunConfig) -> dict:
    records = load_manifest(manifest)
    result = fetch_images(records, dest, cfg.fetch.concurrency, cfg.fetch.timeout_ms / 1000.0)
    write_manifest(out, rebase_refs(result.records, manifest, out))
    result.write(report)
    write_meta(report, command="fetch")
    return {"ok": sum(e.status == "ok" for e in result.entries), "failed": len(result.failed_ids)}


# ------------------------------------------------------------------ train

def resolve_ref(ref: str, base: Path) -> Path:
    p = Path(ref)
    return p if p.is_absolute() else base / p


def load_pairs(records: Sequence[CaptionRecord], base: Path) -> PairSet:
    images = []
    for rec in records:
        path = resolve_ref(rec.image_ref, base)
        if not path.exists():
            raise DataError(f"image for record {rec.id!r} not found: {path}")
        images.append(read_image(path))
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise DataError(f"images have mixed sizes: {sorted(shapes)}")
    arr = np.stack(images) if images else np.zeros((0, 1, 1, 3), dtype=np.uint8)
    return PairSet([r.id for r in records], arr, [r.caption for r in records])


def cmd_train(manifest: str | Path, checkpoint_dir: str | Path, cfg: RunConfig) -> TrainResult:
    manifest = Path(manifest)
    records = load_manifest(manifest)
    if not records:
        raise DataError(f"{manifest}: no records to train on")
    train_recs, eval_recs = split_dataset(records, cfg.data.eval_fraction, cfg.seed)
    ckdir = Path(checkpoint_dir)
    ckdir.mkdir(parents=True, exist_ok=True)
    write_manifest(ckdir / "train.jsonl", rebase_refs(train_recs, manifest, ckdir / "train.jsonl"))
    write_manifest(ckdir / "eval.jsonl", rebase_refs(eval_recs, manifest, ckdir / "eval.jsonl"))

    train_set = load_pairs(train_recs, manifest.parent)
    eval_set = load_pairs(eval_recs, manifest.parent)
    size = cfg.model.image_size
    if train_set.images.shape[1:3] != (size, size):
        raise DataError(f"images are {train_set.images.shape[1:3]}, model expects {size}x{size}")

    vocab = E.build_vocab(train_set.captions, cfg.model.vocab_size)
    params = E.init_params(cfg.model, vocab)
    tcfg = dataclasses.replace(cfg.train, checkpoint_dir=str(ckdir))
    (ckdir / "config.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=1))
    return train(params, train_set, eval_set, tcfg, cfg.phase1, cfg.phase2, cfg.agc,
                 cfg.augment, cfg.loss, ckdir / "metrics.jsonl")


# ------------------------------------------------------------- evaluation

def embed_records(params: E.ModelParams, pairs: PairSet) -> tuple[np.ndarray, np.ndarray]:
    """Unaugmented, L2-normalised image and caption embeddings."""
    img = E.encode_images(params, to_unit(pairs.images)).data
    toks = [E.tokenize(c, params.vocab, params.config.max_tokens) for c in pairs.captions]
    txt = E.encode_texts(params, toks).data
    return V.normalize_rows(img), V.normalize_rows(txt)


def one_caption_per_image(records: Sequence[CaptionRecord]) -> list[CaptionRecord]:
    seen, out = set(), []
    for rec in records:
        if rec.image_ref not in seen:
            seen.add(rec.image_ref)
            out.append(rec)
    return out


def cmd_eval_retrieval(checkpoint: str | Path, manifest: str | Path, report: str | Path,
                       dump_top: bool = False) -> dict:
    params = E.load_checkpoint(checkpoint).params
    manifest = Path(manifest)
    records = one_caption_per_image(load_manifest(manifest))
    if not records:
        raise DataError(f"{manifest}: no records to evaluate")
    pairs = load_pairs(records, manifest.parent)
    img, txt = embed_records(params, pairs)
    rankings = [V.rank_images(txt[i], img, gold=i, query_id=pairs.ids[i]) for i in range(len(pairs))]
    values = {k: V.mrr_at_k(rankings, k) for k in (1, 5, 10)}
    dump = None
    if dump_top:
        dump = [{"query": r.query_id, "top10": [pairs.ids[j] for j in r.top(10)]} for r in rankings]
    V.write_report(report, V.metric_records("MRR", values, len(rankings)), dump)
    write_meta(report, command="eval-retrieval", checkpoint=str(checkpoint))
    return values


def cmd_eval_zeroshot(checkpoint: str | Path, class_list: str | Path, manifest: str | Path,
                      report: str | Path) -> dict:
    params = E.load_checkpoint(checkpoint).params
    prompts = V.load_class_list(class_list)
    index = {p.class_id: i for i, p in enumerate(prompts)}
    manifest = Path(manifest)
    records = load_manifest(manifest)
    if not records:
        raise DataError(f"{manifest}: no labelled images")
    golds = []
    for rec in records:
        if "label" not in rec.extra or rec.extra["label"] not in index:
            raise DataError(f"record {rec.id!r} has no known class label")
        golds.append(index[rec.extra["label"]])
    pairs = load_pairs(records, manifest.parent)
    img = V.normalize_rows(E.encode_images(params, to_unit(pairs.images)).data)
    toks = [E.tokenize(p.text, params.vocab, params.config.max_tokens) for p in prompts]
    txt = V.normalize_rows(E.encode_texts(params, toks).data)
    rankings = [V.zero_shot_classify(img[i], txt, golds[i], pairs.ids[i]) for i in range(len(pairs))]
    values = {k: V.accuracy_at_k(rankings, k) for k in (1, 5, 10)}
    V.write_report(report, V.metric_records("Accuracy", values, len(rankings)))
    write_meta(report, command="eval-zeroshot", checkpoint=str(checkpoint))
    return values


# -------------------------------------------------------------- agreement

def cmd_agreement(ratings: str | Path, weighting: str = "ordinal",
                  report: str | Path | None = None) -> dict:
    matrix = A.load_ratings(ratings)
    result = {"items": int(matrix.scores.shape[0]), "raters": len(matrix.raters),
              "mean": A.rating_mean(matrix), "weighting": weighting,
              "coefficient": A.gwet_ac(matrix, weighting)}
    if report is not None:
        _write_lines(Path(report), [result],
                     f"mean score {result['mean']:.4f}, Gwet ({weighting}) {result['coefficient']:.4f}")
        write_meta(report, command="agreement")
    return result
