"""Caption manifests: line-delimited JSON records, one image-caption pair each.

Canonical record fields are ``id, image_ref, caption, source`` plus optional
``lang`` and ``pos_tags``; any other keys are carried along in ``extra``.
A first line of the form ``{"schema_version": 1}`` is accepted and checked.
Source-native column names (WIT, MSCOCO-IT, CC, ILPOST dumps) are mapped onto
the canonical ones by small per-source adapters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1
SOURCES = ("wit", "mscoco-it", "cc", "ilpost", "custom")

# source -> {native column: canonical field}
SOURCE_COLUMNS = {
    "wit": {"caption_reference_description": "caption", "image_url": "image_ref"},
    "mscoco-it": {"file_name": "image_ref", "caption_it": "caption"},
    "cc": {"url": "image_ref", "caption_it": "caption"},
    "ilpost": {"foto": "image_ref", "didascalia": "caption"},
    "custom": {},
}

_CANONICAL = ("id", "image_ref", "caption", "source", "lang", "pos_tags")


class ManifestError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass
class CaptionRecord:
    id: str
    image_ref: str
    caption: str
    source: str = "custom"
    lang: str | None = None
    pos_tags: list[str] | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"id": self.id, "image_ref": self.image_ref, "caption": self.caption,
               "source": self.source}
        if self.lang is not None:
            out["lang"] = self.lang
        if self.pos_tags is not None:
            out["pos_tags"] = list(self.pos_tags)
        out.update(self.extra)
        return out


def adapt(raw: dict, source: str | None = None) -> dict:
    """Rename source-native columns to canonical field names."""
    source = raw.get("source", source) or "custom"
    if source not in SOURCE_COLUMNS:
        raise ManifestError(f"unknown source {source!r}; expected one of {SOURCES}")
    out = dict(raw)
    for native, canonical in SOURCE_COLUMNS[source].items():
        if native in out and canonical not in out:
            out[canonical] = out.pop(native)
    out["source"] = source
    return out


def parse_record(raw: dict, line: int | None = None, source: str | None = None) -> CaptionRecord:
    if not isinstance(raw, dict):
        raise ManifestError("record must be a JSON object", line)
    raw = adapt(raw, source)
    for key in ("id", "image_ref", "caption"):
        if key not in raw:
            raise ManifestError(f"missing field {key!r}", line)
    caption = raw["caption"]
    if not isinstance(caption, str) or not caption.strip():
        raise ManifestError("caption must be a non-empty string", line)
    tags = raw.get("pos_tags")
    if tags is not None and (not isinstance(tags, list) or not all(isinstance(t, str) for t in tags)):
        raise ManifestError("pos_tags must be a list of strings", line)
    extra = {k: v for k, v in raw.items() if k not in _CANONICAL}
    return CaptionRecord(str(raw["id"]), str(raw["image_ref"]), caption, raw["source"],
                         raw.get("lang"), tags, extra)


def load_manifest(path: str | Path, source: str | None = None) -> list[CaptionRecord]:
    records: list[CaptionRecord] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"malformed JSON ({exc.msg})", lineno) from None
            if isinstance(raw, dict) and set(raw) == {"schema_version"}:
                if raw["schema_version"] != SCHEMA_VERSION:
                    raise ManifestError(f"unsupported schema_version {raw['schema_version']}", lineno)
                continue
            rec = parse_record(raw, lineno, source)
            if rec.id in seen:
                raise ManifestError(f"duplicate id {rec.id!r} (first seen on line {seen[rec.id]})", lineno)
            seen[rec.id] = lineno
            records.append(rec)
    return records


def write_manifest(path: str | Path, records: Iterable[CaptionRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True, ensure_ascii=False) + "\n")
    return path


def split_dataset(records: Sequence[CaptionRecord], eval_fraction: float,
                  seed: int = 0) -> tuple[list[CaptionRecord], list[CaptionRecord]]:
    """Seeded train/eval split; both halves keep the input order."""
    if not 0.0 <= eval_fraction <= 1.0:
        raise ValueError(f"eval_fraction must be in [0, 1], got {eval_fraction}")
    n = len(records)
    n_eval = int(round(eval_fraction * n))
    chosen = set(np.random.default_rng(seed).permutation(n)[:n_eval].tolist())
    train = [r for i, r in enumerate(records) if i not in chosen]
    held = [r for i, r in enumerate(records) if i in chosen]
    return train, held
