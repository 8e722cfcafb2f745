"""Download remote images referenced by a manifest.

Files are stored content-addressed (``<dest>/<sha[:2]>/<sha><ext>``) and an
``index.json`` in ``dest`` maps each URL to its stored file, so a rerun only
touches URLs that have not been fetched successfully yet. Network failures are
reported per record and never abort the run.
"""

from __future__ import annotations

import hashlib
import json
import os
import socket
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path, PurePosixPath
from typing import Sequence
from urllib.parse import urlparse

from clipita.data.manifest import CaptionRecord

INDEX_NAME = "index.json"


class FetchError(RuntimeError):
    pass


@dataclass
class FetchEntry:
    id: str
    status: str  # "ok" or "failed"
    reason: str | None = None
    local_path: str | None = None

    def to_json(self) -> dict:
        out = {"id": self.id, "status": self.status}
        if self.reason is not None:
            out["reason"] = self.reason
        if self.local_path is not None:
            out["local_path"] = self.local_path
        return out


@dataclass
class FetchReport:
    entries: list[FetchEntry]
    records: list[CaptionRecord]
    downloaded: int = 0
    failed_ids: list[str] = field(default_factory=list)

    @property
    def all_ok(self) -> bool:
        return all(e.status == "ok" for e in self.entries)

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(e.to_json(), sort_keys=True) + "\n")


def is_remote(ref: str) -> bool:
    return urlparse(ref).scheme in ("http", "https")


def _describe(exc: BaseException) -> str:
    if isinstance(exc, urllib.error.HTTPError):
        return f"http {exc.code}"
    if isinstance(exc, urllib.error.URLError):
        exc = exc.reason if isinstance(exc.reason, BaseException) else exc
    if isinstance(exc, (socket.timeout, TimeoutError)):
        return "timeout"
    if isinstance(exc, ConnectionRefusedError):
        return "connection refused"
    return f"{type(exc).__name__}: {exc}"


def _download(url: str, timeout: float) -> tuple[bytes | None, str | None]:
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            return resp.read(), None
    except Exception as exc:  # network failures are data
        return None, _describe(exc)


def _check_writable(dest: Path) -> None:
    try:
        dest.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FetchError(f"cannot create destination {dest}: {exc}") from exc
    if not os.access(dest, os.W_OK):
        raise FetchError(f"destination {dest} is not writable")


def fetch_images(records: Sequence[CaptionRecord], dest: str | Path, concurrency: int = 8,
                 timeout: float = 10.0) -> FetchReport:
    """Fetch every remote ``image_ref``; local refs pass through untouched.

    Successful records are rewritten to point at the stored file (absolute
    path). At most ``concurrency`` requests are in flight; each has its own
    ``timeout`` in seconds.
    """
    dest = Path(dest)
    remote = [r for r in records if is_remote(r.image_ref)]
    if remote:
        _check_writable(dest)
    index_path = dest / INDEX_NAME
    index: dict[str, str] = json.loads(index_path.read_text()) if index_path.exists() else {}

    todo = sorted({r.image_ref for r in remote
                   if not (r.image_ref in index and (dest / index[r.image_ref]).exists())})
    results: dict[str, tuple[bytes | None, str | None]] = {}
    if todo:
        with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
            for url, res in zip(todo, pool.map(lambda u: _download(u, timeout), todo)):
                results[url] = res

    downloaded = 0
    for url in todo:
        body, _ = results[url]
        if body is None:
            continue
        digest = hashlib.sha256(body).hexdigest()
        suffix = PurePosixPath(urlparse(url).path).suffix.lower()[:8] or ".bin"
        rel = f"{digest[:2]}/{digest}{suffix}"
        target = dest / rel
        if not target.exists():
            target.parent.mkdir(parents=True, exist_ok=True)
            tmp = target.with_suffix(target.suffix + ".part")
            tmp.write_bytes(body)
            tmp.replace(target)
        index[url] = rel
        downloaded += 1
    if todo:
        index_path.write_text(json.dumps(index, sort_keys=True, indent=0))

    entries, out_records, failed = [], [], []
    for rec in records:
        if not is_remote(rec.image_ref):
            entries.append(FetchEntry(rec.id, "ok", local_path=rec.image_ref))
            out_records.append(rec)
        elif rec.image_ref in index:
            local = str((dest / index[rec.image_ref]).resolve())
            entries.append(FetchEntry(rec.id, "ok", local_path=local))
            out_records.append(replace(rec, image_ref=local))
        else:
            entries.append(FetchEntry(rec.id, "failed", reason=results[rec.image_ref][1]))
            out_records.append(rec)
            failed.append(rec.id)
    return FetchReport(entries, out_records, downloaded, failed)
