"""Retrieval and zero-shot classification metrics over embedding snapshots."""

from __future__ import annotations

import json
from fractions import Fraction
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from clipita.tensor import DimensionError

PROMPT_PREFIX = "una foto di "


@dataclass(frozen=True)
class RetrievalRanking:
    """Candidates ordered by descending score, ties by ascending index.

    ``gold_rank`` is pessimistic: the gold candidate is placed last among the
    candidates sharing its score, so tied scores never inflate a metric.
    """

    query_id: str
    gold: int
    order: tuple[int, ...]
    scores: tuple[float, ...]  # aligned with ``order``

    @property
    def gold_rank(self) -> int:
        gold_score = self.scores[self.order.index(self.gold)]
        return sum(1 for s in self.scores if s >= gold_score)

    def top(self, k: int) -> tuple[int, ...]:
        return self.order[:k]


def rank_candidates(query: np.ndarray, candidates: np.ndarray, gold: int = 0,
                    query_id: str = "") -> RetrievalRanking:
    """Rank candidate rows by dot product with ``query``.

    Inputs are expected to be L2-normalised, making the score a cosine
    similarity.
    """
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    c = np.asarray(candidates, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] < 1:
        raise DimensionError("need a non-empty candidates x dim matrix")
    if c.shape[1] != q.shape[0]:
        raise DimensionError(f"query dim {q.shape[0]} vs candidate dim {c.shape[1]}")
    if not 0 <= gold < c.shape[0]:
        raise IndexError(f"gold index {gold} out of range for {c.shape[0]} candidates")
    scores = c @ q
    order = np.lexsort((np.arange(len(scores)), -scores))
    return RetrievalRanking(query_id, int(gold), tuple(int(i) for i in order),
                            tuple(float(scores[i]) for i in order))


def rank_images(caption_emb: np.ndarray, image_embs: np.ndarray, gold: int = 0,
                query_id: str = "") -> RetrievalRanking:
    return rank_candidates(caption_emb, image_embs, gold, query_id)


def zero_shot_classify(image_emb: np.ndarray, prompt_embs: np.ndarray, gold: int = 0,
                       query_id: str = "") -> RetrievalRanking:
    """Rank class prompts for one image; ``order`` is the ranked class list."""
    return rank_candidates(image_emb, prompt_embs, gold, query_id)


def normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _require(rankings: Sequence[RetrievalRanking], k: int) -> None:
    if not rankings:
        raise ValueError("no rankings to score")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")


def mrr_at_k(rankings: Sequence[RetrievalRanking], k: int) -> float:
    # summed as exact rationals so the result is the correctly rounded mean
    _require(rankings, k)
    total = sum((Fraction(1, r.gold_rank) for r in rankings if r.gold_rank <= k), Fraction(0))
    return float(total / len(rankings))


def accuracy_at_k(rankings: Sequence[RetrievalRanking], k: int) -> float:
    _require(rankings, k)
    return sum(1 for r in rankings if r.gold_rank <= k) / len(rankings)


# ----------------------------------------------------------------- prompts

@dataclass(frozen=True)
class LabelPrompt:
    class_id: int
    label: str
    article: str
    text: str


def build_prompt(label: str, article: str, class_id: int = 0) -> LabelPrompt:
    if not label.strip() or not article.strip():
        raise ValueError("label and article must be non-empty")
    return LabelPrompt(class_id, label, article, f"{PROMPT_PREFIX}{article} {label}")


def load_class_list(path: str | Path) -> list[LabelPrompt]:
    """Tab-separated ``class_id<TAB>article<TAB>label`` lines."""
    prompts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}: line {lineno}: expected 3 tab-separated fields")
            prompts.append(build_prompt(parts[2], parts[1], int(parts[0])))
    return prompts


# ----------------------------------------------------------------- reports

def metric_records(name: str, values: dict[int, float], n_queries: int) -> list[dict]:
    return [{"metric": name, "k": k, "value": round(v, 4), "queries": n_queries}
            for k, v in sorted(values.items())]


def write_report(path: str | Path, records: list[dict], dump: list[dict] | None = None) -> None:
    """Line-delimited metric records followed by a human-readable footer."""
    lines = [json.dumps(r, sort_keys=True) for r in records]
    if dump:
        lines += [json.dumps(d, sort_keys=True) for d in dump]
    footer = ", ".join(f"{r['metric']}@{r['k']}={r['value']:.4f}" for r in records)
    lines.append(f"# {footer} ({records[0]['queries'] if records else 0} queries)")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
