"""Translation-quality ratings: mean score and Gwet's chance-corrected
agreement coefficient with identity or ordinal weights.

With identity weights the coefficient is Gwet's AC1; with ordinal weights it
is the weighted variant (often labelled AC2). Both use the same formula::

    r*_ik = sum_l w_kl r_il
    p_a   = mean_i sum_k r_ik (r*_ik - 1) / (r (r - 1))
    pi_k  = mean_i r_ik / r
    p_e   = T_w / (q (q - 1)) * sum_k pi_k (1 - pi_k),   T_w = sum_kl w_kl
    AC    = (p_a - p_e) / (1 - p_e)

where r_ik counts raters putting item i in category k.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import comb
from pathlib import Path

import numpy as np

DEFAULT_CATEGORIES = 4


class RatingsError(ValueError):
    pass


class UndefinedCoefficientError(ArithmeticError):
    pass


@dataclass
class RatingMatrix:
    """``scores[i, j]`` is rater j's score for item i, in ``1..q``."""

    scores: np.ndarray
    raters: list[str]
    q: int = DEFAULT_CATEGORIES

    def __post_init__(self):
        s = np.asarray(self.scores)
        if s.ndim != 2:
            raise RatingsError("ratings must be an items x raters matrix")
        if s.shape[1] != len(self.raters):
            raise RatingsError(f"{s.shape[1]} score columns but {len(self.raters)} rater ids")
        if s.size and (s.min() < 1 or s.max() > self.q):
            raise RatingsError(f"scores must lie in 1..{self.q}")
        self.scores = s.astype(np.int64)


def load_ratings(path: str | Path, q: int = DEFAULT_CATEGORIES) -> RatingMatrix:
    """CSV: header row of rater ids, then one row of integer scores per item."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if any(c.strip() for c in r)]
    if not rows:
        raise RatingsError(f"{path}: empty ratings file")
    raters = [c.strip() for c in rows[0]]
    scores = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(raters):
            raise RatingsError(f"{path}: line {lineno} has {len(row)} fields, expected {len(raters)}")
        try:
            vals = [int(c) for c in row]
        except ValueError:
            raise RatingsError(f"{path}: line {lineno} has a non-integer score") from None
        if any(not 1 <= v <= q for v in vals):
            raise RatingsError(f"{path}: line {lineno} has a score outside 1..{q}")
        scores.append(vals)
    return RatingMatrix(np.array(scores, dtype=np.int64).reshape(len(scores), len(raters)), raters, q)


def rating_mean(matrix: RatingMatrix) -> float:
    if matrix.scores.size == 0:
        raise RatingsError("no ratings")
    return float(matrix.scores.mean())


def identity_weights(q: int) -> np.ndarray:
    return np.eye(q)


def ordinal_weights(q: int) -> np.ndarray:
    """w_kl = 1 - C(|k-l|+1, 2) / C(q, 2)."""
    if q < 2:
        raise ValueError("need at least two categories")
    d = np.abs(np.subtract.outer(np.arange(q), np.arange(q)))
    return np.array([[1.0 - comb(int(x) + 1, 2) / comb(q, 2) for x in row] for row in d])


def category_counts(matrix: RatingMatrix) -> np.ndarray:
    """items x q matrix of how many raters chose each category."""
    n = matrix.scores.shape[0]
    counts = np.zeros((n, matrix.q), dtype=np.int64)
    for k in range(matrix.q):
        counts[:, k] = (matrix.scores == k + 1).sum(axis=1)
    return counts


def gwet_ac(matrix: RatingMatrix, weighting: str = "ordinal") -> float:
    if weighting == "ordinal":
        w = ordinal_weights(matrix.q)
    elif weighting == "identity":
        w = identity_weights(matrix.q)
    else:
        raise ValueError(f"weighting must be 'identity' or 'ordinal', got {weighting!r}")
    n, r = matrix.scores.shape
    if r < 2:
        raise RatingsError("agreement needs at least two raters")
    if n == 0:
        raise RatingsError("no rated items")
    q = matrix.q
    counts = category_counts(matrix).astype(np.float64)
    weighted = counts @ w.T
    p_a = float(np.mean((counts * (weighted - 1.0)).sum(axis=1) / (r * (r - 1))))
    pi = counts.mean(axis=0) / r
    p_e = float(w.sum() / (q * (q - 1)) * (pi * (1.0 - pi)).sum())
    if 1.0 - p_e <= 0:
        raise UndefinedCoefficientError(f"chance agreement {p_e} leaves no room for correction")
    return (p_a - p_e) / (1.0 - p_e)
