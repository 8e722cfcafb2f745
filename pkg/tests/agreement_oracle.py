"""Pairwise formulation of Gwet's coefficient, written independently of the
category-count formulation used by the package."""

from __future__ import annotations

from itertools import permutations
from math import comb


def weight(k: int, l: int, q: int, ordinal: bool) -> float:
    if not ordinal:
        return 1.0 if k == l else 0.0
    return 1.0 - comb(abs(k - l) + 1, 2) / comb(q, 2)


def gwet_pairwise(rows: list[list[int]], q: int, ordinal: bool) -> float:
    r = len(rows[0])
    # observed: mean weight over ordered pairs of distinct raters, per item
    pa = sum(sum(weight(row[a], row[b], q, ordinal) for a, b in permutations(range(r), 2)) / (r * (r - 1))
             for row in rows) / len(rows)
    pis = [sum(row.count(k) for row in rows) / (len(rows) * r) for k in range(1, q + 1)]
    tw = sum(weight(k, l, q, ordinal) for k in range(1, q + 1) for l in range(1, q + 1))
    pe = tw / (q * (q - 1)) * sum(p * (1 - p) for p in pis)
    return (pa - pe) / (1 - pe)
