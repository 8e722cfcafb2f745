import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clipita import evaluation as V
from clipita.evaluation import RetrievalRanking
from clipita.tensor import DimensionError


def _ranking(order, gold):
    n = len(order)
    # strictly decreasing scores, so position == rank
    return RetrievalRanking("q", gold, tuple(order), tuple(float(n - i) for i in range(n)))


def test_query_equal_to_candidate_ranks_first():
    cands = np.eye(4)
    r = V.rank_images(cands[2], cands, gold=2)
    assert r.order[0] == 2 and r.scores[0] == 1.0 and r.gold_rank == 1


def test_ties_break_by_lower_index():
    cands = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]])
    r = V.rank_candidates(np.array([1.0, 0.0]), cands, gold=1)
    assert r.order == (1, 2, 0)


def test_gold_rank_is_pessimistic_under_ties():
    cands = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    r = V.rank_candidates(np.array([1.0, 0.0]), cands, gold=0)
    assert r.order[0] == 0
    assert r.gold_rank == 2


@pytest.mark.parametrize("seed", range(20))
def test_ranking_matches_pairwise_sort_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 21))
    cands = V.normalize_rows(rng.normal(size=(n, 5)))
    q = V.normalize_rows(rng.normal(size=(1, 5)))[0]
    scores = [float(c @ q) for c in cands]
    # insertion sort by explicit pairwise comparison
    oracle: list[int] = []
    for i in range(n):
        pos = 0
        while pos < len(oracle) and (scores[oracle[pos]] > scores[i] or
                                     (scores[oracle[pos]] == scores[i] and oracle[pos] < i)):
            pos += 1
        oracle.insert(pos, i)
    r = V.rank_images(q, cands, gold=0)
    assert list(r.order) == oracle
    assert all(a >= b for a, b in zip(r.scores, r.scores[1:]))


def test_rank_invariant_to_positive_rescaling():
    rng = np.random.default_rng(4)
    cands, q = rng.normal(size=(8, 3)), rng.normal(size=3)
    a = V.rank_images(V.normalize_rows(q[None])[0], V.normalize_rows(cands))
    b = V.rank_images(V.normalize_rows(3 * q[None])[0], V.normalize_rows(cands * rng.uniform(0.1, 9, size=(8, 1))))
    assert a.order == b.order


def test_rank_errors():
    with pytest.raises(DimensionError):
        V.rank_images(np.ones(3), np.ones((4, 2)))
    with pytest.raises(DimensionError):
        V.rank_images(np.ones(3), np.ones((0, 3)))


def test_mrr_examples():
    rankings = [_ranking([0, 1, 2, 3, 4], g) for g in (0, 1, 3)]  # gold ranks 1, 2, 4
    assert V.mrr_at_k(rankings, 10) == pytest.approx((1 + 1 / 2 + 1 / 4) / 3, abs=1e-15)
    assert V.mrr_at_k([_ranking([0, 1], 1)], 1) == 0.0


def test_accuracy_examples():
    rankings = [_ranking(list(range(8)), g) for g in (0, 2, 6)]  # ranks 1, 3, 7
    assert V.accuracy_at_k(rankings, 5) == pytest.approx(2 / 3)
    assert V.accuracy_at_k([_ranking([0, 1], 0)] * 3, 1) == 1.0


def test_metric_errors():
    with pytest.raises(ValueError):
        V.mrr_at_k([], 1)
    with pytest.raises(ValueError):
        V.accuracy_at_k([_ranking([0], 0)], 0)


def brute_force(rankings, k):
    mrr = sum((Fraction(1, r.order.index(r.gold) + 1) if r.order.index(r.gold) < k else Fraction(0))
              for r in rankings) / len(rankings)
    acc = Fraction(sum(1 for r in rankings if r.order.index(r.gold) < k), len(rankings))
    return mrr, acc


def test_metrics_match_brute_force_on_all_small_rankings():
    for n in range(1, 7):
        for order in itertools.permutations(range(n)):
            for gold in range(n):
                rankings = [_ranking(order, gold), _ranking(order[::-1], (gold + 1) % n)]
                for k in range(1, n + 2):
                    mrr, acc = brute_force(rankings, k)
                    assert V.mrr_at_k(rankings, k) == float(mrr)
                    assert V.accuracy_at_k(rankings, k) == float(acc)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 9), min_size=1, max_size=15), st.randoms(use_true_random=False))
def test_metrics_monotone_bounded_and_order_invariant(golds, rnd):
    rankings = [_ranking(list(range(10)), g) for g in golds]
    for metric in (V.mrr_at_k, V.accuracy_at_k):
        values = [metric(rankings, k) for k in (1, 5, 10)]
        assert all(0.0 <= v <= 1.0 for v in values)
        assert values[0] <= values[1] <= values[2]
        shuffled = list(rankings)
        rnd.shuffle(shuffled)
        assert metric(shuffled, 5) == pytest.approx(metric(rankings, 5), abs=1e-15)


# ----------------------------------------------------------------- prompts

def test_prompt_rendering():
    assert V.build_prompt("gatto", "un").text == "una foto di un gatto"
    assert V.build_prompt("mela", "una").text == "una foto di una mela"
    p = V.build_prompt("scoiattolo", "uno")
    assert p.text[len(V.PROMPT_PREFIX) + len(p.article) + 1:] == "scoiattolo"
    with pytest.raises(ValueError):
        V.build_prompt("", "un")


def test_zero_shot_self_match_gives_perfect_accuracy():
    rng = np.random.default_rng(0)
    images = V.normalize_rows(rng.normal(size=(10, 16)))
    prompts = images.copy()
    rankings = [V.zero_shot_classify(images[i], prompts, gold=i) for i in range(10)]
    assert V.accuracy_at_k(rankings, 1) == 1.0


def test_class_list(tmp_path):
    path = tmp_path / "classes.tsv"
    path.write_text("# id\tarticle\tlabel\n0\tun\tgatto\n1\tuna\tmela\n", encoding="utf-8")
    prompts = V.load_class_list(path)
    assert [p.text for p in prompts] == ["una foto di un gatto", "una foto di una mela"]
    path.write_text("0\tgatto\n")
    with pytest.raises(ValueError):
        V.load_class_list(path)


def test_report_format(tmp_path):
    path = tmp_path / "r.jsonl"
    V.write_report(path, V.metric_records("MRR", {1: 0.123456, 5: 0.5}, 32))
    lines = path.read_text().splitlines()
    assert lines[0] == '{"k": 1, "metric": "MRR", "queries": 32, "value": 0.1235}'
    assert lines[-1] == "# MRR@1=0.1235, MRR@5=0.5000 (32 queries)"
