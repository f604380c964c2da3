import functools
import itertools
import json
import math
from datetime import datetime, timedelta, timezone
from types import SimpleNamespace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mailrank.evaluation import (
    BASELINES,
    EvaluationError,
    Judgment,
    dcg_at_k,
    evaluate_run,
    format_run,
    format_table,
    load_judgments,
    load_run,
    ndcg_at_k,
    pool_top_k,
    rank_baseline,
    recall_precision_f,
    reports_json,
)


def _dcg(gs, k):
    total = 0.0
    for pos in range(min(k, len(gs))):
        total += (2 ** gs[pos] - 1) / math.log2(pos + 2)
    return total


@functools.lru_cache(maxsize=None)
def _best(multiset, k):
    return max(_dcg(p, k) for p in itertools.permutations(multiset))


def brute_ndcg(grades, k):
    """Direct evaluation; the ideal is the best of all orderings of the list."""
    ideal = _best(tuple(sorted(grades)), k) if grades else 0.0
    return _dcg(list(grades), k) / ideal if ideal else 0.0


# -- DCG / NDCG ---------------------------------------------------------------------

def test_dcg_examples():
    assert dcg_at_k([3, 2, 0], 3) == pytest.approx(8.892789, abs=1e-6)
    assert dcg_at_k([0, 2, 3], 3) == pytest.approx(5.392789, abs=1e-6)
    assert dcg_at_k([3, 2, 0], 1) == 7
    assert dcg_at_k([], 5) == 0


def test_ndcg_examples():
    assert ndcg_at_k([0, 2, 3], 3) == pytest.approx(0.606423, abs=1e-6)
    assert ndcg_at_k([3, 2, 0], 3) == 1.0
    assert ndcg_at_k([0, 0], 2) == 0.0
    assert ndcg_at_k([1], 10) == 1.0


@pytest.mark.parametrize("k", [0, -3])
def test_k_must_be_positive(k):
    with pytest.raises(EvaluationError):
        dcg_at_k([1], k)
    with pytest.raises(EvaluationError):
        evaluate_run("r", {"q": ["a"]}, {"q": {"a": 1}}, [k])


def test_ndcg_matches_brute_force_on_small_permutations():
    checked = 0
    for n in range(1, 7):
        for multiset in itertools.combinations_with_replacement(range(4), n):
            for perm in set(itertools.permutations(multiset)):
                for k in range(1, n + 2):
                    assert abs(ndcg_at_k(list(perm), k) - brute_ndcg(perm, k)) <= 1e-9
                    checked += 1
    assert checked > 1000


grade_lists = st.lists(st.integers(0, 3), max_size=12)


@given(grade_lists, st.integers(1, 14))
def test_ndcg_bounded_with_equality_only_for_ideal_prefix(grades, k):
    v = ndcg_at_k(grades, k)
    assert 0.0 <= v <= 1.0 + 1e-12
    ideal = sorted(grades, reverse=True)
    if any(grades):
        assert (abs(v - 1.0) <= 1e-12) == (grades[:k] == ideal[:k])


@given(grade_lists.filter(lambda g: len(g) >= 2), st.data())
def test_swapping_an_inversion_never_hurts(grades, data):
    i = data.draw(st.integers(0, len(grades) - 2))
    j = data.draw(st.integers(i + 1, len(grades) - 1))
    k = data.draw(st.integers(1, len(grades)))
    if grades[i] < grades[j]:
        fixed = list(grades)
        fixed[i], fixed[j] = fixed[j], fixed[i]
        assert ndcg_at_k(fixed, k) >= ndcg_at_k(grades, k) - 1e-12


# -- recall / precision / F ------------------------------------------------------------

def test_recall_precision_f_example():
    judged = {"a": 3, "b": 1, "c": 2, "d": 1, "x": 0}
    r, p, f = recall_precision_f(["a", "b", "c", "x", "y"], judged)
    assert (r, p) == (0.75, 0.6)
    assert f == pytest.approx(2 / 3) and round(f, 4) == 0.6667


def test_recall_precision_f_degenerate():
    assert recall_precision_f([], {"a": 1}) == (0.0, 0.0, 0.0)
    assert recall_precision_f(["a"], {}) == (0.0, 0.0, 0.0)
    assert recall_precision_f(["a", "a"], {"a": 2}) == (1.0, 1.0, 1.0)


@given(st.lists(st.sampled_from("abcdefgh"), max_size=8), st.dictionaries(st.sampled_from("abcdefgh"), st.integers(0, 3)))
def test_f_is_harmonic_mean(retrieved, judged):
    r, p, f = recall_precision_f(retrieved, judged)
    assert 0 <= r <= 1 and 0 <= p <= 1
    assert f == (0.0 if r + p == 0 else pytest.approx(2 * r * p / (r + p)))


def test_judgment_grade_range():
    with pytest.raises(EvaluationError):
        Judgment("q", "e", 4)


# -- baselines -------------------------------------------------------------------------

T0 = datetime(2001, 1, 1, tzinfo=timezone.utc)


def mail(eid, minutes, subject="s", sender="a@x.com"):
    return SimpleNamespace(id=eid, date=T0 + timedelta(minutes=minutes), subject=subject, sender=sender)


def ids(emails):
    return [e.id for e in emails]


def test_baseline_date():
    emails = [mail("a", 5), mail("b", 9), mail("c", 1), mail("d", 9)]
    assert ids(rank_baseline(emails, "date")) == ["b", "d", "a", "c"]


def test_baseline_subject_and_sender_descending():
    emails = [mail("a", 0, "alpha", "z@x"), mail("b", 0, "Beta", "m@x"), mail("c", 0, "gamma", "a@x")]
    assert ids(rank_baseline(emails, "subject")) == ["c", "b", "a"]
    assert ids(rank_baseline(emails, "sender")) == ["a", "b", "c"]


def test_baseline_thread_date_keeps_threads_together():
    emails = [mail("t1a", 0), mail("t2a", 1), mail("t1b", 5), mail("t2b", 3), mail("solo", 4)]
    thread_of = {"t1a": "T1", "t1b": "T1", "t2a": "T2", "t2b": "T2"}
    assert ids(rank_baseline(emails, "thread-date", thread_of)) == ["t1b", "t1a", "solo", "t2b", "t2a"]


@pytest.mark.parametrize("method", BASELINES)
def test_baselines_are_permutations(method):
    emails = [mail(str(i), (i * 7) % 5, f"s{i % 3}", f"u{i % 4}@x") for i in range(12)]
    assert sorted(ids(rank_baseline(emails, method))) == sorted(ids(emails))


def test_unknown_baseline():
    with pytest.raises(EvaluationError):
        rank_baseline([], "random")


# -- pooling and files --------------------------------------------------------------------

def test_pool_top_k():
    assert pool_top_k([["a", "b", "c"], ["c", "d"], ["e"]], k=2) == ["a", "b", "c", "d", "e"]
    assert pool_top_k([]) == []


def test_run_and_judgment_files(tmp_path):
    run = tmp_path / "run.tsv"
    run.write_text("# comment\n" + "\n".join(format_run("q1", [("b", 2.0), ("a", 1.5)])) + "\nq2\t1\tz\t0.1\n")
    assert load_run(run) == {"q1": ["b", "a"], "q2": ["z"]}
    qrels = tmp_path / "qrels.tsv"
    qrels.write_text("q1\ta\t3\nq1\tb\t0\n\nq2\tz\t1\n")
    assert load_judgments(qrels) == {"q1": {"a": 3, "b": 0}, "q2": {"z": 1}}


@pytest.mark.parametrize("text", ["q1\ta\n", "q1\ta\tthree\n", "q1\ta\t5\n", "q1\ta\t1\nq1\ta\t2\n"])
def test_bad_judgment_files(tmp_path, text):
    path = tmp_path / "qrels.tsv"
    path.write_text(text)
    with pytest.raises(EvaluationError):
        load_judgments(path)


def test_bad_run_rank(tmp_path):
    path = tmp_path / "run.tsv"
    path.write_text("q1\tfirst\ta\t1.0\n")
    with pytest.raises(EvaluationError):
        load_run(path)


# -- reports ---------------------------------------------------------------------------------

def test_evaluate_run_unknown_ids_are_grade_zero():
    report = evaluate_run("ranked", {"q": ["new", "a", "b"]}, {"q": {"a": 2, "b": 3}}, [1, 3])
    m = report.per_query["q"]
    assert m.ndcg[1] == 0.0
    assert m.ndcg[3] == pytest.approx(ndcg_at_k([0, 2, 3], 3))
    assert (m.recall, m.precision) == (1.0, pytest.approx(2 / 3))


def test_query_missing_from_run_scores_zero():
    report = evaluate_run("ranked", {}, {"q": {"a": 1}}, [5])
    assert report.per_query["q"].ndcg[5] == 0.0 and report.mean()["recall"] == 0.0


def test_table_and_json():
    qrels = {"q1": {"a": 3, "b": 1}, "q2": {"c": 2}}
    ranked = evaluate_run("ranked", {"q1": ["a", "b"], "q2": ["c"]}, qrels, [1, 2])
    date = evaluate_run("date", {"q1": ["b", "a"], "q2": ["x", "c"]}, qrels, [1, 2])
    table = format_table([ranked, date]).splitlines()
    assert table[0].split() == ["metric", "ranked", "date"]
    assert [row.split()[0] for row in table[1:]] == ["NDCG@1", "NDCG@2", "Recall", "Precision", "F-Measure"]
    assert table[1].split()[1:] == ["1.0000", f"{ndcg_at_k([1, 3], 1) / 2:.4f}"]
    data = json.loads(reports_json([ranked, date]))
    assert [r["run"] for r in data["runs"]] == ["ranked", "date"]
    assert data["runs"][0]["mean"]["ndcg"]["2"] == 1.0
    assert set(data["runs"][1]["per_query"]) == {"q1", "q2"}
    assert format_table([]) == ""
