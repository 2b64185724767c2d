import numpy as np
import pytest
from hypothesis import given, strategies as st

from revisit_lab.evaluator import (
    LIFT_HEADER, METRICS, REPORT_HEADER, EvaluationError, EvalResult, Feed, MetricValue, eval_feed,
    lift, request_metrics, write_lift_report, write_report,
)
from revisit_lab.events import ALL_TASKS, TaskId

from helpers import reference_metrics as reference


def feed(req, labels):
    labels = np.asarray(labels, dtype=int)
    if labels.ndim == 1:
        labels = np.repeat(labels[:, None], 5, axis=1)
    return Feed(req, [f"p{i}" for i in range(len(labels))], labels)


def result_with(value, k=3):
    r = EvalResult(k=k, n_requests=10)
    for t in ALL_TASKS:
        r.metrics[t] = {m: MetricValue(value, 10, 0) for m in METRICS}
    return r


class TestRequestMetrics:
    def test_single_positive_first(self):
        m = request_metrics([1, 0, 0, 0, 0], 3)
        for name in ("ndcg", "map", "recip_rank", "recall", "hits"):
            assert m[name] == 1.0

    def test_positive_at_rank_four(self):
        m = request_metrics([0, 0, 0, 1, 0], 3)
        assert m["hits"] == 0.0
        assert m["recip_rank"] == 0.0
        assert m["ndcg"] == 0.0

    def test_no_positive_only_hits_defined(self):
        m = request_metrics([0, 0, 0], 3)
        assert m["hits"] == 0.0
        assert all(m[x] is None for x in METRICS if x != "hits")

    def test_all_positive_pairwise_undefined(self):
        assert request_metrics([1, 1, 1], 3)["pairwise_accuracy"] is None

    def test_reversal_sends_rr_to_one_over_n(self):
        assert request_metrics([1, 0, 0, 0, 0], 5)["recip_rank"] == 1.0
        assert request_metrics([0, 0, 0, 0, 1], 5)["recip_rank"] == 0.2

    @given(st.lists(st.booleans(), min_size=2, max_size=8))
    def test_perfect_and_reversed_pairwise(self, rel):
        if 0 < sum(rel) < len(rel):
            perfect = sorted(rel, reverse=True)
            assert request_metrics(perfect, 3)["pairwise_accuracy"] == 1.0
            assert request_metrics(perfect[::-1], 3)["pairwise_accuracy"] == 0.0

    def test_literal_reference_on_random_feeds(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            rel = (rng.random(5) < rng.uniform(0.1, 0.7)).astype(int)
            got, want = request_metrics(rel, 3), reference(rel, 3)
            assert set(got) == set(want)
            for m in want:
                if want[m] is None:
                    assert got[m] is None
                else:
                    assert abs(got[m] - want[m]) <= 1e-12, (rel, m)

    @given(st.lists(st.booleans(), min_size=1, max_size=10))
    def test_bounded(self, rel):
        for v in request_metrics(rel, 3).values():
            assert v is None or 0.0 <= v <= 1.0


class TestEvalFeed:
    def test_averages_and_skips(self):
        r = eval_feed([feed("a", [1, 0, 0]), feed("b", [0, 0, 0]), feed("c", [0, 0, 0, 1])], 3)
        mv = r.metrics[TaskId.REPIN]
        assert r.n_requests == 3
        assert mv["hits"].value == pytest.approx(1 / 3)
        assert (mv["hits"].n_requests, mv["hits"].n_skipped) == (3, 0)
        assert mv["ndcg"].value == 0.5
        assert (mv["ndcg"].n_requests, mv["ndcg"].n_skipped) == (2, 1)

    def test_all_skipped_is_none(self):
        r = eval_feed([feed("a", [0, 0])], 3)
        assert r.value(TaskId.CLICK, "map") is None

    def test_errors(self):
        with pytest.raises(EvaluationError):
            eval_feed([], 3)
        with pytest.raises(EvaluationError):
            eval_feed([feed("a", [1])], 0)

    def test_hits_monotone_in_k(self):
        rng = np.random.default_rng(1)
        feeds = [feed(str(i), (rng.random((6, 5)) < 0.15).astype(int)) for i in range(200)]
        for t in ALL_TASKS:
            hits = [eval_feed(feeds, k).value(t, "hits") for k in range(1, 7)]
            assert hits == sorted(hits)

    def test_request_id_relabeling_invariant(self):
        rng = np.random.default_rng(2)
        labels = [(rng.random((5, 5)) < 0.3).astype(int) for _ in range(50)]
        a = eval_feed([feed(str(i), l) for i, l in enumerate(labels)])
        b = eval_feed([feed(f"x{i * 7}", l) for i, l in enumerate(labels)])
        for t in ALL_TASKS:
            for m in METRICS:
                assert a.value(t, m) == b.value(t, m)


class TestLift:
    def test_equal(self):
        for row in lift(result_with(0.4), result_with(0.4)).values():
            assert all(v == 0.0 for v in row.values())

    def test_thirty_percent(self):
        out = lift(result_with(0.65), result_with(0.5))
        assert out[TaskId.REPIN]["hits"] == pytest.approx(30.0, abs=1e-12)

    def test_zero_baseline_undefined(self):
        assert lift(result_with(0.2), result_with(0.0))[TaskId.REPIN]["ndcg"] is None

    def test_k_mismatch(self):
        with pytest.raises(EvaluationError):
            lift(result_with(0.1, k=3), result_with(0.1, k=5))


class TestReports:
    def test_report(self, tmp_path):
        write_report(tmp_path / "r.csv", eval_feed([feed("a", [1, 0, 0]), feed("b", [0, 0, 0])]))
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == REPORT_HEADER
        assert len(lines) == 1 + 5 * 6
        assert "repin,ndcg@3,1,1,1" in lines

    def test_lift_report(self, tmp_path):
        write_lift_report(tmp_path / "l.csv", result_with(0.65), result_with(0.5))
        lines = (tmp_path / "l.csv").read_text().splitlines()
        assert lines[0] == LIFT_HEADER
        assert lines[1].endswith(",30")

    def test_lift_report_undefined(self, tmp_path):
        write_lift_report(tmp_path / "l.csv", result_with(0.65), result_with(0.0))
        assert (tmp_path / "l.csv").read_text().splitlines()[1].endswith(",undefined")
