import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuroauth.errors import ConfigError, DataError
from neuroauth.featsel import ExtraTreesSpec
from neuroauth.features import FeatureMatrix
from neuroauth.protocol import (
    AGGREGATE_METRICS,
    AuthSettings,
    ConfusionMatrix,
    SplitPlan,
    aggregate_rows,
    balance_downsample,
    make_auth_task,
    metrics,
    pilot_split,
    run_authentication,
    run_pilot,
    split_sessions,
    summarize,
)


def user_matrix(counts, n_cols=1, seed=0):
    """Rows per user given by ``counts`` (user id -> rows), all in session 1."""
    users = np.concatenate([np.full(n, u) for u, n in counts.items()])
    values = np.random.default_rng(seed).normal(size=(users.shape[0], n_cols))
    n = users.shape[0]
    return FeatureMatrix(values, users, np.ones(n), np.arange(n),
                         tuple(f"f{i}" for i in range(n_cols)))


def task_for(counts, genuine=0):
    fm = user_matrix(counts)
    empty = fm.take(np.zeros(0, dtype=int))
    return make_auth_task(fm, empty, empty, genuine)


class TestSplit:
    def test_partition(self, small_features):
        train, val, test = split_sessions(small_features)
        assert train.n_rows + val.n_rows + test.n_rows == small_features.n_rows
        assert set(np.unique(train.session_ids)) == {1, 2, 3, 4, 5}
        assert set(np.unique(val.session_ids)) == {6, 7}
        assert set(np.unique(test.session_ids)) == {8, 9}

    def test_overlap_refused(self):
        with pytest.raises(ConfigError):
            SplitPlan((1, 2), (2, 3), (4,))
        with pytest.raises(ConfigError):
            SplitPlan((1,), (2,), ())

    def test_absent_session(self, small_features):
        with pytest.raises(DataError):
            split_sessions(small_features, SplitPlan((1,), (2,), (10,)))


class TestBalance:
    def test_quota_arithmetic(self):
        counts = {0: 1000, **{u: 5000 for u in range(1, 12)}}
        out = balance_downsample(task_for(counts), seed=4)
        users, n = np.unique(out.train.user_ids, return_counts=True)
        assert n[0] == 1000
        assert np.all(n[1:] == 90) and n[1:].sum() == 990

    def test_exact_balance(self):
        counts = {0: 990, **{u: 400 for u in range(1, 12)}}
        out = balance_downsample(task_for(counts), seed=4)
        assert int(np.sum(out.train.user_ids != 0)) == 990

    def test_deterministic(self):
        counts = {0: 100, 1: 500, 2: 500}
        a = balance_downsample(task_for(counts), seed=1).train.window_index
        b = balance_downsample(task_for(counts), seed=1).train.window_index
        c = balance_downsample(task_for(counts), seed=2).train.window_index
        assert np.array_equal(a, b) and not np.array_equal(a, c)

    def test_short_impostor_kept_whole(self):
        out = balance_downsample(task_for({0: 100, 1: 10, 2: 500}), seed=0)
        assert int(np.sum(out.train.user_ids == 1)) == 10
        assert any("impostor 1" in n for n in out.notes)

    def test_too_few_genuine_rows(self):
        with pytest.raises(DataError):
            balance_downsample(task_for({0: 1, 1: 5, 2: 5}), seed=0)

    @settings(max_examples=200)
    @given(st.integers(1, 400), st.lists(st.integers(0, 300), min_size=1, max_size=11))
    def test_balance_bound(self, g, extra):
        m = len(extra)
        if g < m:
            return
        q = g // m
        counts = {0: g, **{u + 1: q + e for u, e in enumerate(extra)}}
        out = balance_downsample(task_for(counts), seed=0)
        n_imp = int(np.sum(out.train.user_ids != 0))
        assert abs(n_imp - g) < m

    def test_eval_sets_untouched_by_default(self):
        fm = user_matrix({0: 50, 1: 200, 2: 200})
        task = make_auth_task(fm, fm, fm, 0)
        out = balance_downsample(task, seed=0)
        assert out.val.n_rows == out.test.n_rows == 450
        out = balance_downsample(task, seed=0, balance_eval=True)
        assert out.val.n_rows == out.test.n_rows == 100


class TestMetrics:
    def test_example(self):
        m = metrics(ConfusionMatrix(tp=40, fp=10, fn=20, tn=30))
        assert m.accuracy == pytest.approx(0.70)
        assert m.precision == pytest.approx(0.80)
        assert m.recall == pytest.approx(2 / 3)
        assert m.f1 == pytest.approx(0.7273, abs=1e-4)

    def test_perfect(self):
        m = metrics(ConfusionMatrix(5, 0, 0, 7))
        assert m.accuracy == m.f1 == 1.0

    def test_no_true_positives(self):
        m = metrics(ConfusionMatrix(0, 3, 2, 5))
        assert m.precision == 0.0 and m.f1 == 0.0

    def test_from_labels(self):
        cm = ConfusionMatrix.from_labels([1, 1, 0, 0, 1], [1, 0, 1, 0, 1])
        assert cm.to_dict() == {"tp": 2, "fp": 1, "fn": 1, "tn": 1}

    def test_empty(self):
        with pytest.raises(DataError):
            metrics(ConfusionMatrix(0, 0, 0, 0))

    def test_summarize(self):
        s = summarize([0.9, 0.7, 0.8, 1.0])
        assert s == {"average": pytest.approx(0.85), "maximum": 1.0, "minimum": 0.7,
                     "median": pytest.approx(0.85), "std": pytest.approx(np.std([0.9, 0.7, 0.8, 1.0]))}
        assert summarize([1.0, 3.0], ddof=1)["std"] == pytest.approx(2 ** 0.5)


@pytest.fixture(scope="module")
def quick_report(small_features):
    settings = AuthSettings(extra_trees=ExtraTreesSpec(n_trees=20), families=("lda", "knn"),
                            seed=5)
    return run_authentication(small_features, settings)


class TestAuthentication:
    def test_report_shape(self, quick_report, small_features):
        assert quick_report["complete"] and quick_report["failures"] == []
        users = sorted(set(small_features.user_ids.tolist()))
        for fam in ("lda", "knn"):
            rows = quick_report["families"][fam]["users"]
            assert [r["user_id"] for r in rows] == users
            for r in rows:
                c = r["confusion"]
                assert c["tp"] + c["fp"] + c["fn"] + c["tn"] == r["n_test"]
                assert r["n_selected"] == len(r["selected_features"])

    def test_aggregates_recompute(self, quick_report):
        for fam, block in quick_report["families"].items():
            rows = block["users"]
            for m in AGGREGATE_METRICS:
                values = [r[m] for r in rows]
                agg = block["aggregate"][m]
                assert agg["average"] == math.fsum(values) / len(values)
                assert agg["std"] == pytest.approx(float(np.std(values)), rel=1e-12, abs=1e-15)
                assert agg["maximum"] == max(values) and agg["minimum"] == min(values)
                assert agg["median"] == float(np.median(values))
            assert aggregate_rows(rows) == block["aggregate"]

    def test_synthetic_users_are_separable(self, quick_report):
        assert quick_report["families"]["lda"]["aggregate"]["test_accuracy"]["average"] > 0.9

    def test_failure_is_reported_not_raised(self, small_features):
        settings = AuthSettings(extra_trees=ExtraTreesSpec(n_trees=5), families=("lda",),
                                threshold_candidates=(0.9,))
        report = run_authentication(small_features, settings)
        assert not report["complete"]
        assert len(report["failures"]) == 4
        f = report["failures"][0]
        assert f["stage"] == "authenticate" and f["user_id"] == 1
        assert "threshold" in f["hint"]
        assert report["families"]["lda"]["users"] == []

    def test_needs_two_users(self, small_features):
        one = small_features.take(small_features.user_ids == 1)
        with pytest.raises(DataError):
            run_authentication(one, AuthSettings())


class TestPilot:
    def test_chronological_split(self, small_features):
        train, test = pilot_split(small_features, 0.8)
        for u in np.unique(small_features.user_ids):
            tr = train.take(train.user_ids == u)
            te = test.take(test.user_ids == u)
            last_train = max(zip(tr.session_ids, tr.window_index))
            first_test = min(zip(te.session_ids, te.window_index))
            assert last_train < first_test
            n = tr.n_rows + te.n_rows
            assert tr.n_rows == round(0.8 * n)

    def test_shuffled_split_is_seeded(self, small_features):
        a = pilot_split(small_features, 0.8, chronological=False, seed=1)[1].window_index
        b = pilot_split(small_features, 0.8, chronological=False, seed=1)[1].window_index
        assert np.array_equal(a, b)

    def test_separable_users_give_diagonal_confusion(self):
        gen = np.random.default_rng(0)
        users = np.repeat([1, 2, 3], 50)
        values = gen.normal(size=(150, 4)) * 0.1 + 10.0 * np.eye(3, 4)[users - 1]
        fm = FeatureMatrix(values, users, np.ones(150), np.tile(np.arange(50), 3),
                           tuple("abcd"))
        for clf in ("lda", "svm"):
            out = run_pilot(fm, clf)
            conf = np.array(out["confusion"])
            assert out["accuracy"] == 1.0
            assert np.array_equal(conf, np.diag(np.diag(conf)))
            assert conf.sum() == out["n_test"] == 30

    def test_bad_options(self, small_features):
        with pytest.raises(ConfigError):
            run_pilot(small_features, "knn")
        with pytest.raises(ConfigError):
            pilot_split(small_features, 1.0)
