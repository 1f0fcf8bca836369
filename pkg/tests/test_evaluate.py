import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lungsound.dataset import LabeledDataset
from lungsound.evaluate import (
    METRICS,
    ExperimentResult,
    ExperimentSpec,
    FoldError,
    FoldResult,
    confusion,
    healthy_positive_metrics,
    kfold_split,
    load_result,
    pathology_metrics,
    run_experiment,
    stratified_holdout,
    ternary_metrics,
)
from lungsound.cnn_classifier import TrainConfig

TERNARY = ("chronic", "non-chronic", "healthy")

# Specificity of a ten-fold reference run, one value per fold
SPEC_ROW = [0.987730, 0.993865, 0.987730, 0.987730, 0.987730, 0.993865, 0.993865, 0.987730, 0.987730, 0.993865]


def tally(preds, truths, healthy):
    # per-sample recount of every metric, no confusion matrix involved
    diseased_n = diseased_ok = healthy_n = healthy_ok = pred_healthy = 0
    for p, t in zip(preds, truths):
        if t == healthy:
            healthy_n += 1
            healthy_ok += p == healthy
        else:
            diseased_n += 1
            diseased_ok += p == t
        pred_healthy += p == healthy
    div = lambda a, b: a / b if b else 0.0  # noqa: E731
    sens, spec, prec = div(diseased_ok, diseased_n), div(healthy_ok, healthy_n), div(healthy_ok, pred_healthy)
    f = 2 * prec * spec / (prec + spec) if prec + spec else 0.0
    return dict(sensitivity=sens, specificity=spec, score=(sens + spec) / 2, precision=prec, recall=spec, fscore=f)


def corpus_like(counts=(810, 75, 35), shape=(2, 2)):
    y = np.repeat(np.arange(len(counts)), counts)
    g = np.random.default_rng(0)
    return LabeledDataset(g.uniform(size=(len(y),) + shape), y, TERNARY, [f"r{i:04d}" for i in range(len(y))],
                          patient_ids=np.arange(len(y)), scheme="ternary")


def majority_stub(train_set, val_set, test_set, config, seed):
    return np.zeros(len(test_set), dtype=int)


def oracle_stub(train_set, val_set, test_set, config, seed):
    return test_set.y.copy()


class TestConfusion:
    def test_tally(self):
        np.testing.assert_array_equal(confusion([0, 2, 2], [0, 1, 2], 3), [[1, 0, 0], [0, 0, 1], [0, 0, 1]])

    def test_all_correct_and_empty(self):
        np.testing.assert_array_equal(confusion([0, 1, 2, 1], [0, 1, 2, 1], 3), np.diag([1, 2, 1]))
        assert not confusion([], [], 4).any()

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            confusion([3], [0], 3)
        with pytest.raises(ValueError):
            confusion([0, 1], [0], 3)


class TestMetrics:
    def test_hand_example(self):
        r = ternary_metrics([[9, 1, 0], [1, 8, 1], [1, 0, 4]])
        assert (r.sensitivity, r.specificity, r.score) == (0.85, 0.8, 0.825)
        assert r.precision == 0.8 and r.recall == 0.8 and r.fscore == pytest.approx(0.8, abs=1e-15)

    def test_perfect(self):
        assert set(ternary_metrics(np.diag([5, 4, 3])).as_dict().values()) == {1.0}
        assert set(pathology_metrics(np.diag([5, 4, 3, 2, 2, 1])).as_dict().values()) == {1.0}

    def test_reference_fold_one(self):
        # 341/347, 161/163 and 161/162
        r = ternary_metrics([[158, 3, 1], [2, 183, 0], [1, 1, 161]])
        assert round(r.sensitivity, 6) == 0.982709
        assert round(r.specificity, 6) == 0.987730
        assert round(r.precision, 6) == 0.993827
        assert round(r.fscore, 6) == 0.990769

    def test_sample_std_matches_reference(self):
        assert round(float(np.std(SPEC_ROW, ddof=1)), 6) == 0.003168
        assert round(float(np.std(SPEC_ROW, ddof=0)), 6) != 0.003168

    def test_single_healthy_miss(self):
        cm = np.diag([3, 2, 0, 1, 1, 1])
        cm[2, 0] = 1
        r = pathology_metrics(cm)
        assert (r.specificity, r.sensitivity, r.score) == (0.0, 1.0, 0.5)
        assert r.precision == 0.0 and r.fscore == 0.0

    def test_wrong_shape(self):
        with pytest.raises(ValueError):
            ternary_metrics(np.eye(6))
        with pytest.raises(ValueError):
            pathology_metrics(np.eye(3))

    @pytest.mark.parametrize("k, fn", [(3, ternary_metrics), (6, pathology_metrics)])
    def test_brute_force_oracle(self, k, fn):
        g = np.random.default_rng(123)
        for _ in range(100):
            n = int(g.integers(0, 60))
            t, p = g.integers(0, k, n), g.integers(0, k, n)
            got = fn(confusion(p, t, k)).as_dict()
            want = tally(p.tolist(), t.tolist(), 2)
            for m in METRICS:
                assert got[m] == pytest.approx(want[m], abs=1e-15), m

    @settings(max_examples=200)
    @given(st.lists(st.integers(0, 50), min_size=9, max_size=9))
    def test_identities(self, cells):
        r = ternary_metrics(np.array(cells).reshape(3, 3))
        assert r.score == (r.sensitivity + r.specificity) / 2
        assert r.recall == r.specificity
        p, q = r.precision, r.recall
        assert r.fscore == pytest.approx(2 * p * q / (p + q) if p + q else 0.0, abs=1e-15)
        assert all(0.0 <= v <= 1.0 for v in r.as_dict().values())


class TestFolds:
    def test_equal_sizes(self, rng):
        folds = kfold_split(np.zeros(100, int), 10, rng, stratified=False)
        assert [len(f) for f in folds] == [10] * 10

    @settings(max_examples=60)
    @given(st.integers(2, 12), st.lists(st.integers(0, 3), min_size=12, max_size=80), st.booleans(), st.integers(0, 2**32 - 1))
    def test_partition(self, k, labels, stratified, seed):
        folds = kfold_split(labels, k, np.random.default_rng(seed), stratified)
        assert sorted(np.concatenate(folds).tolist()) == list(range(len(labels)))

    @settings(max_examples=40)
    @given(st.integers(2, 10), st.lists(st.integers(0, 3), min_size=20, max_size=80), st.integers(0, 2**32 - 1))
    def test_stratified_within_one(self, k, labels, seed):
        labels = np.array(labels)
        folds = kfold_split(labels, k, np.random.default_rng(seed))
        for c in np.unique(labels):
            share = (labels == c).sum() / k
            for f in folds:
                assert abs((labels[f] == c).sum() - share) < 1

    def test_corpus_healthy_per_fold(self, rng):
        labels = np.repeat([0, 1, 2], [810, 75, 35])
        assert {int((labels[f] == 2).sum()) for f in kfold_split(labels, 10, rng)} == {3, 4}

    def test_groups_kept_together(self, rng):
        groups = np.repeat(np.arange(12), 3)
        folds = kfold_split(np.zeros(36, int), 4, rng, groups=groups)
        seen = [set(groups[f]) for f in folds]
        assert all(not (a & b) for i, a in enumerate(seen) for b in seen[i + 1 :])

    def test_too_many_folds(self, rng):
        with pytest.raises(ValueError):
            kfold_split(np.zeros(5, int), 6, rng)
        with pytest.raises(ValueError):
            kfold_split(np.zeros(5, int), 1, rng)

    def test_holdout(self, rng):
        labels = np.repeat([0, 1, 2], [50, 20, 3])
        keep, held = stratified_holdout(labels, 0.1, rng)
        assert np.bincount(labels[held], minlength=3).tolist() == [5, 2, 0]
        assert sorted(np.r_[keep, held].tolist()) == list(range(73))


class TestExperiment:
    def test_majority_stub(self):
        ds = corpus_like()
        res = run_experiment(ds, ExperimentSpec("unbalanced"), majority_stub)
        assert len(res.folds) == 10
        for f in res.folds:
            row = f.confusion.sum(axis=1)
            assert f.metrics.specificity == 0.0 and f.metrics.precision == 0.0 and f.metrics.fscore == 0.0
            assert f.metrics.sensitivity == row[0] / (row[0] + row[1])
        assert res.mean["sensitivity"] == pytest.approx(810 / 885, abs=2e-3)

    def test_unbalanced_and_weighted_share_splits(self):
        ds = corpus_like((40, 12, 8))
        seen = {}

        def record(tag):
            def fit(train_set, val_set, test_set, config, seed):
                seen.setdefault(tag, []).append((tuple(test_set.source_ids), tuple(train_set.source_ids), config.class_weights))
                return test_set.y.copy()
            return fit

        run_experiment(ds, ExperimentSpec("unbalanced", k=4), record("u"))
        run_experiment(ds, ExperimentSpec("weighted", k=4), record("w"))
        assert [s[:2] for s in seen["u"]] == [s[:2] for s in seen["w"]]
        assert all(s[2] is None for s in seen["u"]) and all(s[2] is not None for s in seen["w"])

    @pytest.mark.parametrize("configuration", ["smote", "adasyn"])
    def test_leakage_guard(self, configuration):
        ds = corpus_like((40, 12, 8))
        spec = ExperimentSpec(configuration, k=4, targets={"chronic": 40, "non-chronic": 40, "healthy": 40})
        res = run_experiment(ds, spec, oracle_stub)
        for f in res.folds:
            assert f.leakage_free and f.n_synthetic > 0

    def test_balance_first_protocol_can_leak(self):
        ds = corpus_like((40, 12, 8))
        spec = ExperimentSpec("smote", k=4, protocol="paper", targets={"chronic": 40, "non-chronic": 40, "healthy": 40})
        res = run_experiment(ds, spec, oracle_stub)
        assert sum(f.n_test for f in res.folds) == 120
        assert not all(f.leakage_free for f in res.folds)

    def test_in_fold_targets_scaled(self):
        ds = corpus_like()
        counts = []

        def fit(train_set, val_set, test_set, config, seed):
            counts.append(train_set.counts())
            return test_set.y.copy()

        run_experiment(ds, ExperimentSpec("smote", k=10), fit)
        # training portions (~656 chronic) grow minority classes by the full-set factors
        for c in counts:
            ratio_nc = c["non-chronic"] / c["chronic"]
            assert ratio_nc == pytest.approx(900 / 810, rel=0.02)

    def test_holdout_split(self):
        ds = corpus_like((40, 12, 8))
        res = run_experiment(ds, ExperimentSpec("unbalanced", holdout=0.2), oracle_stub)
        assert res.split == "holdout 0.2" and len(res.folds) == 1
        assert res.folds[0].confusion.sum(axis=1).tolist() == [8, 2, 2]
        assert res.to_dict()["split"] == "holdout 0.2" and res.std["score"] == 0.0
        assert run_experiment(ds, ExperimentSpec("unbalanced", k=4), oracle_stub).split == "4-fold"

    def test_fold_error_names_fold(self):
        def boom(train_set, val_set, test_set, config, seed):
            raise ValueError("bad")

        with pytest.raises(FoldError, match="fold 1: ValueError: bad"):
            run_experiment(corpus_like((20, 10, 10)), ExperimentSpec("unbalanced", k=2), boom)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            ExperimentSpec("tomek")
        with pytest.raises(ValueError):
            ExperimentSpec(protocol="shuffle")
        with pytest.raises(ValueError):
            ExperimentSpec(protocol="paper", patient_disjoint=True)
        with pytest.raises(ValueError):
            ExperimentSpec(holdout=1.0)
        with pytest.raises(ValueError):
            ExperimentSpec(holdout=0.2, patient_disjoint=True)

    def test_result_file(self, tmp_path):
        res = run_experiment(corpus_like((20, 10, 10)), ExperimentSpec("unbalanced", k=3), oracle_stub)
        path = res.write(tmp_path)
        data = load_result(path)
        assert {"configuration", "scheme", "seed", "folds", "mean", "std", "protocol"} <= set(data)
        assert data["std_kind"] == "sample (n-1)" and data["mean"]["score"] == 1.0
        grids = [np.loadtxt(tmp_path / f"confusion_fold_{i:02d}.csv", delimiter=",", dtype=int) for i in (1, 2, 3)]
        assert sum(g.sum(axis=1) for g in grids).tolist() == [20, 10, 10]
        assert json.loads(res.to_json()) == data

    def test_std_is_sample(self):
        folds = [FoldResult(i, ternary_metrics(np.diag([1, 1, 1])), np.eye(3), 1.0, 3, 0, 3, True) for i in range(3)]
        folds[0] = FoldResult(0, healthy_positive_metrics(np.array([[1, 0, 0], [0, 1, 0], [1, 0, 0]]), 2), np.eye(3), 0.0, 3, 0, 3, True)
        res = ExperimentResult("unbalanced", "ternary", 0, "default", TERNARY, folds)
        assert res.std["specificity"] == pytest.approx(np.std([0, 1, 1], ddof=1))
        assert "Mean" in res.table().splitlines()[0] and len(res.table().splitlines()) == 7

    def test_cnn_smoke(self):
        from lungsound.toy import toy_spectrograms

        ds = toy_spectrograms([6, 6, 6], rows=8, cols=10, classes=TERNARY)
        spec = ExperimentSpec("unbalanced", k=3, train=TrainConfig(epochs=2))
        res = run_experiment(ds, spec)
        assert len(res.folds) == 3 and all(f.confusion.sum() == 6 for f in res.folds)
