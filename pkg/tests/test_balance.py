import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lungsound.balance import (
    DEFAULT_TARGETS,
    REFERENCE_COUNTS,
    OversamplePlan,
    adasyn,
    adasyn_ratios,
    apply_plan,
    class_weights,
    largest_remainder,
    nearest_neighbors,
    scale_targets,
    smote,
    uniform_targets,
)
from lungsound.toy import toy_spectrograms
from lungsound.vae_augment import VaeTrainConfig

TERNARY_CLASSES = ("chronic", "non-chronic", "healthy")
SIX_CLASSES = ("COPD", "pneumonia", "healthy", "URTI", "bronchiectasis", "bronchiolitis")


def standin(counts, classes, rows=8, cols=8, seed=0, scheme="ternary"):
    ds = toy_spectrograms(counts, rows=rows, cols=cols, seed=seed, classes=classes)
    ds.scheme = scheme
    return ds


def replay(minority, syn):
    x = minority[syn.base].astype(np.float64)
    return x + syn.lam[:, None] * (minority[syn.neighbor].astype(np.float64) - x)


class TestClassWeights:
    def test_corpus_counts(self):
        w = class_weights({"chronic": 810, "non-chronic": 75, "healthy": 35})
        assert w == {"chronic": 920 / (3 * 810), "non-chronic": 920 / (3 * 75), "healthy": 920 / (3 * 35)}
        assert [round(v, 4) for v in w.values()] == [0.3786, 4.0889, 8.7619]

    def test_equal_and_single(self):
        assert class_weights({"a": 7, "b": 7}) == {"a": 1.0, "b": 1.0}
        assert class_weights({"a": 12}) == {"a": 1.0}

    def test_empty_class(self):
        with pytest.raises(ValueError, match="empty"):
            class_weights({"a": 3, "b": 0})

    @given(st.lists(st.integers(1, 1000), min_size=2, max_size=6, unique=True))
    def test_extremes(self, counts):
        w = class_weights(dict(enumerate(counts)))
        assert min(w, key=w.get) == int(np.argmax(counts))
        assert max(w, key=w.get) == int(np.argmin(counts))
        assert all(v > 0 for v in w.values())


class TestSmote:
    def test_segment_geometry(self, rng):
        syn = smote(np.array([[0.0, 0.0], [1.0, 1.0]]), 50, 1, rng)
        assert np.all(syn.rows[:, 0] == syn.rows[:, 1])
        assert np.all((syn.rows >= 0) & (syn.rows <= 1))

    def test_zero_new(self, rng):
        assert len(smote(np.eye(3), 0, 2, rng)) == 0

    def test_needs_two_rows(self, rng):
        with pytest.raises(ValueError):
            smote(np.zeros((1, 3)), 4, 5, rng)

    def test_replays_from_trace(self, rng):
        pts = rng.normal(size=(50, 10))
        syn = smote(pts, 200, 5, rng)
        np.testing.assert_allclose(syn.rows, replay(pts, syn), atol=1e-6)
        nn = nearest_neighbors(pts, 5)
        assert all(n in nn[b] for b, n in zip(syn.base, syn.neighbor))
        assert np.all((syn.lam >= 0) & (syn.lam <= 1))

    def test_neighbors_brute_force(self, rng):
        pts = rng.normal(size=(12, 3))
        nn = nearest_neighbors(pts, 4)
        for i in range(12):
            d = [(np.sum((pts[i] - pts[j]) ** 2), j) for j in range(12) if j != i]
            assert list(nn[i]) == [j for _, j in sorted(d)[:4]]

    def test_k_capped_at_class_size(self, rng):
        syn = smote(rng.normal(size=(3, 2)), 10, 5, rng)
        assert len(syn) == 10

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 5)), elements=st.floats(-100, 100)), st.integers(0, 30), st.integers(0, 2**32 - 1))
    def test_inside_bounding_box(self, pts, n_new, seed):
        syn = smote(pts, n_new, 5, np.random.default_rng(seed))
        assert len(syn) == n_new
        tol = 1e-9 * (1 + np.abs(pts).max())
        assert np.all(syn.rows >= pts.min(axis=0) - tol) and np.all(syn.rows <= pts.max(axis=0) + tol)


class TestAdasyn:
    def test_only_exposed_point_generates(self, rng):
        # A=(0,0) has majority points as its nearest neighbor, B=(1,1) has A
        X = np.array([[0.0, 0.0], [1.0, 1.0], [-0.5, 0.0], [0.0, -0.5]])
        y = np.array([1, 1, 0, 0])
        np.testing.assert_array_equal(adasyn_ratios(X, y, 1, 1), [1.0, 0.0])
        syn = adasyn(X, y, 1, 9, 1, rng)
        assert np.all(syn.base == 0) and len(syn) == 9

    def test_uniform_fallback(self, rng):
        X = np.array([[0.0], [0.1], [0.2], [0.3], [10.0], [10.1]])
        y = np.array([1, 1, 1, 1, 0, 0])
        assert adasyn_ratios(X, y, 1, 2).sum() == 0
        syn = adasyn(X, y, 1, 8, 2, rng)
        assert np.bincount(syn.base, minlength=4).tolist() == [2, 2, 2, 2]

    def test_replays_from_trace(self, rng):
        X = rng.normal(size=(80, 10))
        y = (rng.random(80) < 0.2).astype(int)
        y[:3] = 1
        syn = adasyn(X, y, 1, 120, 5, rng)
        np.testing.assert_allclose(syn.rows, replay(X[y == 1], syn), atol=1e-6)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 200), st.integers(1, 7))
    def test_allocation_sums_exactly(self, seed, n_new, k):
        g = np.random.default_rng(seed)
        X = g.normal(size=(30, 4))
        y = np.r_[np.ones(6, int), np.zeros(24, int)]
        syn = adasyn(X, y, 1, n_new, k, g)
        assert len(syn) == n_new

    @given(st.lists(st.floats(0, 10), min_size=1, max_size=20).filter(lambda w: sum(w) > 0), st.integers(0, 10_000))
    def test_largest_remainder(self, w, total):
        alloc = largest_remainder(w, total)
        assert alloc.sum() == total and np.all(alloc >= 0)
        quota = np.array(w) / sum(w) * total
        assert np.all(np.abs(alloc - quota) < 1 + 1e-9)


class TestTargets:
    def test_ternary_defaults(self):
        assert DEFAULT_TARGETS["ternary"] == {"chronic": 810, "non-chronic": 900, "healthy": 840}

    def test_six_class_defaults(self):
        t = DEFAULT_TARGETS["six"]
        assert sum(t.values()) == 4874
        assert t == {"COPD": 793, "pneumonia": 817, "healthy": 816, "URTI": 816, "bronchiectasis": 816, "bronchiolitis": 816}

    def test_uniform_targets_too_small(self):
        with pytest.raises(ValueError):
            uniform_targets({"a": 10, "b": 50}, 40, keep="a")

    def test_scale_targets(self):
        ref = REFERENCE_COUNTS["ternary"]
        got = scale_targets(DEFAULT_TARGETS["ternary"], ref, {"chronic": 583, "non-chronic": 54, "healthy": 25})
        # growth factors 1, 12 and 24 carried over
        assert got == {"chronic": 583, "non-chronic": 648, "healthy": 600}


class TestApplyPlan:
    @pytest.mark.parametrize("method", ["smote", "adasyn"])
    def test_ternary_targets(self, method):
        ds = standin([810, 75, 35], TERNARY_CLASSES)
        out = apply_plan(ds, OversamplePlan(method, DEFAULT_TARGETS["ternary"], 5, seed=1))
        assert out.counts() == {"chronic": 810, "non-chronic": 900, "healthy": 840}
        assert out.synthetic.sum() == len(out) - 920

    def test_vae_ternary_targets(self):
        ds = standin([810, 75, 35], TERNARY_CLASSES)
        cfg = VaeTrainConfig(epochs=1, latent_dim=4, hidden=16, batch_size=64)
        out = apply_plan(ds, OversamplePlan("vae", DEFAULT_TARGETS["ternary"], seed=1), cfg)
        assert out.counts() == {"chronic": 810, "non-chronic": 900, "healthy": 840}
        assert np.all((out.X >= 0) & (out.X <= 1))

    def test_six_class_total(self):
        ds = standin([793, 37, 35, 23, 16, 13], SIX_CLASSES, scheme="six")
        out = apply_plan(ds, OversamplePlan("smote", DEFAULT_TARGETS["six"], seed=2))
        assert len(out) == 4874 and out.counts() == DEFAULT_TARGETS["six"]

    def test_none_and_weights_are_identity(self):
        ds = standin([5, 3, 2], TERNARY_CLASSES)
        for m in ("none", "weights"):
            assert apply_plan(ds, OversamplePlan(m, {"chronic": 50})) is ds

    def test_targets_equal_counts(self):
        ds = standin([5, 3, 2], TERNARY_CLASSES)
        out = apply_plan(ds, OversamplePlan("smote", ds.counts()))
        assert len(out) == len(ds) and not out.synthetic.any()

    def test_target_below_count(self):
        ds = standin([5, 3, 2], TERNARY_CLASSES)
        with pytest.raises(ValueError, match="below"):
            apply_plan(ds, OversamplePlan("smote", {"chronic": 2}))

    def test_originals_kept_and_provenance(self):
        ds = standin([9, 4, 3], TERNARY_CLASSES)
        out = apply_plan(ds, OversamplePlan("adasyn", {"non-chronic": 10, "healthy": 9}, 3, seed=4))
        assert out.X[: len(ds)].tobytes() == ds.X.tobytes()
        assert out.source_ids[: len(ds)] == ds.source_ids
        for i in np.flatnonzero(out.synthetic):
            label = out.y[i]
            assert all(ds.y[ds.source_ids.index(p)] == label for p in out.parents[i])

    def test_seed_determinism(self):
        ds = standin([9, 4, 3], TERNARY_CLASSES)
        plan = OversamplePlan("smote", {"non-chronic": 10, "healthy": 9}, 3, seed=4)
        assert apply_plan(ds, plan).X.tobytes() == apply_plan(ds, plan).X.tobytes()

    def test_synthetics_inside_class_hull(self):
        ds = standin([9, 6, 4], TERNARY_CLASSES, seed=3)
        out = apply_plan(ds, OversamplePlan("smote", {"non-chronic": 20, "healthy": 20}, seed=0))
        for c in range(3):
            orig = ds.X[ds.y == c]
            syn = out.X[(out.y == c) & out.synthetic]
            if len(syn):
                assert np.all(syn >= orig.min(axis=0) - 1e-6) and np.all(syn <= orig.max(axis=0) + 1e-6)

    def test_unknown_method(self):
        with pytest.raises(ValueError, match="unknown method"):
            OversamplePlan("tomek")
