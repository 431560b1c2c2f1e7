import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rabot.augment import AugmentError, knn_minority, synthesize


def brute_knn(emb, labels, i, k, train):
    cands = [j for j in train if labels[j] == labels[i] and j != i]
    dists = []
    for j in cands:
        s = 0.0
        for a, b in zip(emb[i], emb[j]):
            s += (a - b) ** 2
        dists.append((np.sqrt(s), j))
    return [j for _, j in sorted(dists)[:k]]


class TestKnn:
    def test_one_dimensional(self):
        emb = np.array([[0.0], [1.0], [10.0]])
        assert knn_minority(emb, np.array([1, 1, 1]), 0, 1) == [1]

    def test_tie_goes_to_lower_id(self):
        emb = np.array([[0.0], [5.0], [-1.0], [1.0]])
        assert knn_minority(emb, np.ones(4, dtype=int), 0, 2) == [2, 3]

    def test_excludes_other_class_and_non_train(self):
        emb = np.array([[0.0], [0.1], [0.2], [3.0], [4.0]])
        labels = np.array([1, 0, 1, 1, 1])
        assert knn_minority(emb, labels, 0, 2, train_nodes=[0, 1, 3, 4]) == [3, 4]

    @pytest.mark.parametrize("seed", range(3))
    def test_brute_force_oracle(self, seed):
        rng = np.random.default_rng(seed)
        emb = rng.normal(size=(50, 4))
        emb[7] = emb[3]  # force an exact distance tie somewhere
        labels = np.ones(50, dtype=int)
        for i in range(50):
            assert knn_minority(emb, labels, i, 5) == brute_knn(emb, labels, i, 5, range(50))

    def test_k_too_large(self):
        with pytest.raises(AugmentError, match="smaller k"):
            knn_minority(np.zeros((3, 1)), np.ones(3, dtype=int), 0, 3)


class TestSynthesize:
    def test_balanced_input_adds_nothing(self, rng):
        batch = synthesize(rng.normal(size=(6, 2)), np.array([0, 1, 0, 1, 0, 1]), 5, rng)
        assert batch.synthetic == []

    def test_ten_versus_four(self, rng):
        labels = np.array([0] * 10 + [1] * 4)
        batch = synthesize(rng.normal(size=(14, 3)), labels, 3, rng)
        assert len(batch.synthetic) == 6
        assert batch.class_counts == {0: 10, 1: 10}

    def test_on_segment(self, rng):
        emb = rng.normal(size=(30, 5))
        labels = (np.arange(30) < 8).astype(int)
        batch = synthesize(emb, labels, 3, rng)
        for s in batch.synthetic:
            i, x = s.parents
            assert np.array_equal(s.embedding, (1 - s.delta) * emb[i] + s.delta * emb[x])
            lo, hi = np.minimum(emb[i], emb[x]), np.maximum(emb[i], emb[x])
            assert np.all(lo - 1e-15 <= s.embedding) and np.all(s.embedding <= hi + 1e-15)
            assert x in knn_minority(emb, labels, i, 3)

    def test_round_robin_parents(self, rng):
        emb = rng.normal(size=(12, 2))
        labels = np.array([1, 0, 1, 0, 1, 0, 0, 0, 0, 0, 0, 0])
        batch = synthesize(emb, labels, 2, rng)
        assert [s.parents[0] for s in batch.synthetic] == [0, 2, 4, 0, 2, 4]

    def test_delta_zero_duplicates_parent(self, rng):
        emb = rng.normal(size=(10, 3))
        labels = (np.arange(10) < 3).astype(int)
        batch = synthesize(emb, labels, 2, rng, delta_override=0.0)
        for s in batch.synthetic:
            assert np.array_equal(s.embedding, emb[s.parents[0]])

    def test_only_train_nodes_count(self, rng):
        labels = np.array([1, 1, 1, 0, 0, 0, 0, 0, 1, 1])
        batch = synthesize(rng.normal(size=(10, 2)), labels, 2, rng, train_nodes=np.arange(8))
        assert len(batch.synthetic) == 2
        assert all(s.parents[1] < 8 for s in batch.synthetic)

    def test_single_class_rejected(self, rng):
        with pytest.raises(AugmentError, match="single class"):
            synthesize(rng.normal(size=(4, 2)), np.zeros(4, dtype=int), 1, rng)

    def test_too_few_minority(self, rng):
        with pytest.raises(AugmentError, match="k\\+1"):
            synthesize(rng.normal(size=(8, 2)), np.array([1, 1, 1, 0, 0, 0, 0, 0]), 3, rng)
        with pytest.raises(AugmentError, match="at least 2"):
            synthesize(rng.normal(size=(5, 2)), np.array([1, 0, 0, 0, 0]), 1, rng)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(5, 40), st.integers(2, 30), st.integers(1, 4), st.integers(0, 2**31))
    def test_always_balances(self, n_major, n_minor, k, seed):
        if n_minor < k + 1:
            n_minor = k + 1
        rng = np.random.default_rng(seed)
        labels = np.array([0] * n_major + [1] * n_minor)
        rng.shuffle(labels)
        batch = synthesize(rng.normal(size=(len(labels), 3)), labels, k, rng)
        counts = batch.class_counts
        assert counts[0] == counts[1] == max(n_major, n_minor)
