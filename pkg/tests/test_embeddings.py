import numpy as np
import pytest

from divrec.embeddings import (
    EmbeddingTable,
    SgConfig,
    _sgns_pair,
    build_vocab,
    init_vectors,
    lookup,
    sgns_objective,
    train_skipgram,
)
from divrec.errors import EmptyVocab, IndexOutOfRange, NonFiniteUpdate
from divrec.ingest import Catalog


def numeric_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def two_communities(n_seq=400, seed=0):
    rng = np.random.default_rng(seed)
    seqs = []
    for s in range(n_seq):
        base = 0 if s % 2 == 0 else 5
        seqs.append(list(base + rng.integers(0, 5, size=8)))
    return seqs


class TestVocab:
    def test_noise_distribution(self):
        counts, noise = build_vocab([[0] * 16 + [1] * 1])
        assert counts.tolist() == [16, 1]
        # 16**0.75 = 8, 1**0.75 = 1
        assert noise[0] == pytest.approx(8 / 9, abs=1e-12)
        assert noise[1] == pytest.approx(1 / 9, abs=1e-12)

    def test_min_count_zeroes_rare(self):
        _, noise = build_vocab([[0, 0, 1, 2, 2]], min_count=2)
        assert noise[1] == 0.0
        assert noise.sum() == pytest.approx(1.0, abs=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyVocab):
            build_vocab([[], []])
        with pytest.raises(EmptyVocab):
            build_vocab([[0, 1]], min_count=5)


class TestObjective:
    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        w, c, negs = rng.normal(size=8), rng.normal(size=8), rng.normal(size=(5, 8))
        _, gw, gc, gn = sgns_objective(w, c, negs)
        f = lambda: sgns_objective(w, c, negs)[0]
        for analytic, x in ((gw, w), (gc, c), (gn, negs)):
            num = numeric_grad(f, x)
            rel = np.linalg.norm(analytic - num) / max(np.linalg.norm(num), 1e-12)
            assert rel < 1e-4

    def test_kernel_step_is_gradient_step(self):
        rng = np.random.default_rng(1)
        W = rng.normal(size=(6, 4))
        C = rng.normal(size=(6, 4))
        negs = np.array([2, 3, 4], dtype=np.int64)
        _, gw, gc, gn = sgns_objective(W[0], C[1], C[negs])
        W2, C2 = W.copy(), C.copy()
        _sgns_pair(W2, C2, 0, 1, negs, 0.1, np.empty(4))
        np.testing.assert_allclose(W2[0], W[0] - 0.1 * gw, rtol=1e-12)
        np.testing.assert_allclose(C2[1], C[1] - 0.1 * gc, rtol=1e-12)
        np.testing.assert_allclose(C2[negs], C[negs] - 0.1 * gn, rtol=1e-12)

    def test_kernel_skips_negative_equal_to_context(self):
        W = np.full((3, 2), 0.3)
        C = np.full((3, 2), 0.2)
        a, b = W.copy(), C.copy()
        _sgns_pair(a, b, 0, 1, np.array([1, 1], dtype=np.int64), 0.1, np.empty(2))
        c, d = W.copy(), C.copy()
        _sgns_pair(c, d, 0, 1, np.array([], dtype=np.int64), 0.1, np.empty(2))
        np.testing.assert_array_equal(a, c)
        np.testing.assert_array_equal(b, d)


class TestTraining:
    def test_communities_separate(self):
        table = train_skipgram(two_communities(), SgConfig(dim=16, window=3, epochs=5, seed=0))
        v = table.vectors / np.linalg.norm(table.vectors, axis=1, keepdims=True)
        sim = v @ v.T
        same = np.mean([sim[i, j] for i in range(10) for j in range(10) if i != j and (i < 5) == (j < 5)])
        cross = np.mean([sim[i, j] for i in range(5) for j in range(5, 10)])
        assert same > cross + 0.2

    def test_bit_identical_under_seed(self):
        seqs = two_communities(100)
        a = train_skipgram(seqs, SgConfig(dim=8, seed=3))
        b = train_skipgram(seqs, SgConfig(dim=8, seed=3))
        assert a.vectors.tobytes() == b.vectors.tobytes()
        c = train_skipgram(seqs, SgConfig(dim=8, seed=4))
        assert a.vectors.tobytes() != c.vectors.tobytes()

    def test_zero_epochs_returns_init(self):
        table = train_skipgram([[0, 1, 2]], SgConfig(dim=8, epochs=0, seed=9))
        want = init_vectors(3, 8, np.random.default_rng(9))
        np.testing.assert_array_equal(table.vectors, want)

    def test_single_item_vocab(self):
        table = train_skipgram([[0, 0, 0], [0]], SgConfig(dim=4))
        assert table.vectors.shape == (1, 4)
        assert np.all(np.isfinite(table.vectors))

    def test_loss_decreases(self):
        _, losses = train_skipgram(two_communities(), SgConfig(dim=16, epochs=4), return_losses=True)
        assert losses[-1] < losses[0]

    def test_divergence_raises(self):
        with pytest.raises(NonFiniteUpdate):
            train_skipgram(two_communities(50), SgConfig(dim=8, learning_rate=1e38, epochs=3))

    def test_parallel_workers_run(self):
        table = train_skipgram(two_communities(50), SgConfig(dim=8, workers=2))
        assert np.all(np.isfinite(table.vectors))

    def test_below_min_count_keeps_init(self):
        seqs = [[0, 1, 0, 1, 0, 1, 2]]
        table = train_skipgram(seqs, SgConfig(dim=4, min_count=2, seed=2))
        init = init_vectors(3, 4, np.random.default_rng(2))
        np.testing.assert_array_equal(table.vectors[2], init[2])


class TestTable:
    table = EmbeddingTable(np.arange(12, dtype=np.float32).reshape(3, 4) / 7, Catalog(["a", "b", "c"]))

    def test_lookup(self):
        np.testing.assert_array_equal(lookup(self.table, 0), self.table.vectors[0])
        with pytest.raises(IndexOutOfRange):
            lookup(self.table, 3)
        with pytest.raises(IndexOutOfRange):
            lookup(self.table, -1)

    def test_text_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        t = EmbeddingTable(rng.normal(size=(20, 7)).astype(np.float32))
        t.save_text(tmp_path / "e.txt")
        back = EmbeddingTable.load_text(tmp_path / "e.txt")
        assert back.vectors.tobytes() == t.vectors.tobytes()

    def test_binary_round_trip(self, tmp_path):
        self.table.save_binary(tmp_path / "e.bin")
        back = EmbeddingTable.load_binary(tmp_path / "e.bin")
        assert back.vectors.tobytes() == self.table.vectors.tobytes()
        assert back.catalog == self.table.catalog

    def test_rejects_non_finite(self):
        with pytest.raises(NonFiniteUpdate):
            EmbeddingTable(np.array([[np.nan, 0.0]]))
