import numpy as np
import pytest

from divrec import ann
from divrec.ann import RpForest, build, exact_query, query
from divrec.errors import ZeroVector


def points(n, d=32, seed=0):
    return np.random.default_rng(seed).normal(size=(n, d))


def brute_force(mat, q, top_n):
    # independent oracle: plain python sort on (-cosine, index)
    u = mat / np.linalg.norm(mat, axis=1, keepdims=True)
    qn = q / np.linalg.norm(q)
    sims = [(-float(u[i] @ qn), i) for i in range(len(mat))]
    return [i for _, i in sorted(sims)[:top_n]]


def mean_recall(forest, mat, queries, top_n=10, **kw):
    hits = 0
    for q in queries:
        got = set(query(forest, q, top_n, **kw).items.tolist())
        hits += len(got & set(exact_query(mat, q, top_n).items.tolist()))
    return hits / (top_n * len(queries))


class TestExact:
    def test_matches_oracle(self):
        mat = points(200, 8)
        for q in points(20, 8, seed=1):
            assert exact_query(mat, q, 10).items.tolist() == brute_force(mat, q, 10)

    def test_two_items(self):
        mat = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert exact_query(mat, [0.9, 0.1], 2).items.tolist() == [0, 1]
        assert exact_query(mat, [0.1, 0.9], 2).items.tolist() == [1, 0]

    def test_duplicates_lower_index_first(self):
        mat = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        assert exact_query(mat, [1.0, 0.0], 3).items.tolist() == [1, 2, 3]

    def test_exclude(self):
        mat = points(30, 4)
        q = mat[3]
        res = exact_query(mat, q, 5, exclude=[3])
        assert 3 not in res.items.tolist() and len(res) == 5

    def test_zero_query(self):
        with pytest.raises(ZeroVector):
            exact_query(points(5, 4), np.zeros(4))


class TestBuild:
    def test_small_catalog_is_single_leaf(self):
        forest = build(points(20, 8), n_trees=4, leaf_size=32)
        for t in range(forest.n_trees):
            leaves = forest.tree_leaves(t)
            assert len(leaves) == 1 and sorted(leaves[0].tolist()) == list(range(20))

    def test_coverage_audit(self):
        forest = build(points(1000), n_trees=16, leaf_size=32, seed=0)
        for t in range(16):
            leaves = forest.tree_leaves(t)
            counts = np.bincount(np.concatenate(leaves), minlength=1000)
            assert np.all(counts == 1)
            assert max(len(l) for l in leaves) <= 32

    def test_bit_identical_under_seed(self):
        mat = points(300, 16)
        assert build(mat, 8, 10, seed=3).to_bytes() == build(mat, 8, 10, seed=3).to_bytes()
        assert build(mat, 8, 10, seed=3).to_bytes() != build(mat, 8, 10, seed=4).to_bytes()

    def test_duplicate_heavy_catalog(self):
        mat = np.repeat(points(3, 4), 40, axis=0)
        forest = build(mat, n_trees=3, leaf_size=5)
        for t in range(3):
            assert sorted(np.concatenate(forest.tree_leaves(t)).tolist()) == list(range(120))

    def test_serialisation_round_trip(self, tmp_path):
        forest = build(points(400, 8), 5, 16, seed=1)
        forest.save(tmp_path / "f.bin")
        back = RpForest.load(tmp_path / "f.bin")
        assert back.to_bytes() == forest.to_bytes()
        q = points(1, 8, seed=9)[0]
        assert query(back, q, 10) == query(forest, q, 10)


class TestQuery:
    mat = points(2000)
    forest = build(mat, n_trees=16, leaf_size=32, seed=0)

    def test_self_retrieval(self):
        for i in (0, 17, 1999):
            assert query(self.forest, self.mat[i], 10).items[0] == i

    def test_unlimited_budget_is_exact(self):
        for q in points(20, seed=2):
            assert query(self.forest, q, 10, search_budget=2000) == exact_query(self.mat, q, 10)

    def test_recall(self):
        assert mean_recall(self.forest, self.mat, points(100, seed=3)) >= 0.9

    def test_recall_grows_with_budget(self):
        qs = points(60, seed=4)
        r = [mean_recall(self.forest, self.mat, qs, search_budget=b) for b in (40, 160, 640, 2000)]
        assert all(b >= a for a, b in zip(r, r[1:]))
        assert r[-1] == 1.0

    def test_recall_grows_with_trees(self):
        qs = points(60, seed=5)
        r = [mean_recall(build(self.mat, n, 32, seed=0), self.mat, qs, search_budget=320) for n in (1, 4, 16)]
        assert r[0] < r[1] < r[2]

    def test_exclude_and_top_n(self):
        res = query(self.forest, self.mat[5], 7, exclude=[5, 6])
        assert len(res) == 7 and not {5, 6} & set(res.items.tolist())
        with pytest.raises(ValueError):
            query(self.forest, self.mat[5], 0)

    def test_default_budget(self):
        assert self.forest.default_budget(10) == 16 * 10 * 4


def test_small_catalogs_exhaustive():
    rng = np.random.default_rng(7)
    for n in (1, 2, 3, 10, 33, 100, 500):
        mat = rng.normal(size=(n, 6))
        forest = ann.build(mat, n_trees=4, leaf_size=8, seed=n)
        for q in rng.normal(size=(5, 6)):
            assert query(forest, q, 10, search_budget=n) == exact_query(mat, q, 10)
