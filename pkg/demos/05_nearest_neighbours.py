"""
Approximate retrieval with a random-projection forest
=====================================================

The search budget trades accuracy for speed; with a budget as large as the
catalog the forest returns exactly what a full scan would.
"""

import time

import numpy as np

from divrec import ann

rng = np.random.default_rng(0)
items = rng.normal(size=(5000, 32))
queries = rng.normal(size=(200, 32))

t0 = time.perf_counter()
forest = ann.build(items, n_trees=16, leaf_size=32, seed=0)
print(f"built {forest.n_trees} trees in {time.perf_counter() - t0:.1f}s")

exact = [set(ann.exact_query(items, q, 10).items.tolist()) for q in queries]
for budget in (40, 160, 640, 2560, 5000):
    t0 = time.perf_counter()
    got = [set(ann.query(forest, q, 10, search_budget=budget).items.tolist()) for q in queries]
    ms = 1000 * (time.perf_counter() - t0) / len(queries)
    recall = np.mean([len(g & e) / 10 for g, e in zip(got, exact)])
    print(f"budget {budget:>5}: recall@10 {recall:.3f}, {ms:.2f} ms/query")
