"""
Measuring how concentrated recommendations are
==============================================

NDCG rewards hitting the purchased item; Gini and coverage describe how
exposure spreads over the catalog.  A popularity recommender and a random
one sit at the two extremes.
"""

import numpy as np

from divrec import metrics

rng = np.random.default_rng(0)
n_items, n_users = 1000, 3000
pop = 1.0 / np.arange(1, n_items + 1) ** 1.1
pop /= pop.sum()
labels = rng.choice(n_items, size=n_users, p=pop).tolist()

top10 = list(range(10))
popular = metrics.RecommendationRun([top10] * n_users, labels, n_items)
randomised = metrics.RecommendationRun(
    [rng.choice(n_items, size=10, replace=False).tolist() for _ in range(n_users)], labels, n_items)

for name, run in (("most popular", popular), ("uniform random", randomised)):
    r = metrics.evaluate_run(run)
    print(f"{name:>15}: ndcg@10 {r.ndcg_at_10:.3f}  gini {r.gini:.3f}  coverage {r.coverage:.3f}")

# the purchase log itself has a long tail: count against rank is a line on log-log axes
report = metrics.rank_frequency_report(np.bincount(labels, minlength=n_items))
print("rank/count head:", report[:5])
print(f"log-log slope of purchases: {metrics.loglog_slope(report):.2f}")
