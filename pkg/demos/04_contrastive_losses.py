"""
Three ways to score a prediction
================================

The model predicts a point in embedding space.  The plain cosine loss only
pulls it toward the purchased item; the weighted and cross-entropy losses
also push it away from other items bought in the same batch.
"""

import numpy as np

from divrec import contrastive
from divrec.contrastive import LossSpec, NegativeSet, SamplingSpec
from divrec.ingest import TrainingExample

target = np.array([1.0, 0.0])
neg = NegativeSet(np.array([1]), np.array([[0.6, 0.8]]))

# sweep the prediction around the circle and watch each loss
print(" angle   cosine  weighted  cross-entropy")
for deg in (0, 30, 53, 90, 180):
    z = np.array([np.cos(np.radians(deg)), np.sin(np.radians(deg))])
    row = [contrastive.loss_and_grad(LossSpec(k), z, target, neg)[0] for k in ("cosine", "weighted", "cross_entropy")]
    print(f"{deg:>6}  " + "  ".join(f"{v:8.3f}" for v in row))

# negatives come from the other labels in the batch, minus the user's own items
batch = [
    TrainingExample((2, 3), 0, "anna"),
    TrainingExample((0,), 1, "ben"),
    TrainingExample((4,), 2, "cleo"),
    TrainingExample((1,), 5, "dara"),
]
table = np.random.default_rng(0).normal(size=(6, 4))
rng = np.random.default_rng(0)
pool = contrastive.sample_in_batch(batch, 0, cap=100, table=table, rng=rng)
print("negatives for anna:", pool.indices.tolist(), "(item 2 is left out because anna viewed it)")
hard = contrastive.negatives_for(batch, 0, table[0], table, SamplingSpec("top_k", k=1), rng)
print("hardest single negative:", hard.indices.tolist())
