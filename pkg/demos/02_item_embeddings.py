"""
Item vectors from co-viewing
============================

Skip-gram with negative sampling treats each user's view sequence as a
sentence.  Items viewed by the same community should end up close together.
"""

import numpy as np

from divrec import embeddings, ingest, synth

events, world = synth.generate(synth.SynthConfig(n_items=400, n_users=1500, n_communities=8, seed=1),
                               return_world=True)
seqs = ingest.view_sequences(events)
catalog = ingest.build_catalog(seqs)
index_seqs = [[catalog.index(s) for s in q] for q in seqs]

table, losses = embeddings.train_skipgram(index_seqs, embeddings.SgConfig(dim=32, epochs=5, seed=0),
                                          catalog=catalog, return_losses=True)
print("mean pair loss per epoch:", np.round(losses, 3))

# cosine similarity within and across the hidden communities
unit = table.vectors / np.linalg.norm(table.vectors, axis=1, keepdims=True)
comm = np.array([world.community_of_item[int(name[4:])] for name in catalog.items])
sim = unit @ unit.T
same = comm[:, None] == comm[None, :]
np.fill_diagonal(same, False)
cross = comm[:, None] != comm[None, :]
print(f"mean cosine, same community:  {sim[same].mean():.3f}")
print(f"mean cosine, other community: {sim[cross].mean():.3f}")
