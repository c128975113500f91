"""
From raw events to training examples
====================================

A synthetic shop log is generated, written as CSV, parsed back, split in
time, and turned into (view sequence -> add-to-cart) examples.
"""

import tempfile
from pathlib import Path

from divrec import ingest, synth

# a small world: 300 items in 6 taste communities, 500 shoppers
config = synth.SynthConfig(n_items=300, n_users=500, n_communities=6, seed=0)
events = synth.generate(config)
print(len(events), "events;", sum(e.event_type is ingest.EventType.AddToCart for e in events), "add-to-carts")

# round trip through the CSV layout the parser expects
path = Path(tempfile.mkdtemp()) / "events.csv"
ingest.write_events_csv(path, events)
parsed = ingest.read_events(path)
print("malformed rows:", parsed.n_malformed)

# the older half of the log trains item vectors, the newer half the session model
embed, model = ingest.chronological_split(parsed.records, ingest.SplitSpec(w2v_fraction=0.5))
print("embedding part ends at", embed[-1].timestamp, "model part starts at", model[0].timestamp)

# the catalog is whatever was viewed in the embedding part
catalog = ingest.build_catalog(ingest.view_sequences(embed))
examples = ingest.build_examples(model, catalog)
train, held_out = ingest.split_by_user(examples, 0.8, seed=0)
print(len(catalog), "items,", len(train), "train /", len(held_out), "eval examples")

ex = train[0]
print("example:", [catalog.item(i) for i in ex.input_seq], "->", catalog.item(ex.label))
