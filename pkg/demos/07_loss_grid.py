"""
The loss and sampling grid on synthetic data
============================================

Runs the seven loss/sampling rows over one shared dataset and prints the
accuracy/diversity trade-off.  The default below is a scaled-down world
that finishes in a few minutes; pass ``--full`` for 2,000 items and 5,000
users (roughly 15 minutes on one core).
"""

import dataclasses
import sys
import tempfile
from pathlib import Path

from divrec import pipeline
from divrec.embeddings import SgConfig
from divrec.session_model import TrainConfig
from divrec.synth import SynthConfig

full = "--full" in sys.argv
out = Path(tempfile.mkdtemp(prefix="divrec-grid-"))
base = pipeline.RunConfig(out_dir=out)
if not full:
    base = dataclasses.replace(
        base,
        synth=SynthConfig(n_items=600, n_users=1500, n_communities=10),
        sg=SgConfig(dim=32),
        train=TrainConfig(hidden_size=64),
    )
base = base.with_seed(0)

reports = pipeline.run_grid(pipeline.standard_grid(base))
base_row = reports["cosine"]
print(f"{'run':>20}  {'ndcg@10':>8} {'gini':>6} {'coverage':>8}   vs cosine: coverage / gini")
for name, r in reports.items():
    dc = r.coverage / base_row.coverage - 1
    dg = r.gini / base_row.gini - 1
    print(f"{name:>20}  {r.ndcg_at_10:8.4f} {r.gini:6.3f} {r.coverage:8.3f}   {dc:+7.1%} / {dg:+6.1%}")
print("artifacts in", out)
