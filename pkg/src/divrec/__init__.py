"""Diversity-aware sequential recommendation with contrastive training.

Pipeline: item embeddings from view sequences, an LSTM that predicts the
embedding of the next add-to-cart item, and nearest-neighbour retrieval
over the embedding table.  The session model can be trained with a plain
cosine loss or with contrastive losses over in-batch negatives.
"""

from .ann import RpForest, exact_query, query
from .contrastive import LossSpec, SamplingSpec
from .embeddings import EmbeddingTable, SgConfig, train_skipgram
from .ingest import Catalog, EventRecord, EventType, SplitSpec, TrainingExample
from .metrics import EvalReport, coverage, gini, ndcg_at_10
from .session_model import ModelParams, TrainConfig
from .synth import SynthConfig

__version__ = "0.1.0"
