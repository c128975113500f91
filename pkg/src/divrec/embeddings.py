"""Static item embeddings from view sequences (skip-gram with negative sampling).

The trainer follows the classic word2vec recipe applied to item ids: a
symmetric context window, noise distribution proportional to
``count ** 0.75``, linearly decayed learning rate, input vectors
initialised uniformly in ``[-0.5/d, 0.5/d]`` and context vectors at zero.
Only the input-vector table is returned.

Negative draws are made with numpy ahead of each epoch, so a fixed seed and
``workers=1`` reproduce the table bit for bit.  ``workers > 1`` runs the
same kernel with hogwild-style parallel sequence updates (not reproducible).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .errors import EmptyVocab, IndexOutOfRange, NonFiniteUpdate
from .ingest import Catalog

NOISE_POWER = 0.75


@dataclass(frozen=True)
class SgConfig:
    dim: int = 64
    window: int = 5
    negatives_per_positive: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    min_count: int = 1
    subsample_threshold: float = 0.0
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        for name in ("window", "negatives_per_positive", "min_count", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.subsample_threshold < 0:
            raise ValueError("subsample_threshold must be >= 0")


class EmbeddingTable:
    """``n_items x dim`` float32 matrix of item vectors, optionally tied to a catalog."""

    def __init__(self, vectors, catalog: Catalog | None = None):
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[1] < 2:
            raise ValueError(f"expected an (n, d>=2) matrix, got shape {vectors.shape}")
        if catalog is not None and len(catalog) != vectors.shape[0]:
            raise ValueError("catalog size does not match the number of rows")
        if not np.all(np.isfinite(vectors)):
            raise NonFiniteUpdate("embedding table holds non-finite values")
        self.vectors = vectors
        self.catalog = catalog

    @property
    def n_items(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return self.n_items

    def checksum(self) -> str:
        import hashlib

        return hashlib.sha256(self.vectors.tobytes()).hexdigest()

    def _names(self):
        if self.catalog is not None:
            return self.catalog.items
        return [str(i) for i in range(self.n_items)]

    def save_text(self, path) -> None:
        """``n dim`` header, then one ``item v1 .. vd`` line per row."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{self.n_items} {self.dim}\n")
            for name, row in zip(self._names(), self.vectors):
                vals = " ".join(np.format_float_scientific(v, unique=True) for v in row)
                fh.write(f"{name} {vals}\n")

    @classmethod
    def load_text(cls, path) -> "EmbeddingTable":
        with open(path, encoding="utf-8") as fh:
            n, d = map(int, fh.readline().split())
            names, rows = [], np.empty((n, d), dtype=np.float32)
            for i in range(n):
                parts = fh.readline().rstrip("\n").split(" ")
                if len(parts) != d + 1:
                    raise ValueError(f"line {i + 2}: expected {d + 1} fields, got {len(parts)}")
                names.append(parts[0])
                rows[i] = np.array(parts[1:], dtype=np.float32)
        return cls(rows, Catalog(names))

    def save_binary(self, path) -> None:
        """Little-endian: magic, version, n, d; then per row a u32-length-prefixed
        UTF-8 name followed by ``d`` float32 values."""
        le = self.vectors.astype("<f4", copy=False)
        with open(path, "wb") as fh:
            fh.write(b"DREMB\x00\x00\x00")
            fh.write(struct.pack("<III", 1, self.n_items, self.dim))
            for name, row in zip(self._names(), le):
                raw = name.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
                fh.write(row.tobytes())

    @classmethod
    def load_binary(cls, path) -> "EmbeddingTable":
        data = Path(path).read_bytes()
        if data[:8] != b"DREMB\x00\x00\x00":
            raise ValueError("not an embedding file")
        version, n, d = struct.unpack_from("<III", data, 8)
        if version != 1:
            raise ValueError(f"unsupported embedding file version {version}")
        pos = 20
        names, rows = [], np.empty((n, d), dtype=np.float32)
        for i in range(n):
            (ln,) = struct.unpack_from("<I", data, pos)
            pos += 4
            names.append(data[pos:pos + ln].decode("utf-8"))
            pos += ln
            rows[i] = np.frombuffer(data, dtype="<f4", count=d, offset=pos)
            pos += 4 * d
        return cls(rows, Catalog(names))


def lookup(table: EmbeddingTable, item: int) -> np.ndarray:
    """Row ``item`` of the table (a view, not a copy)."""
    if not 0 <= item < table.n_items:
        raise IndexOutOfRange(f"item index {item} outside [0, {table.n_items})")
    return table.vectors[item]


def build_vocab(sequences, min_count: int = 1, n_items: int | None = None):
    """Item counts and the ``count**0.75`` noise distribution over retained items.

    Returns ``(counts, noise_dist)`` as arrays indexed by item; items with fewer
    than ``min_count`` occurrences get probability zero.
    """
    flat = np.fromiter((i for s in sequences for i in s), dtype=np.int64)
    if flat.size == 0:
        raise EmptyVocab("no items in the corpus")
    if n_items is None:
        n_items = int(flat.max()) + 1
    counts = np.bincount(flat, minlength=n_items)
    keep = counts >= min_count
    if not keep.any():
        raise EmptyVocab(f"no item reaches min_count={min_count}")
    weights = np.where(keep, counts.astype(np.float64) ** NOISE_POWER, 0.0)
    return counts, weights / weights.sum()


def sgns_objective(w_center, c_context, c_negatives):
    """Negative-sampling loss for one (center, context, negatives) triple.

    ``-log s(w.c) - sum_k log s(-w.n_k)`` with its gradients with respect
    to the center vector, the context vector and each negative vector.
    """
    w = np.asarray(w_center, dtype=np.float64)
    c = np.asarray(c_context, dtype=np.float64)
    negs = np.atleast_2d(np.asarray(c_negatives, dtype=np.float64))
    pos = w @ c
    neg = negs @ w
    loss = np.logaddexp(0.0, -pos) + np.logaddexp(0.0, neg).sum()
    g_pos = _sigmoid(pos) - 1.0
    g_neg = _sigmoid(neg)
    grad_w = g_pos * c + g_neg @ negs
    grad_c = g_pos * w
    grad_negs = g_neg[:, None] * w[None, :]
    return loss, grad_w, grad_c, grad_negs


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@numba.njit(cache=True, fastmath=False)
def _sgns_pair(W, C, center, context, negs, lr, neu):
    """One SGD step on a single pair; ``neu`` is scratch space of length d."""
    d = W.shape[1]
    for j in range(d):
        neu[j] = 0.0
    loss = 0.0
    for k in range(negs.shape[0] + 1):
        if k == 0:
            target = context
            label = 1.0
        else:
            target = negs[k - 1]
            if target == context:
                continue
            label = 0.0
        f = 0.0
        for j in range(d):
            f += W[center, j] * C[target, j]
        s = 1.0 / (1.0 + np.exp(-f))
        if label == 1.0:
            loss += -np.log(max(s, 1e-30))
        else:
            loss += -np.log(max(1.0 - s, 1e-30))
        g = (label - s) * lr
        for j in range(d):
            neu[j] += g * C[target, j]
        for j in range(d):
            C[target, j] += g * W[center, j]
    for j in range(d):
        W[center, j] += neu[j]
    return loss


def _epoch_body(W, C, tokens, starts, pair_starts, window, negs, lr0, done_before, total_pairs):
    n_seq = starts.shape[0] - 1
    d = W.shape[1]
    loss = 0.0
    for s in numba.prange(n_seq):
        neu = np.empty(d, dtype=W.dtype)
        lo, hi = starts[s], starts[s + 1]
        p = pair_starts[s]
        for i in range(lo, hi):
            for o in range(-window, window + 1):
                t = i + o
                if o == 0 or t < lo or t >= hi:
                    continue
                frac = (done_before + p) / total_pairs
                lr = lr0 * max(1.0 - frac, 1e-4)
                loss += _sgns_pair(W, C, tokens[i], tokens[t], negs[p], np.float32(lr), neu)
                p += 1
    return loss


_sgns_epoch = numba.njit(cache=True)(_epoch_body)
_sgns_epoch_parallel = numba.njit(cache=True, parallel=True)(_epoch_body)


def _pairs_per_sequence(lengths: np.ndarray, window: int) -> np.ndarray:
    out = np.zeros(len(lengths), dtype=np.int64)
    for o in range(1, window + 1):
        out += 2 * np.maximum(lengths - o, 0)
    return out


def init_vectors(n_items: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-0.5 / dim, 0.5 / dim, size=(n_items, dim)).astype(np.float32)


def train_skipgram(sequences, config: SgConfig = SgConfig(), n_items: int | None = None,
                   catalog: Catalog | None = None, return_losses: bool = False):
    """Train item vectors on index sequences and return the input-vector table.

    ``n_items`` defaults to the catalog size, else to the largest index + 1.
    Items below ``min_count`` keep their random initial vectors.
    """
    sequences = [np.asarray(s, dtype=np.int64) for s in sequences]
    if n_items is None:
        n_items = len(catalog) if catalog is not None else None
    counts, noise = build_vocab(sequences, config.min_count, n_items)
    n_items = len(counts)
    rng = np.random.default_rng(config.seed)
    W = init_vectors(n_items, config.dim, rng)
    C = np.zeros_like(W)
    keep = counts >= config.min_count
    cdf = np.cumsum(noise)
    cdf /= cdf[-1]
    total_tokens = counts[keep].sum()

    losses = []
    seqs = [s[keep[s]] for s in sequences]
    base_pairs = _pairs_per_sequence(np.array([len(s) for s in seqs]), config.window).sum()
    total_pairs = max(int(base_pairs) * config.epochs, 1)
    done = 0
    kernel = _sgns_epoch_parallel if config.workers > 1 else _sgns_epoch
    if config.workers > 1:
        numba.set_num_threads(min(config.workers, numba.config.NUMBA_NUM_THREADS))
    for _ in range(config.epochs):
        if config.subsample_threshold > 0:
            thr = config.subsample_threshold * total_tokens
            freq = np.maximum(counts, 1).astype(np.float64)
            keep_p = np.minimum((np.sqrt(freq / thr) + 1.0) * thr / freq, 1.0)
            epoch_seqs = [s[rng.random(len(s)) < keep_p[s]] for s in seqs]
        else:
            epoch_seqs = seqs
        lengths = np.array([len(s) for s in epoch_seqs], dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        per_seq = _pairs_per_sequence(lengths, config.window)
        pair_starts = np.concatenate([[0], np.cumsum(per_seq)]).astype(np.int64)
        n_pairs = int(pair_starts[-1])
        tokens = np.concatenate(epoch_seqs) if epoch_seqs else np.empty(0, np.int64)
        negs = np.searchsorted(cdf, rng.random((n_pairs, config.negatives_per_positive)), side="right")
        negs = np.minimum(negs, n_items - 1).astype(np.int64)
        loss = kernel(W, C, tokens, starts, pair_starts, config.window, negs,
                      config.learning_rate, done, total_pairs)
        done += n_pairs
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(C))):
            raise NonFiniteUpdate("embedding training diverged; lower the learning rate")
        losses.append(loss / max(n_pairs, 1))
    table = EmbeddingTable(W, catalog)
    return (table, losses) if return_losses else table
