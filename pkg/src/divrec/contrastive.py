"""Embedding-space training losses and in-batch negative sampling.

The session model predicts an embedding ``z`` rather than a distribution
over items, so every loss here is built from cosine similarities between
the prediction, the target item embedding and a set of negative item
embeddings:

* ``cosine``: ``-sim(z, t)``
* ``weighted``: ``-alpha * sim(z, t) + beta * mean_j sim(z, n_j)``
* ``cross_entropy``: softmax classification of the target among the
  negatives at temperature ``tau``.  By default the positive is part of the
  normaliser (InfoNCE); ``denominator="negatives_only"`` drops it.

Negatives are the labels of the other examples in the batch, minus the
example's own label and input items, optionally capped by uniform sampling
and optionally narrowed to the ``k`` most similar to the prediction.
Negative vectors come from the frozen embedding table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyNegativeSet, ZeroVector

LOSS_KINDS = ("cosine", "weighted", "cross_entropy")
STRATEGIES = ("none", "in_batch", "top_k")
DENOMINATORS = ("full", "negatives_only")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "cosine"
    alpha: float = 2.0
    beta: float = 1.0
    tau: float = 0.05
    denominator: str = "full"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ConfigError(f"loss.kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if not self.alpha > 0:
            raise ConfigError("loss.alpha must be > 0")
        if not self.beta >= 0:
            raise ConfigError("loss.beta must be >= 0")
        if not self.tau > 0:
            raise ConfigError("loss.tau must be > 0")
        if self.denominator not in DENOMINATORS:
            raise ConfigError(f"loss.denominator must be one of {DENOMINATORS}")

    @property
    def needs_negatives(self) -> bool:
        return self.kind != "cosine"


@dataclass(frozen=True)
class SamplingSpec:
    strategy: str = "none"
    cap: int = 100
    pool_cap: int = 100
    k: int = 5

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"sampling.strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.cap < 1 or self.pool_cap < 1 or self.k < 1:
            raise ConfigError("sampling sizes must be >= 1")
        if self.k > self.pool_cap:
            raise ConfigError("sampling.k must not exceed sampling.pool_cap")

    @property
    def size(self) -> int | None:
        """Number of negatives used per example, as reported in result tables."""
        return {"none": None, "in_batch": self.cap, "top_k": self.k}[self.strategy]


def check_compatible(loss: LossSpec, sampling: SamplingSpec) -> None:
    if loss.needs_negatives and sampling.strategy == "none":
        raise ConfigError(f"loss {loss.kind!r} needs negatives; set sampling.strategy")
    if not loss.needs_negatives and sampling.strategy != "none":
        raise ConfigError("cosine loss takes no negatives; set sampling.strategy = none")


@dataclass
class NegativeSet:
    indices: np.ndarray
    vectors: np.ndarray

    def __len__(self):
        return len(self.indices)


# --------------------------------------------------------------------------
# similarities and losses


def cosine_similarity(z, v):
    """Cosine similarity of ``z`` with a vector or each row of a matrix,
    plus its gradient with respect to ``z``."""
    z = np.asarray(z, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nz = np.linalg.norm(z)
    nv = np.linalg.norm(v, axis=-1)
    if nz == 0 or np.any(nv == 0):
        raise ZeroVector("cosine similarity with a zero vector")
    zh = z / nz
    vh = v / nv[..., None] if v.ndim > 1 else v / nv
    sim = vh @ zh
    grad = (vh - sim[..., None] * zh) / nz if v.ndim > 1 else (vh - sim * zh) / nz
    return sim, grad


def _neg_vectors(negs) -> np.ndarray:
    vecs = negs.vectors if isinstance(negs, NegativeSet) else negs
    vecs = np.atleast_2d(np.asarray(vecs, dtype=np.float64))
    if vecs.shape[0] == 0 or vecs.size == 0:
        raise EmptyNegativeSet("loss needs at least one negative")
    return vecs


def cosine_loss(z_i, z_t):
    s, g = cosine_similarity(z_i, z_t)
    return -float(s), -g


def weighted_loss(z_i, z_t, negs, alpha: float = 2.0, beta: float = 1.0):
    vecs = _neg_vectors(negs)
    s_t, g_t = cosine_similarity(z_i, z_t)
    s_n, g_n = cosine_similarity(z_i, vecs)
    loss = -alpha * s_t + beta * s_n.mean()
    return float(loss), -alpha * g_t + beta * g_n.mean(axis=0)


def cross_entropy_loss(z_i, z_t, negs, tau: float = 0.05, denominator: str = "full"):
    vecs = _neg_vectors(negs)
    s_t, g_t = cosine_similarity(z_i, z_t)
    s_n, g_n = cosine_similarity(z_i, vecs)
    logits = np.concatenate([[s_t], s_n]) / tau
    grads = np.vstack([g_t, g_n]) / tau
    if denominator == "full":
        pool = logits
    elif denominator == "negatives_only":
        pool = logits[1:]
    else:
        raise ConfigError(f"unknown denominator {denominator!r}")
    # work with gaps to the positive logit: the loss is logsumexp(gaps), and
    # splitting off the largest term as log1p keeps small losses accurate
    gaps = pool - logits[0]
    top = int(np.argmax(gaps))
    e = np.exp(gaps - gaps[top])
    rest = np.delete(e, top).sum()
    loss = gaps[top] + np.log1p(rest)
    p = e / (1.0 + rest)
    coef = np.zeros_like(logits)
    coef[-len(pool):] = p
    coef[0] -= 1.0
    return float(loss), coef @ grads


def loss_and_grad(spec: LossSpec, z_i, z_t, negs=None):
    if spec.kind == "cosine" or negs is None or len(negs) == 0:
        return cosine_loss(z_i, z_t)
    if spec.kind == "weighted":
        return weighted_loss(z_i, z_t, negs, spec.alpha, spec.beta)
    return cross_entropy_loss(z_i, z_t, negs, spec.tau, spec.denominator)


# --------------------------------------------------------------------------
# negative sampling


def _vectors_of(table, idx: np.ndarray) -> np.ndarray:
    mat = table.vectors if hasattr(table, "vectors") else np.asarray(table)
    return mat[idx].astype(np.float64)


def sample_in_batch(batch, index: int, cap: int, table, rng: np.random.Generator) -> NegativeSet:
    """Labels of the other batch members, excluding this example's label and
    inputs, uniformly subsampled to at most ``cap``."""
    ex = batch[index]
    excluded = set(ex.input_seq)
    excluded.add(ex.label)
    pool = sorted({b.label for j, b in enumerate(batch) if j != index} - excluded)
    idx = np.asarray(pool, dtype=np.int64)
    if len(idx) > cap:
        idx = np.sort(rng.choice(idx, size=cap, replace=False))
    return NegativeSet(idx, _vectors_of(table, idx))


def filter_top_k(pred, pool: NegativeSet, k: int, table=None) -> NegativeSet:
    """The ``k`` pool members most similar to ``pred`` (ties to the lower index)."""
    if len(pool) <= k:
        return pool
    sims, _ = cosine_similarity(pred, pool.vectors)
    order = np.lexsort((pool.indices, -sims))[:k]
    return NegativeSet(pool.indices[order], pool.vectors[order])


def negatives_for(batch, index: int, pred, table, sampling: SamplingSpec, rng) -> NegativeSet | None:
    if sampling.strategy == "none":
        return None
    if sampling.strategy == "in_batch":
        return sample_in_batch(batch, index, sampling.cap, table, rng)
    pool = sample_in_batch(batch, index, sampling.pool_cap, table, rng)
    return filter_top_k(pred, pool, sampling.k, table)


def batch_loss(Z, batch, table, loss: LossSpec, sampling: SamplingSpec, rng):
    """Per-example losses and gradients for a batch of predictions ``Z``.

    Examples whose negative pool comes out empty fall back to the plain
    cosine loss.  Returns ``(losses, grads, n_fallback)``.
    """
    Z = np.asarray(Z, dtype=np.float64)
    losses = np.empty(len(batch))
    grads = np.empty_like(Z)
    n_fallback = 0
    for i, ex in enumerate(batch):
        negs = negatives_for(batch, i, Z[i], table, sampling, rng) if loss.needs_negatives else None
        if loss.needs_negatives and (negs is None or len(negs) == 0):
            n_fallback += 1
        z_t = _vectors_of(table, np.int64(ex.label))
        losses[i], grads[i] = loss_and_grad(loss, Z[i], z_t, negs)
    return losses, grads, n_fallback
