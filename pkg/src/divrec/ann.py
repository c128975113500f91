"""Random-projection forest for angular nearest-neighbour retrieval.

Each tree recursively splits the (unit-normalised) item vectors by the
perpendicular bisector of two randomly drawn members of the node until a
node holds at most ``leaf_size`` items.  Queries walk all trees at once
through a priority queue keyed by the smallest margin seen along the path,
collect leaf members until ``search_budget`` distinct candidates are in
hand, and rank those by exact cosine similarity.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ZeroVector

SPLIT_RETRIES = 3
TWO_MEANS_STEPS = 200


@dataclass
class QueryResult:
    items: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(zip(self.items.tolist(), self.scores.tolist()))

    def __eq__(self, other):
        return (isinstance(other, QueryResult)
                and np.array_equal(self.items, other.items)
                and np.array_equal(self.scores, other.scores))


def _unit_rows(mat) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 0)


def _unit(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0:
        raise ZeroVector("query vector is zero")
    return q / n


def _scores(unit, idx, q) -> np.ndarray:
    # row-wise multiply+sum so a row's score does not depend on which other rows are present
    return np.sum(unit[idx] * q, axis=1)


def _rank(idx, sims, top_n) -> QueryResult:
    order = np.lexsort((idx, -sims))[:top_n]
    return QueryResult(idx[order], sims[order])


def _candidates(n_items: int, exclude) -> np.ndarray:
    idx = np.arange(n_items, dtype=np.int64)
    if exclude is not None and len(exclude):
        idx = idx[~np.isin(idx, np.asarray(list(exclude), dtype=np.int64))]
    return idx


def exact_query(table, q, top_n: int = 10, exclude=None) -> QueryResult:
    """Brute-force cosine top-n with ties going to the lower index."""
    mat = table.vectors if hasattr(table, "vectors") else table
    unit = _unit_rows(mat)
    qn = _unit(q)
    idx = _candidates(unit.shape[0], exclude)
    return _rank(idx, _scores(unit, idx, qn), top_n)


class RpForest:
    def __init__(self, vectors, normals, offsets, left, right, leaf_start, leaf_len,
                 leaf_items, roots, leaf_size: int, seed: int = 0):
        self.vectors = np.asarray(vectors, dtype=np.float64)
        self.normals = normals
        self.offsets = offsets
        self.left = left
        self.right = right
        self.leaf_start = leaf_start
        self.leaf_len = leaf_len
        self.leaf_items = leaf_items
        self.roots = roots
        self.leaf_size = leaf_size
        self.seed = seed

    @property
    def n_trees(self) -> int:
        return len(self.roots)

    @property
    def n_items(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    def leaf_members(self, node: int) -> np.ndarray:
        s = self.leaf_start[node]
        return self.leaf_items[s:s + self.leaf_len[node]]

    def tree_leaves(self, tree: int):
        """Item arrays of every leaf in one tree (depth-first)."""
        out, stack = [], [int(self.roots[tree])]
        while stack:
            node = stack.pop()
            if self.is_leaf(node):
                out.append(self.leaf_members(node))
            else:
                stack.extend((int(self.right[node]), int(self.left[node])))
        return out

    def default_budget(self, top_n: int) -> int:
        return self.n_trees * top_n * 4

    # serialisation ------------------------------------------------------

    _MAGIC = b"DRANN\x00\x00\x00"
    _VERSION = 1

    def to_bytes(self) -> bytes:
        head = struct.pack(
            "<8I", self._VERSION, self.dim, self.n_trees, self.leaf_size,
            self.n_items, len(self.left), len(self.leaf_items), self.seed & 0xFFFFFFFF,
        )
        parts = [self._MAGIC, head]
        for a, dt in ((self.vectors, "<f8"), (self.normals, "<f8"), (self.offsets, "<f8"),
                      (self.left, "<i8"), (self.right, "<i8"), (self.leaf_start, "<i8"),
                      (self.leaf_len, "<i8"), (self.leaf_items, "<i8"), (self.roots, "<i8")):
            parts.append(np.ascontiguousarray(a, dtype=dt).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "RpForest":
        if data[:8] != cls._MAGIC:
            raise ValueError("not an index file")
        version, d, n_trees, leaf_size, n, m, n_leaf, seed = struct.unpack_from("<8I", data, 8)
        if version != cls._VERSION:
            raise ValueError(f"unsupported index version {version}")
        pos = 8 + 32

        def take(count, dt, shape=None):
            nonlocal pos
            a = np.frombuffer(data, dtype=dt, count=count, offset=pos).copy()
            pos += a.nbytes
            return a.reshape(shape) if shape else a

        vectors = take(n * d, "<f8", (n, d))
        normals = take(m * d, "<f8", (m, d))
        offsets = take(m, "<f8")
        left, right, ls, ll = (take(m, "<i8") for _ in range(4))
        items = take(n_leaf, "<i8")
        roots = take(n_trees, "<i8")
        return cls(vectors, normals, offsets, left, right, ls, ll, items, roots, leaf_size, seed)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "RpForest":
        return cls.from_bytes(Path(path).read_bytes())


def build(table, n_trees: int = 16, leaf_size: int = 32, seed: int = 0) -> RpForest:
    """Build ``n_trees`` random-projection trees over the table rows."""
    mat = table.vectors if hasattr(table, "vectors") else table
    unit = _unit_rows(mat)
    n, d = unit.shape
    if n < 1:
        raise ValueError("cannot index an empty table")
    if leaf_size < 1 or n_trees < 1:
        raise ValueError("n_trees and leaf_size must be >= 1")
    rng = np.random.default_rng(seed)
    normals, offsets, left, right, lstart, llen = [], [], [], [], [], []
    leaf_items: list = []
    n_leaf_items = 0

    def new_node():
        normals.append(np.zeros(d))
        offsets.append(0.0)
        left.append(-1)
        right.append(-1)
        lstart.append(0)
        llen.append(0)
        return len(left) - 1

    roots = []
    for _ in range(n_trees):
        root = new_node()
        roots.append(root)
        stack = [(root, np.arange(n, dtype=np.int64))]
        while stack:
            node, members = stack.pop()
            if len(members) <= leaf_size:
                lstart[node] = n_leaf_items
                llen[node] = len(members)
                leaf_items.append(members)
                n_leaf_items += len(members)
                continue
            normal, offset, go_right = _split(unit, members, rng)
            if go_right is None or go_right.all() or not go_right.any():
                normal, offset = np.zeros(d), 0.0
                go_right = np.arange(len(members)) >= len(members) // 2
            normals[node], offsets[node] = normal, offset
            lc, rc = new_node(), new_node()
            left[node], right[node] = lc, rc
            stack.append((rc, members[go_right]))
            stack.append((lc, members[~go_right]))
    return RpForest(
        unit, np.array(normals).reshape(-1, d), np.array(offsets, dtype=np.float64),
        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
        np.array(lstart, dtype=np.int64), np.array(llen, dtype=np.int64),
        np.concatenate(leaf_items) if leaf_items else np.empty(0, np.int64),
        np.array(roots, dtype=np.int64), leaf_size, seed,
    )


def _split(unit, members, rng):
    """Hyperplane bisecting two seed points refined by a short two-means pass.

    Returns ``(normal, offset, goes_right)`` or ``(None, None, None)`` when
    every retry drew coincident points.
    """
    for _ in range(SPLIT_RETRIES):
        a, b = rng.choice(len(members), size=2, replace=False)
        pa, pb = unit[members[a]].copy(), unit[members[b]].copy()
        if np.array_equal(pa, pb):
            continue
        na = nb = 1
        for k in rng.integers(0, len(members), size=TWO_MEANS_STEPS):
            v = unit[members[k]]
            da, db = na * (1.0 - pa @ v), nb * (1.0 - pb @ v)
            if da < db:
                pa = _renorm((pa * na + v) / (na + 1))
                na += 1
            elif db < da:
                pb = _renorm((pb * nb + v) / (nb + 1))
                nb += 1
        normal = pa - pb
        nn = np.linalg.norm(normal)
        if nn == 0:
            continue
        normal /= nn
        offset = -0.5 * float(normal @ (pa + pb))
        margins = unit[members] @ normal + offset
        return normal, offset, margins > 0
    return None, None, None


def _renorm(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def query(forest: RpForest, q, top_n: int = 10, search_budget: int | None = None,
          exclude=None) -> QueryResult:
    """Approximate cosine top-n.  ``exclude`` items are never returned."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    qn = _unit(q)
    budget = forest.default_budget(top_n) if search_budget is None else search_budget
    excluded = set(int(i) for i in exclude) if exclude is not None else set()
    seen = np.zeros(forest.n_items, dtype=bool)
    found: list = []
    heap = [(-np.inf, k, int(r)) for k, r in enumerate(forest.roots)]
    heapq.heapify(heap)
    tick = len(heap)
    while heap and len(found) < budget:
        neg_prio, _, node = heapq.heappop(heap)
        prio = -neg_prio
        if forest.left[node] < 0:
            for it in forest.leaf_members(node):
                if not seen[it]:
                    seen[it] = True
                    if int(it) not in excluded:
                        found.append(it)
            continue
        margin = float(forest.normals[node] @ qn + forest.offsets[node])
        heapq.heappush(heap, (-min(prio, margin), tick, int(forest.right[node])))
        heapq.heappush(heap, (-min(prio, -margin), tick + 1, int(forest.left[node])))
        tick += 2
    idx = np.sort(np.asarray(found, dtype=np.int64))
    return _rank(idx, _scores(forest.vectors, idx, qn), top_n)
