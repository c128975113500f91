"""Accuracy and exposure metrics for top-10 recommendation runs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateCatalog, EmptyRun, ZeroExposure

K = 10
GINI_TARGET_BAND = (0.4, 0.7)


@dataclass
class RecommendationRun:
    """Top-k lists, one per example, with the single relevant label of each."""

    lists: list
    labels: list
    n_items: int

    def __post_init__(self):
        if len(self.lists) != len(self.labels):
            raise ValueError("lists and labels differ in length")
        for lst in self.lists:
            if len(lst) > K or len(set(lst)) != len(lst):
                raise ValueError("each list must hold at most 10 unique items")
        for lab in self.labels:
            if not 0 <= lab < self.n_items:
                raise ValueError(f"label {lab} outside catalog")

    def __len__(self):
        return len(self.lists)

    def exposure(self) -> np.ndarray:
        flat = [i for lst in self.lists for i in lst]
        return np.bincount(np.asarray(flat, dtype=np.int64), minlength=self.n_items)


def _gain(rank: int) -> float:
    return 1.0 / math.log2(rank + 1)


def ndcg_per_example(run: RecommendationRun, k: int = K) -> np.ndarray:
    out = np.zeros(len(run))
    for e, (lst, lab) in enumerate(zip(run.lists, run.labels)):
        lst = list(lst)[:k]
        if lab in lst:
            out[e] = _gain(lst.index(lab) + 1)
    return out


def ndcg_at_10(run: RecommendationRun) -> float:
    """Mean NDCG@10 with one relevant item per example (so IDCG is 1)."""
    if len(run) == 0:
        raise EmptyRun("no examples in run")
    return float(ndcg_per_example(run).mean())


def gini(exposure) -> float:
    """Gini coefficient of per-item exposure over the whole catalog.

    Counts are sorted ascending and ``G = sum_i (2i - n - 1) x_i / (n sum x)``;
    items with zero exposure take part.
    """
    x = np.sort(np.asarray(exposure).ravel())
    n = x.size
    if n < 2:
        raise DegenerateCatalog("gini needs at least two catalog items")
    total = x.sum()
    if total <= 0:
        raise ZeroExposure("no exposure at all")
    w = 2 * np.arange(1, n + 1, dtype=np.int64) - n - 1
    if np.issubdtype(x.dtype, np.integer):
        num = int((w * x.astype(np.int64)).sum())
        return num / (n * int(total))
    return float((w * x).sum() / (n * total))


def coverage(exposure, n: int | None = None) -> float:
    x = np.asarray(exposure).ravel()
    n = x.size if n is None else n
    if n < 1:
        raise DegenerateCatalog("empty catalog")
    return int(np.count_nonzero(x > 0)) / n


def rank_frequency_report(exposure, include_zero: bool = False) -> list:
    """``(rank, count)`` pairs with counts in descending order.

    Items never recommended are left out unless ``include_zero`` is set.
    """
    x = np.asarray(exposure).ravel()
    if not include_zero:
        x = x[x > 0]
    counts = np.sort(x)[::-1]
    return [(r + 1, c.item()) for r, c in enumerate(counts)]


def loglog_slope(report) -> float:
    """Least-squares slope of log(count) against log(rank)."""
    r = np.array([p[0] for p in report if p[1] > 0], dtype=np.float64)
    c = np.array([p[1] for p in report if p[1] > 0], dtype=np.float64)
    return float(np.polyfit(np.log(r), np.log(c), 1)[0])


@dataclass
class EvalReport:
    ndcg_at_10: float
    gini: float
    coverage: float
    exposure_histogram: np.ndarray
    n_examples: int
    config: dict = field(default_factory=dict)

    @property
    def gini_in_target_band(self) -> bool:
        lo, hi = GINI_TARGET_BAND
        return lo <= self.gini <= hi

    def to_text(self) -> str:
        """Flat ``key=value`` lines; config entries are prefixed ``config.``."""
        lines = [
            f"ndcg_at_10={self.ndcg_at_10!r}",
            f"gini={self.gini!r}",
            f"coverage={self.coverage!r}",
            f"gini_in_target_band={str(self.gini_in_target_band).lower()}",
            f"n_examples={self.n_examples}",
            f"n_items={len(self.exposure_histogram)}",
        ]
        lines += [f"config.{k}={v}" for k, v in sorted(self.config.items())]
        lines.append("exposure_histogram=" + ",".join(str(int(v)) for v in self.exposure_histogram))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "EvalReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        config = {k[len("config."):]: v for k, v in kv.items() if k.startswith("config.")}
        hist = kv.get("exposure_histogram", "")
        return cls(
            float(kv["ndcg_at_10"]), float(kv["gini"]), float(kv["coverage"]),
            np.array([int(v) for v in hist.split(",") if v], dtype=np.int64),
            int(kv["n_examples"]), config,
        )

    @classmethod
    def load(cls, path) -> "EvalReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def evaluate_run(run: RecommendationRun, config: dict | None = None) -> EvalReport:
    exp = run.exposure()
    return EvalReport(ndcg_at_10(run), gini(exp), coverage(exp, run.n_items), exp, len(run), dict(config or {}))


def merge_reports(reports) -> EvalReport:
    """Combine shard reports: exposures add, NDCG is example-weighted."""
    reports = list(reports)
    if not reports:
        raise EmptyRun("nothing to merge")
    exp = sum(r.exposure_histogram for r in reports)
    n = sum(r.n_examples for r in reports)
    nd = sum(r.ndcg_at_10 * r.n_examples for r in reports) / n
    return EvalReport(nd, gini(exp), coverage(exp), exp, n, dict(reports[0].config))


def write_rank_frequency_tsv(path, report) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("rank\tcount\n")
        for r, c in report:
            fh.write(f"{r}\t{c}\n")
