"""Kernel-density nearest-neighbor classification over per-pixel vectors.

A memory bank stores every pixel vector of every memory image together with
its class label.  A query image is scored class-by-class: each query pixel
retrieves its K nearest memory vectors, each match contributes
exp(-d^2 / (alpha^2 + eps)) to the matched class, where alpha is the
distance from that query pixel to its single nearest memory vector, and the
per-class totals are divided by the number of stored vectors of that class.
The predicted class maximizes the normalized score.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .amf import ActivationMap, MemoryRecord, pixel_matrix
from .ann import IndexConfig, RPForest, VectorKey, brute_force_knn

METRICS = ("euclidean", "cosine")


@dataclass(frozen=True)
class ClassifierConfig:
    k: int = 10
    epsilon: float = 1e-8
    metric: str = "euclidean"
    normalize_vectors: bool = True
    exclude_same_image: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        # epsilon 0 is permitted as a test mode; the default keeps the
        # kernel denominator non-zero even when alpha is 0.
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")


@dataclass(frozen=True)
class LikelihoodTable:
    """Per-class normalized scores plus the argmax (ties -> lowest class id)."""

    scores: dict[int, float]
    argmax: int

    @classmethod
    def from_scores(cls, scores: dict[int, float]) -> "LikelihoodTable":
        if not scores:
            raise ValueError("empty likelihood table")
        best = max(scores.values())
        winner = min(c for c, s in scores.items() if s == best)
        return cls(scores=dict(sorted(scores.items())), argmax=winner)


class MemoryBank:
    """Labeled per-pixel activation vectors with an optional ANN index."""

    def __init__(self, vectors: np.ndarray, keys: Sequence[VectorKey],
                 class_names: dict[int, str], config: ClassifierConfig,
                 index_config: IndexConfig | None = None,
                 index: RPForest | None = None):
        self.vectors = np.asarray(vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] == 0:
            raise ValueError("memory bank needs a non-empty 2-d vector table")
        self.keys = list(keys)
        self.class_names = dict(class_names)
        self.config = config
        counts: dict[int, int] = {}
        for key in self.keys:
            counts[key.class_id] = counts.get(key.class_id, 0) + 1
        self.class_count = dict(sorted(counts.items()))
        per_image: dict[str, int] = {}
        for key in self.keys:
            per_image[key.image_id] = per_image.get(key.image_id, 0) + 1
        self.max_pixels_per_image = max(per_image.values())
        if index is not None:
            if index.config.metric != config.metric:
                raise ValueError("index metric must match classifier metric")
            if index.size != self.vectors.shape[0]:
                raise ValueError("index size does not match vector table")
            self.index = index
        else:
            index_config = index_config or IndexConfig(metric=config.metric)
            if index_config.metric != config.metric:
                raise ValueError("index metric must match classifier metric")
            self.index = RPForest.build(self.vectors, self.keys, index_config)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def from_maps(cls, items: Iterable[tuple[MemoryRecord, ActivationMap]],
                  config: ClassifierConfig | None = None,
                  index_config: IndexConfig | None = None) -> "MemoryBank":
        config = config or ClassifierConfig()
        blocks, keys, names = [], [], {}
        for rec, amap in items:
            mat = pixel_matrix(amap, config.normalize_vectors)
            blocks.append(mat)
            w = amap.width
            keys.extend(VectorKey(rec.image_id, idx // w, idx % w, rec.class_id)
                        for idx in range(mat.shape[0]))
            names[rec.class_id] = rec.class_name
        if not blocks:
            raise ValueError("no memory images supplied")
        return cls(np.vstack(blocks), keys, names, config, index_config)

    @classmethod
    def from_forest(cls, forest: RPForest, config: ClassifierConfig | None = None,
                    class_names: dict[int, str] | None = None) -> "MemoryBank":
        """Wrap a persisted index; vectors and keys come from the forest."""
        config = config or ClassifierConfig(metric=forest.config.metric)
        return cls(forest.vectors, forest.keys, class_names or {}, config,
                   index=forest)

    def knn(self, q: np.ndarray, k: int, exclude_image: str | None = None,
            exact: bool = False,
            search_budget: int | None = None) -> list[tuple[VectorKey, float]]:
        """Ranked matches for one query vector through the configured route."""
        if exact:
            return brute_force_knn(self.vectors, self.keys, q, k,
                                   metric=self.config.metric,
                                   exclude_image=exclude_image)
        budget = search_budget or self.index.config.search_budget \
            or self.index.config.n_trees * k
        if exclude_image is not None:
            # excluded vectors still occupy candidate slots; pad the pool
            budget += self.max_pixels_per_image
        return self.index.query_knn(q, k, exclude_image=exclude_image,
                                    search_budget=budget)


def adaptive_bandwidth(q, bank: MemoryBank, exclude_image: str | None = None,
                       exact: bool = True) -> float:
    """Distance from q to its single nearest (non-excluded) memory vector."""
    hits = bank.knn(np.asarray(q, dtype=np.float64), 1,
                    exclude_image=exclude_image, exact=exact)
    if not hits:
        raise ValueError("no memory vectors available for bandwidth")
    return hits[0][1]


def kernel_similarity(d: float, alpha: float, epsilon: float) -> float:
    """exp(-d^2 / (alpha^2 + epsilon)); epsilon > 0 keeps it finite at alpha=0."""
    return math.exp(-(d * d) / (alpha * alpha + epsilon))


def image_likelihood(query: ActivationMap, bank: MemoryBank,
                     config: ClassifierConfig | None = None,
                     query_image_id: str | None = None,
                     exact: bool = False,
                     search_budget: int | None = None) -> LikelihoodTable:
    """Class likelihood table for one query image.

    Per query pixel: alpha = first-match distance from the same retrieval
    pass, each of the K matches adds its kernel weight to the matched class,
    and final scores divide by the per-class stored-vector counts.
    Accumulation runs in fixed (pixel, rank) order so results are exactly
    reproducible.
    """
    config = config or bank.config
    if query.channels != bank.dim:
        raise ValueError(
            f"query has {query.channels} channels, bank holds {bank.dim}-d vectors")
    exclude = query_image_id if config.exclude_same_image else None
    qmat = pixel_matrix(query, config.normalize_vectors)
    scores = {c: 0.0 for c in bank.class_count}
    for q in qmat:
        hits = bank.knn(q, config.k, exclude_image=exclude, exact=exact,
                        search_budget=search_budget)
        if not hits:
            raise ValueError("empty memory bank after exclusion")
        alpha = hits[0][1]
        denom = alpha * alpha + config.epsilon
        for key, d in hits:
            scores[key.class_id] += math.exp(-(d * d) / denom)
    for c in scores:
        scores[c] /= bank.class_count[c]
    return LikelihoodTable.from_scores(scores)


def classify(query: ActivationMap, bank: MemoryBank,
             config: ClassifierConfig | None = None,
             query_image_id: str | None = None,
             exact: bool = False,
             search_budget: int | None = None) -> int:
    return image_likelihood(query, bank, config, query_image_id, exact,
                            search_budget).argmax


@dataclass
class EvalResult:
    accuracy: float
    class_ids: list[int]
    confusion: np.ndarray  # rows = truth, cols = prediction
    per_class_accuracy: dict[int, float]
    rows: list[dict] = field(repr=False, default_factory=list)


def evaluate(queries: Sequence[tuple[MemoryRecord, ActivationMap]],
             bank: MemoryBank, config: ClassifierConfig | None = None,
             exact: bool = False, search_budget: int | None = None,
             workers: int = 1) -> EvalResult:
    """Classify a query set; accuracy, confusion matrix and per-query rows.

    Queries are independent, so worker threads only change wall time, never
    results (each row is computed in isolation and collected in input order).
    """
    if not queries:
        raise ValueError("empty query set")
    config = config or bank.config

    def one(item: tuple[MemoryRecord, ActivationMap]) -> dict:
        rec, amap = item
        table = image_likelihood(amap, bank, config, query_image_id=rec.image_id,
                                 exact=exact, search_budget=search_budget)
        top3 = sorted(table.scores.items(), key=lambda cs: (-cs[1], cs[0]))[:3]
        return {
            "image_id": rec.image_id,
            "truth": rec.class_id,
            "prediction": table.argmax,
            "top3": top3,
        }

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, queries))
    else:
        rows = [one(item) for item in queries]

    class_ids = sorted(set(bank.class_count) | {r["truth"] for r in rows})
    pos = {c: i for i, c in enumerate(class_ids)}
    confusion = np.zeros((len(class_ids), len(class_ids)), dtype=np.int64)
    for r in rows:
        confusion[pos[r["truth"]], pos[r["prediction"]]] += 1
    correct = sum(r["truth"] == r["prediction"] for r in rows)
    per_class = {}
    for c in class_ids:
        n = int(confusion[pos[c]].sum())
        per_class[c] = float(confusion[pos[c], pos[c]] / n) if n else float("nan")
    return EvalResult(
        accuracy=correct / len(rows),
        class_ids=class_ids,
        confusion=confusion,
        per_class_accuracy=per_class,
        rows=rows,
    )
