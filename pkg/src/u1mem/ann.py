"""Approximate K-NN over pixel vectors via a random-projection forest.

Each tree splits the data recursively with a hyperplane through the midpoint
of two points sampled from the node, normal along their difference.  Queries
run a best-first traversal over all trees with a shared priority queue keyed
by distance to the splitting plane, collect a bounded candidate pool, then
re-rank candidates exactly.  With the pool bound equal to the bank size the
result provably equals a brute-force scan, which doubles as the test oracle.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataFormatError

INDEX_MAGIC = b"U1IX"
INDEX_VERSION = 1

METRICS = ("euclidean", "cosine")
_DEPTH_SLACK = 12  # extra levels past the balanced depth before forcing a leaf


@dataclass(frozen=True)
class IndexConfig:
    n_trees: int = 16
    leaf_size: int = 16
    seed: int = 0
    metric: str = "euclidean"
    search_budget: int | None = None  # None -> n_trees * K at query time

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.leaf_size < 2:
            raise ValueError("leaf_size must be >= 2")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.search_budget is not None and self.search_budget < 1:
            raise ValueError("search_budget must be positive")


@dataclass(frozen=True, order=True)
class VectorKey:
    image_id: str
    row: int
    col: int
    class_id: int = field(compare=False, default=-1)


class _Tree:
    """Flat node arrays for one tree; leaves hold vector-id arrays."""

    __slots__ = ("normals", "offsets", "lefts", "rights", "leaves")

    def __init__(self):
        self.normals: list[np.ndarray | None] = []
        self.offsets: list[float] = []
        self.lefts: list[int] = []
        self.rights: list[int] = []
        self.leaves: list[np.ndarray | None] = []

    def add_node(self) -> int:
        self.normals.append(None)
        self.offsets.append(0.0)
        self.lefts.append(-1)
        self.rights.append(-1)
        self.leaves.append(None)
        return len(self.offsets) - 1


def _distances(vectors: np.ndarray, norms: np.ndarray, q: np.ndarray,
               metric: str) -> np.ndarray:
    """Distances from q to each row; both query paths share this code so
    indexed and brute-force results compare bitwise equal."""
    if metric == "euclidean":
        diff = vectors - q
        return np.sqrt(np.einsum("nc,nc->n", diff, diff))
    qn = float(np.linalg.norm(q))
    if qn == 0.0:
        raise ValueError("cosine distance undefined for zero query vector")
    return 1.0 - (vectors @ q) / (norms * qn)


def _rank(cand: np.ndarray, dist: np.ndarray, image_ids: np.ndarray,
          rows: np.ndarray, cols: np.ndarray, k: int) -> np.ndarray:
    """Positions into cand/dist ascending by (distance, image_id, row, col)."""
    sel = np.lexsort((cols[cand], rows[cand], image_ids[cand], dist))
    return sel[:k]


class RPForest:
    """Immutable random-projection forest over a fixed vector table."""

    def __init__(self, vectors: np.ndarray, keys: Sequence[VectorKey],
                 config: IndexConfig, trees: list[_Tree]):
        self.vectors = vectors
        self.keys = list(keys)
        self.config = config
        self._trees = trees
        self._image_ids = np.asarray([k.image_id for k in self.keys])
        self._rows = np.asarray([k.row for k in self.keys], dtype=np.int64)
        self._cols = np.asarray([k.col for k in self.keys], dtype=np.int64)
        self._norms = np.linalg.norm(vectors, axis=1)
        if config.metric == "cosine":
            if np.any(self._norms == 0.0):
                raise ValueError("cosine metric requires non-zero vectors")
            self._routing = vectors / self._norms[:, None]
        else:
            self._routing = vectors

    # -- construction -----------------------------------------------------

    @classmethod
    def build(cls, vectors, keys: Sequence[VectorKey],
              config: IndexConfig | None = None) -> "RPForest":
        config = config or IndexConfig()
        mat = np.asarray(vectors, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] == 0:
            raise ValueError("need a non-empty 2-d vector table")
        if len(keys) != mat.shape[0]:
            raise ValueError("one key per vector required")
        n = mat.shape[0]
        max_depth = int(np.ceil(np.log2(max(n / config.leaf_size, 1.0)))) + _DEPTH_SLACK
        if config.metric == "cosine":
            norms = np.linalg.norm(mat, axis=1)
            if np.any(norms == 0.0):
                raise ValueError("cosine metric requires non-zero vectors")
            routing = mat / norms[:, None]
        else:
            routing = mat
        seqs = np.random.SeedSequence(config.seed).spawn(config.n_trees)
        ids = np.arange(n, dtype=np.int64)
        trees = [cls._build_tree(routing, ids, config.leaf_size, max_depth,
                                 np.random.default_rng(seq))
                 for seq in seqs]
        return cls(mat, keys, config, trees)

    @staticmethod
    def _build_tree(routing: np.ndarray, ids: np.ndarray, leaf_size: int,
                    max_depth: int, rng: np.random.Generator) -> _Tree:
        tree = _Tree()

        def grow(idx: np.ndarray, depth: int) -> int:
            node = tree.add_node()
            if len(idx) <= leaf_size or depth >= max_depth:
                tree.leaves[node] = idx
                return node
            for _ in range(3):
                pick = rng.choice(len(idx), size=2, replace=False)
                a, b = routing[idx[pick[0]]], routing[idx[pick[1]]]
                normal = a - b
                norm = np.linalg.norm(normal)
                if norm < 1e-12:
                    continue  # identical sample points; try again
                normal = normal / norm
                offset = float(normal @ ((a + b) / 2.0))
                margin = routing[idx] @ normal - offset
                left = idx[margin < 0.0]
                right = idx[margin >= 0.0]
                if len(left) == 0 or len(right) == 0:
                    continue
                tree.normals[node] = normal
                tree.offsets[node] = offset
                tree.lefts[node] = grow(left, depth + 1)
                tree.rights[node] = grow(right, depth + 1)
                return node
            tree.leaves[node] = idx  # degenerate cloud: keep as a leaf
            return node

        grow(ids, 0)
        return tree

    # -- queries -----------------------------------------------------------

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def depth(self, tree_index: int) -> int:
        tree = self._trees[tree_index]

        def walk(node: int) -> int:
            if tree.leaves[node] is not None:
                return 0
            return 1 + max(walk(tree.lefts[node]), walk(tree.rights[node]))

        return walk(0)

    def _candidates(self, q: np.ndarray, budget: int) -> np.ndarray:
        heap: list[tuple[float, int, int, int]] = []
        tick = 0
        for ti in range(len(self._trees)):
            heap.append((-np.inf, tick, ti, 0))
            tick += 1
        heapq.heapify(heap)
        seen: set[int] = set()
        while heap and len(seen) < budget:
            neg_prio, _, ti, node = heapq.heappop(heap)
            prio = -neg_prio
            tree = self._trees[ti]
            leaf = tree.leaves[node]
            if leaf is not None:
                seen.update(leaf.tolist())
                continue
            margin = float(q @ tree.normals[node] - tree.offsets[node])
            heapq.heappush(heap, (-min(prio, margin), tick, ti, tree.rights[node]))
            tick += 1
            heapq.heappush(heap, (-min(prio, -margin), tick, ti, tree.lefts[node]))
            tick += 1
        cand = np.fromiter(seen, dtype=np.int64, count=len(seen))
        cand.sort()  # canonical order: ranking matches the brute-force scan
        return cand

    def query_knn(self, q, k: int, exclude_image: str | None = None,
                  search_budget: int | None = None) -> list[tuple[VectorKey, float]]:
        """K nearest stored vectors, ascending distance, ties broken by key."""
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.dim,):
            raise ValueError(f"query has shape {q.shape}, index holds {self.dim}-d vectors")
        if k < 1:
            raise ValueError("k must be >= 1")
        budget = search_budget or self.config.search_budget or self.config.n_trees * k
        if budget < k:
            raise ValueError(f"search budget {budget} smaller than k={k}")
        if self.config.metric == "cosine":
            qn = float(np.linalg.norm(q))
            if qn == 0.0:
                raise ValueError("cosine distance undefined for zero query vector")
            routed = q / qn
        else:
            routed = q
        cand = self._candidates(routed, budget)
        if exclude_image is not None:
            cand = cand[self._image_ids[cand] != exclude_image]
        if len(cand) == 0:
            return []
        dist = _distances(self.vectors[cand], self._norms[cand], q, self.config.metric)
        top = _rank(cand, dist, self._image_ids, self._rows, self._cols, k)
        return [(self.keys[cand[p]], float(dist[p])) for p in top]

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        """Serialize to a single binary file (pre-order trees, raw float64)."""
        metric_code = METRICS.index(self.config.metric)
        budget = self.config.search_budget or 0
        out = [INDEX_MAGIC,
               struct.pack("<IIIqBI", INDEX_VERSION, self.config.n_trees,
                           self.config.leaf_size, self.config.seed,
                           metric_code, budget),
               struct.pack("<II", self.size, self.dim)]
        for key in self.keys:
            raw = key.image_id.encode("utf-8")
            out.append(struct.pack("<H", len(raw)))
            out.append(raw)
            out.append(struct.pack("<IIq", key.row, key.col, key.class_id))
        out.append(self.vectors.astype("<f8").tobytes(order="C"))

        def emit(tree: _Tree, node: int):
            leaf = tree.leaves[node]
            if leaf is not None:
                out.append(struct.pack("<BI", 1, len(leaf)))
                out.append(leaf.astype("<u4").tobytes())
                return
            out.append(struct.pack("<B", 0))
            out.append(tree.normals[node].astype("<f8").tobytes())
            out.append(struct.pack("<d", tree.offsets[node]))
            emit(tree, tree.lefts[node])
            emit(tree, tree.rights[node])

        for tree in self._trees:
            emit(tree, 0)
        with open(path, "wb") as fh:
            fh.write(b"".join(out))

    @classmethod
    def load(cls, path) -> "RPForest":
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:4] != INDEX_MAGIC:
            raise DataFormatError(f"{path}: bad magic bytes {raw[:4]!r}")
        pos = 4
        version, n_trees, leaf_size, seed, metric_code, budget = \
            struct.unpack_from("<IIIqBI", raw, pos)
        pos += struct.calcsize("<IIIqBI")
        if version != INDEX_VERSION:
            raise DataFormatError(f"{path}: unsupported index version {version}")
        n, dim = struct.unpack_from("<II", raw, pos)
        pos += 8
        config = IndexConfig(n_trees=n_trees, leaf_size=leaf_size, seed=seed,
                             metric=METRICS[metric_code],
                             search_budget=budget or None)
        keys = []
        for _ in range(n):
            (slen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            image_id = raw[pos:pos + slen].decode("utf-8")
            pos += slen
            row, col, class_id = struct.unpack_from("<IIq", raw, pos)
            pos += struct.calcsize("<IIq")
            keys.append(VectorKey(image_id, row, col, class_id))
        count = n * dim
        vectors = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(n, dim)
        vectors = vectors.copy()
        pos += count * 8

        def parse(tree: _Tree) -> tuple[int, int]:
            nonlocal pos
            node = tree.add_node()
            (kind,) = struct.unpack_from("<B", raw, pos)
            pos += 1
            if kind == 1:
                (cnt,) = struct.unpack_from("<I", raw, pos)
                pos += 4
                ids = np.frombuffer(raw, dtype="<u4", count=cnt, offset=pos)
                pos += cnt * 4
                tree.leaves[node] = ids.astype(np.int64)
                return node, pos
            normal = np.frombuffer(raw, dtype="<f8", count=dim, offset=pos).copy()
            pos += dim * 8
            (offset,) = struct.unpack_from("<d", raw, pos)
            pos += 8
            tree.normals[node] = normal
            tree.offsets[node] = offset
            tree.lefts[node], _ = parse(tree)
            tree.rights[node], _ = parse(tree)
            return node, pos

        trees = []
        for _ in range(n_trees):
            tree = _Tree()
            parse(tree)
            trees.append(tree)
        if pos != len(raw):
            raise DataFormatError(f"{path}: {len(raw) - pos} trailing bytes")
        return cls(vectors, keys, config, trees)


def brute_force_knn(vectors, keys: Sequence[VectorKey], q, k: int,
                    metric: str = "euclidean",
                    exclude_image: str | None = None) -> list[tuple[VectorKey, float]]:
    """Exact K-NN by full scan; same distance code and tie rule as the forest."""
    mat = np.asarray(vectors, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (mat.shape[1],):
        raise ValueError(f"query has shape {q.shape}, table holds {mat.shape[1]}-d vectors")
    if k < 1:
        raise ValueError("k must be >= 1")
    image_ids = np.asarray([key.image_id for key in keys])
    rows = np.asarray([key.row for key in keys], dtype=np.int64)
    cols = np.asarray([key.col for key in keys], dtype=np.int64)
    ids = np.arange(mat.shape[0], dtype=np.int64)
    if exclude_image is not None:
        ids = ids[image_ids != exclude_image]
    if len(ids) == 0:
        return []
    norms = np.linalg.norm(mat[ids], axis=1)
    dist = _distances(mat[ids], norms, q, metric)
    top = _rank(ids, dist, image_ids, rows, cols, k)
    return [(keys[ids[p]], float(dist[p])) for p in top]
