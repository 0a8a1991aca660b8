"""Random-projection forest vs the brute-force oracle."""

import numpy as np
import pytest

from u1mem.ann import IndexConfig, RPForest, VectorKey, brute_force_knn
from u1mem.errors import DataFormatError


def make_keys(n, prefix="v"):
    return [VectorKey(f"{prefix}{i:05d}", 0, 0, i % 7) for i in range(n)]


def random_table(n, dim, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, dim))


class TestBuild:
    def test_single_vector_always_found(self):
        vec = np.array([[1.0, 2.0, 3.0]])
        forest = RPForest.build(vec, make_keys(1), IndexConfig(n_trees=4))
        rng = np.random.default_rng(0)
        for _ in range(5):
            hits = forest.query_knn(rng.standard_normal(3), 1)
            assert hits[0][0] == forest.keys[0]

    def test_rebuild_same_seed_identical(self, tmp_path):
        table = random_table(300, 8, seed=1)
        keys = make_keys(300)
        config = IndexConfig(n_trees=5, leaf_size=8, seed=42)
        a, b = tmp_path / "a.u1ix", tmp_path / "b.u1ix"
        RPForest.build(table, keys, config).save(a)
        RPForest.build(table, keys, config).save(b)
        assert a.read_bytes() == b.read_bytes()

    def test_different_seed_differs(self, tmp_path):
        table = random_table(300, 8, seed=1)
        keys = make_keys(300)
        a, b = tmp_path / "a.u1ix", tmp_path / "b.u1ix"
        RPForest.build(table, keys, IndexConfig(seed=1)).save(a)
        RPForest.build(table, keys, IndexConfig(seed=2)).save(b)
        assert a.read_bytes() != b.read_bytes()

    def test_mixed_dimensionality_rejected(self):
        with pytest.raises(ValueError):
            RPForest.build([[1.0, 2.0], [1.0]], make_keys(2))

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            RPForest.build(np.zeros((0, 4)), [])

    def test_every_vector_in_exactly_one_leaf_per_tree(self):
        table = random_table(257, 6, seed=3)
        forest = RPForest.build(table, make_keys(257),
                                IndexConfig(n_trees=3, leaf_size=4, seed=5))
        for tree in forest._trees:
            stored = np.concatenate([leaf for leaf in tree.leaves
                                     if leaf is not None])
            assert sorted(stored.tolist()) == list(range(257))

    def test_depth_bounded(self):
        n, leaf = 1000, 8
        table = random_table(n, 10, seed=4)
        forest = RPForest.build(table, make_keys(n),
                                IndexConfig(n_trees=4, leaf_size=leaf, seed=6))
        bound = int(np.ceil(np.log2(n / leaf))) + 12
        for t in range(4):
            assert forest.depth(t) <= bound

    def test_degenerate_identical_points(self):
        table = np.ones((50, 4))
        forest = RPForest.build(table, make_keys(50),
                                IndexConfig(n_trees=2, leaf_size=4, seed=0))
        hits = forest.query_knn(np.ones(4), 5, search_budget=50)
        assert len(hits) == 5
        assert all(d == 0.0 for _, d in hits)


class TestQuery:
    def test_orthonormal_basis_exact_hit(self):
        table = np.eye(3)
        keys = [VectorKey("a", 0, 0, 0), VectorKey("b", 0, 0, 1),
                VectorKey("c", 0, 0, 2)]
        forest = RPForest.build(table, keys, IndexConfig(n_trees=4, seed=1))
        hits = forest.query_knn(np.array([1.0, 0.0, 0.0]), 1, search_budget=3)
        assert hits[0] == (keys[0], 0.0)

    def test_tie_broken_lexicographically(self):
        # two vectors equidistant from the query
        table = np.array([[1.0, 0.0], [-1.0, 0.0]])
        keys = [VectorKey("zed", 0, 0, 0), VectorKey("abc", 0, 0, 1)]
        forest = RPForest.build(table, keys, IndexConfig(n_trees=2, seed=0))
        hits = forest.query_knn(np.array([0.0, 5.0]), 2, search_budget=2)
        assert [h[0].image_id for h in hits] == ["abc", "zed"]

    def test_row_col_tiebreak(self):
        table = np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
        keys = [VectorKey("a", 1, 1, 0), VectorKey("a", 0, 2, 0),
                VectorKey("a", 0, 1, 0)]
        hits = brute_force_knn(table, keys, np.array([0.0, 0.0]), 3)
        assert [(h[0].row, h[0].col) for h in hits] == [(0, 1), (0, 2), (1, 1)]

    def test_exclude_image(self):
        table = np.array([[0.0, 0.0], [1.0, 0.0]])
        keys = [VectorKey("self", 0, 0, 0), VectorKey("other", 0, 0, 1)]
        forest = RPForest.build(table, keys, IndexConfig(n_trees=2, seed=0))
        hits = forest.query_knn(np.zeros(2), 2, exclude_image="self",
                                search_budget=2)
        assert [h[0].image_id for h in hits] == ["other"]

    def test_dimension_mismatch(self):
        forest = RPForest.build(random_table(10, 4), make_keys(10))
        with pytest.raises(ValueError, match="shape"):
            forest.query_knn(np.zeros(5), 1)

    def test_exactness_at_full_budget(self):
        n, dim, k = 500, 32, 10
        table = random_table(n, dim, seed=9)
        keys = make_keys(n)
        forest = RPForest.build(table, keys,
                                IndexConfig(n_trees=16, leaf_size=8, seed=2))
        rng = np.random.default_rng(10)
        for _ in range(20):
            q = rng.standard_normal(dim)
            got = forest.query_knn(q, k, search_budget=n)
            want = brute_force_knn(table, keys, q, k)
            assert got == want

    def test_query_determinism(self):
        table = random_table(400, 16, seed=11)
        keys = make_keys(400)
        config = IndexConfig(n_trees=8, leaf_size=8, seed=3)
        f1 = RPForest.build(table, keys, config)
        f2 = RPForest.build(table, keys, config)
        rng = np.random.default_rng(12)
        for _ in range(10):
            q = rng.standard_normal(16)
            assert f1.query_knn(q, 5) == f2.query_knn(q, 5)


class TestBruteForce:
    def test_k_larger_than_n_returns_all(self):
        table = random_table(7, 3, seed=13)
        keys = make_keys(7)
        hits = brute_force_knn(table, keys, np.zeros(3), 20)
        assert len(hits) == 7
        dists = [d for _, d in hits]
        assert dists == sorted(dists)

    def test_query_in_memory_distance_zero(self):
        table = random_table(20, 5, seed=14)
        keys = make_keys(20)
        hits = brute_force_knn(table, keys, table[7], 1)
        assert hits[0] == (keys[7], 0.0)


class TestMetrics:
    def test_cosine_equals_euclidean_ranking_for_unit_vectors(self):
        rng = np.random.default_rng(15)
        table = rng.standard_normal((300, 12))
        table /= np.linalg.norm(table, axis=1, keepdims=True)
        keys = make_keys(300)
        fe = RPForest.build(table, keys, IndexConfig(n_trees=8, seed=4,
                                                     metric="euclidean"))
        fc = RPForest.build(table, keys, IndexConfig(n_trees=8, seed=4,
                                                     metric="cosine"))
        for i in range(15):
            q = rng.standard_normal(12)
            q /= np.linalg.norm(q)
            he = fe.query_knn(q, 8, search_budget=300)
            hc = fc.query_knn(q, 8, search_budget=300)
            assert [h[0] for h in he] == [h[0] for h in hc]

    def test_cosine_rejects_zero_vector(self):
        table = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(ValueError, match="non-zero"):
            RPForest.build(table, make_keys(2), IndexConfig(metric="cosine"))


class TestPersistence:
    def test_round_trip_identical_queries(self, tmp_path):
        table = random_table(300, 10, seed=16)
        keys = [VectorKey(f"img{i % 30}", i // 30, i % 10, i % 4)
                for i in range(300)]
        forest = RPForest.build(table, keys,
                                IndexConfig(n_trees=6, leaf_size=8, seed=5))
        path = tmp_path / "index.u1ix"
        forest.save(path)
        loaded = RPForest.load(path)
        assert loaded.config == forest.config
        rng = np.random.default_rng(17)
        for _ in range(10):
            q = rng.standard_normal(10)
            assert loaded.query_knn(q, 6) == forest.query_knn(q, 6)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.u1ix"
        path.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(DataFormatError, match="magic"):
            RPForest.load(path)


class TestConfigValidation:
    def test_bad_tree_count(self):
        with pytest.raises(ValueError):
            IndexConfig(n_trees=0)

    def test_bad_leaf_size(self):
        with pytest.raises(ValueError):
            IndexConfig(leaf_size=1)

    def test_budget_smaller_than_k(self):
        forest = RPForest.build(random_table(10, 4), make_keys(10))
        with pytest.raises(ValueError, match="budget"):
            forest.query_knn(np.zeros(4), 5, search_budget=3)
