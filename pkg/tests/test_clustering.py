"""
階層クラスタリング順序のテスト（CLC・SNN・最適葉順序）
"""
import sys
from itertools import permutations
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).parent.parent))

from services.clustering import (
    ClusterTree,
    agglomerate,
    clc_order,
    clc_tree,
    cut_clusters,
    optimal_leaf_order,
    path_length,
    snn_dissimilarity,
    snn_order,
    snn_tree,
)


def line(*xs):
    return np.array([[x, 0.0] for x in xs])


def two_blobs(rng, size=5, gap=100.0):
    a = rng.normal(scale=0.5, size=(size, 2))
    b = rng.normal(scale=0.5, size=(size, 2)) + [gap, 0.0]
    return np.vstack([a, b])


def test_complete_linkage_on_line():
    """{0,1,10,11} は近い組から併合される"""
    tree = clc_tree(line(0, 1, 10, 11))
    np.testing.assert_array_equal(tree.merges, [[0, 1], [2, 3], [4, 5]])
    np.testing.assert_allclose(tree.distances, [1.0, 1.0, 11.0])
    assert tree.root == 6
    assert tree.leaves() == [0, 1, 2, 3]


def test_agglomerate_uses_maximum_linkage():
    D = np.array([
        [0.0, 1.0, 4.0],
        [1.0, 0.0, 2.0],
        [4.0, 2.0, 0.0],
    ])
    tree = agglomerate(D)
    np.testing.assert_array_equal(tree.merges[0], [0, 1])
    assert tree.distances[1] == 4.0


def test_agglomerate_ties_pick_smallest_pair():
    D = np.ones((4, 4))
    tree = agglomerate(D)
    np.testing.assert_array_equal(tree.merges[0], [0, 1])


def test_cluster_tree_merge_count():
    with pytest.raises(ValueError):
        ClusterTree(n=3, merges=np.array([[0, 1]]), distances=np.array([1.0]))


def test_clc_order_on_line():
    frame = line(0, 1, 10, 11)
    ranks = clc_order(frame)
    np.testing.assert_array_equal(ranks, [0, 1, 2, 3])
    assert path_length(frame, np.argsort(ranks)) == pytest.approx(11.0)
    print("✓ CLC の最適葉順序")


def test_clc_order_on_shuffled_line_is_shortest():
    frame = line(10, 0, 11, 1)
    ranks = clc_order(frame)
    assert path_length(frame, np.argsort(ranks)) == pytest.approx(11.0)


def random_tree(rng, n):
    """ランダムな併合順の二分木"""
    active = list(range(n))
    merges = []
    for s in range(n - 1):
        a, b = rng.choice(len(active), size=2, replace=False)
        merges.append((active[a], active[b]))
        active = [v for i, v in enumerate(active) if i not in (a, b)] + [n + s]
    return ClusterTree(n=n, merges=merges, distances=np.arange(1.0, n))


def flip_orders(tree, node=None):
    """子の入れ替えで作れる全ての葉順序"""
    node = tree.root if node is None else node
    if tree.is_leaf(node):
        return [[node]]
    a, b = tree.children(node)
    out = []
    for left in flip_orders(tree, a):
        for right in flip_orders(tree, b):
            out.append(left + right)
            out.append(right + left)
    return out


def test_optimal_leaf_order_matches_brute_force():
    """200本のランダム木で、最短かつ同じ長さの中で辞書順最小の順序を返す"""
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(2, 9))
        # 整数格子なので重なる点や同じ長さの順序が頻繁に出る
        frame = rng.integers(0, 4, size=(n, 2)).astype(float)
        tree = random_tree(rng, n)

        orders = flip_orders(tree)
        lengths = [path_length(frame, o) for o in orders]
        best = min(lengths)
        expected = min(o for o, length in zip(orders, lengths) if length <= best + 1e-9 * max(best, 1.0))

        got = np.argsort(optimal_leaf_order(tree, frame)).tolist()
        assert path_length(frame, got) == pytest.approx(best)
        assert got == expected, (frame.tolist(), tree.merges.tolist())
    print("✓ 200本の木で全探索と一致")


def test_optimal_leaf_order_ties_take_smallest_sequence():
    """0 と 2 が重なっていれば 0, 2, 1 の順"""
    frame = line(3, 0, 3)
    np.testing.assert_array_equal(np.argsort(clc_order(frame)), [0, 2, 1])


def test_optimal_leaf_order_keeps_subtrees_contiguous():
    rng = np.random.default_rng(3)
    frame = two_blobs(rng)
    ranks = clc_order(frame)
    first = set(ranks[:5].tolist())
    assert first in ({0, 1, 2, 3, 4}, {5, 6, 7, 8, 9})


def test_single_point():
    frame = np.array([[2.0, 3.0]])
    np.testing.assert_array_equal(clc_order(frame), [0])
    np.testing.assert_array_equal(snn_order(frame, k=3), [0])


def test_snn_dissimilarity_values():
    """同じブロブ内は共有近傍 k-1 個、ブロブ間は0個"""
    rng = np.random.default_rng(0)
    frame = two_blobs(rng)
    F = snn_dissimilarity(frame, k=4)
    assert F[0, 1] == pytest.approx(1.0 / 4.0)
    assert F[0, 7] == pytest.approx(1.0)
    np.testing.assert_allclose(F, F.T)


def test_snn_order_separates_blobs():
    rng = np.random.default_rng(1)
    frame = two_blobs(rng)
    ranks = snn_order(frame, k=4)
    assert set(ranks[:5].tolist()) in ({0, 1, 2, 3, 4}, {5, 6, 7, 8, 9})
    assert sorted(ranks.tolist()) == list(range(10))


def test_snn_k_validation():
    with pytest.raises(ValueError):
        snn_tree(line(0, 1, 2), k=0)


def test_snn_large_k_is_clamped():
    ranks = snn_order(line(0, 1, 2), k=50)
    assert sorted(ranks.tolist()) == [0, 1, 2]


def test_cut_clusters_stops_at_jump():
    tree = clc_tree(line(0, 1, 10, 11))
    clusters = cut_clusters(tree, factor=2.0)
    assert [c.tolist() for c in clusters] == [[0, 1], [2, 3]]
    assert len(cut_clusters(tree, factor=100.0)) == 1


def test_path_length():
    frame = line(0, 3, 1)
    assert path_length(frame, [0, 1, 2]) == pytest.approx(5.0)
    assert path_length(frame, [0, 2, 1]) == pytest.approx(3.0)
    assert min(path_length(frame, p) for p in permutations(range(3))) == pytest.approx(3.0)
