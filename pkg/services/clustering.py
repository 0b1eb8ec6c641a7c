"""
階層クラスタリングによる順序モジュール
完全連結法 (CLC)・共有最近傍 (SNN)・最適葉順序・クラスタ切断
"""
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .neighbors import knn_indices, pairwise_distances


@dataclass(frozen=True, eq=False)
class ClusterTree:
    """
    二分凝集木

    葉はエンティティ番号 0..n-1、s番目の併合でできる内部節点は n+s。
    merges[s] = (左の子, 右の子)、distances[s] は併合時の非類似度。
    """
    n: int
    merges: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        merges = np.asarray(self.merges, dtype=np.int64).reshape(-1, 2)
        distances = np.asarray(self.distances, dtype=float).reshape(-1)
        if merges.shape[0] != self.n - 1 or distances.shape[0] != self.n - 1:
            raise ValueError(f"a tree over {self.n} leaves needs {self.n - 1} merges")
        object.__setattr__(self, "merges", merges)
        object.__setattr__(self, "distances", distances)

    @property
    def root(self) -> int:
        return 2 * self.n - 2 if self.n > 1 else 0

    def is_leaf(self, node: int) -> bool:
        return node < self.n

    def children(self, node: int):
        return tuple(int(c) for c in self.merges[node - self.n])

    def leaves(self, node: int = None) -> List[int]:
        """部分木の葉（子の並び順）"""
        node = self.root if node is None else node
        out: List[int] = []
        stack = [node]
        while stack:
            v = stack.pop()
            if self.is_leaf(v):
                out.append(v)
            else:
                left, right = self.children(v)
                stack.append(right)
                stack.append(left)
        return out


def agglomerate(dissimilarity: np.ndarray) -> ClusterTree:
    """
    完全連結法による凝集

    同じ距離の候補は (クラスタAの最小番号, クラスタBの最小番号) の辞書順で選ぶ。
    """
    F = np.array(dissimilarity, dtype=float)
    n = F.shape[0]
    np.fill_diagonal(F, np.inf)

    # スロットiには最小番号がiのクラスタが入る
    slot_node = list(range(n))
    merges = np.empty((max(n - 1, 0), 2), dtype=np.int64)
    distances = np.empty(max(n - 1, 0))

    for s in range(n - 1):
        # 対称行列の行優先の最初の最小値 = 辞書順最小のペア (a < b)
        a, b = divmod(int(np.argmin(F)), n)
        merges[s] = (slot_node[a], slot_node[b])
        distances[s] = F[a, b]

        merged = np.maximum(F[a], F[b])
        merged[a] = np.inf
        F[a, :] = merged
        F[:, a] = merged
        F[b, :] = np.inf
        F[:, b] = np.inf
        slot_node[a] = n + s

    return ClusterTree(n=n, merges=merges, distances=distances)


def clc_tree(frame: np.ndarray) -> ClusterTree:
    """ユークリッド距離の完全連結法クラスタ木"""
    return agglomerate(pairwise_distances(frame))


def snn_dissimilarity(frame: np.ndarray, k: int = 10) -> np.ndarray:
    """
    共有最近傍の非類似度 1/(x+1)

    x は2点のk近傍集合（自身を除く）の共通要素数。
    """
    dist = pairwise_distances(frame)
    n = dist.shape[0]
    k_eff = min(k, n - 1)
    member = np.zeros((n, n), dtype=np.int64)
    if k_eff > 0:
        idx, _ = knn_indices(dist, k_eff)
        np.put_along_axis(member, idx, 1, axis=1)
    shared = member @ member.T
    return 1.0 / (shared + 1.0)


def snn_tree(frame: np.ndarray, k: int = 10) -> ClusterTree:
    """
    SNN非類似度の完全連結法クラスタ木

    同じSNN値はユークリッド距離で分ける。距離項は最小のSNN段差の半分未満に抑える。
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    dist = pairwise_distances(frame)
    n = dist.shape[0]
    k_eff = max(min(k, n - 1), 1)
    snn = snn_dissimilarity(frame, k)
    max_dist = dist.max() if n > 1 else 0.0
    if max_dist > 0:
        snn = snn + dist / (2.0 * k_eff * (k_eff + 1) * max_dist)
    return agglomerate(snn)


def path_length(frame: np.ndarray, order) -> float:
    """並び順に点を結んだ経路長"""
    pts = np.asarray(frame, dtype=float)[np.asarray(order, dtype=np.int64)]
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def _min_plus(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """(min, +) 行列積"""
    return (left[:, :, None] + right[None, :, :]).min(axis=1)


def optimal_leaf_order(tree: ClusterTree, frame: np.ndarray) -> np.ndarray:
    """
    子の入れ替えだけで経路長を最小にする葉順序（Bar-Josephの動的計画法）

    Args:
        tree: クラスタ木
        frame: 葉に対応する点 (n, 2)

    Returns:
        順位配列 (n,)
    """
    n = tree.n
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    D = pairwise_distances(frame)

    # cost[v][i, j]: 部分木vを左端 leaves[v][i]、右端 leaves[v][j] で並べたときの最短経路
    leaves: Dict[int, np.ndarray] = {i: np.array([i]) for i in range(n)}
    cost: Dict[int, np.ndarray] = {i: np.zeros((1, 1)) for i in range(n)}
    for s, (a, b) in enumerate(tree.merges.tolist()):
        La, Lb = leaves[a], leaves[b]
        cross = _min_plus(_min_plus(cost[a], D[np.ix_(La, Lb)]), cost[b])
        na, nb = len(La), len(Lb)
        M = np.full((na + nb, na + nb), np.inf)
        M[:na, na:] = cross
        M[na:, :na] = cross.T
        leaves[n + s] = np.concatenate([La, Lb])
        cost[n + s] = M

    root = tree.root
    M = cost[root]
    best = M.min()
    tol = 1e-9 * max(best, 1.0)
    memo: Dict[Tuple[int, int, int], Tuple[int, ...]] = {}

    def lexmin(v: int, p: int, q: int) -> Tuple[int, ...]:
        # 端点 leaves[v][p], leaves[v][q] の最短順序のうち辞書順最小のもの
        if v < n:
            return (v,)
        if (v, p, q) in memo:
            return memo[(v, p, q)]
        a, b = (int(c) for c in tree.merges[v - n])
        na = len(leaves[a])
        if p < na:
            first, second, i, j = a, b, p, q - na
        else:
            first, second, i, j = b, a, p - na, q
        Lf, Lg = leaves[first], leaves[second]
        vals = cost[first][i][:, None] + D[np.ix_(Lf, Lg)] + cost[second][:, j][None, :]
        hits = vals <= cost[v][p, q] + tol

        # 前半の列は右端ごとに異なるので、前半を決めてから後半を選ぶ
        head, k_best = None, -1
        for k in np.flatnonzero(hits.any(axis=1)).tolist():
            seq = lexmin(first, i, k)
            if head is None or seq < head:
                head, k_best = seq, k
        tail = None
        for m in np.flatnonzero(hits[k_best]).tolist():
            seq = lexmin(second, m, j)
            if tail is None or seq < tail:
                tail = seq
        memo[(v, p, q)] = head + tail
        return memo[(v, p, q)]

    # 全体を反転しても長さは同じなので、先頭が最小番号になる端点だけを比べる
    ends = np.argwhere(M <= best + tol)
    lead = min(int(leaves[root][p]) for p, _ in ends)
    order = None
    for p, q in ends.tolist():
        if leaves[root][p] != lead:
            continue
        seq = lexmin(root, p, q)
        if order is None or seq < order:
            order = seq

    ranks = np.empty(n, dtype=np.int64)
    ranks[list(order)] = np.arange(n)
    return ranks


def clc_order(frame: np.ndarray) -> np.ndarray:
    """CLC: 完全連結法の木を最適葉順序で並べる"""
    return optimal_leaf_order(clc_tree(frame), frame)


def snn_order(frame: np.ndarray, k: int = 10) -> np.ndarray:
    """SNN: 共有最近傍の木を最適葉順序で並べる"""
    return optimal_leaf_order(snn_tree(frame, k), frame)


def cut_clusters(tree: ClusterTree, factor: float = 2.0) -> List[np.ndarray]:
    """
    併合距離が直前の併合の factor 倍を超える手前で凝集を止める

    Returns:
        クラスタ（昇順の番号配列）のリスト。最小番号順
    """
    n = tree.n
    members: Dict[int, List[int]] = {i: [i] for i in range(n)}
    for s, (a, b) in enumerate(tree.merges.tolist()):
        if s > 0 and tree.distances[s] > factor * tree.distances[s - 1]:
            break
        members[n + s] = members.pop(a) + members.pop(b)

    clusters = [np.array(sorted(m), dtype=np.int64) for m in members.values()]
    clusters.sort(key=lambda c: int(c[0]))
    return clusters
