"""
空間分割による順序モジュール
Hilbert曲線・Z-order・ポイント四分木・R-tree（各フレーム独立）
"""
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .trajectories import rank_by_key

# 四分木の子の並び（DFSの訪問順）
NW, NE, SW, SE = 0, 1, 2, 3


class GridDiscretization(BaseModel):
    """
    空間充填曲線の格子設定

    bits: 格子は 2^bits × 2^bits
    frame_box: 量子化に使う (xmin, ymin, xmax, ymax)。None ならフレームごとの外接正方形
    """
    bits: int = Field(16, ge=1, le=31)
    frame_box: Optional[Tuple[float, float, float, float]] = None


def quantize(points: np.ndarray, disc: GridDiscretization) -> Tuple[np.ndarray, np.ndarray]:
    """
    点を格子セルに量子化する

    Args:
        points: (..., n, 2) の座標
        disc: 格子設定

    Returns:
        (cx, cy) の整数配列（cy は北ほど大きい）
    """
    points = np.asarray(points, dtype=float)
    size = 1 << disc.bits

    if disc.frame_box is not None:
        x0, y0, x1, y1 = disc.frame_box
        lo = np.array([x0, y0], dtype=float)
        side = np.asarray(max(x1 - x0, y1 - y0), dtype=float)
        center_pad = np.array([(side - (x1 - x0)) / 2.0, (side - (y1 - y0)) / 2.0])
        lo = lo - center_pad
    else:
        # フレームごとの外接矩形を正方形化（短い辺を両側に広げる）
        mins = points.min(axis=-2, keepdims=True)
        maxs = points.max(axis=-2, keepdims=True)
        extent = maxs - mins
        side = extent.max(axis=-1, keepdims=True)
        lo = mins - (side - extent) / 2.0

    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(side > 0, (points - lo) / side * size, 0.0)
    cells = np.clip(np.floor(scaled), 0, size - 1).astype(np.int64)
    return cells[..., 0], cells[..., 1]


def _spread_bits(v: np.ndarray) -> np.ndarray:
    """32ビット整数のビット間に0を挟む"""
    v = v.astype(np.uint64) & np.uint64(0xFFFFFFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x0000FFFF0000FFFF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x00FF00FF00FF00FF)
    v = (v | (v << np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    v = (v | (v << np.uint64(2))) & np.uint64(0x3333333333333333)
    v = (v | (v << np.uint64(1))) & np.uint64(0x5555555555555555)
    return v


def morton_index(cx: np.ndarray, cy: np.ndarray, bits: int) -> np.ndarray:
    """
    Z-order (Morton) インデックス

    行（北が0）のビットを上位に置くので、各階層で NW, NE, SW, SE の順になる。
    """
    cx = np.asarray(cx, dtype=np.int64)
    row = (1 << bits) - 1 - np.asarray(cy, dtype=np.int64)
    return (_spread_bits(row) << np.uint64(1)) | _spread_bits(cx)


def hilbert_index(cx: np.ndarray, cy: np.ndarray, bits: int) -> np.ndarray:
    """
    Hilbert曲線インデックス

    1次の訪問順は SW, NW, NE, SE（y軸上向き）。
    """
    x = np.array(cx, dtype=np.int64, copy=True)
    y = np.array(cy, dtype=np.int64, copy=True)
    n = 1 << bits
    d = np.zeros(np.broadcast(x, y).shape, dtype=np.int64)

    s = n >> 1
    while s > 0:
        rx = (x & s) > 0
        ry = (y & s) > 0
        d += s * s * ((3 * rx.astype(np.int64)) ^ ry.astype(np.int64))
        # 象限を基本向きへ回転
        turn = ~ry
        flip = turn & rx
        x = np.where(flip, n - 1 - x, x)
        y = np.where(flip, n - 1 - y, y)
        x, y = np.where(turn, y, x), np.where(turn, x, y)
        s >>= 1
    return d


def hilbert_order(points: np.ndarray, disc: Optional[GridDiscretization] = None) -> np.ndarray:
    """
    Hilbert曲線順の順位

    Args:
        points: (n, 2) または (T, n, 2)
        disc: 格子設定（既定 bits=16, フレームごとの箱）

    Returns:
        順位配列 (n,) または (T, n)
    """
    disc = disc or GridDiscretization()
    cx, cy = quantize(points, disc)
    return rank_by_key(hilbert_index(cx, cy, disc.bits))


def zorder_order(points: np.ndarray, disc: Optional[GridDiscretization] = None) -> np.ndarray:
    """Z-order順の順位（同じセルはエンティティ番号順）"""
    disc = disc or GridDiscretization()
    cx, cy = quantize(points, disc)
    return rank_by_key(morton_index(cx, cy, disc.bits))


def build_quadtree(frame: np.ndarray) -> np.ndarray:
    """
    エンティティ順に挿入したポイント四分木

    Returns:
        children (n, 4): 各点の NW, NE, SW, SE 子の点番号（なければ -1）。根は点0
    """
    frame = np.asarray(frame, dtype=float)
    n = frame.shape[0]
    children = np.full((n, 4), -1, dtype=np.int64)
    xs = frame[:, 0].tolist()
    ys = frame[:, 1].tolist()

    for i in range(1, n):
        node = 0
        while True:
            east = xs[i] >= xs[node]
            north = ys[i] >= ys[node]
            quadrant = (NW if north else SW) + (1 if east else 0)
            child = children[node, quadrant]
            if child < 0:
                children[node, quadrant] = i
                break
            node = child
    return children


def quadtree_order(frame: np.ndarray) -> np.ndarray:
    """ポイント四分木の前順DFS（節点→NW, NE, SW, SE）による順位"""
    children = build_quadtree(frame)
    n = children.shape[0]
    visit: List[int] = []
    stack = [0]
    while stack:
        node = stack.pop()
        visit.append(node)
        for child in children[node, ::-1]:
            if child >= 0:
                stack.append(int(child))

    ranks = np.empty(n, dtype=np.int64)
    ranks[visit] = np.arange(n)
    return ranks


# ---- R-tree ----

Rect = Tuple[float, float, float, float]


def _area(r: Rect) -> float:
    return (r[2] - r[0]) * (r[3] - r[1])


def _margin(r: Rect) -> float:
    return (r[2] - r[0]) + (r[3] - r[1])


def _union(a: Rect, b: Rect) -> Rect:
    return (min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3]))


def _cover(entries) -> Rect:
    rect = entries[0][0]
    for r, _ in entries[1:]:
        rect = _union(rect, r)
    return rect


class RTreeNode:
    """
    R-treeの節点

    entries は (MBR, 子) のリスト。葉では子は点番号、内部節点では RTreeNode。
    """
    __slots__ = ("leaf", "entries", "parent")

    def __init__(self, leaf: bool, parent: Optional["RTreeNode"] = None):
        self.leaf = leaf
        self.entries: list = []
        self.parent = parent

    @property
    def mbr(self) -> Rect:
        return _cover(self.entries)


def _choose_leaf(node: RTreeNode, rect: Rect) -> RTreeNode:
    while not node.leaf:
        best = None
        best_key = None
        for r, child in node.entries:
            key = (_area(_union(r, rect)) - _area(r), _area(r))
            if best_key is None or key < best_key:
                best, best_key = child, key
        node = best
    return node


def _pick_seeds(entries) -> Tuple[int, int]:
    best = (0, 1)
    best_key = None
    for i in range(len(entries)):
        for j in range(i + 1, len(entries)):
            a, b = entries[i][0], entries[j][0]
            u = _union(a, b)
            key = (_area(u) - _area(a) - _area(b), _margin(u))
            if best_key is None or key > best_key:
                best, best_key = (i, j), key
    return best


def _quadratic_split(entries, min_fill: int):
    """Guttmanの二次分割"""
    s1, s2 = _pick_seeds(entries)
    groups = [[entries[s1]], [entries[s2]]]
    rects = [entries[s1][0], entries[s2][0]]
    remaining = [e for k, e in enumerate(entries) if k not in (s1, s2)]

    while remaining:
        for g in (0, 1):
            if len(groups[g]) + len(remaining) == min_fill:
                groups[g].extend(remaining)
                rects[g] = _cover(groups[g])
                remaining = []
                break
        if not remaining:
            break

        # PickNext: 2グループへの拡大量の差が最大のもの
        pick, pick_diff = 0, -1.0
        for k, (r, _) in enumerate(remaining):
            d1 = _area(_union(rects[0], r)) - _area(rects[0])
            d2 = _area(_union(rects[1], r)) - _area(rects[1])
            if abs(d1 - d2) > pick_diff:
                pick, pick_diff = k, abs(d1 - d2)
        entry = remaining.pop(pick)
        r = entry[0]
        d1 = _area(_union(rects[0], r)) - _area(rects[0])
        d2 = _area(_union(rects[1], r)) - _area(rects[1])
        key1 = (d1, _area(rects[0]), len(groups[0]))
        key2 = (d2, _area(rects[1]), len(groups[1]))
        g = 0 if key1 <= key2 else 1
        groups[g].append(entry)
        rects[g] = _union(rects[g], r)

    return groups


def _split_node(node: RTreeNode, min_fill: int) -> RTreeNode:
    first, second = _quadratic_split(node.entries, min_fill)
    sibling = RTreeNode(node.leaf, node.parent)
    node.entries = first
    sibling.entries = second
    if not node.leaf:
        for _, child in sibling.entries:
            child.parent = sibling
    return sibling


def build_rtree(frame: np.ndarray, capacity: int = 8) -> RTreeNode:
    """
    点をエンティティ順に挿入したR-tree（二次分割、再挿入なし）

    Args:
        frame: (n, 2) の座標
        capacity: 節点あたりの最大エントリ数（2以上）

    Returns:
        根節点
    """
    if capacity < 2:
        raise ValueError(f"capacity must be >= 2, got {capacity}")
    min_fill = max(1, capacity // 2)
    root = RTreeNode(leaf=True)

    for i, (x, y) in enumerate(np.asarray(frame, dtype=float).tolist()):
        rect = (x, y, x, y)
        node = _choose_leaf(root, rect)
        node.entries.append((rect, i))
        sibling = _split_node(node, min_fill) if len(node.entries) > capacity else None

        # AdjustTree
        while node.parent is not None:
            parent = node.parent
            for k, (_, child) in enumerate(parent.entries):
                if child is node:
                    parent.entries[k] = (node.mbr, node)
                    break
            if sibling is not None:
                parent.entries.append((sibling.mbr, sibling))
                sibling = _split_node(parent, min_fill) if len(parent.entries) > capacity else None
            node = parent

        if sibling is not None:
            new_root = RTreeNode(leaf=False)
            new_root.entries = [(node.mbr, node), (sibling.mbr, sibling)]
            node.parent = new_root
            sibling.parent = new_root
            root = new_root

    return root


def _center_key(entry):
    r = entry[0]
    return ((r[0] + r[2]) / 2.0, (r[1] + r[3]) / 2.0)


def rtree_order(frame: np.ndarray, capacity: int = 8) -> np.ndarray:
    """R-treeのDFSによる順位（内部節点の子はMBR中心の x, y 昇順）"""
    root = build_rtree(frame, capacity)
    visit: List[int] = []

    stack = [root]
    while stack:
        node = stack.pop()
        if node.leaf:
            visit.extend(i for _, i in node.entries)
        else:
            ordered = sorted(node.entries, key=_center_key)
            stack.extend(child for _, child in reversed(ordered))

    ranks = np.empty(len(visit), dtype=np.int64)
    ranks[visit] = np.arange(len(visit))
    return ranks
