"""
近傍計算モジュール
距離行列とk近傍（同距離はエンティティ番号順）
"""
from typing import Tuple

import numpy as np
from scipy.spatial.distance import cdist


def pairwise_distances(frame: np.ndarray) -> np.ndarray:
    """ユークリッド距離行列 (n, n)"""
    frame = np.asarray(frame, dtype=float)
    return cdist(frame, frame)


def knn_indices(dist: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    距離行列からk近傍を求める

    Args:
        dist: 距離行列 (n, n)
        k: 近傍数（n-1以下）

    Returns:
        (近傍インデックス (n, k), 近傍距離 (n, k))
    """
    masked = np.array(dist, dtype=float)
    np.fill_diagonal(masked, np.inf)
    # 安定ソートで同距離はインデックス昇順
    idx = np.argsort(masked, axis=1, kind="stable")[:, :k]
    return idx, np.take_along_axis(masked, idx, axis=1)
