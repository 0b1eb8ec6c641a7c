"""
指標計算モジュール
空間品質 (KSra, KSdi) と安定性 (JMP, CRS, KSte, Kendall τ) の指標を計算
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .errors import DomainError
from .neighbors import knn_indices, pairwise_distances
from .trajectories import OrderingSummary, TrajectoryDataset

SPATIAL_METRICS = ("KSra", "KSdi")
STABILITY_METRICS = ("JMP", "CRS", "KSte", "TAU")

METRIC_DESCRIPTIONS = {
    "KSra": "近傍の順位重み付きKeys Similarity（小さいほど空間品質が良い）",
    "KSdi": "近傍の距離重み付きKeys Similarity（小さいほど空間品質が良い）",
    "JMP": "連続フレーム間の順位変化の合計（0で完全に安定）",
    "CRS": "連続フレーム間の交差（反転ペア）数（0で完全に安定）",
    "KSte": "前フレームの順位近傍が次フレームでどれだけ離れたか（小さいほど安定）",
    "TAU": "連続フレーム間の Kendall τ（1で順序不変、-1で完全反転）",
}


class NeighborSpec(BaseModel):
    """Keys Similarity の近傍数"""
    k: int = Field(10, ge=1)

    def effective_k(self, n: int) -> int:
        """n-1 を超える k は n-1 に丸める"""
        if n < 2:
            raise DomainError("Keys Similarity needs at least 2 entities")
        if self.k > n - 1:
            print(f"[警告] k={self.k} は n-1={n - 1} を超えるため {n - 1} に丸めます")
            return n - 1
        return self.k


@dataclass(frozen=True, eq=False)
class MetricSeries:
    """
    フレーム（または遷移）ごとの指標値

    空間指標は長さT、安定性指標は長さT-1。
    """
    name: str
    values: np.ndarray

    @property
    def summary(self) -> Optional[Dict[str, float]]:
        """平均・最大・最小・標準偏差（値がなければ None）"""
        if len(self.values) == 0:
            return None
        v = np.asarray(self.values, dtype=float)
        return {
            "mean": float(v.mean()),
            "max": float(v.max()),
            "min": float(v.min()),
            "std": float(v.std()),
        }

    def to_dict(self) -> Dict:
        return {"name": self.name, "values": [float(x) for x in self.values], "summary": self.summary}


def tie_rank_value(d):
    """
    順位差dに対する同順位値 2d-1

    Args:
        d: 順位差（1以上、配列可）
    """
    arr = np.asarray(d)
    if (arr < 1).any():
        raise DomainError(f"rank difference must be >= 1, got {d}")
    out = 2 * arr - 1
    return out.item() if np.ndim(out) == 0 else out


def harmonic(k: int) -> float:
    """調和数 H_k"""
    return float((1.0 / np.arange(1, k + 1)).sum())


def spatial_neighbors(frame: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """ユークリッド距離のk近傍（同距離はエンティティ番号順）"""
    return knn_indices(pairwise_distances(frame), k)


def _frame_diameter(frame: np.ndarray) -> float:
    extent = np.ptp(np.asarray(frame, dtype=float), axis=0)
    return float(np.hypot(extent[0], extent[1]))


def _ks_terms(frame, ranking, k):
    ranking = np.asarray(ranking, dtype=np.int64)
    idx, dist = spatial_neighbors(frame, k)
    r = 2 * np.abs(ranking[:, None] - ranking[idx]) - 1
    return r.astype(float), dist


def ksra(frame: np.ndarray, ranking: np.ndarray, spec: Optional[NeighborSpec] = None) -> float:
    """
    順位重み付き Keys Similarity

    KSra = Σ_i Σ_{j=1..k} r(i,j)/j ÷ (n·H_k)
    """
    spec = spec or NeighborSpec()
    n = len(ranking)
    k = spec.effective_k(n)
    r, _ = _ks_terms(frame, ranking, k)
    return float((r / np.arange(1, k + 1)).sum() / (n * harmonic(k)))


def _ksdi_weights(dist: np.ndarray, diameter: float) -> np.ndarray:
    # 重なった点の重みは 1/(1e-12·直径) で頭打ち
    floor = 1e-12 * diameter if diameter > 0 else 1e-12
    return 1.0 / np.maximum(dist, floor)


def ksdi(frame: np.ndarray, ranking: np.ndarray, spec: Optional[NeighborSpec] = None) -> float:
    """
    距離重み付き Keys Similarity

    KSdi = Σ w·r / Σ w、w = 1/距離
    """
    spec = spec or NeighborSpec()
    k = spec.effective_k(len(ranking))
    r, dist = _ks_terms(frame, ranking, k)
    w = _ksdi_weights(dist, _frame_diameter(frame))
    return float((w * r).sum() / w.sum())


def ksdi_contributions(frame: np.ndarray, ranking: np.ndarray, spec: Optional[NeighborSpec] = None) -> np.ndarray:
    """KSdiへの各エンティティの寄与（合計がKSdi）"""
    spec = spec or NeighborSpec()
    k = spec.effective_k(len(ranking))
    r, dist = _ks_terms(frame, ranking, k)
    w = _ksdi_weights(dist, _frame_diameter(frame))
    return (w * r).sum(axis=1) / w.sum()


def _check_pair(prev: np.ndarray, next_: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    prev = np.asarray(prev, dtype=np.int64)
    next_ = np.asarray(next_, dtype=np.int64)
    if prev.shape != next_.shape:
        raise DomainError(f"rankings cover different entity sets: {prev.shape} vs {next_.shape}")
    return prev, next_


def jmp(prev: np.ndarray, next_: np.ndarray) -> int:
    """順位変化の合計 Σ|S_t(p_i) - S_{t+1}(p_i)|"""
    prev, next_ = _check_pair(prev, next_)
    return int(np.abs(prev - next_).sum())


def count_inversions(values: List[int]) -> int:
    """マージソートで反転数を数える O(n log n)"""
    arr = list(values)
    n = len(arr)
    temp = [0] * n
    inversions = 0
    width = 1
    while width < n:
        for left in range(0, n, 2 * width):
            mid = min(left + width, n)
            right = min(left + 2 * width, n)
            i, j, k = left, mid, left
            while i < mid and j < right:
                if arr[i] <= arr[j]:
                    temp[k] = arr[i]
                    i += 1
                else:
                    temp[k] = arr[j]
                    j += 1
                    # 左側の残り全てと反転
                    inversions += mid - i
                k += 1
            temp[k:k + mid - i] = arr[i:mid]
            k += mid - i
            temp[k:k + right - j] = arr[j:right]
            arr[left:right] = temp[left:right]
        width *= 2
    return inversions


def crs(prev: np.ndarray, next_: np.ndarray) -> int:
    """2つの順序で前後が入れ替わったペアの数"""
    prev, next_ = _check_pair(prev, next_)
    # prev の順に並べたときの next の順位列の反転数
    order = np.argsort(prev, kind="stable")
    return count_inversions(next_[order].tolist())


def kendall_tau(prev: np.ndarray, next_: np.ndarray) -> float:
    """Kendall τ = 1 - 2·CRS / (n(n-1)/2)"""
    prev, next_ = _check_pair(prev, next_)
    n = len(prev)
    if n < 2:
        raise DomainError("Kendall tau needs at least 2 entities")
    return 1.0 - 2.0 * crs(prev, next_) / (n * (n - 1) / 2.0)


def rank_offsets(n: int, k: int) -> np.ndarray:
    """
    各順位から見た近傍の順位オフセット (n, k)

    -1, +1, -2, +2, ... の順に範囲内のものを先頭からk個。
    """
    offsets = np.empty((n, k), dtype=np.int64)
    candidates = [s * d for d in range(1, n) for s in (-1, 1)]
    for r in range(n):
        valid = [o for o in candidates if 0 <= r + o < n]
        offsets[r] = valid[:k]
    return offsets


def _kste_terms(prev: np.ndarray, next_: np.ndarray, offsets: np.ndarray):
    """各エンティティの (重み, 次フレームでの値, 前フレームでの値)"""
    order_prev = np.argsort(prev, kind="stable")
    neighbor = order_prev[prev[:, None] + offsets[prev]]
    d_prev = np.abs(offsets[prev])
    d_next = np.abs(next_[:, None] - next_[neighbor])
    w = 1.0 / (2.0 * d_prev - 1.0)
    return w, 2.0 * d_next - 1.0, 2.0 * d_prev - 1.0


def kste(prev: np.ndarray, next_: np.ndarray, spec: Optional[NeighborSpec] = None) -> float:
    """
    時間方向の Keys Similarity

    前フレームの順位近傍（両方向、順位差の小さい順にk個）について、
    重み 1/(2d_prev-1)、値 2d_next-1 の加重平均。
    """
    spec = spec or NeighborSpec()
    prev, next_ = _check_pair(prev, next_)
    k = spec.effective_k(len(prev))
    w, v, _ = _kste_terms(prev, next_, rank_offsets(len(prev), k))
    return float((w * v).sum() / w.sum())


def kste_contributions(prev: np.ndarray, next_: np.ndarray, spec: Optional[NeighborSpec] = None) -> np.ndarray:
    """順序が変わらなかった場合からのKSteの増分への各エンティティの寄与"""
    spec = spec or NeighborSpec()
    prev, next_ = _check_pair(prev, next_)
    k = spec.effective_k(len(prev))
    w, v, u = _kste_terms(prev, next_, rank_offsets(len(prev), k))
    return (w * (v - u)).sum(axis=1) / w.sum()


@dataclass(frozen=True, eq=False)
class FrameNeighbors:
    """
    全フレームの空間k近傍（順序に依存しないので使い回せる）

    idx: (T, n, k) 近傍の番号
    weights: (T, n, k) KSdi の重み 1/距離
    """
    idx: np.ndarray
    weights: np.ndarray

    @property
    def k(self) -> int:
        return self.idx.shape[2]


def frame_neighbors(ds: TrajectoryDataset, k: int) -> FrameNeighbors:
    idx = np.empty((ds.T, ds.n, k), dtype=np.int64)
    weights = np.empty((ds.T, ds.n, k))
    for t, frame in enumerate(ds.frames):
        idx[t], dist = spatial_neighbors(frame, k)
        weights[t] = _ksdi_weights(dist, _frame_diameter(frame))
    return FrameNeighbors(idx=idx, weights=weights)


def _gather(values: np.ndarray, idx: np.ndarray) -> np.ndarray:
    # values[t, idx[t, i, j]]
    T = values.shape[0]
    return np.take_along_axis(values, idx.reshape(T, -1), axis=1).reshape(idx.shape)


def _neighbor_rank_values(ranks: np.ndarray, nb: FrameNeighbors) -> np.ndarray:
    return 2.0 * np.abs(ranks[:, :, None] - _gather(ranks, nb.idx)) - 1.0


def ksra_series(ranks: np.ndarray, nb: FrameNeighbors) -> np.ndarray:
    """全フレームの KSra (T,)"""
    n = ranks.shape[1]
    r = _neighbor_rank_values(ranks, nb)
    return (r / np.arange(1, nb.k + 1)).sum(axis=(1, 2)) / (n * harmonic(nb.k))


def ksdi_series(ranks: np.ndarray, nb: FrameNeighbors) -> np.ndarray:
    """全フレームの KSdi (T,)"""
    r = _neighbor_rank_values(ranks, nb)
    return (nb.weights * r).sum(axis=(1, 2)) / nb.weights.sum(axis=(1, 2))


def kste_series(ranks: np.ndarray, k: int) -> np.ndarray:
    """全遷移の KSte (T-1,)"""
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.shape[0] < 2:
        return np.empty(0)
    prev, next_ = ranks[:-1], ranks[1:]
    offsets = rank_offsets(ranks.shape[1], k)[prev]
    order_prev = np.argsort(prev, axis=1, kind="stable")
    neighbor = _gather(order_prev, prev[:, :, None] + offsets)
    d_prev = np.abs(offsets)
    d_next = np.abs(next_[:, :, None] - _gather(next_, neighbor))
    w = 1.0 / (2.0 * d_prev - 1.0)
    return (w * (2.0 * d_next - 1.0)).sum(axis=(1, 2)) / w.sum(axis=(1, 2))


def evaluate(ds: TrajectoryDataset, ordering: OrderingSummary,
             spec: Optional[NeighborSpec] = None) -> List[MetricSeries]:
    """
    全フレームの指標を計算

    Args:
        ds: データセット
        ordering: 順序
        spec: 近傍数

    Returns:
        KSra, KSdi（長さT）と JMP, CRS, KSte, TAU（長さT-1）の MetricSeries
    """
    spec = spec or NeighborSpec()
    if ordering.ranks.shape != (ds.T, ds.n):
        raise DomainError(f"ordering shape {ordering.ranks.shape} does not match dataset ({ds.T}, {ds.n})")
    k = spec.effective_k(ds.n)
    ranks = ordering.ranks

    nb = frame_neighbors(ds, k)
    ksra_values = ksra_series(ranks, nb)
    ksdi_values = ksdi_series(ranks, nb)

    transitions = max(ds.T - 1, 0)
    jmp_values = np.abs(np.diff(ranks, axis=0)).sum(axis=1).astype(float)
    crs_values = np.array([crs(ranks[t], ranks[t + 1]) for t in range(transitions)], dtype=float)
    kste_values = kste_series(ranks, k)
    pairs = ds.n * (ds.n - 1) / 2.0
    tau_values = 1.0 - 2.0 * crs_values / pairs

    return [
        MetricSeries("KSra", ksra_values),
        MetricSeries("KSdi", ksdi_values),
        MetricSeries("JMP", jmp_values),
        MetricSeries("CRS", crs_values),
        MetricSeries("KSte", kste_values),
        MetricSeries("TAU", tau_values),
    ]


def contribution_rugs(ds: TrajectoryDataset, ordering: OrderingSummary,
                      spec: Optional[NeighborSpec] = None) -> Dict[str, np.ndarray]:
    """
    エンティティごとの寄与 (T, n)

    KSdi はフレームごと、KSte は遷移 t→t+1 をフレーム t+1 に割り当て（フレーム0は0）。
    """
    spec = spec or NeighborSpec()
    k = spec.effective_k(ds.n)
    quiet = NeighborSpec(k=k)
    ksdi_rug = np.stack([ksdi_contributions(ds.frames[t], ordering.ranks[t], quiet) for t in range(ds.T)])
    kste_rug = np.zeros((ds.T, ds.n))
    for t in range(1, ds.T):
        kste_rug[t] = kste_contributions(ordering.ranks[t - 1], ordering.ranks[t], quiet)
    return {"KSdi": ksdi_rug, "KSte": kste_rug}


def summarize(series: List[MetricSeries]) -> Dict:
    """
    指標のサマリ（平均・最大・最小・標準偏差）

    Returns:
        指標名 -> サマリ辞書、および "説明"
    """
    out: Dict = {s.name: s.summary for s in series}
    out["説明"] = {s.name: METRIC_DESCRIPTIONS.get(s.name, "") for s in series}
    return out
