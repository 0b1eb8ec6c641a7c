"""
主成分射影による順序モジュール
フレームごとのPCA・安定主成分 (SPC)・クラスタ主成分 (CPC)
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .clustering import clc_tree, cut_clusters
from .trajectories import OrderingSummary, TrajectoryDataset

# 等方性とみなす固有値差（平均固有値に対する比）
ISOTROPY_TOL = 1e-12


class SpcConfig(BaseModel):
    """SPCの設定（sigma: 伸長判定の閾値 v2/v1 <= sigma）"""
    sigma: float = 0.5

    @field_validator("sigma")
    @classmethod
    def _check_sigma(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"sigma must be in [0,1], got {value:g}")
        return value


class CpcConfig(SpcConfig):
    """CPCの設定（cut_factor: クラスタ切断の倍率）"""
    cut_factor: float = Field(2.0, gt=0.0)


@dataclass(frozen=True, eq=False)
class ProjectionTimeline:
    """
    フレームごとの射影ベクトル

    pv: (T, 2) 単位ベクトル
    eigen: (T, 2) 固有値 (v1, v2)、v1 >= v2 >= 0
    interpolated: (T,) 補間で決まったフレーム
    """
    pv: np.ndarray
    eigen: np.ndarray
    interpolated: np.ndarray

    def __post_init__(self):
        pv = np.asarray(self.pv, dtype=float)
        if pv.ndim != 2 or pv.shape[1] != 2:
            raise ValueError(f"pv must have shape (T, 2), got {pv.shape}")
        if self.eigen.shape != pv.shape or self.interpolated.shape != pv.shape[:1]:
            raise ValueError("eigen and interpolated must match pv")

    @property
    def T(self) -> int:
        return self.pv.shape[0]


def pca_frames(frames: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    各フレームの第1主成分（2x2共分散の閉形式解）

    Args:
        frames: (T, n, 2) の座標

    Returns:
        (pv (T, 2), eigen (T, 2), isotropic (T,))
        等方的なフレームでは pv = (1, 0)
    """
    frames = np.asarray(frames, dtype=float)
    centered = frames - frames.mean(axis=1, keepdims=True)
    # 母分散 (1/n)
    a = (centered[..., 0] ** 2).mean(axis=1)
    b = (centered[..., 0] * centered[..., 1]).mean(axis=1)
    c = (centered[..., 1] ** 2).mean(axis=1)

    mid = (a + c) / 2.0
    half = np.sqrt(((a - c) / 2.0) ** 2 + b ** 2)
    v1 = mid + half
    v2 = np.maximum(mid - half, 0.0)
    isotropic = half <= ISOTROPY_TOL * np.maximum(mid, np.finfo(float).tiny)

    # (A - v1 I) の2行それぞれに直交するベクトルのうち長い方
    u = np.stack([b, v1 - a], axis=1)
    w = np.stack([v1 - c, b], axis=1)
    un = np.linalg.norm(u, axis=1)
    wn = np.linalg.norm(w, axis=1)
    vec = np.where((un >= wn)[:, None], u, w)
    norm = np.maximum(un, wn)

    pv = np.tile(np.array([1.0, 0.0]), (frames.shape[0], 1))
    ok = ~isotropic & (norm > 0)
    pv[ok] = vec[ok] / norm[ok, None]
    isotropic = ~ok
    return pv, np.stack([v1, v2], axis=1), isotropic


def pca_frame(frame: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """1フレームの第1主成分と固有値 (pv, v1, v2)"""
    pv, eigen, _ = pca_frames(np.asarray(frame, dtype=float)[None])
    return pv[0], float(eigen[0, 0]), float(eigen[0, 1])


def stretch_ratio(eigen: np.ndarray) -> np.ndarray:
    """v2/v1（v1 = 0 のときは 0）"""
    v1, v2 = eigen[..., 0], eigen[..., 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(v1 > 0, v2 / np.where(v1 > 0, v1, 1.0), 0.0)


def signed_angle(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """uからvへの符号付き角度"""
    cross = u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]
    dot = (u * v).sum(axis=-1)
    return np.arctan2(cross, dot)


def rotate(v: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """単位ベクトルvを各角度だけ回転 (m, 2)"""
    cos, sin = np.cos(angles), np.sin(angles)
    return np.stack([cos * v[0] - sin * v[1], sin * v[0] + cos * v[1]], axis=-1)


def interpolate_window(anchor: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """
    伸長フレーム間の射影ベクトルを角度の線形補間で求める

    Args:
        anchor: 窓の始点の射影ベクトル
        steps: 窓の各フレームへの符号付き角度（始点の次から終点まで m 個）

    Returns:
        始点と終点の間の m-1 フレームの射影ベクトル
    """
    m = len(steps)
    alpha = float(np.sum(steps))
    return rotate(anchor, alpha * np.arange(1, m) / m)


def consistent_components(pv: np.ndarray, isotropic: np.ndarray) -> np.ndarray:
    """
    前フレームとの内積が負にならないよう符号をそろえた主成分

    等方的なフレームは直前の主成分を引き継ぐ（先頭なら (1, 0)）。
    """
    T = pv.shape[0]
    source = np.where(isotropic & (np.arange(T) > 0), 0, np.arange(T))
    filled = pv[np.maximum.accumulate(source)]
    dots = (filled[1:] * filled[:-1]).sum(axis=1)
    signs = np.concatenate([[1.0], np.cumprod(np.where(dots < 0, -1.0, 1.0))])
    return filled * signs[:, None]


def timeline_from_pca(pv: np.ndarray, eigen: np.ndarray, isotropic: np.ndarray, sigma: float) -> ProjectionTimeline:
    """フレームごとのPCA結果から SPC の射影ベクトル列を作る"""
    T = pv.shape[0]
    consistent = consistent_components(pv, isotropic)
    steps = np.zeros(T)
    if T > 1:
        steps[1:] = signed_angle(consistent[:-1], consistent[1:])

    anchor = stretch_ratio(eigen) <= sigma
    anchor[0] = True
    anchor[-1] = True

    out = consistent.copy()
    anchors = np.flatnonzero(anchor)
    for a, b in zip(anchors[:-1], anchors[1:]):
        if b - a > 1:
            out[a + 1:b] = interpolate_window(consistent[a], steps[a + 1:b + 1])
    return ProjectionTimeline(pv=out, eigen=eigen, interpolated=~anchor)


def spc_timeline(ds: TrajectoryDataset, cfg: Optional[SpcConfig] = None) -> ProjectionTimeline:
    """
    安定主成分 (SPC_sigma) の射影ベクトル列

    伸長フレーム（v2/v1 <= sigma）と先頭・末尾では主成分をそのまま使い、
    その間は累積した符号付き角度で線形補間する。
    """
    cfg = cfg or SpcConfig()
    pv, eigen, isotropic = pca_frames(ds.frames)
    return timeline_from_pca(pv, eigen, isotropic, cfg.sigma)


def project_order(ds: TrajectoryDataset, tl: ProjectionTimeline, method_tag: str = "") -> OrderingSummary:
    """各フレームを pv[t] に射影した1次元座標で順序付け"""
    if tl.T != ds.T:
        raise ValueError(f"timeline has {tl.T} frames, dataset has {ds.T}")
    coords = np.einsum("tnk,tk->tn", ds.frames, tl.pv)
    return OrderingSummary.from_coords(coords, method_tag=method_tag)


def spc_order(ds: TrajectoryDataset, cfg: Optional[SpcConfig] = None) -> OrderingSummary:
    """SPC_sigma による順序"""
    cfg = cfg or SpcConfig()
    return project_order(ds, spc_timeline(ds, cfg), method_tag=f"spc(sigma={cfg.sigma:g})")


def pca_order(ds: TrajectoryDataset) -> OrderingSummary:
    """符号をそろえたフレームごとの第1主成分への射影（補間なし）"""
    pv, eigen, isotropic = pca_frames(ds.frames)
    tl = ProjectionTimeline(
        pv=consistent_components(pv, isotropic),
        eigen=eigen,
        interpolated=np.zeros(ds.T, dtype=bool),
    )
    return project_order(ds, tl, method_tag="pca")


class _ClusterTrack:
    """同じ構成のまま続くクラスタのSPC状態"""
    __slots__ = ("anchor_t", "last", "steps")

    def __init__(self, t: int, pv: np.ndarray):
        self.anchor_t = t
        self.last = pv
        self.steps: List[float] = []


def _close_window(track: _ClusterTrack, end: int, pv_by_frame: List[Dict], key) -> None:
    """窓を frame end で閉じ、間のフレームを補間で埋める"""
    if end - track.anchor_t > 1:
        anchor = pv_by_frame[track.anchor_t][key]
        filled = interpolate_window(anchor, np.array(track.steps))
        for ts, vec in zip(range(track.anchor_t + 1, end), filled):
            pv_by_frame[ts][key] = vec
    pv_by_frame[end][key] = track.last
    track.anchor_t = end
    track.steps = []


def cpc_clusters(ds: TrajectoryDataset, cut_factor: float = 2.0) -> List[List[np.ndarray]]:
    """各フレームのクラスタ分割（完全連結法の木を倍率ルールで切断）"""
    return [cut_clusters(clc_tree(frame), cut_factor) for frame in ds.frames]


def cpc_order(ds: TrajectoryDataset, cfg: Optional[CpcConfig] = None,
              partitions: Optional[List[List[np.ndarray]]] = None) -> OrderingSummary:
    """
    クラスタ主成分 (CPC_sigma) による順序

    Args:
        ds: データセット
        cfg: sigma とクラスタ切断の倍率
        partitions: 計算済みのフレームごとのクラスタ分割（省略時は計算する）

    Returns:
        クラスタごとに連続した順位と1次元座標
    """
    cfg = cfg or CpcConfig()
    T, n = ds.T, ds.n
    if partitions is None:
        partitions = cpc_clusters(ds, cfg.cut_factor)
    global_pv = spc_timeline(ds, cfg).pv

    pv_by_frame: List[Dict[tuple, np.ndarray]] = [dict() for _ in range(T)]
    tracks: Dict[tuple, _ClusterTrack] = {}

    for t in range(T):
        frame = ds.frames[t]
        keys = [tuple(c.tolist()) for c in partitions[t]]
        member_prev = None

        # 消えたクラスタは t-1 で窓を閉じる
        for key in [k for k in tracks if k not in keys]:
            track = tracks.pop(key)
            _close_window(track, t - 1, pv_by_frame, key)
            if member_prev is None:
                member_prev = np.zeros((n, 2))
            member_prev[list(key)] = track.last

        for key, members in zip(keys, partitions[t]):
            raw, eig, iso = pca_frames(frame[members][None])
            raw, ratio = raw[0], float(stretch_ratio(eig)[0])
            track = tracks.get(key)

            if track is None:
                # 新しいクラスタ: 前フレームで各点が使っていた射影ベクトルの多数決で向きを決める
                if member_prev is not None:
                    dots = member_prev[members] @ raw
                    if (dots < 0).sum() > (dots > 0).sum():
                        raw = -raw
                tracks[key] = _ClusterTrack(t, raw)
                pv_by_frame[t][key] = raw
                continue

            if iso[0]:
                raw = track.last
            vec = raw if float(np.dot(raw, track.last)) >= 0 else -raw
            track.steps.append(float(signed_angle(track.last, vec)))
            track.last = vec
            if ratio <= cfg.sigma or t == T - 1:
                _close_window(track, t, pv_by_frame, key)

    ranks = np.empty((T, n), dtype=np.int64)
    coords = np.empty((T, n))
    for t in range(T):
        frame = ds.frames[t]
        clusters = partitions[t]
        centers = np.array([frame[c].mean(axis=0) for c in clusters])
        center_proj = centers @ global_pv[t]
        cluster_rank = sorted(range(len(clusters)), key=lambda j: (center_proj[j], int(clusters[j][0])))

        extent = float(np.ptp(frame, axis=0).max())
        gap = 1e-6 * extent if extent > 0 else 1e-12
        rank = 0
        upper = -np.inf
        for j in cluster_rank:
            members = clusters[j]
            pv = pv_by_frame[t][tuple(members.tolist())]
            local = (frame[members] - centers[j]) @ pv
            block = center_proj[j] + local
            # 重なるクラスタは右へずらす
            if block.min() <= upper:
                block = block + (upper - block.min() + gap)
            upper = block.max()
            inner = np.argsort(local, kind="stable")
            ranks[t, members[inner]] = np.arange(rank, rank + len(members))
            coords[t, members] = block
            rank += len(members)

    return OrderingSummary(ranks=ranks, method_tag=f"cpc(sigma={cfg.sigma:g})", coords=coords)
