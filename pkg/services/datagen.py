"""
合成軌跡データ生成モジュール
クラスタ間は反発のみの Reynolds モデルと、境界で反射する flocking モデル
"""
import math
from typing import Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .errors import DataValidationError
from .neighbors import pairwise_distances
from .trajectories import TrajectoryDataset


class BoidsConfig(BaseModel):
    """
    群れシミュレーションの設定

    半径・重み・速度は arena の単位。旋回上限 (max_*_turn) は度で flocking モデルのみが使う。
    home_weight と min_spacing は Reynolds モデルのみが使う。
    """
    clusters: int = Field(3, ge=1)
    boids_per_cluster: int = Field(50, ge=1)
    frames: int = Field(1000, ge=1)
    arena: Tuple[float, float, float, float] = (0.0, 0.0, 100.0, 100.0)

    separation_radius: float = Field(1.0, gt=0)
    alignment_radius: float = Field(4.0, gt=0)
    cohesion_radius: float = Field(15.0, gt=0)
    repulsion_radius: float = Field(6.0, gt=0)

    separation_weight: float = Field(4.0, gt=0)
    alignment_weight: float = Field(1.0, gt=0)
    cohesion_weight: float = Field(1.0, gt=0)
    inter_cluster_repulsion: float = Field(2.0, ge=0)
    # 自クラスタの初期中心（ホーム）へ戻る力。0 で無効
    home_weight: float = Field(2.0, ge=0)
    # 移動後にこれより近い組は押し離す。0 で無効
    min_spacing: float = Field(0.6, ge=0)

    max_speed: float = Field(0.3, gt=0)
    max_force: float = Field(0.05, gt=0)

    max_separate_turn: float = Field(1.5, ge=0)
    max_align_turn: float = Field(5.0, ge=0)
    max_cohere_turn: float = Field(3.0, ge=0)

    seed: int = 0

    @model_validator(mode="after")
    def _check_arena(self):
        x0, y0, x1, y1 = self.arena
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"arena must have positive area, got {self.arena}")
        return self

    @property
    def n(self) -> int:
        return self.clusters * self.boids_per_cluster


def cluster_labels(cfg: BoidsConfig) -> np.ndarray:
    """各エンティティが属する生成時のクラスタ番号"""
    return np.repeat(np.arange(cfg.clusters), cfg.boids_per_cluster)


def _entity_ids(cfg: BoidsConfig):
    return tuple(f"{c}-{j}" for c in range(cfg.clusters) for j in range(cfg.boids_per_cluster))


def _limit(vectors: np.ndarray, max_norm: float) -> np.ndarray:
    norm = np.linalg.norm(vectors, axis=-1, keepdims=True)
    scale = np.where(norm > max_norm, max_norm / np.where(norm > 0, norm, 1.0), 1.0)
    return vectors * scale


def _unit(vectors: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vectors, axis=-1, keepdims=True)
    return np.where(norm > 0, vectors / np.where(norm > 0, norm, 1.0), 0.0)


def _reflect(pos: np.ndarray, vel: np.ndarray, arena) -> Tuple[np.ndarray, np.ndarray]:
    """壁で反射（速さは保存）"""
    lo = np.array(arena[:2], dtype=float)
    hi = np.array(arena[2:], dtype=float)
    below = pos < lo
    above = pos > hi
    pos = np.where(below, 2 * lo - pos, pos)
    pos = np.where(above, 2 * hi - pos, pos)
    vel = np.where(below | above, -vel, vel)
    # 反射後もはみ出すのは1ステップで arena を越える速さのときのみ
    return np.clip(pos, lo, hi), vel


def cluster_homes(cfg: BoidsConfig) -> np.ndarray:
    """クラスタのホーム (clusters, 2)。arena 中央を囲む円周上、1クラスタなら中央"""
    x0, y0, x1, y1 = cfg.arena
    center = np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0])
    ring = 0.3 * min(x1 - x0, y1 - y0) if cfg.clusters > 1 else 0.0
    angles = 2 * np.pi * np.arange(cfg.clusters) / cfg.clusters
    return center + ring * np.column_stack([np.cos(angles), np.sin(angles)])


def _initial_layout(cfg: BoidsConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """各クラスタをホームを中心に分離半径間隔の格子へ置く（格子のどの位置に入るかは乱数）"""
    m = cfg.boids_per_cluster
    cols = math.ceil(math.sqrt(m))
    grid = np.array([(j % cols, j // cols) for j in range(m)], dtype=float)
    grid = (grid - grid.mean(axis=0)) * cfg.separation_radius

    positions = []
    velocities = []
    for home in cluster_homes(cfg):
        jitter = rng.uniform(-0.02, 0.02, (m, 2)) * cfg.separation_radius
        positions.append(home + grid[rng.permutation(m)] + jitter)

        heading = rng.uniform(0, 2 * math.pi)
        base = 0.5 * cfg.max_speed * np.array([math.cos(heading), math.sin(heading)])
        velocities.append(base + rng.normal(0.0, 0.05 * cfg.max_speed, (m, 2)))

    pos = np.clip(np.concatenate(positions), cfg.arena[:2], cfg.arena[2:])
    vel = _limit(np.concatenate(velocities), cfg.max_speed)
    return pos, vel


def _steer(desired: np.ndarray, vel: np.ndarray, active: np.ndarray, cfg: BoidsConfig) -> np.ndarray:
    """目標方向へ最高速で向かうための操舵力（max_force で制限）"""
    force = _limit(_unit(desired) * cfg.max_speed - vel, cfg.max_force)
    return np.where(active[:, None], force, 0.0)


def keep_apart(pos: np.ndarray, spacing: float, rounds: int = 4) -> np.ndarray:
    """
    spacing より近い組を互いに半分ずつ押し離す（ヤコビ反復を rounds 回まで）

    完全に重なった組は番号の大きい方を +x、小さい方を -x へ動かす。
    """
    n = len(pos)
    if spacing <= 0 or n < 2:
        return pos
    other = ~np.eye(n, dtype=bool)
    idx = np.arange(n)
    fallback = np.sign(idx[:, None] - idx[None, :])[..., None] * np.array([1.0, 0.0])
    for _ in range(rounds):
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        overlap = other & (dist < spacing)
        if not overlap.any():
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            axis = np.where((dist > 0)[..., None], diff / dist[..., None], fallback)
        depth = np.where(overlap, (spacing - dist) / 2.0, 0.0)
        pos = pos + (depth[..., None] * axis).sum(axis=1)
    return pos


def reynolds_step(pos: np.ndarray, vel: np.ndarray, labels: np.ndarray, cfg: BoidsConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Reynolds モデルの1ステップ

    同じクラスタ内は分離・整列・結合、異なるクラスタ間は反発のみ。
    各個体は自クラスタのホームにも引かれ、移動先が min_spacing より近い組は
    押し離す（1ステップの移動量は max_speed 以下のまま）。
    """
    n = len(pos)
    dist = pairwise_distances(pos)
    diff = pos[:, None, :] - pos[None, :, :]
    other = ~np.eye(n, dtype=bool)
    same = (labels[:, None] == labels[None, :]) & other
    foreign = (labels[:, None] != labels[None, :])

    def away(mask):
        # 近いほど強く離れる
        with np.errstate(divide="ignore", invalid="ignore"):
            push = np.where(mask[..., None], diff / np.maximum(dist, 1e-12)[..., None] ** 2, 0.0)
        return push.sum(axis=1), mask.any(axis=1)

    sep_dir, sep_on = away(same & (dist < cfg.separation_radius))
    rep_dir, rep_on = away(foreign & (dist < cfg.repulsion_radius))

    align_mask = same & (dist < cfg.alignment_radius)
    align_count = align_mask.sum(axis=1)
    mean_vel = (align_mask[..., None] * vel[None, :, :]).sum(axis=1) / np.maximum(align_count, 1)[:, None]

    cohere_mask = same & (dist < cfg.cohesion_radius)
    cohere_count = cohere_mask.sum(axis=1)
    mean_pos = (cohere_mask[..., None] * pos[None, :, :]).sum(axis=1) / np.maximum(cohere_count, 1)[:, None]

    to_home = cluster_homes(cfg)[labels] - pos

    accel = (
        cfg.separation_weight * _steer(sep_dir, vel, sep_on, cfg)
        + cfg.alignment_weight * _steer(mean_vel, vel, align_count > 0, cfg)
        + cfg.cohesion_weight * _steer(mean_pos - pos, vel, cohere_count > 0, cfg)
        + cfg.inter_cluster_repulsion * _steer(rep_dir, vel, rep_on, cfg)
        + cfg.home_weight * _steer(to_home, vel, np.ones(n, dtype=bool), cfg)
    )
    vel = _limit(vel + accel, cfg.max_speed)
    vel = _limit(keep_apart(pos + vel, cfg.min_spacing) - pos, cfg.max_speed)
    return _reflect(pos + vel, vel, cfg.arena)


def gen_reynolds_clusters(cfg: BoidsConfig) -> TrajectoryDataset:
    """
    複数クラスタの Reynolds 群れを生成

    Args:
        cfg: 群れの設定（seed で決定的）

    Returns:
        frames 枚のデータセット（フレーム0は初期配置）
    """
    rng = np.random.default_rng(cfg.seed)
    labels = cluster_labels(cfg)
    pos, vel = _initial_layout(cfg, rng)

    frames = np.empty((cfg.frames, cfg.n, 2))
    frames[0] = pos
    for t in range(1, cfg.frames):
        pos, vel = reynolds_step(pos, vel, labels, cfg)
        frames[t] = pos
    return TrajectoryDataset(entity_ids=_entity_ids(cfg), frames=frames)


def _turn_at_most(heading: np.ndarray, turn: np.ndarray, max_turn: float) -> np.ndarray:
    return heading + np.clip(turn, -max_turn, max_turn)


def _subtract_headings(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a - b を [-π, π) に正規化"""
    return (a - b + math.pi) % (2 * math.pi) - math.pi


def flocking_step(pos: np.ndarray, heading: np.ndarray, cfg: BoidsConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    flocking モデルの1ステップ（一定速度、規則ごとの旋回上限）

    最近傍が分離距離より近ければ離れる方向へ、そうでなければ整列と結合。
    """
    n = len(pos)
    dist = pairwise_distances(pos)
    np.fill_diagonal(dist, np.inf)
    mates = dist < cfg.alignment_radius
    has_mates = mates.any(axis=1)
    nearest = np.argmin(dist, axis=1)
    too_close = has_mates & (dist[np.arange(n), nearest] < cfg.separation_radius)

    separate = _turn_at_most(
        heading, _subtract_headings(heading, heading[nearest]), math.radians(cfg.max_separate_turn))

    avg_heading = np.arctan2((mates * np.sin(heading)[None, :]).sum(axis=1),
                             (mates * np.cos(heading)[None, :]).sum(axis=1))
    aligned = _turn_at_most(heading, _subtract_headings(avg_heading, heading), math.radians(cfg.max_align_turn))

    to_mates = pos[None, :, :] - pos[:, None, :]
    towards = np.arctan2(to_mates[..., 1], to_mates[..., 0])
    avg_towards = np.arctan2((mates * np.sin(towards)).sum(axis=1), (mates * np.cos(towards)).sum(axis=1))
    cohered = _turn_at_most(aligned, _subtract_headings(avg_towards, aligned), math.radians(cfg.max_cohere_turn))

    heading = np.where(too_close, separate, np.where(has_mates, cohered, heading))
    vel = cfg.max_speed * np.stack([np.cos(heading), np.sin(heading)], axis=1)
    pos, vel = _reflect(pos + vel, vel, cfg.arena)
    return pos, np.arctan2(vel[:, 1], vel[:, 0])


def gen_flocking(cfg: BoidsConfig) -> TrajectoryDataset:
    """
    境界で折り返さない（反射する）flocking モデル

    Args:
        cfg: clusters=1 の設定。boids_per_cluster が個体数

    Returns:
        データセット
    """
    if cfg.clusters != 1:
        raise DataValidationError(f"flocking model needs clusters=1, got {cfg.clusters}")
    rng = np.random.default_rng(cfg.seed)
    x0, y0, x1, y1 = cfg.arena
    n = cfg.n
    pos = np.column_stack([rng.uniform(x0, x1, n), rng.uniform(y0, y1, n)])
    heading = rng.uniform(-math.pi, math.pi, n)

    frames = np.empty((cfg.frames, n, 2))
    frames[0] = pos
    for t in range(1, cfg.frames):
        pos, heading = flocking_step(pos, heading, cfg)
        frames[t] = pos
    return TrajectoryDataset(entity_ids=_entity_ids(cfg), frames=frames)
