"""
合成データ生成のテスト（Reynolds クラスタ・flocking）
"""
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).parent.parent))

from services.clustering import clc_tree, cut_clusters
from services.datagen import BoidsConfig, cluster_labels, gen_flocking, gen_reynolds_clusters, keep_apart
from services.errors import DataValidationError
from services.neighbors import pairwise_distances


def small_config(**overrides):
    values = dict(clusters=3, boids_per_cluster=9, frames=30, seed=5)
    values.update(overrides)
    return BoidsConfig(**values)


def test_reynolds_shape_and_ids():
    cfg = small_config()
    ds = gen_reynolds_clusters(cfg)
    assert (ds.T, ds.n) == (30, 27)
    assert ds.entity_ids[0] == "0-0"
    assert ds.entity_ids[-1] == "2-8"
    np.testing.assert_array_equal(cluster_labels(cfg), np.repeat([0, 1, 2], 9))
    print("✓ Reynolds クラスタの生成")


def test_reynolds_is_deterministic_per_seed():
    a = gen_reynolds_clusters(small_config())
    b = gen_reynolds_clusters(small_config())
    c = gen_reynolds_clusters(small_config(seed=6))
    np.testing.assert_array_equal(a.frames, b.frames)
    assert not np.array_equal(a.frames, c.frames)


def test_reynolds_stays_in_arena_and_respects_speed():
    cfg = small_config(frames=60)
    ds = gen_reynolds_clusters(cfg)
    x0, y0, x1, y1 = cfg.arena
    assert (ds.frames[..., 0] >= x0).all() and (ds.frames[..., 0] <= x1).all()
    assert (ds.frames[..., 1] >= y0).all() and (ds.frames[..., 1] <= y1).all()
    steps = np.linalg.norm(np.diff(ds.frames, axis=0), axis=2)
    assert steps.max() <= cfg.max_speed + 1e-9


def test_initial_layout_separates_clusters():
    """フレーム0では各クラスタの直径よりクラスタ間の距離が大きい"""
    cfg = small_config(frames=1)
    frame = gen_reynolds_clusters(cfg).frames[0]
    labels = cluster_labels(cfg)
    D = pairwise_distances(frame)
    same = labels[:, None] == labels[None, :]
    assert D[same].max() < D[~same].min()


def test_flocking_requires_single_cluster():
    with pytest.raises(DataValidationError):
        gen_flocking(small_config())


def test_flocking_without_mates_moves_straight():
    """仲間がいなければ一定速度で直進"""
    cfg = BoidsConfig(clusters=1, boids_per_cluster=10, frames=8, arena=(0.0, 0.0, 1e6, 1e6), seed=2)
    ds = gen_flocking(cfg)
    steps = np.diff(ds.frames, axis=0)
    np.testing.assert_allclose(np.linalg.norm(steps, axis=2), cfg.max_speed, rtol=1e-6)
    np.testing.assert_allclose(np.diff(steps, axis=0), 0.0, atol=1e-6)


def test_flocking_stays_in_arena():
    cfg = BoidsConfig(clusters=1, boids_per_cluster=40, frames=80, arena=(0.0, 0.0, 20.0, 20.0), seed=4)
    ds = gen_flocking(cfg)
    assert ds.frames.min() >= 0.0
    assert ds.frames.max() <= 20.0
    steps = np.linalg.norm(np.diff(ds.frames, axis=0), axis=2)
    assert steps.max() <= cfg.max_speed + 1e-9


def test_boids_config_validation():
    with pytest.raises(ValueError):
        BoidsConfig(arena=(0.0, 0.0, 0.0, 10.0))
    with pytest.raises(ValueError):
        BoidsConfig(clusters=0)
    assert small_config().n == 27


@pytest.fixture(scope="module")
def default_reynolds():
    """既定設定（3クラスタ×50体、1000フレーム、seed=0）"""
    cfg = BoidsConfig()
    return cfg, gen_reynolds_clusters(cfg)


def test_default_reynolds_has_three_detectable_clusters(default_reynolds):
    """既定データでは9割以上のフレームで完全連結法の切断がちょうど3クラスタを返す"""
    cfg, ds = default_reynolds
    assert (ds.T, ds.n) == (1000, 150)
    labels = cluster_labels(cfg)
    counts = []
    matches = 0
    for frame in ds.frames:
        parts = cut_clusters(clc_tree(frame))
        counts.append(len(parts))
        if len(parts) == 3 and all(len(set(labels[p].tolist())) == 1 for p in parts):
            matches += 1
    assert matches >= 0.9 * ds.T, np.unique(counts, return_counts=True)
    print(f"✓ 3クラスタのフレーム: {matches}/{ds.T}")


def test_default_reynolds_keeps_boids_apart(default_reynolds):
    """重なった個体がなく、クラスタ間は各クラスタの直径より離れている"""
    cfg, ds = default_reynolds
    labels = cluster_labels(cfg)
    same = labels[:, None] == labels[None, :]
    other = ~np.eye(ds.n, dtype=bool)
    for frame in ds.frames[::50]:
        D = pairwise_distances(frame)
        assert D[other].min() > 0.25 * cfg.min_spacing
        assert D[same].max() < D[~same].min()


def test_initial_slots_are_shuffled():
    """クラスタ内の番号順は格子の並び順と一致しない"""
    cfg = BoidsConfig(clusters=1, boids_per_cluster=25, frames=1, seed=1)
    first = gen_reynolds_clusters(cfg).frames[0]
    rows = np.round((first[:, 1] - first[:, 1].min()) / cfg.separation_radius).astype(int)
    assert not np.all(np.diff(rows) >= 0)


def test_keep_apart_pushes_close_pairs_to_spacing():
    pos = np.array([[0.0, 0.0], [0.2, 0.0], [5.0, 5.0], [5.0, 5.0]])
    out = keep_apart(pos, 0.6)
    np.testing.assert_allclose(out[0], [-0.2, 0.0])
    np.testing.assert_allclose(out[1], [0.4, 0.0])
    # 完全に重なった組は番号順に x 方向へ
    np.testing.assert_allclose(out[2], [4.7, 5.0])
    np.testing.assert_allclose(out[3], [5.3, 5.0])
    np.testing.assert_array_equal(keep_apart(pos, 0.0), pos)


def test_home_weight_zero_restores_repulsion_only_model():
    """home_weight=0 でも速さと arena の制約は保たれる"""
    cfg = small_config(home_weight=0.0, frames=40)
    ds = gen_reynolds_clusters(cfg)
    steps = np.linalg.norm(np.diff(ds.frames, axis=0), axis=2)
    assert steps.max() <= cfg.max_speed + 1e-9
    assert not np.array_equal(ds.frames, gen_reynolds_clusters(small_config(frames=40)).frames)
