"""
描画のテスト（カラーマップ・MotionRug・ヒートラグ・指標バー・MotionLines・PNG）
"""
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).parent.parent))

from services.errors import ContractError, DomainError, ImageSizeError
from services.metrics import MetricSeries, NeighborSpec, contribution_rugs
from services.render import (
    BASELINE_COLOR,
    Colormap2D,
    colormap2d,
    decode_png,
    encode_png,
    entity_colors,
    motionline_rows,
    render_heat_rug,
    render_metric_strip,
    render_motionlines,
    render_rug,
    stack_images,
    suggested_scale,
    write_png,
)
from services.trajectories import OrderingSummary, TrajectoryDataset, fxd_order

UNIT_BOX = (0.0, 0.0, 1.0, 1.0)
BLACK = np.zeros(3, dtype=np.uint8)


def moving_dataset(T=4, n=5, seed=0):
    rng = np.random.default_rng(seed)
    return TrajectoryDataset.from_array(rng.uniform(size=(T, n, 2)))


def three_clusters(T=6):
    rng = np.random.default_rng(1)
    centers = np.repeat([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0]], 4, axis=0)
    frames = centers + rng.normal(scale=0.5, size=(T, 12, 2))
    return TrajectoryDataset.from_array(frames)


def test_colormap_corners_and_center():
    cm = Colormap2D()
    np.testing.assert_allclose(colormap2d(np.array([0.0, 1.0]), cm, UNIT_BOX), cm.nw)
    np.testing.assert_allclose(colormap2d(np.array([1.0, 1.0]), cm, UNIT_BOX), cm.ne)
    np.testing.assert_allclose(colormap2d(np.array([0.0, 0.0]), cm, UNIT_BOX), cm.sw)
    np.testing.assert_allclose(colormap2d(np.array([1.0, 0.0]), cm, UNIT_BOX), cm.se)
    expected = np.mean([cm.nw, cm.ne, cm.sw, cm.se], axis=0)
    np.testing.assert_allclose(colormap2d(np.array([0.5, 0.5]), cm, UNIT_BOX), expected)
    print("✓ 四隅と中央の色")


def test_colormap_clamps_outside_box():
    cm = Colormap2D()
    np.testing.assert_allclose(colormap2d(np.array([-5.0, 7.0]), cm, UNIT_BOX), cm.nw)


def test_colormap_flat_axis_uses_middle():
    cm = Colormap2D()
    color = colormap2d(np.array([3.0, 3.0]), cm, (3.0, 3.0, 3.0, 3.0))
    np.testing.assert_allclose(color, np.mean([cm.nw, cm.ne, cm.sw, cm.se], axis=0))


def test_colormap_validation():
    with pytest.raises(ValueError):
        Colormap2D(nw=(0, 0, 300))
    with pytest.raises(ValueError):
        Colormap2D(reference_box=(0.0, 0.0, 0.0, 1.0))
    assert Colormap2D().anchors()["SW"] == [30, 60, 255]


def test_reference_mode_uses_one_frame():
    ds = moving_dataset()
    colors = entity_colors(ds, Colormap2D(mode="reference", reference_frame=2))
    for t in range(ds.T):
        np.testing.assert_array_equal(colors[t], colors[2])
    with pytest.raises(DomainError):
        entity_colors(ds, Colormap2D(mode="reference", reference_frame=ds.T))


def test_rug_pixels_follow_ranks():
    """行 r・列 t は順位 r のエンティティの色"""
    ds = moving_dataset(T=3, n=4)
    ordering = OrderingSummary(ranks=np.array([[0, 1, 2, 3], [3, 2, 1, 0], [1, 0, 3, 2]]))
    img = render_rug(ds, ordering)
    colors = entity_colors(ds)
    assert img.shape == (4, 3, 3)
    assert img.dtype == np.uint8
    for t in range(3):
        for i in range(4):
            np.testing.assert_array_equal(img[ordering.ranks[t, i], t], colors[t, i])


def test_rug_scale():
    ds = moving_dataset(T=3, n=4)
    base = render_rug(ds, fxd_order(ds))
    big = render_rug(ds, fxd_order(ds), scale=3)
    assert big.shape == (12, 9, 3)
    np.testing.assert_array_equal(big[::3, ::3], base)
    with pytest.raises(DomainError):
        render_rug(ds, fxd_order(ds), scale=0)


def test_static_fixed_rug_has_identical_columns():
    frame = np.random.default_rng(2).uniform(size=(6, 2))
    ds = TrajectoryDataset.from_array(np.tile(frame, (5, 1, 1)))
    img = render_rug(ds, fxd_order(ds))
    for t in range(1, 5):
        np.testing.assert_array_equal(img[:, t], img[:, 0])


def test_rug_column_depends_only_on_its_frame():
    ds = moving_dataset(T=3, n=5)
    frames = ds.frames.copy()
    frames[2] = frames[2][::-1]
    other = TrajectoryDataset.from_array(frames)
    cm = Colormap2D(reference_box=UNIT_BOX)
    a = render_rug(ds, fxd_order(ds), cm)
    b = render_rug(other, fxd_order(other), cm)
    np.testing.assert_array_equal(a[:, :2], b[:, :2])


def test_rug_shape_mismatch():
    ds = moving_dataset(T=3, n=4)
    with pytest.raises(DomainError):
        render_rug(ds, OrderingSummary(ranks=np.tile(np.arange(4), (2, 1))))


def test_rug_size_limit_suggests_scale():
    ds = moving_dataset(T=2, n=2)
    with pytest.raises(ImageSizeError, match="scale <= 16384"):
        render_rug(ds, fxd_order(ds), scale=2 ** 15)
    assert suggested_scale(2, 2) == 16384


def test_heat_rug_zero_for_unchanged_order():
    """順序が変わらなければ KSte の寄与は0で真っ暗"""
    ds = moving_dataset(T=4, n=6)
    ordering = fxd_order(ds)
    rugs = contribution_rugs(ds, ordering, NeighborSpec(k=3))
    img = render_heat_rug(ds, ordering, rugs["KSte"])
    assert not img.any()


def test_heat_rug_brightest_cell():
    ds = moving_dataset(T=1, n=3)
    ordering = OrderingSummary(ranks=np.array([[2, 0, 1]]))
    contributions = np.array([[1.0, 0.0, 0.0]])
    img = render_heat_rug(ds, ordering, contributions, color=(255, 220, 0))
    np.testing.assert_array_equal(img[2, 0], [255, 220, 0])
    np.testing.assert_array_equal(img[0, 0], BLACK)
    with pytest.raises(DomainError):
        render_heat_rug(ds, ordering, np.zeros((2, 3)))


def test_strip_full_and_empty_bars():
    series = MetricSeries("KSdi", np.array([100.0, 0.0, 37.5 / 2]))
    img = render_metric_strip(series, height=41)
    assert img.shape == (41, 3, 3)
    yellow = np.array([255, 220, 0], dtype=np.uint8)
    # 上限以上は基線を除く全行
    assert (img[:40, 0] == yellow).all()
    # 0 は基線だけ
    assert not img[:40, 1].any()
    # 上限の半分は下から20行
    assert not img[:20, 2].any()
    assert (img[20:40, 2] == yellow).all()
    assert (img[40] == np.array(BASELINE_COLOR, dtype=np.uint8)).all()


def test_strip_aligns_transition_series():
    series = MetricSeries("KSte", np.array([1.0, 2.0, 3.0]))
    img = render_metric_strip(series, frames=4, height=10, scale=2)
    assert img.shape == (10, 8, 3)
    assert not img[:9, :2].any()
    with pytest.raises(DomainError):
        render_metric_strip(series, frames=6)


def test_strip_validation():
    with pytest.raises(DomainError):
        render_metric_strip(MetricSeries("KSte", np.empty(0)))
    with pytest.raises(DomainError):
        render_metric_strip(MetricSeries("KSdi", np.ones(3)), height=1)
    with pytest.raises(DomainError):
        render_metric_strip(MetricSeries("KSdi", np.ones(3)), cap=0.0)


def test_strip_blank_for_single_frame():
    """T=1 の安定性指標は基線だけの1列"""
    img = render_metric_strip(MetricSeries("KSte", np.empty(0)), frames=1, height=5)
    assert img.shape == (5, 1, 3)
    assert not img[:4].any()


def test_motionline_rows():
    rows = motionline_rows(np.array([[0.0, 5.0, 10.0], [2.0, 2.0, 2.0]]), height=21, margin=0)
    np.testing.assert_array_equal(rows[0], [0, 10, 20])
    np.testing.assert_array_equal(rows[1], [10, 10, 10])
    np.testing.assert_array_equal(motionline_rows(np.array([[1.0, 3.0]]), 30, 5), [[5, 24]])


def test_motionlines_draws_every_entity():
    ds = three_clusters()
    ordering = OrderingSummary.from_coords(ds.frames[..., 0], method_tag="x")
    img = render_motionlines(ds, ordering, height=120, frame_width=4, margin=5)
    assert img.shape == (120, 24, 3)
    rows = motionline_rows(ordering.coords, 120, 5)
    for t in range(ds.T):
        col = t * 4 + 2
        for i in range(ds.n):
            assert img[rows[t, i], col].any()
    # クラスタの間には線がない（中央付近の空白行）
    col = 5 * 4 + 2
    gaps = ~img[:, col].any(axis=1)
    assert gaps[5:115].sum() > 40


def test_motionlines_requires_coordinates():
    ds = moving_dataset()
    with pytest.raises(ContractError):
        render_motionlines(ds, fxd_order(ds))


def test_motionlines_single_frame():
    ds = moving_dataset(T=1, n=4)
    ordering = OrderingSummary.from_coords(ds.frames[..., 1])
    img = render_motionlines(ds, ordering, height=30, frame_width=3, margin=2)
    assert img.shape == (30, 3, 3)
    assert img[:, 1].any(axis=1).sum() >= 2


def test_png_encoding_is_stable_and_lossless(tmp_path):
    ds = moving_dataset()
    img = render_rug(ds, fxd_order(ds), scale=2)
    assert encode_png(img) == encode_png(img)
    np.testing.assert_array_equal(decode_png(encode_png(img)), img)
    path = write_png(img, tmp_path / "sub" / "rug.png")
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    with pytest.raises(DomainError):
        encode_png(img.astype(float))


def test_rug_golden_pixels(tmp_path):
    """四隅に置いた3点・2フレームの MotionRug を画素単位で照合"""
    frames = np.array([
        [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        [[1.0, 0.0], [0.0, 0.0], [0.25, 1.0]],
    ])
    ds = TrajectoryDataset.from_array(frames)
    ordering = OrderingSummary(ranks=np.array([[2, 0, 1], [0, 1, 2]]))
    expected = np.array([
        [[255, 220, 0], [220, 40, 40]],
        [[0, 128, 128], [30, 60, 255]],
        [[30, 60, 255], [64, 151, 96]],
    ], dtype=np.uint8)
    img = render_rug(ds, ordering)
    np.testing.assert_array_equal(img, expected)
    # PNG に書いて読み戻しても同じ画素
    back = decode_png(write_png(img, tmp_path / "golden.png").read_bytes())
    np.testing.assert_array_equal(back, expected)
    np.testing.assert_array_equal(render_rug(ds, ordering, scale=2)[::2, ::2], expected)


def test_stack_images_pads_and_separates():
    a = np.full((2, 3, 3), 255, dtype=np.uint8)
    b = np.full((1, 5, 3), 255, dtype=np.uint8)
    out = stack_images([a, b], gap=2)
    assert out.shape == (5, 5, 3)
    assert not out[2:4].any()
    assert not out[:2, 3:].any()
