"""
描画モジュール
MotionRug・寄与ヒートラグ・指標バー・MotionLines のラスタ画像を生成し PNG に書き出す

画像は (高さ, 幅, 3) の uint8 RGB 配列。列 t がフレーム t、行 r が順位 r（上が順位0）。
"""
import math
from pathlib import Path
from typing import Literal, Optional, Tuple, Union

import cv2
import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from .errors import ContractError, DomainError, ImageSizeError
from .metrics import MetricSeries
from .trajectories import OrderingSummary, TrajectoryDataset

RGB = Tuple[int, int, int]

# cv2 が扱える範囲に収める上限
MAX_PIXELS = 2 ** 30

STRIP_CAPS = {"KSdi": 37.5, "KSte": 6.25}
METRIC_COLORS = {"KSdi": (255, 220, 0), "KSte": (30, 60, 255)}
BASELINE_COLOR = (128, 128, 128)


class Colormap2D(BaseModel):
    """
    2次元位置 → RGB の双線形カラーマップ

    mode="frame" は各フレームの位置で色を決め、mode="reference" は
    reference_frame での位置の色を全フレームで使う。
    reference_box を省略するとデータセット全体の外接矩形。
    """
    nw: RGB = (0, 128, 128)
    ne: RGB = (255, 220, 0)
    sw: RGB = (30, 60, 255)
    se: RGB = (220, 40, 40)
    mode: Literal["frame", "reference"] = "frame"
    reference_frame: int = Field(0, ge=0)
    reference_box: Optional[Tuple[float, float, float, float]] = None

    @field_validator("nw", "ne", "sw", "se")
    @classmethod
    def _check_rgb(cls, value):
        if any(c < 0 or c > 255 for c in value):
            raise ValueError(f"RGB components must be in [0,255], got {value}")
        return value

    @model_validator(mode="after")
    def _check_box(self):
        if self.reference_box is not None:
            x0, y0, x1, y1 = self.reference_box
            if not (x1 > x0 and y1 > y0):
                raise ValueError(f"reference_box must have positive area, got {self.reference_box}")
        return self

    def anchors(self) -> dict:
        return {"NW": list(self.nw), "NE": list(self.ne), "SW": list(self.sw), "SE": list(self.se)}


def _unit_interval(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi <= lo:
        # 幅のない軸は中央の色
        return np.full(values.shape, 0.5)
    return np.clip((values - lo) / (hi - lo), 0.0, 1.0)


def colormap2d(pos: np.ndarray, cm: Colormap2D, box: Tuple[float, float, float, float]) -> np.ndarray:
    """
    位置を box で [0,1]^2 に正規化（はみ出しはクランプ）し、四隅の色を双線形補間

    Args:
        pos: (..., 2) の位置
        cm: カラーマップ
        box: (xmin, ymin, xmax, ymax)

    Returns:
        (..., 3) の float RGB
    """
    pos = np.asarray(pos, dtype=float)
    x0, y0, x1, y1 = box
    u = _unit_interval(pos[..., 0], x0, x1)[..., None]
    v = _unit_interval(pos[..., 1], y0, y1)[..., None]
    nw, ne, sw, se = (np.asarray(c, dtype=float) for c in (cm.nw, cm.ne, cm.sw, cm.se))
    return (1 - u) * (1 - v) * sw + u * (1 - v) * se + (1 - u) * v * nw + u * v * ne


def entity_colors(ds: TrajectoryDataset, cm: Optional[Colormap2D] = None) -> np.ndarray:
    """各フレーム・各エンティティの色 (T, n, 3) uint8"""
    cm = cm or Colormap2D()
    box = cm.reference_box or ds.bounds
    if cm.mode == "reference":
        if cm.reference_frame >= ds.T:
            raise DomainError(f"reference frame {cm.reference_frame} is outside 0..{ds.T - 1}")
        colors = colormap2d(ds.frames[cm.reference_frame], cm, box)
        colors = np.broadcast_to(colors, (ds.T, ds.n, 3))
    else:
        colors = colormap2d(ds.frames, cm, box)
    return np.rint(colors).astype(np.uint8)


def _check_ordering(ds: TrajectoryDataset, ordering: OrderingSummary):
    if ordering.ranks.shape != (ds.T, ds.n):
        raise DomainError(f"ordering shape {ordering.ranks.shape} does not match dataset ({ds.T}, {ds.n})")


def _check_size(height: int, width: int, scale: int = 1):
    if height * width > MAX_PIXELS:
        hint = ""
        if scale > 1:
            hint = f"; use scale <= {suggested_scale(height // scale, width // scale)}"
        raise ImageSizeError(f"image of {width}x{height} pixels exceeds {MAX_PIXELS} pixels{hint}")


def _by_rank(values: np.ndarray, ordering: OrderingSummary) -> np.ndarray:
    """(T, n, ...) のエンティティ別の値を (n, T, ...) の順位別に並べ替える"""
    orders = ordering.orders()
    index = orders.reshape(orders.shape + (1,) * (values.ndim - 2))
    gathered = np.take_along_axis(values, index, axis=1)
    return np.swapaxes(gathered, 0, 1)


def _upscale(cells: np.ndarray, scale: int) -> np.ndarray:
    return np.ascontiguousarray(np.repeat(np.repeat(cells, scale, axis=0), scale, axis=1))


def render_rug(ds: TrajectoryDataset, ordering: OrderingSummary,
               cm: Optional[Colormap2D] = None, scale: int = 1) -> np.ndarray:
    """
    MotionRug を描画

    Args:
        ds: データセット
        ordering: 順序
        cm: カラーマップ
        scale: 1セルあたりのピクセル数

    Returns:
        (n*scale, T*scale, 3) の RGB 画像
    """
    if scale < 1:
        raise DomainError(f"scale must be >= 1, got {scale}")
    _check_ordering(ds, ordering)
    _check_size(ds.n * scale, ds.T * scale, scale)
    cells = _by_rank(entity_colors(ds, cm), ordering)
    return _upscale(cells, scale)


def render_heat_rug(ds: TrajectoryDataset, ordering: OrderingSummary, contributions: np.ndarray,
                    color: RGB = METRIC_COLORS["KSdi"], scale: int = 1) -> np.ndarray:
    """
    寄与ヒートラグを描画（明るいほど寄与が大きい）

    0 から寄与の99パーセンタイルまでの線形ランプ。99パーセンタイルが0なら最大値を使う。
    """
    if scale < 1:
        raise DomainError(f"scale must be >= 1, got {scale}")
    _check_ordering(ds, ordering)
    contributions = np.asarray(contributions, dtype=float)
    if contributions.shape != (ds.T, ds.n):
        raise DomainError(f"contributions must have shape ({ds.T}, {ds.n}), got {contributions.shape}")
    _check_size(ds.n * scale, ds.T * scale, scale)

    top = float(np.percentile(contributions, 99))
    if top <= 0:
        top = float(contributions.max())
    if top > 0:
        intensity = np.clip(contributions / top, 0.0, 1.0)
    else:
        intensity = np.zeros_like(contributions)

    cells = _by_rank(intensity, ordering)[..., None] * np.asarray(color, dtype=float)
    return _upscale(np.rint(cells).astype(np.uint8), scale)


def render_metric_strip(series: MetricSeries, cap: Optional[float] = None, height: int = 40,
                        frames: Optional[int] = None, scale: int = 1,
                        color: Optional[RGB] = None) -> np.ndarray:
    """
    指標のバー列を描画

    Args:
        series: 指標系列
        cap: 表示上限（省略時は KSdi 37.5 / KSte 6.25、それ以外は系列の最大値）
        height: 画像の高さ。最下行は基線
        frames: ラグのフレーム数。系列が遷移ごと (T-1) なら左端に空の列を足して幅を揃える
        scale: 1本あたりの幅
        color: バーの色

    Returns:
        (height, 列数*scale, 3) の RGB 画像
    """
    values = np.asarray(series.values, dtype=float)
    if frames is None and len(values) == 0:
        raise DomainError(f"metric series {series.name} is empty")
    if height < 2:
        raise DomainError(f"strip height must be >= 2, got {height}")
    if frames is not None:
        if len(values) == frames - 1:
            values = np.concatenate([[0.0], values])
        elif len(values) != frames:
            raise DomainError(f"series of length {len(values)} cannot align with {frames} frames")

    if cap is None:
        cap = STRIP_CAPS.get(series.name)
    if cap is None:
        cap = float(values.max()) if len(values) and values.max() > 0 else 1.0
    if cap <= 0:
        raise DomainError(f"cap must be positive, got {cap}")
    color = color or METRIC_COLORS.get(series.name, (255, 255, 255))

    bars = height - 1
    levels = np.rint(np.clip(values, 0.0, cap) / cap * bars).astype(np.int64)
    rows = np.arange(height)[:, None]
    filled = (rows >= bars - levels[None, :]) & (rows < bars)

    img = np.zeros((height, len(values), 3), dtype=np.uint8)
    img[filled] = color
    img[bars, :] = BASELINE_COLOR
    if scale > 1:
        img = np.repeat(img, scale, axis=1)
    return np.ascontiguousarray(img)


def motionline_rows(coords: np.ndarray, height: int, margin: int) -> np.ndarray:
    """
    1次元座標をフレームごとに縦のピクセル位置へ写す

    各フレームの最小値を上の余白、最大値を下の余白に合わせる。幅がなければ中央。
    """
    coords = np.asarray(coords, dtype=float)
    lo = coords.min(axis=1, keepdims=True)
    hi = coords.max(axis=1, keepdims=True)
    span = hi - lo
    usable = height - 1 - 2 * margin
    unit = np.divide(coords - lo, span, out=np.full(coords.shape, 0.5), where=span > 0)
    return np.rint(margin + unit * usable).astype(np.int64)


def render_motionlines(ds: TrajectoryDataset, ordering: OrderingSummary, cm: Optional[Colormap2D] = None,
                       height: int = 400, frame_width: int = 2, margin: int = 10) -> np.ndarray:
    """
    MotionLines を描画

    エンティティごとにフレーム間の1次元座標を折れ線で結ぶ。色は終点フレームの位置の色。

    Args:
        ds: データセット
        ordering: coords を持つ順序
        cm: カラーマップ
        height: 画像の高さ
        frame_width: 1フレームあたりの横幅
        margin: 上下の余白

    Returns:
        (height, T*frame_width, 3) の RGB 画像
    """
    if ordering.coords is None:
        raise ContractError(
            f"ordering '{ordering.method_tag}' has no 1D coordinates; "
            "MotionLines needs a coordinate-producing method (spc, cpc, pca, sam, samp, sne, snep)")
    _check_ordering(ds, ordering)
    if frame_width < 1:
        raise DomainError(f"frame_width must be >= 1, got {frame_width}")
    if height < 2 * margin + 2:
        raise DomainError(f"height {height} is too small for margin {margin}")
    width = ds.T * frame_width
    _check_size(height, width)

    rows = motionline_rows(ordering.coords, height, margin)
    cols = np.arange(ds.T) * frame_width + frame_width // 2
    colors = entity_colors(ds, cm)

    img = np.zeros((height, width, 3), dtype=np.uint8)
    if ds.T == 1:
        img[rows[0], cols[0]] = colors[0]
        return img
    for t in range(1, ds.T):
        x0, x1 = int(cols[t - 1]), int(cols[t])
        for i in range(ds.n):
            c = tuple(int(v) for v in colors[t, i])
            cv2.line(img, (x0, int(rows[t - 1, i])), (x1, int(rows[t, i])), c, 1, cv2.LINE_8)
    return img


def stack_images(images, gap: int = 2) -> np.ndarray:
    """幅を揃えた画像を縦に並べる（間は黒）"""
    images = [np.asarray(im, dtype=np.uint8) for im in images]
    width = max(im.shape[1] for im in images)
    parts = []
    for k, im in enumerate(images):
        if im.shape[1] < width:
            im = np.pad(im, ((0, 0), (0, width - im.shape[1]), (0, 0)))
        if k > 0 and gap > 0:
            parts.append(np.zeros((gap, width, 3), dtype=np.uint8))
        parts.append(im)
    return np.ascontiguousarray(np.concatenate(parts, axis=0))


def encode_png(image: np.ndarray) -> bytes:
    """
    RGB 画像を PNG バイト列にエンコード

    Args:
        image: (高さ, 幅, 3) の uint8 RGB

    Returns:
        PNGバイト列
    """
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise DomainError(f"expected an 8-bit RGB image, got {image.dtype} {image.shape}")
    result, encoded = cv2.imencode(".png", cv2.cvtColor(image, cv2.COLOR_RGB2BGR))
    if result:
        return encoded.tobytes()
    else:
        raise ValueError("Failed to encode image to PNG")


def decode_png(data: bytes) -> np.ndarray:
    """PNGバイト列を RGB 画像に戻す"""
    img = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_COLOR)
    if img is None:
        raise ValueError("Failed to decode PNG data")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def write_png(image: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_png(image))
    return path


def suggested_scale(n: int, T: int) -> int:
    """画素上限に収まる最大の倍率"""
    return max(1, int(math.isqrt(MAX_PIXELS // max(n * T, 1))))
