"""
軌跡データモジュール
データセット・順序表現・CSV入出力・正規化・固定順序 (FXD)
"""
import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel

from .errors import (
    ContractError,
    DataValidationError,
    DegenerateInputError,
    IntegrityError,
    ParseError,
)

PathLike = Union[str, Path]


class CsvSchema(BaseModel):
    """CSV列名の対応"""
    frame: str = "frame"
    id: str = "id"
    x: str = "x"
    y: str = "y"


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    """
    n個のエンティティ × Tフレームの2次元位置

    frames[t, i] がフレームtにおけるエンティティiの位置 (x, y)。
    構築後は読み取り専用。
    """
    entity_ids: Tuple[str, ...]
    frames: np.ndarray
    frame_rate: Optional[float] = None
    frame_numbers: Optional[np.ndarray] = None

    def __post_init__(self):
        frames = np.array(self.frames, dtype=float)
        if frames.ndim != 3 or frames.shape[2] != 2:
            raise DataValidationError(f"frames must have shape (T, n, 2), got {frames.shape}")
        n_frames, n = frames.shape[:2]
        if n_frames < 1 or n < 1:
            raise DataValidationError("dataset needs at least one frame and one entity")
        ids = tuple(str(e) for e in self.entity_ids)
        if len(ids) != n:
            raise DataValidationError(f"{len(ids)} entity ids for {n} entities")
        if len(set(ids)) != n:
            raise DataValidationError("entity ids must be unique")
        if not np.isfinite(frames).all():
            t, i = np.argwhere(~np.isfinite(frames).all(axis=2))[0]
            raise DataValidationError(f"non-finite coordinate at frame {t}, entity {ids[i]}")
        frames.setflags(write=False)

        if self.frame_numbers is None:
            numbers = np.arange(n_frames, dtype=np.int64)
        else:
            numbers = np.asarray(self.frame_numbers, dtype=np.int64).copy()
            if numbers.shape != (n_frames,):
                raise DataValidationError("frame_numbers length must equal T")
        numbers.setflags(write=False)

        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "entity_ids", ids)
        object.__setattr__(self, "frame_numbers", numbers)

    @classmethod
    def from_array(cls, frames, entity_ids: Optional[Sequence] = None, frame_rate: Optional[float] = None):
        """配列からデータセットを作る（IDは省略時 "0".."n-1"）"""
        frames = np.asarray(frames, dtype=float)
        if entity_ids is None:
            entity_ids = [str(i) for i in range(frames.shape[1])]
        return cls(entity_ids=tuple(entity_ids), frames=frames, frame_rate=frame_rate)

    @property
    def n(self) -> int:
        return self.frames.shape[1]

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @cached_property
    def bounds(self) -> Tuple[float, float, float, float]:
        """全フレームの外接矩形 (xmin, ymin, xmax, ymax)"""
        lo = self.frames.min(axis=(0, 1))
        hi = self.frames.max(axis=(0, 1))
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def frame(self, t: int) -> np.ndarray:
        return self.frames[t]


def rank_by_key(keys: np.ndarray) -> np.ndarray:
    """
    キーの昇順で順位を付ける（同値はエンティティ番号順）

    Args:
        keys: (n,) または (T, n) のキー配列

    Returns:
        同じ形の順位配列
    """
    keys = np.asarray(keys)
    order = np.argsort(keys, axis=-1, kind="stable")
    ranks = np.empty(order.shape, dtype=np.int64)
    positions = np.broadcast_to(np.arange(order.shape[-1]), order.shape)
    np.put_along_axis(ranks, order, positions, axis=-1)
    return ranks


@dataclass(frozen=True, eq=False)
class OrderingSummary:
    """
    フレームごとの順序

    ranks[t, i] はフレームtでのエンティティiの順位。
    coords があれば MotionLines 用の1次元座標。
    """
    ranks: np.ndarray
    method_tag: str = ""
    coords: Optional[np.ndarray] = None

    def __post_init__(self):
        ranks = np.array(self.ranks, dtype=np.int64)
        if ranks.ndim != 2:
            raise DataValidationError(f"ranks must have shape (T, n), got {ranks.shape}")
        n = ranks.shape[1]
        if not (np.sort(ranks, axis=1) == np.arange(n)).all():
            bad = int(np.argmax(~(np.sort(ranks, axis=1) == np.arange(n)).all(axis=1)))
            raise DataValidationError(f"ranks at frame {bad} are not a permutation of 0..{n - 1}")
        ranks.setflags(write=False)
        object.__setattr__(self, "ranks", ranks)

        if self.coords is not None:
            coords = np.array(self.coords, dtype=float)
            if coords.shape != ranks.shape:
                raise DataValidationError("coords must have the same shape as ranks")
            if not np.isfinite(coords).all():
                raise DataValidationError("coords must be finite")
            # 順位の順に並べた座標は非減少
            by_rank = np.take_along_axis(coords, np.argsort(ranks, axis=1), axis=1)
            unsorted = np.flatnonzero((np.diff(by_rank, axis=1) < 0).any(axis=1))
            if len(unsorted):
                raise DataValidationError(f"coords at frame {int(unsorted[0])} disagree with ranks")
            coords.setflags(write=False)
            object.__setattr__(self, "coords", coords)

    @classmethod
    def from_coords(cls, coords: np.ndarray, method_tag: str = "") -> "OrderingSummary":
        """1次元座標から順序を作る"""
        return cls(ranks=rank_by_key(coords), method_tag=method_tag, coords=coords)

    @classmethod
    def from_orders(cls, orders: np.ndarray, method_tag: str = "", coords=None) -> "OrderingSummary":
        """並び順（順位→エンティティ）から順序を作る"""
        orders = np.asarray(orders, dtype=np.int64)
        ranks = np.empty_like(orders)
        positions = np.broadcast_to(np.arange(orders.shape[1]), orders.shape)
        np.put_along_axis(ranks, orders, positions, axis=1)
        return cls(ranks=ranks, method_tag=method_tag, coords=coords)

    @property
    def n(self) -> int:
        return self.ranks.shape[1]

    @property
    def T(self) -> int:
        return self.ranks.shape[0]

    def order(self, t: int) -> np.ndarray:
        """フレームtの並び順（順位0のエンティティから）"""
        return np.argsort(self.ranks[t], kind="stable")

    def orders(self) -> np.ndarray:
        return np.argsort(self.ranks, axis=1, kind="stable")


def fxd_order(ds: TrajectoryDataset) -> OrderingSummary:
    """全フレームで入力順の固定順序"""
    ranks = np.tile(np.arange(ds.n, dtype=np.int64), (ds.T, 1))
    return OrderingSummary(ranks=ranks, method_tag="fxd")


def normalize(ds: TrajectoryDataset) -> TrajectoryDataset:
    """
    アスペクト比を保って全体を [0,1]^2 に収める

    短い方の軸は中央に寄せる。
    """
    xmin, ymin, xmax, ymax = ds.bounds
    width, height = xmax - xmin, ymax - ymin
    extent = max(width, height)
    if extent <= 0:
        raise DegenerateInputError("all positions are identical; cannot normalize")

    scale = 1.0 / extent
    offset = np.array([(1.0 - width * scale) / 2.0, (1.0 - height * scale) / 2.0])
    frames = (ds.frames - np.array([xmin, ymin])) * scale + offset
    return TrajectoryDataset(
        entity_ids=ds.entity_ids,
        frames=frames,
        frame_rate=ds.frame_rate,
        frame_numbers=ds.frame_numbers,
    )


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(line, f"column '{column}' is not a number: {text!r}")


def _read_rows(path: PathLike, columns: List[str]):
    """ヘッダ付きCSVを読み、(行番号, 列値リスト) を順に返す"""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise ParseError(1, "empty file")
        header = [h.strip() for h in header]
        missing = [c for c in columns if c not in header]
        if missing:
            raise ParseError(1, f"missing column(s) {missing}; header is {header}")
        positions = [header.index(c) for c in columns]

        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(reader.line_num, f"expected {len(header)} fields, got {len(row)}")
            yield reader.line_num, [row[p].strip() for p in positions]


def load_csv(path: PathLike, schema: Optional[CsvSchema] = None, frame_rate: Optional[float] = None) -> TrajectoryDataset:
    """
    CSVから軌跡データを読み込む

    Args:
        path: CSVファイルパス（既定ヘッダ frame,id,x,y）
        schema: 列名の対応
        frame_rate: フレームレート（情報用）

    Returns:
        フレーム番号昇順・エンティティ初出順のデータセット
    """
    schema = schema or CsvSchema()
    columns = [schema.frame, schema.id, schema.x, schema.y]

    positions: Dict[Tuple[int, str], Tuple[float, float]] = {}
    entity_index: Dict[str, int] = {}
    frame_set = set()

    for line, (frame_text, entity, x_text, y_text) in _read_rows(path, columns):
        try:
            frame = int(frame_text)
        except ValueError:
            raise ParseError(line, f"column '{schema.frame}' is not an integer: {frame_text!r}")
        if entity == "":
            raise ParseError(line, f"column '{schema.id}' is empty")
        x = _parse_float(x_text, line, schema.x)
        y = _parse_float(y_text, line, schema.y)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DataValidationError(f"line {line}: non-finite coordinate ({x_text}, {y_text})")
        if (frame, entity) in positions:
            raise IntegrityError(f"line {line}: duplicate row for frame {frame}, entity {entity!r}",
                                 frame=frame, entity=entity)
        positions[(frame, entity)] = (x, y)
        entity_index.setdefault(entity, len(entity_index))
        frame_set.add(frame)

    if not positions:
        raise ParseError(1, "no data rows")

    frame_numbers = sorted(frame_set)
    if frame_numbers[-1] - frame_numbers[0] + 1 != len(frame_numbers):
        gap = next(f + 1 for f in frame_numbers if f + 1 not in frame_set and f != frame_numbers[-1])
        raise IntegrityError(f"frame numbers are not contiguous: frame {gap} is missing", frame=gap)

    entities = list(entity_index)
    frames = np.empty((len(frame_numbers), len(entities), 2))
    for t, frame in enumerate(frame_numbers):
        for i, entity in enumerate(entities):
            p = positions.get((frame, entity))
            if p is None:
                raise IntegrityError(f"entity {entity!r} is missing at frame {frame}",
                                     frame=frame, entity=entity)
            frames[t, i] = p

    return TrajectoryDataset(
        entity_ids=tuple(entities),
        frames=frames,
        frame_rate=frame_rate,
        frame_numbers=np.array(frame_numbers),
    )


def format_float(value: float) -> str:
    # 17桁で倍精度を往復可能に
    return format(float(value), ".17g")


def save_csv(ds: TrajectoryDataset, path: PathLike, schema: Optional[CsvSchema] = None):
    """データセットを入力と同じCSV形式で保存"""
    schema = schema or CsvSchema()
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([schema.frame, schema.id, schema.x, schema.y])
        for t, frame in enumerate(ds.frame_numbers):
            for i, entity in enumerate(ds.entity_ids):
                x, y = ds.frames[t, i]
                writer.writerow([int(frame), entity, format_float(x), format_float(y)])


def save_ordering_csv(ordering: OrderingSummary, ds: TrajectoryDataset, path: PathLike):
    """順序を frame,rank,id 形式で保存"""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "rank", "id"])
        orders = ordering.orders()
        for t, frame in enumerate(ds.frame_numbers):
            for rank, i in enumerate(orders[t]):
                writer.writerow([int(frame), rank, ds.entity_ids[i]])


def save_coords_csv(ordering: OrderingSummary, ds: TrajectoryDataset, path: PathLike):
    """1次元座標を frame,id,coord 形式で保存"""
    if ordering.coords is None:
        raise ContractError(f"ordering '{ordering.method_tag}' has no 1D coordinates")
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame", "id", "coord"])
        for t, frame in enumerate(ds.frame_numbers):
            for i, entity in enumerate(ds.entity_ids):
                writer.writerow([int(frame), entity, format_float(ordering.coords[t, i])])


def _lookup_cell(ds: TrajectoryDataset, frame_text: str, entity: str, line: int,
                 frame_pos: Dict[int, int], entity_pos: Dict[str, int]) -> Tuple[int, int]:
    try:
        frame = int(frame_text)
    except ValueError:
        raise ParseError(line, f"frame is not an integer: {frame_text!r}")
    if frame not in frame_pos:
        raise IntegrityError(f"line {line}: frame {frame} is not in the dataset", frame=frame)
    if entity not in entity_pos:
        raise IntegrityError(f"line {line}: entity {entity!r} is not in the dataset", entity=entity)
    return frame_pos[frame], entity_pos[entity]


def load_ordering_csv(path: PathLike, ds: TrajectoryDataset, coords_path: Optional[PathLike] = None,
                      method_tag: str = "") -> OrderingSummary:
    """
    保存済みの順序（と任意の1次元座標）を読み込む

    Args:
        path: frame,rank,id 形式のCSV
        ds: 対応するデータセット
        coords_path: frame,id,coord 形式のCSV（任意）
        method_tag: 手法タグ

    Returns:
        順序
    """
    frame_pos = {int(f): t for t, f in enumerate(ds.frame_numbers)}
    entity_pos = {e: i for i, e in enumerate(ds.entity_ids)}

    ranks = np.full((ds.T, ds.n), -1, dtype=np.int64)
    for line, (frame_text, rank_text, entity) in _read_rows(path, ["frame", "rank", "id"]):
        t, i = _lookup_cell(ds, frame_text, entity, line, frame_pos, entity_pos)
        try:
            ranks[t, i] = int(rank_text)
        except ValueError:
            raise ParseError(line, f"rank is not an integer: {rank_text!r}")
    if (ranks < 0).any():
        t, i = np.argwhere(ranks < 0)[0]
        raise IntegrityError(f"no rank for entity {ds.entity_ids[i]!r} at frame {ds.frame_numbers[t]}",
                             frame=int(ds.frame_numbers[t]), entity=ds.entity_ids[i])

    coords = None
    if coords_path is not None:
        coords = np.full((ds.T, ds.n), np.nan)
        for line, (frame_text, entity, value) in _read_rows(coords_path, ["frame", "id", "coord"]):
            t, i = _lookup_cell(ds, frame_text, entity, line, frame_pos, entity_pos)
            coords[t, i] = _parse_float(value, line, "coord")
        if np.isnan(coords).any():
            raise IntegrityError("coordinate file does not cover every (frame, entity)")

    return OrderingSummary(ranks=ranks, method_tag=method_tag, coords=coords)
