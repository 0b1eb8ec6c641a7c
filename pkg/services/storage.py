"""
ストレージモジュール
順序・指標・画像・実行マニフェストの保存を管理

出力ディレクトリの構成:
    orderings/   手法ごとの順序 (frame,rank,id) と1次元座標 (frame,id,coord)
    metrics/     手法ごとのフレーム別指標
    images/      PNG画像
    summary.csv, tradeoff.csv, sweep.csv, timings.csv, manifest.json
"""
import csv
import hashlib
import json
import platform
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import cv2
import numpy as np
import pydantic
import scipy

from .analyzer import MethodResult
from .experiment import ComparisonTable, SweepTable
from .metrics import MetricSeries
from .render import write_png
from .trajectories import OrderingSummary, TrajectoryDataset, format_float, save_coords_csv, save_ordering_csv

PathLike = Union[str, Path]

MANIFEST_NAME = "manifest.json"


def file_digest(path: PathLike) -> str:
    """ファイルの SHA-256"""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def library_versions() -> Dict[str, str]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pydantic": pydantic.VERSION,
        "opencv": cv2.__version__,
    }


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


def write_rows(path: PathLike, rows: List[Dict], columns: Optional[List[str]] = None) -> Path:
    """辞書の行をCSVに書く（列は columns、省略時は最初の行のキー順）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])
    return path


def metric_rows(series: List[MetricSeries], ds: TrajectoryDataset) -> List[Dict]:
    """
    フレーム別の指標行

    安定性指標（遷移 t→t+1）はフレーム t+1 の行に置き、フレーム0は空欄。
    """
    rows = []
    for t, frame in enumerate(ds.frame_numbers):
        row = {"frame": int(frame)}
        for s in series:
            if len(s.values) == ds.T:
                row[s.name] = float(s.values[t])
            else:
                row[s.name] = float(s.values[t - 1]) if t > 0 else None
        rows.append(row)
    return rows


class Storage:
    """出力ディレクトリのマネージャー"""

    def __init__(self, base_dir: PathLike = "./results"):
        self.base_dir = Path(base_dir)
        self.orderings_dir = self.base_dir / "orderings"
        self.metrics_dir = self.base_dir / "metrics"
        self.images_dir = self.base_dir / "images"

        # ディレクトリ作成
        for d in (self.orderings_dir, self.metrics_dir, self.images_dir):
            d.mkdir(parents=True, exist_ok=True)

        self._outputs: List[Path] = []

    def _record(self, path: Path) -> Path:
        self._outputs.append(path)
        return path

    def save_ordering(self, ordering: OrderingSummary, ds: TrajectoryDataset, label: str) -> Path:
        """
        順序を保存（座標があれば別ファイルにも保存）

        Returns:
            順序CSVのパス
        """
        path = self.orderings_dir / f"{label}.csv"
        save_ordering_csv(ordering, ds, path)
        self._record(path)
        if ordering.coords is not None:
            coords_path = self.orderings_dir / f"{label}_coords.csv"
            save_coords_csv(ordering, ds, coords_path)
            self._record(coords_path)
        return path

    def save_metrics(self, result: MethodResult, ds: TrajectoryDataset) -> Path:
        rows = metric_rows(result.series, ds)
        columns = ["frame"] + [s.name for s in result.series]
        return self._record(write_rows(self.metrics_dir / f"{result.spec.label}.csv", rows, columns))

    def save_comparison(self, table: ComparisonTable, ds: TrajectoryDataset) -> Dict[str, Path]:
        """
        比較結果を保存

        計算時間は実行ごとに変わるので timings.csv に分けて保存する。

        Returns:
            種類 -> パス
        """
        for r in table.results:
            if r.ok:
                self.save_ordering(r.ordering, ds, r.spec.label)
                self.save_metrics(r, ds)
        columns = ["method", "metric", "mean", "max", "min", "std", "error"]
        paths = {
            "summary": self._record(write_rows(self.base_dir / "summary.csv", table.summary_rows(), columns)),
            "tradeoff": self._record(write_rows(
                self.base_dir / "tradeoff.csv", table.tradeoff_rows(),
                ["method", "mean_KSdi", "mean_KSte", "max_KSte"])),
        }
        paths["timings"] = self.save_timings(table.timing_rows())
        return paths

    def save_timings(self, rows: List[Dict]) -> Path:
        # マニフェストのダイジェスト対象外
        return write_rows(self.base_dir / "timings.csv", rows)

    def save_sweep(self, table: SweepTable) -> Path:
        columns = ["sigma", "mean_KSdi", "mean_KSte", "max_KSte", "interpolated_frames", "identical_to_previous"]
        return self._record(write_rows(self.base_dir / "sweep.csv", table.rows, columns))

    def save_image(self, name: str, image: np.ndarray) -> Path:
        return self._record(write_png(image, self.images_dir / f"{name}.png"))

    def write_manifest(self, command: str, parameters: Dict, seed: Optional[int] = None,
                       inputs: Iterable[PathLike] = (), extra: Optional[Dict] = None) -> Path:
        """
        実行マニフェストを保存

        Args:
            command: サブコマンド名
            parameters: 実行パラメータ
            seed: 乱数シード
            inputs: 入力ファイル（SHA-256 を記録）
            extra: 追加情報（カラーマップのアンカーなど）

        Returns:
            マニフェストのパス
        """
        manifest = build_manifest(command, parameters, seed, inputs, self._outputs, self.base_dir, extra)
        return write_manifest_file(self.base_dir / MANIFEST_NAME, manifest)

    def load_manifest(self) -> Optional[Dict]:
        path = self.base_dir / MANIFEST_NAME
        if path.exists():
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        return None


def _output_name(path: Path, base_dir: Optional[Path]) -> str:
    if base_dir is not None and path.is_relative_to(base_dir):
        return path.relative_to(base_dir).as_posix()
    return path.name


def build_manifest(command: str, parameters: Dict, seed: Optional[int] = None,
                   inputs: Iterable[PathLike] = (), outputs: Iterable[PathLike] = (),
                   base_dir: Optional[Path] = None, extra: Optional[Dict] = None) -> Dict:
    """コマンド・パラメータ・シード・ライブラリのバージョン・入出力のダイジェスト"""
    manifest = {
        "command": command,
        "parameters": parameters,
        "seed": seed,
        "versions": library_versions(),
        "inputs": {Path(p).name: file_digest(p) for p in inputs},
        "outputs": {_output_name(Path(p), base_dir): file_digest(p) for p in sorted(set(map(Path, outputs)))},
    }
    if extra:
        manifest.update(extra)
    return manifest


def write_manifest_file(path: PathLike, manifest: Dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, ensure_ascii=False, indent=2, sort_keys=True, default=_json_default)
    return path


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, pydantic.BaseModel):
        return value.model_dump()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")
