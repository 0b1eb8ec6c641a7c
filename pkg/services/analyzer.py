"""
順序計算パイプライン
手法名とパラメータ (MethodSpec) から各モジュールの順序計算を呼び分ける
"""
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .clustering import clc_order, snn_order
from .embedding import SammonConfig, TsneConfig, sammon_embed, tsne_embed
from .metrics import MetricSeries, NeighborSpec, evaluate, summarize
from .projection import CpcConfig, SpcConfig, cpc_order, pca_order, spc_order
from .spatial import GridDiscretization, hilbert_order, quadtree_order, rtree_order, zorder_order
from .trajectories import OrderingSummary, TrajectoryDataset, fxd_order

MethodName = Literal["fxd", "hil", "zor", "pqr", "rtr", "clc", "snn",
                     "sam", "samp", "sne", "snep", "spc", "cpc", "pca"]

METHODS = ("fxd", "hil", "zor", "pqr", "rtr", "clc", "snn",
           "sam", "samp", "sne", "snep", "spc", "cpc", "pca")

# 1次元座標を持つ（MotionLines を描ける）手法
COORD_METHODS = ("sam", "samp", "sne", "snep", "spc", "cpc", "pca")

# 乱数初期化を使う手法
SEEDED_METHODS = ("sam", "samp", "sne", "snep")

# 1手法の失敗として記録し、比較実験は続ける例外
# （DomainError などの TrajectoryError と np.linalg.LinAlgError は ValueError の派生）
METHOD_FAILURES = (ValueError, ArithmeticError, IndexError)


class MethodSpec(BaseModel):
    """
    1つの順序計算手法とそのパラメータ

    使われないパラメータは手法ごとに無視される。
    """
    method: MethodName
    sigma: float = 0.5
    cut_factor: float = Field(2.0, gt=0.0)
    bits: int = Field(16, ge=1, le=31)
    rtree_capacity: int = Field(8, ge=2)
    snn_k: int = Field(10, ge=1)
    sam_iterations: int = Field(500, ge=1)
    tsne_perplexity: float = Field(40.0, ge=2.0)
    tsne_iterations: int = Field(1000, ge=1)
    seed: int = 0

    @field_validator("sigma")
    @classmethod
    def _check_sigma(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"sigma must be in [0,1], got {value:g}")
        return value

    def params(self) -> Dict:
        """この手法が実際に使うパラメータ"""
        m = self.method
        if m in ("hil", "zor"):
            return {"bits": self.bits}
        if m == "rtr":
            return {"rtree_capacity": self.rtree_capacity}
        if m == "snn":
            return {"snn_k": self.snn_k}
        if m == "spc":
            return {"sigma": self.sigma}
        if m == "cpc":
            return {"sigma": self.sigma, "cut_factor": self.cut_factor}
        if m in ("sam", "samp"):
            return {"sam_iterations": self.sam_iterations, "seed": self.seed}
        if m in ("sne", "snep"):
            return {"tsne_perplexity": self.tsne_perplexity, "tsne_iterations": self.tsne_iterations,
                    "seed": self.seed}
        return {}

    @property
    def label(self) -> str:
        """表示名（例: SPC_0.5, SAMp）"""
        m = self.method
        if m in ("spc", "cpc"):
            return f"{m.upper()}_{self.sigma:g}"
        if m in ("samp", "snep"):
            return m[:-1].upper() + "p"
        return m.upper()


def _per_frame(ds: TrajectoryDataset, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    return np.stack([fn(frame) for frame in ds.frames])


def _tag(spec: MethodSpec) -> str:
    params = ",".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}" for k, v in spec.params().items())
    return f"{spec.method}({params})" if params else spec.method


def order(ds: TrajectoryDataset, spec: MethodSpec) -> OrderingSummary:
    """
    指定した手法で全フレームの順序を計算

    Args:
        ds: データセット
        spec: 手法とパラメータ

    Returns:
        順序（座標を持つ手法では coords 付き）
    """
    m = spec.method
    tag = _tag(spec)
    if m == "fxd":
        return fxd_order(ds)
    if m == "hil":
        return OrderingSummary(hilbert_order(ds.frames, GridDiscretization(bits=spec.bits)), method_tag=tag)
    if m == "zor":
        return OrderingSummary(zorder_order(ds.frames, GridDiscretization(bits=spec.bits)), method_tag=tag)
    if m == "pqr":
        return OrderingSummary(_per_frame(ds, quadtree_order), method_tag=tag)
    if m == "rtr":
        return OrderingSummary(_per_frame(ds, lambda f: rtree_order(f, spec.rtree_capacity)), method_tag=tag)
    if m == "clc":
        return OrderingSummary(_per_frame(ds, clc_order), method_tag=tag)
    if m == "snn":
        return OrderingSummary(_per_frame(ds, lambda f: snn_order(f, spec.snn_k)), method_tag=tag)
    if m == "spc":
        return spc_order(ds, SpcConfig(sigma=spec.sigma))
    if m == "cpc":
        return cpc_order(ds, CpcConfig(sigma=spec.sigma, cut_factor=spec.cut_factor))
    if m == "pca":
        return pca_order(ds)
    if m in ("sam", "samp"):
        cfg = SammonConfig(iterations=spec.sam_iterations, seed=spec.seed)
        init = "previous_frame" if m == "samp" else "random"
        return sammon_embed(ds, cfg, init=init).to_ordering(tag)
    if m in ("sne", "snep"):
        cfg = TsneConfig(perplexity=spec.tsne_perplexity, iterations=spec.tsne_iterations, seed=spec.seed)
        init = "previous_frame" if m == "snep" else "random"
        return tsne_embed(ds, cfg, init=init).to_ordering(tag)
    raise ValueError(f"unknown method: {m}")


@dataclass
class MethodResult:
    """1手法の実行結果（失敗時は error にメッセージ）"""
    spec: MethodSpec
    ordering: Optional[OrderingSummary] = None
    series: List[MetricSeries] = field(default_factory=list)
    seconds: float = 0.0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def series_by_name(self) -> Dict[str, MetricSeries]:
        return {s.name: s for s in self.series}

    def to_dict(self) -> Dict:
        """辞書形式に変換"""
        return {
            "method": self.spec.method,
            "label": self.spec.label,
            "params": self.spec.params(),
            "seconds": self.seconds,
            "error": self.error,
            "summary": summarize(self.series) if self.series else None,
        }


def timed_order(ds: TrajectoryDataset, spec: MethodSpec):
    """順序計算だけを計時する (ordering, 秒)"""
    start = time.perf_counter()
    ordering = order(ds, spec)
    return ordering, time.perf_counter() - start


def analyze(ds: TrajectoryDataset, spec: MethodSpec, neighbors: Optional[NeighborSpec] = None,
            quiet: bool = False) -> MethodResult:
    """
    順序計算と指標評価をまとめて実行

    Args:
        ds: データセット
        spec: 手法
        neighbors: 指標の近傍数
        quiet: 進捗表示を抑える

    Returns:
        実行結果。手法が失敗しても例外にせず error に記録する
    """
    result = MethodResult(spec=spec)
    if not quiet:
        print(f"[順序計算] {spec.label} を実行中... (n={ds.n}, T={ds.T})")
    try:
        result.ordering, result.seconds = timed_order(ds, spec)
        if not quiet:
            print(f"  計算時間: {result.seconds:.3f}秒")
            print(f"[評価] {spec.label} の指標を計算中...")
        result.series = evaluate(ds, result.ordering, neighbors)
    except METHOD_FAILURES as e:
        result.error = str(e) or type(e).__name__
        print(f"[エラー] {spec.label}: {e}")
    return result
