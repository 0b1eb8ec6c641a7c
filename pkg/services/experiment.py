"""
比較実験モジュール
複数手法の比較・sigma スイープ・計算時間の計測
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .analyzer import MethodResult, MethodSpec, analyze, timed_order
from .datagen import BoidsConfig, gen_flocking, gen_reynolds_clusters
from .errors import DomainError
from .metrics import SPATIAL_METRICS, STABILITY_METRICS, NeighborSpec, frame_neighbors, ksdi_series, kste_series
from .projection import pca_frames, project_order, timeline_from_pca
from .render import Colormap2D
from .trajectories import TrajectoryDataset, load_csv

ALL_METRICS = SPATIAL_METRICS + STABILITY_METRICS
SUMMARY_STATS = ("mean", "max", "min", "std")


def default_sigma_grid() -> List[float]:
    """0 から 1 まで 0.01 刻みの 101 個"""
    return [round(i * 0.01, 2) for i in range(101)]


class ExperimentPlan(BaseModel):
    """
    比較実験の計画

    input（CSV）を省略すると generator の設定で合成データを作る。
    seed は生成器と乱数初期化を使う全手法に適用される。
    """
    input: Optional[str] = None
    model: Literal["reynolds", "flocking"] = "reynolds"
    generator: BoidsConfig = Field(default_factory=BoidsConfig)
    methods: List[MethodSpec] = Field(min_length=1)
    metrics: List[Literal["KSra", "KSdi", "JMP", "CRS", "KSte", "TAU"]] = Field(
        default_factory=lambda: list(ALL_METRICS), min_length=1)
    neighbors: NeighborSpec = Field(default_factory=NeighborSpec)
    output_dir: str = "results"
    seed: int = 0
    threads: int = Field(1, ge=1)
    render: bool = True
    scale: int = Field(1, ge=1)
    colormap: Colormap2D = Field(default_factory=Colormap2D)

    @model_validator(mode="after")
    def _apply_seed(self):
        self.methods = [m.model_copy(update={"seed": self.seed}) for m in self.methods]
        self.generator = self.generator.model_copy(update={"seed": self.seed})
        return self


def load_dataset(plan: ExperimentPlan) -> TrajectoryDataset:
    """計画のデータセットを読み込む（または生成する）"""
    if plan.input:
        return load_csv(plan.input)
    if plan.model == "flocking":
        return gen_flocking(plan.generator)
    return gen_reynolds_clusters(plan.generator)


@dataclass
class ComparisonTable:
    """手法比較の結果"""
    results: List[MethodResult]
    metrics: Tuple[str, ...] = ALL_METRICS

    def summary_rows(self) -> List[Dict]:
        """手法 × 指標ごとの平均・最大・最小・標準偏差（失敗した手法は error のみ）"""
        rows = []
        for r in self.results:
            if not r.ok:
                rows.append({"method": r.spec.label, "metric": "", **{s: None for s in SUMMARY_STATS},
                             "error": r.error})
                continue
            by_name = r.series_by_name()
            for name in self.metrics:
                summary = by_name[name].summary or {s: None for s in SUMMARY_STATS}
                rows.append({"method": r.spec.label, "metric": name, **summary, "error": ""})
        return rows

    def tradeoff_rows(self) -> List[Dict]:
        """空間品質と安定性のトレードオフ（平均KSdi と 平均/最大KSte）"""
        rows = []
        for r in self.results:
            if not r.ok:
                continue
            by_name = r.series_by_name()
            ksdi = by_name["KSdi"].summary
            kste = by_name["KSte"].summary
            rows.append({
                "method": r.spec.label,
                "mean_KSdi": ksdi["mean"],
                "mean_KSte": kste["mean"] if kste else None,
                "max_KSte": kste["max"] if kste else None,
            })
        return rows

    def timing_rows(self) -> List[Dict]:
        return [{"method": r.spec.label, "seconds": r.seconds, "ok": r.ok} for r in self.results]

    def result(self, label: str) -> MethodResult:
        for r in self.results:
            if r.spec.label == label:
                return r
        raise KeyError(label)

    def to_dict(self) -> Dict:
        return {
            "methods": [r.to_dict() for r in self.results],
            "tradeoff": self.tradeoff_rows(),
        }


def run_comparison(plan: ExperimentPlan, ds: Optional[TrajectoryDataset] = None,
                   quiet: bool = False) -> ComparisonTable:
    """
    計画の全手法で順序を計算して指標を比較

    Args:
        plan: 実験計画
        ds: データセット（省略時は計画から読み込む）
        quiet: 進捗表示を抑える

    Returns:
        比較結果。失敗した手法は行ごとに記録され、残りは続行する
    """
    if ds is None:
        ds = load_dataset(plan)
    if not quiet:
        print(f"[比較開始] {len(plan.methods)}手法 (n={ds.n}, T={ds.T}, threads={plan.threads})")

    def run(spec: MethodSpec) -> MethodResult:
        return analyze(ds, spec, plan.neighbors, quiet=quiet)

    if plan.threads > 1:
        with ThreadPoolExecutor(max_workers=plan.threads) as pool:
            results = list(pool.map(run, plan.methods))
    else:
        results = [run(spec) for spec in plan.methods]

    failed = sum(not r.ok for r in results)
    if not quiet:
        print(f"[比較完了] 成功 {len(results) - failed} / 失敗 {failed}")
    return ComparisonTable(results=results, metrics=tuple(plan.metrics))


@dataclass
class SweepTable:
    """sigma スイープの結果"""
    rows: List[Dict] = field(default_factory=list)

    @property
    def cutoffs(self) -> Tuple[Optional[float], Optional[float]]:
        """
        (下側, 上側) のカットオフ

        下側: 最小の sigma と同じ順序が続く最後の sigma、
        上側: 最大の sigma と同じ順序が続く最初の sigma。
        全て同じ順序なら (None, None)。
        """
        if not self.rows or all(r["identical_to_previous"] for r in self.rows[1:]):
            return None, None
        low_index = 0
        while low_index + 1 < len(self.rows) and self.rows[low_index + 1]["identical_to_previous"]:
            low_index += 1
        high_index = len(self.rows) - 1
        while high_index > 0 and self.rows[high_index]["identical_to_previous"]:
            high_index -= 1
        return self.rows[low_index]["sigma"], self.rows[high_index]["sigma"]

    def to_dict(self) -> Dict:
        low, high = self.cutoffs
        return {"rows": self.rows, "low_cutoff": low, "high_cutoff": high}


def run_sweep(ds: TrajectoryDataset, sigma_values: Optional[List[float]] = None,
              spec: Optional[NeighborSpec] = None, threads: int = 1, quiet: bool = False) -> SweepTable:
    """
    SPC の sigma スイープ

    フレームごとのPCAと空間近傍は1回だけ計算して使い回す。

    Args:
        ds: データセット
        sigma_values: sigma の列（省略時は 0..1 の 101 点、昇順に並べ替える）
        spec: 指標の近傍数
        threads: 並列数
        quiet: 進捗表示を抑える

    Returns:
        sigma ごとの平均KSdi・平均KSte・最大KSte と、直前の sigma と同じ順序かどうか
    """
    sigmas = sorted(default_sigma_grid() if sigma_values is None else [float(s) for s in sigma_values])
    if not sigmas:
        raise DomainError("sweep needs at least one sigma value")
    bad = [s for s in sigmas if not 0.0 <= s <= 1.0]
    if bad:
        raise DomainError(f"sigma must be in [0,1], got {bad[0]:g}")

    spec = spec or NeighborSpec()
    k = spec.effective_k(ds.n)
    if not quiet:
        print(f"[スイープ開始] sigma {len(sigmas)}点 (n={ds.n}, T={ds.T})")
    pv, eigen, isotropic = pca_frames(ds.frames)
    nb = frame_neighbors(ds, k)

    def one(sigma: float):
        tl = timeline_from_pca(pv, eigen, isotropic, sigma)
        ranks = project_order(ds, tl, method_tag=f"spc(sigma={sigma:g})").ranks
        ksdi = ksdi_series(ranks, nb)
        kste = kste_series(ranks, k)
        return ranks, {
            "sigma": sigma,
            "mean_KSdi": float(ksdi.mean()),
            "mean_KSte": float(kste.mean()) if len(kste) else None,
            "max_KSte": float(kste.max()) if len(kste) else None,
            "interpolated_frames": int(tl.interpolated.sum()),
        }

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(one, sigmas))
    else:
        outputs = [one(s) for s in sigmas]

    table = SweepTable()
    previous = None
    for ranks, row in outputs:
        row["identical_to_previous"] = previous is not None and bool(np.array_equal(ranks, previous))
        table.rows.append(row)
        previous = ranks

    if not quiet:
        low, high = table.cutoffs
        print(f"[スイープ完了] カットオフ: 下側 {low}, 上側 {high}")
    return table


def run_bench(ds: TrajectoryDataset, specs: List[MethodSpec], repeats: int = 1,
              quiet: bool = False) -> List[Dict]:
    """
    順序計算だけの実行時間を計測（入出力・評価・描画は含まない）

    Returns:
        手法ごとの最短・平均時間（秒）
    """
    if repeats < 1:
        raise DomainError(f"repeats must be >= 1, got {repeats}")
    rows = []
    for spec in specs:
        times = []
        error = ""
        for _ in range(repeats):
            try:
                _, seconds = timed_order(ds, spec)
            except ValueError as e:
                error = str(e)
                print(f"[エラー] {spec.label}: {e}")
                break
            times.append(seconds)
        row = {
            "method": spec.label,
            "n": ds.n,
            "T": ds.T,
            "repeats": len(times),
            "best_seconds": min(times) if times else None,
            "mean_seconds": float(np.mean(times)) if times else None,
            "error": error,
        }
        rows.append(row)
        if not quiet and times:
            print(f"[計測] {spec.label}: 最短 {row['best_seconds']:.4f}秒 / 平均 {row['mean_seconds']:.4f}秒")
    return rows
