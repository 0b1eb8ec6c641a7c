"""
1次元埋め込みによる順序モジュール
Sammon写像 (SAM/SAMp) と t-SNE (SNE/SNEp)、いずれも厳密な勾配で計算
"""
from dataclasses import dataclass
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .errors import DataValidationError, NumericalError
from .neighbors import pairwise_distances
from .trajectories import OrderingSummary, TrajectoryDataset

Init = Literal["random", "previous_frame"]


@dataclass(frozen=True, eq=False)
class Embedding1D:
    """
    フレームごとの1次元座標

    coords: (T, n)
    iterations_used: (T,) 実際の反復回数
    final_cost: (T,) 最終コスト
    """
    coords: np.ndarray
    iterations_used: np.ndarray
    final_cost: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.coords).all():
            raise DataValidationError("embedding coordinates must be finite")

    def to_ordering(self, method_tag: str = "") -> OrderingSummary:
        return OrderingSummary.from_coords(self.coords, method_tag=method_tag)


def _frame_rng(seed: int, t: int) -> np.random.Generator:
    # フレームごとに独立した乱数列
    return np.random.default_rng([seed, t])


# ---- Sammon ----

class SammonConfig(BaseModel):
    """Sammon写像の設定"""
    iterations: int = Field(500, ge=1)
    magic_factor: float = Field(0.3, gt=0.0, le=1.0)
    max_halves: int = Field(20, ge=0)
    tolerance: float = Field(1e-9, ge=0.0)
    seed: int = 0


def sammon_cost(D: np.ndarray, x: np.ndarray) -> float:
    """
    Sammonのストレス C = (1/c) Σ_{i<j} (D_ij - δ_ij)^2 / D_ij

    Args:
        D: 入力空間の距離行列（非対角は正）
        x: 1次元座標 (n,)
    """
    iu = np.triu_indices(len(x), 1)
    d = D[iu]
    delta = np.abs(x[:, None] - x[None, :])[iu]
    return float(((d - delta) ** 2 / d).sum() / d.sum())


def sammon_gradient(D: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Sammonストレスの x に関する勾配"""
    n = len(x)
    c = D[np.triu_indices(n, 1)].sum()
    diff = x[:, None] - x[None, :]
    delta = np.abs(diff)
    safe_D = D + np.eye(n)
    ratio = (D - delta) / safe_D
    np.fill_diagonal(ratio, 0.0)
    return (-2.0 / c) * (ratio * np.sign(diff)).sum(axis=1)


def sammon_descent(D: np.ndarray, x0: np.ndarray, cfg: SammonConfig) -> Tuple[np.ndarray, List[float]]:
    """
    擬似ニュートン法（魔法係数 + 増加時の半減）でストレスを下げる

    1次元ではヘッセ対角は (2/c) Σ_j 1/D_ij で一定。

    Returns:
        (座標, 受理した各ステップ後のコスト履歴)
    """
    n = len(x0)
    c = D[np.triu_indices(n, 1)].sum()
    inv = 1.0 / (D + np.eye(n))
    np.fill_diagonal(inv, 0.0)
    hessian = (2.0 / c) * inv.sum(axis=1)

    x = np.array(x0, dtype=float)
    cost = sammon_cost(D, x)
    history = [cost]
    for _ in range(cfg.iterations):
        step = -cfg.magic_factor * sammon_gradient(D, x) / hessian
        accepted = False
        for _ in range(cfg.max_halves + 1):
            candidate = x + step
            new_cost = sammon_cost(D, candidate)
            if new_cost <= cost:
                accepted = True
                break
            step = step * 0.5
        if not accepted:
            break
        improvement = cost - new_cost
        x, cost = candidate, new_cost
        history.append(cost)
        if improvement <= cfg.tolerance * max(cost, 1e-300):
            break
    return x, history


def _separate_coincident(frame: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """重なった点を直径の 1e-9 倍の乱数でずらす"""
    D = pairwise_distances(frame)
    off = D[~np.eye(len(frame), dtype=bool)]
    if (off > 0).all():
        return D
    scale = 1e-9 * (D.max() if D.max() > 0 else 1.0)
    return pairwise_distances(frame + rng.normal(0.0, scale, frame.shape))


def _random_init(frame: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    spread = float(np.sqrt(frame.var(axis=0).sum()))
    return rng.normal(0.0, spread if spread > 0 else 1.0, len(frame))


def sammon_embed(ds: TrajectoryDataset, cfg: Optional[SammonConfig] = None,
                 init: Init = "random") -> Embedding1D:
    """
    フレームごとのSammon写像

    Args:
        ds: データセット (n >= 2)
        cfg: 反復回数・魔法係数・乱数シード
        init: random（SAM）または previous_frame（SAMp、先頭フレームのみ乱数）

    Returns:
        1次元埋め込み
    """
    cfg = cfg or SammonConfig()
    if ds.n < 2:
        raise DataValidationError("Sammon mapping needs at least 2 entities")

    coords = np.empty((ds.T, ds.n))
    used = np.zeros(ds.T, dtype=np.int64)
    costs = np.empty(ds.T)
    for t, frame in enumerate(ds.frames):
        rng = _frame_rng(cfg.seed, t)
        D = _separate_coincident(frame, rng)
        if init == "previous_frame" and t > 0:
            x0 = coords[t - 1]
        else:
            x0 = _random_init(frame, rng)
        x, history = sammon_descent(D, x0, cfg)
        if not np.isfinite(history[-1]) or not np.isfinite(x).all():
            raise NumericalError(t, "Sammon cost became NaN")
        coords[t] = x
        used[t] = len(history) - 1
        costs[t] = history[-1]
    return Embedding1D(coords=coords, iterations_used=used, final_cost=costs)


# ---- t-SNE ----

class TsneConfig(BaseModel):
    """t-SNEの設定（早期誇張は乱数初期化のときのみ）"""
    perplexity: float = Field(40.0, ge=2.0)
    iterations: int = Field(1000, ge=1)
    learning_rate: float = Field(200.0, gt=0.0)
    momentum_initial: float = Field(0.5, ge=0.0, lt=1.0)
    momentum_final: float = Field(0.8, ge=0.0, lt=1.0)
    momentum_switch: int = Field(250, ge=0)
    exaggeration: float = Field(4.0, ge=1.0)
    exaggeration_iterations: int = Field(100, ge=0)
    perplexity_tolerance: float = Field(1e-3, gt=0.0)
    search_steps: int = Field(100, ge=1)
    seed: int = 0


def tsne_conditional(D2: np.ndarray, perplexity: float, tolerance: float = 1e-3,
                     steps: int = 100) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    条件付き確率 P_{j|i} を二分探索で求める

    Args:
        D2: 二乗距離行列 (n, n)
        perplexity: 目標 perplexity κ
        tolerance: |perplexity - κ| <= tolerance * κ で収束
        steps: 探索の最大回数

    Returns:
        (P_cond (n, n), 実現した perplexity (n,), 収束したか (n,))
    """
    n = D2.shape[0]
    off = ~np.eye(n, dtype=bool)
    dist = np.where(off, D2, np.inf)
    # 行ごとの最小距離を引いてアンダーフローを避ける（正規化後は不変）
    shift = dist.min(axis=1, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    rel = np.where(off, dist - shift, 0.0)

    mean = np.where(off, D2, 0.0).sum(axis=1) / max(n - 1, 1)
    beta = np.where(mean > 0, 1.0 / np.where(mean > 0, mean, 1.0), 1.0)
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    target = np.log(perplexity)

    def evaluate(beta):
        W = np.where(off, np.exp(-beta[:, None] * rel), 0.0)
        total = W.sum(axis=1)
        P = W / total[:, None]
        H = np.log(total) + beta * (rel * P).sum(axis=1)
        return P, H

    P, H = evaluate(beta)
    gap = np.abs(np.exp(H) - perplexity)
    done = gap <= tolerance * perplexity
    # 収束しなかった行は試した中で最も目標に近い beta の結果を返す
    best_P, best_perp, best_gap = P, np.exp(H), gap
    for _ in range(steps):
        if done.all():
            break
        too_flat = H > target
        lo = np.where(~done & too_flat, beta, lo)
        hi = np.where(~done & ~too_flat, beta, hi)
        up = np.where(np.isinf(hi), beta * 2.0, (beta + hi) / 2.0)
        down = np.where(np.isinf(lo), beta / 2.0, (beta + lo) / 2.0)
        beta = np.where(done, beta, np.where(too_flat, up, down))
        P, H = evaluate(beta)
        gap = np.abs(np.exp(H) - perplexity)
        done = gap <= tolerance * perplexity
        closer = gap < best_gap
        best_P = np.where(closer[:, None], P, best_P)
        best_perp = np.where(closer, np.exp(H), best_perp)
        best_gap = np.where(closer, gap, best_gap)

    return best_P, best_perp, best_gap <= tolerance * perplexity


def tsne_joint(P_cond: np.ndarray) -> np.ndarray:
    """対称化した同時確率 P_ij = (P_{j|i} + P_{i|j}) / 2n"""
    n = P_cond.shape[0]
    return (P_cond + P_cond.T) / (2.0 * n)


def _student_t(y: np.ndarray) -> np.ndarray:
    num = 1.0 / (1.0 + (y[:, None] - y[None, :]) ** 2)
    np.fill_diagonal(num, 0.0)
    return num


def tsne_gradient(P: np.ndarray, y: np.ndarray) -> np.ndarray:
    """KLダイバージェンスの勾配 4 Σ_j (P_ij - Q_ij) q_ij (y_i - y_j)"""
    num = _student_t(y)
    Q = num / num.sum()
    return 4.0 * ((P - Q) * num * (y[:, None] - y[None, :])).sum(axis=1)


def tsne_cost(P: np.ndarray, y: np.ndarray) -> float:
    """KL(P || Q)"""
    num = _student_t(y)
    Q = num / num.sum()
    mask = P > 0
    return float((P[mask] * np.log(P[mask] / np.maximum(Q[mask], 1e-300))).sum())


def tsne_descent(P: np.ndarray, y0: np.ndarray, cfg: TsneConfig, exaggerate: bool) -> np.ndarray:
    """慣性付き勾配降下（gains 付き）"""
    y = np.array(y0, dtype=float)
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    for it in range(cfg.iterations):
        target = P * cfg.exaggeration if exaggerate and it < cfg.exaggeration_iterations else P
        grad = tsne_gradient(target, y)
        momentum = cfg.momentum_initial if it < cfg.momentum_switch else cfg.momentum_final
        same = (grad > 0) == (update > 0)
        gains = np.maximum(np.where(same, gains * 0.8, gains + 0.2), 0.01)
        update = momentum * update - cfg.learning_rate * gains * grad
        y = y + update
        y = y - y.mean()
    return y


def tsne_embed(ds: TrajectoryDataset, cfg: Optional[TsneConfig] = None,
               init: Init = "random") -> Embedding1D:
    """
    フレームごとのt-SNE

    Args:
        ds: データセット (n >= 3, perplexity < n)
        cfg: t-SNEの設定
        init: random（SNE）または previous_frame（SNEp、先頭フレームのみ乱数）

    Returns:
        1次元埋め込み
    """
    cfg = cfg or TsneConfig()
    if ds.n < 3:
        raise DataValidationError("t-SNE needs at least 3 entities")
    if cfg.perplexity >= ds.n:
        raise DataValidationError(f"perplexity {cfg.perplexity:g} must be smaller than n={ds.n}")

    coords = np.empty((ds.T, ds.n))
    costs = np.empty(ds.T)
    for t, frame in enumerate(ds.frames):
        D2 = pairwise_distances(frame) ** 2
        P_cond, _, converged = tsne_conditional(D2, cfg.perplexity, cfg.perplexity_tolerance, cfg.search_steps)
        if not converged.all():
            print(f"[警告] フレーム{t}: {int((~converged).sum())}点で perplexity の探索が収束しませんでした（最も近い値を使用）")
        P = np.maximum(tsne_joint(P_cond), 1e-300)
        np.fill_diagonal(P, 0.0)

        previous = init == "previous_frame" and t > 0
        y0 = coords[t - 1] if previous else _frame_rng(cfg.seed, t).normal(0.0, 1e-4, ds.n)
        y = tsne_descent(P, y0, cfg, exaggerate=not previous)
        if not np.isfinite(y).all():
            raise NumericalError(t, "t-SNE coordinates became NaN")
        coords[t] = y
        costs[t] = tsne_cost(P, y)

    used = np.full(ds.T, cfg.iterations, dtype=np.int64)
    return Embedding1D(coords=coords, iterations_used=used, final_cost=costs)
