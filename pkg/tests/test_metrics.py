"""
指標のテスト（KSra・KSdi・JMP・CRS・KSte・Kendall τ）
"""
import sys
from itertools import combinations, permutations
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import kendalltau

sys.path.append(str(Path(__file__).parent.parent))

from services.errors import DomainError
from services.metrics import (
    NeighborSpec,
    contribution_rugs,
    count_inversions,
    crs,
    evaluate,
    frame_neighbors,
    harmonic,
    jmp,
    kendall_tau,
    ksdi,
    ksdi_contributions,
    ksdi_series,
    ksra,
    ksra_series,
    kste,
    kste_contributions,
    kste_series,
    rank_offsets,
    summarize,
    tie_rank_value,
)
from services.trajectories import OrderingSummary, TrajectoryDataset, fxd_order

K2 = NeighborSpec(k=2)
COLLINEAR = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
IDENTITY3 = np.array([0, 1, 2])


def random_case(seed=0, T=5, n=9):
    rng = np.random.default_rng(seed)
    ds = TrajectoryDataset.from_array(rng.normal(size=(T, n, 2)))
    ranks = np.stack([rng.permutation(n) for _ in range(T)])
    return ds, OrderingSummary(ranks=ranks)


def test_tie_rank_value_and_harmonic():
    assert tie_rank_value(1) == 1
    assert tie_rank_value(3) == 5
    np.testing.assert_array_equal(tie_rank_value(np.array([1, 2])), [1, 3])
    with pytest.raises(DomainError):
        tie_rank_value(0)
    assert harmonic(3) == pytest.approx(11.0 / 6.0)


def test_ksra_hand_computed():
    """x = 0, 1, 3 を入力順に並べたとき KSra = 13/9"""
    assert ksra(COLLINEAR, IDENTITY3, K2) == pytest.approx(13.0 / 9.0)


def test_ksdi_hand_computed():
    """同じ配置で KSdi = 15/11"""
    assert ksdi(COLLINEAR, IDENTITY3, K2) == pytest.approx(15.0 / 11.0)
    print("✓ KSdi の手計算値と一致")


def test_ksdi_contributions_sum_to_ksdi():
    ds, ordering = random_case(seed=1)
    spec = NeighborSpec(k=3)
    for t in range(ds.T):
        parts = ksdi_contributions(ds.frames[t], ordering.ranks[t], spec)
        assert parts.sum() == pytest.approx(ksdi(ds.frames[t], ordering.ranks[t], spec))


def test_effective_k_clamps_and_rejects_single_entity():
    assert NeighborSpec(k=10).effective_k(3) == 2
    assert NeighborSpec(k=2).effective_k(5) == 2
    with pytest.raises(DomainError):
        NeighborSpec().effective_k(1)
    with pytest.raises(ValueError):
        NeighborSpec(k=0)


def test_jmp_crs_tau_for_reversal():
    prev = np.arange(4)
    reverse = prev[::-1].copy()
    assert jmp(prev, reverse) == 8
    assert crs(prev, reverse) == 6
    assert kendall_tau(prev, reverse) == pytest.approx(-1.0)
    assert kendall_tau(prev, prev) == pytest.approx(1.0)


def test_crs_matches_pair_count():
    rng = np.random.default_rng(2)
    prev, next_ = rng.permutation(12), rng.permutation(12)
    expected = sum(
        (prev[i] - prev[j]) * (next_[i] - next_[j]) < 0 for i, j in combinations(range(12), 2)
    )
    assert crs(prev, next_) == expected


def test_count_inversions_matches_brute_force():
    rng = np.random.default_rng(3)
    values = rng.permutation(37).tolist()
    expected = sum(values[i] > values[j] for i, j in combinations(range(37), 2))
    assert count_inversions(values) == expected
    assert count_inversions([]) == 0


def test_pair_metrics_reject_different_sizes():
    with pytest.raises(DomainError):
        jmp(np.arange(3), np.arange(4))
    with pytest.raises(DomainError):
        kste(np.arange(3), np.arange(4))


def test_rank_offsets_order():
    offsets = rank_offsets(4, 3)
    np.testing.assert_array_equal(offsets[0], [1, 2, 3])
    np.testing.assert_array_equal(offsets[1], [-1, 1, 2])
    np.testing.assert_array_equal(offsets[3], [-1, -2, -3])


def test_kste_hand_computed():
    """n=3, k=2: 変化なしで 9/7、先頭2つの入れ替えで 13/7"""
    assert kste(IDENTITY3, IDENTITY3, K2) == pytest.approx(9.0 / 7.0)
    assert kste(IDENTITY3, np.array([1, 0, 2]), K2) == pytest.approx(13.0 / 7.0)


def test_kste_unchanged_and_reversed_orders_score_the_same():
    """順位差だけで決まるので、変化なしと全反転は同じ値"""
    spec = NeighborSpec(k=4)
    p = np.random.default_rng(4).permutation(8)
    base = kste(np.arange(8), np.arange(8), spec)
    assert kste(p, p, spec) == pytest.approx(base)
    assert kste(p, 7 - p, spec) == pytest.approx(base)


def test_kste_contributions_measure_increase():
    parts = kste_contributions(IDENTITY3, np.array([1, 0, 2]), K2)
    assert parts.sum() == pytest.approx(4.0 / 7.0)
    np.testing.assert_allclose(kste_contributions(IDENTITY3, IDENTITY3, K2), 0.0)


def test_series_match_single_frame_functions():
    ds, ordering = random_case(seed=5)
    spec = NeighborSpec(k=4)
    nb = frame_neighbors(ds, 4)
    ksra_values = ksra_series(ordering.ranks, nb)
    ksdi_values = ksdi_series(ordering.ranks, nb)
    kste_values = kste_series(ordering.ranks, 4)
    for t in range(ds.T):
        assert ksra_values[t] == pytest.approx(ksra(ds.frames[t], ordering.ranks[t], spec))
        assert ksdi_values[t] == pytest.approx(ksdi(ds.frames[t], ordering.ranks[t], spec))
    for t in range(ds.T - 1):
        assert kste_values[t] == pytest.approx(kste(ordering.ranks[t], ordering.ranks[t + 1], spec))


def test_evaluate_lengths_and_values():
    ds, ordering = random_case(seed=6, T=6)
    series = {s.name: s for s in evaluate(ds, ordering, NeighborSpec(k=3))}
    assert list(series) == ["KSra", "KSdi", "JMP", "CRS", "KSte", "TAU"]
    assert len(series["KSdi"].values) == 6
    for name in ("JMP", "CRS", "KSte", "TAU"):
        assert len(series[name].values) == 5
    r = ordering.ranks
    assert series["JMP"].values[2] == jmp(r[2], r[3])
    assert series["CRS"].values[2] == crs(r[2], r[3])
    assert series["TAU"].values[2] == pytest.approx(kendall_tau(r[2], r[3]))


def test_evaluate_fixed_order_is_perfectly_stable():
    ds, _ = random_case(seed=7)
    series = {s.name: s for s in evaluate(ds, fxd_order(ds))}
    np.testing.assert_array_equal(series["JMP"].values, 0.0)
    np.testing.assert_array_equal(series["CRS"].values, 0.0)
    np.testing.assert_allclose(series["TAU"].values, 1.0)
    assert np.ptp(series["KSte"].values) == pytest.approx(0.0)


def test_evaluate_single_frame_has_empty_stability_series():
    ds, ordering = random_case(seed=8, T=1)
    series = {s.name: s for s in evaluate(ds, ordering)}
    assert len(series["KSte"].values) == 0
    assert series["KSte"].summary is None
    assert series["KSdi"].summary["mean"] == pytest.approx(series["KSdi"].values[0])


def test_evaluate_shape_mismatch():
    ds, _ = random_case(seed=9, T=3, n=5)
    with pytest.raises(DomainError):
        evaluate(ds, OrderingSummary(ranks=np.tile(np.arange(4), (3, 1))))


def test_contribution_rugs():
    ds, ordering = random_case(seed=10, T=4)
    rugs = contribution_rugs(ds, ordering, NeighborSpec(k=3))
    assert rugs["KSdi"].shape == (4, ds.n)
    np.testing.assert_array_equal(rugs["KSte"][0], 0.0)
    nb = frame_neighbors(ds, 3)
    np.testing.assert_allclose(rugs["KSdi"].sum(axis=1), ksdi_series(ordering.ranks, nb))


def test_summarize_has_descriptions():
    ds, ordering = random_case(seed=11)
    summary = summarize(evaluate(ds, ordering))
    assert set(summary["説明"]) == {"KSra", "KSdi", "JMP", "CRS", "KSte", "TAU"}
    assert summary["CRS"]["min"] >= 0


def direct_ks(frame, ranking, k):
    """定義どおりの二重和で (KSra, KSdi) を求める"""
    n = len(frame)
    ra_sum = 0.0
    di_num = 0.0
    di_den = 0.0
    for i in range(n):
        dists = sorted((float(np.hypot(*(frame[j] - frame[i]))), j) for j in range(n) if j != i)
        for m, (dist, j) in enumerate(dists[:k], start=1):
            r = 2 * abs(int(ranking[i]) - int(ranking[j])) - 1
            ra_sum += r / m
            di_num += r / dist
            di_den += 1.0 / dist
    harmonic_k = sum(1.0 / m for m in range(1, k + 1))
    return ra_sum / (n * harmonic_k), di_num / di_den


def test_ksra_ksdi_match_direct_sums():
    """ランダムなフレームと順序で定義どおりの和と一致"""
    rng = np.random.default_rng(21)
    for _ in range(30):
        n = int(rng.integers(2, 25))
        k = int(rng.integers(1, n))
        frame = rng.normal(size=(n, 2)) * rng.uniform(0.1, 10.0)
        ranking = rng.permutation(n)
        expected_ra, expected_di = direct_ks(frame, ranking, k)
        spec = NeighborSpec(k=k)
        assert ksra(frame, ranking, spec) == pytest.approx(expected_ra, rel=1e-12)
        assert ksdi(frame, ranking, spec) == pytest.approx(expected_di, rel=1e-12)


def test_kendall_tau_matches_scipy():
    rng = np.random.default_rng(22)
    for n in (2, 3, 10, 57):
        prev, next_ = rng.permutation(n), rng.permutation(n)
        expected, _ = kendalltau(prev, next_)
        assert kendall_tau(prev, next_) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_unchanged_order_minimizes_kste(n):
    """n <= 6 の全順列で、前フレームと同じ順序の KSte が最小"""
    prev = np.random.default_rng(n).permutation(n)
    for k in sorted({1, n - 1}):
        spec = NeighborSpec(k=k)
        base = kste(prev, prev, spec)
        for perm in permutations(range(n)):
            assert kste(prev, np.array(perm), spec) >= base - 1e-12
