"""
順序計算パイプラインのテスト（手法の呼び分け・ラベル・エラー記録）
"""
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).parent.parent))

from services import analyzer
from services.analyzer import COORD_METHODS, METHODS, MethodSpec, analyze, order, timed_order
from services.datagen import BoidsConfig, gen_reynolds_clusters
from services.projection import SpcConfig, spc_order

FAST = dict(sam_iterations=20, tsne_perplexity=3.0, tsne_iterations=30, snn_k=3)


@pytest.fixture(scope="module")
def dataset():
    return gen_reynolds_clusters(BoidsConfig(clusters=2, boids_per_cluster=6, frames=5, seed=3))


def test_labels():
    assert MethodSpec(method="spc", sigma=0.5).label == "SPC_0.5"
    assert MethodSpec(method="cpc", sigma=1.0).label == "CPC_1"
    assert MethodSpec(method="samp").label == "SAMp"
    assert MethodSpec(method="snep").label == "SNEp"
    assert MethodSpec(method="hil").label == "HIL"


def test_params_only_used_ones():
    assert MethodSpec(method="hil", bits=8).params() == {"bits": 8}
    assert MethodSpec(method="fxd").params() == {}
    assert MethodSpec(method="cpc", sigma=0.2).params() == {"sigma": 0.2, "cut_factor": 2.0}


def test_spec_validation():
    with pytest.raises(ValueError, match=r"sigma must be in \[0,1\]"):
        MethodSpec(method="spc", sigma=1.5)
    with pytest.raises(ValueError):
        MethodSpec(method="rtr", rtree_capacity=1)
    with pytest.raises(ValueError):
        MethodSpec(method="nope")


@pytest.mark.parametrize("method", METHODS)
def test_every_method_gives_permutations(dataset, method):
    ordering = order(dataset, MethodSpec(method=method, **FAST))
    assert ordering.ranks.shape == (dataset.T, dataset.n)
    for t in range(dataset.T):
        assert sorted(ordering.ranks[t].tolist()) == list(range(dataset.n))
    assert (ordering.coords is not None) == (method in COORD_METHODS)
    assert ordering.method_tag.startswith(method)


def test_method_tag_carries_parameters(dataset):
    assert order(dataset, MethodSpec(method="hil", bits=8)).method_tag == "hil(bits=8)"
    assert order(dataset, MethodSpec(method="spc", sigma=0.3)).method_tag == "spc(sigma=0.3)"


def test_dispatch_matches_module(dataset):
    a = order(dataset, MethodSpec(method="spc", sigma=0.3))
    b = spc_order(dataset, SpcConfig(sigma=0.3))
    np.testing.assert_array_equal(a.ranks, b.ranks)


def test_seeded_methods_are_reproducible(dataset):
    spec = MethodSpec(method="sam", seed=4, **{k: v for k, v in FAST.items() if k != "seed"})
    first, _ = timed_order(dataset, spec)
    second, seconds = timed_order(dataset, spec)
    np.testing.assert_array_equal(first.coords, second.coords)
    assert seconds >= 0.0


def test_analyze_records_metrics(dataset):
    result = analyze(dataset, MethodSpec(method="fxd"), quiet=True)
    assert result.ok
    by_name = result.series_by_name()
    np.testing.assert_array_equal(by_name["JMP"].values, 0.0)
    d = result.to_dict()
    assert d["label"] == "FXD"
    assert "説明" in d["summary"]


def test_analyze_records_failure(dataset):
    """perplexity が n 以上なら失敗を記録して例外にしない"""
    result = analyze(dataset, MethodSpec(method="sne", tsne_perplexity=40.0), quiet=True)
    assert not result.ok
    assert "perplexity" in result.error
    assert result.series == []
    assert result.to_dict()["summary"] is None


@pytest.mark.parametrize("error", [
    FloatingPointError("overflow in ordering"),
    ZeroDivisionError("division by zero in ordering"),
    np.linalg.LinAlgError("singular matrix"),
    IndexError("index 7 is out of bounds"),
])
def test_analyze_records_numeric_failures(dataset, monkeypatch, error):
    """数値計算由来の例外も行の失敗として記録する"""
    def broken(frame):
        raise error

    monkeypatch.setattr(analyzer, "clc_order", broken)
    result = analyze(dataset, MethodSpec(method="clc"), quiet=True)
    assert not result.ok
    assert result.error == str(error)
    assert analyze(dataset, MethodSpec(method="hil"), quiet=True).ok
