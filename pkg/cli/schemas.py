"""
CLI スキーマ定義
コマンドの設定と、フラットな key = value 形式の計画ファイルの読み込み
"""
import sys
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field

sys.path.append(str(Path(__file__).parent.parent))

from services.analyzer import METHODS, MethodSpec
from services.datagen import BoidsConfig
from services.experiment import ExperimentPlan
from services.render import Colormap2D

Command = Literal["generate", "order", "evaluate", "sweep", "render", "pipeline", "bench"]


class UsageError(ValueError):
    """コマンドラインや設定ファイルの誤り（終了コード1）"""


class PipelineConfig(BaseModel):
    """1回のコマンド実行の設定"""
    command: Command
    input: Optional[str] = None
    output: Optional[str] = None
    method: Optional[MethodSpec] = None
    seed: int = 0
    threads: int = Field(1, ge=1)
    quiet: bool = False

    def input_paths(self) -> List[Path]:
        return [Path(self.input)] if self.input else []


# 計画ファイルで MethodSpec に渡すキー
METHOD_KEYS = ("cut_factor", "bits", "rtree_capacity", "snn_k", "sam_iterations",
               "tsne_perplexity", "tsne_iterations")


def read_flat_config(path) -> List[Tuple[int, str, str]]:
    """
    key = value 形式のファイルを読む

    空行と # 以降は無視する。

    Returns:
        (行番号, キー, 値) のリスト
    """
    entries = []
    seen: Dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_num, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}: line {line_num}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise UsageError(f"{path}: line {line_num}: missing key")
            if key in seen:
                raise UsageError(f"{path}: line {line_num}: duplicate key '{key}' (first on line {seen[key]})")
            seen[key] = line_num
            entries.append((line_num, key, value))
    return entries


def split_list(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def _parse_bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def load_generator_config(path) -> BoidsConfig:
    """生成器の設定ファイル（BoidsConfig のフィールド名をキーに使う）"""
    values: Dict = {}
    for line_num, key, value in read_flat_config(path):
        if key not in BoidsConfig.model_fields:
            raise UsageError(f"{path}: line {line_num}: unknown generator key '{key}'")
        values[key] = split_list(value) if key == "arena" else value
    return BoidsConfig(**values)


def _expand_methods(names: List[str], sigmas: List[float], common: Dict) -> List[MethodSpec]:
    specs = []
    for name in names:
        if name not in METHODS:
            raise UsageError(f"unknown method '{name}'; choose from {', '.join(METHODS)}")
        if name in ("spc", "cpc"):
            specs.extend(MethodSpec(method=name, sigma=s, **common) for s in sigmas)
        else:
            specs.append(MethodSpec(method=name, **common))
    return specs


def load_plan_file(path, output_dir: Optional[str] = None, threads: Optional[int] = None) -> ExperimentPlan:
    """
    計画ファイルを読み込んで ExperimentPlan を作る

    例:
        input = data.csv          # 省略すると generator の設定で生成
        methods = fxd, hil, spc, cpc
        sigmas = 1, 0.5           # spc / cpc を sigma ごとに展開
        clusters = 3              # BoidsConfig のフィールドは生成器へ
        seed = 7

    Args:
        path: 計画ファイル
        output_dir: 出力ディレクトリの上書き
        threads: 並列数の上書き

    Returns:
        実験計画
    """
    plan: Dict = {}
    generator: Dict = {}
    common: Dict = {}
    names: List[str] = []
    sigmas: List[float] = [0.5]
    colormap: Dict = {}

    for line_num, key, value in read_flat_config(path):
        try:
            if key == "methods":
                names = split_list(value)
            elif key == "sigmas":
                sigmas = [float(s) for s in split_list(value)]
            elif key == "sigma":
                sigmas = [float(value)]
            elif key == "metrics":
                plan["metrics"] = split_list(value)
            elif key in METHOD_KEYS:
                common[key] = value
            elif key == "k":
                plan["neighbors"] = {"k": value}
            elif key == "render":
                plan["render"] = _parse_bool(value)
            elif key == "color_mode":
                colormap["mode"] = value
            elif key == "reference_frame":
                colormap["reference_frame"] = value
            elif key in ("input", "model", "output_dir", "seed", "threads", "scale"):
                plan[key] = value
            elif key in BoidsConfig.model_fields:
                generator[key] = split_list(value) if key == "arena" else value
            else:
                raise UsageError(f"unknown key '{key}'")
        except UsageError as e:
            raise UsageError(f"{path}: line {line_num}: {e}")
        except ValueError as e:
            raise UsageError(f"{path}: line {line_num}: {key}: {e}")

    if not names:
        raise UsageError(f"{path}: 'methods' is required")
    if "input" in plan and plan["input"]:
        # 計画ファイルからの相対パス
        input_path = Path(plan["input"])
        if not input_path.is_absolute():
            plan["input"] = str(Path(path).parent / input_path)
    if output_dir is not None:
        plan["output_dir"] = output_dir
    if threads is not None:
        plan["threads"] = threads

    plan["methods"] = _expand_methods(names, sigmas, common)
    plan["generator"] = BoidsConfig(**generator)
    plan["colormap"] = Colormap2D(**colormap)
    return ExperimentPlan(**plan)
