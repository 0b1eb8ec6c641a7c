"""
例外定義モジュール
データ読み込み・検証・数値計算で発生するエラー
"""
from typing import Optional


class TrajectoryError(ValueError):
    """軌跡データ処理の基底エラー（CLIでは終了コード2）"""


class ParseError(TrajectoryError):
    """CSV行の解析失敗"""
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class IntegrityError(TrajectoryError):
    """フレーム欠損・重複などデータ整合性の違反"""
    def __init__(self, message: str, frame: Optional[int] = None, entity: Optional[str] = None):
        super().__init__(message)
        self.frame = frame
        self.entity = entity


class DataValidationError(TrajectoryError):
    """値の検証失敗（非有限座標など）"""


class DegenerateInputError(TrajectoryError):
    """広がりのない入力"""


class NumericalError(TrajectoryError):
    """勾配法などでNaNが発生"""
    def __init__(self, frame: int, message: str):
        super().__init__(f"frame {frame}: {message}")
        self.frame = frame


class DomainError(TrajectoryError):
    """関数の定義域外の引数"""


class ContractError(TrajectoryError):
    """呼び出し側の前提条件違反"""


class ImageSizeError(TrajectoryError):
    """出力画像が大きすぎる"""
