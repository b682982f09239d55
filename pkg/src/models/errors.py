"""
异常定义

流水线中可预期的错误类型。CLI 根据类型映射退出码。
"""

from typing import List, Optional


class HierCountError(Exception):
    """所有可预期错误的基类"""

    exit_code: int = 1


class ConfigError(HierCountError):
    """配置或调用参数错误，需要调用方修改"""

    exit_code = 2


class ParameterError(ConfigError, ValueError):
    """数值前置条件不满足（如 a <= 0、方差非正、k = 0）"""


class DataError(HierCountError):
    """数据集不可读、格式错误或评估集为空"""

    exit_code = 3

    def __init__(self, message: str, samples: Optional[List[str]] = None):
        super().__init__(message)
        self.samples = samples or []


class RecordRejectedError(DataError):
    """单条记录被拒绝，携带行号"""

    def __init__(self, message: str, row: int):
        super().__init__(f"第 {row} 行记录被拒绝: {message}")
        self.row = row
