"""
数据模型模块

定义项目中使用的数据结构和异常。
"""

from .data_models import (
    AttributeKind,
    AttributeDescriptor,
    AttributeSchema,
    AttributionRecord,
    BudgetSplit,
    GreedyConfig,
    NoiseMode,
    NoiseConfig,
    ErrorReport,
    DEFAULT_L1_CAP,
    MISSING_TOKEN,
)
from .errors import (
    HierCountError,
    ConfigError,
    ParameterError,
    DataError,
    RecordRejectedError,
)

__all__ = [
    'AttributeKind', 'AttributeDescriptor', 'AttributeSchema', 'AttributionRecord',
    'BudgetSplit', 'GreedyConfig', 'NoiseMode', 'NoiseConfig', 'ErrorReport',
    'DEFAULT_L1_CAP', 'MISSING_TOKEN',
    'HierCountError', 'ConfigError', 'ParameterError', 'DataError', 'RecordRejectedError',
]
