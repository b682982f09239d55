"""
配置管理模块

负责管理应用程序的各种配置。
"""

from .settings import Settings, get_settings
from .schemas import (
    ALL_METHODS,
    AttributeMapping,
    DatasetSpec,
    ExperimentConfig,
    GreedySettings,
    PriorConfig,
    SynthSpec,
    load_model,
)

__all__ = [
    'Settings', 'get_settings',
    'ALL_METHODS', 'AttributeMapping', 'DatasetSpec', 'ExperimentConfig',
    'GreedySettings', 'PriorConfig', 'SynthSpec', 'load_model',
]
