"""
数据模型定义

定义层级计数流水线中使用的数据结构：属性模式、归因记录、
隐私预算划分、贪心配置、噪声配置与误差报告。
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from dataclasses_json import config, dataclass_json

from .errors import ConfigError, DataError, ParameterError


DEFAULT_L1_CAP = 2 ** 16
MISSING_TOKEN = "(missing)"


class AttributeKind(str, Enum):
    """属性类型：已知（曝光侧）或未知（转化侧，敏感）"""
    KNOWN = "known"
    UNKNOWN = "unknown"


class NoiseMode(str, Enum):
    """加噪模式"""
    ABSTRACT = "abstract"
    API_FAITHFUL = "api_faithful"


@dataclass(frozen=True)
class AttributeDescriptor:
    """单个属性描述"""
    name: str
    kind: AttributeKind
    domain: Optional[Tuple[str, ...]] = None

    @property
    def is_unknown(self) -> bool:
        return self.kind is AttributeKind.UNKNOWN


@dataclass(frozen=True)
class AttributeSchema:
    """
    有序属性列表。树深度 d 等于属性个数，共 d+1 层。

    未知属性必须给出非空取值域；记录只携带一个未知值，
    因此模式中最多一个未知属性。
    """
    attributes: Tuple[AttributeDescriptor, ...]

    def __post_init__(self):
        if not self.attributes:
            raise ConfigError("属性模式至少需要一个属性")
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ConfigError(f"属性名重复: {names}")
        unknown = [a for a in self.attributes if a.is_unknown]
        if len(unknown) > 1:
            raise ConfigError("最多支持一个未知属性")
        for attr in unknown:
            if not attr.domain:
                raise ConfigError(f"未知属性 {attr.name} 缺少取值域")
            if len(set(attr.domain)) != len(attr.domain):
                raise ConfigError(f"未知属性 {attr.name} 的取值域有重复值")

    @classmethod
    def of(cls, *attributes: AttributeDescriptor) -> "AttributeSchema":
        return cls(tuple(attributes))

    @property
    def depth(self) -> int:
        return len(self.attributes)

    @property
    def names(self) -> List[str]:
        return [a.name for a in self.attributes]

    @property
    def known_names(self) -> List[str]:
        return [a.name for a in self.attributes if not a.is_unknown]

    @property
    def unknown_attribute(self) -> Optional[AttributeDescriptor]:
        for attr in self.attributes:
            if attr.is_unknown:
                return attr
        return None

    def without_first(self) -> "AttributeSchema":
        """去掉首个（分组）属性，用于汇总先验"""
        if self.depth < 2:
            raise ConfigError("分组模式要求至少两个属性")
        return AttributeSchema(self.attributes[1:])


@dataclass(frozen=True)
class AttributionRecord:
    """一行曝光/点击记录，带可选的已归因转化（未知属性取值）"""
    known_values: Dict[str, str]
    converted: bool
    unknown_value: Optional[str] = None
    timestamp: int = 0

    def __post_init__(self):
        # 每次曝光至多一个归因转化
        if self.converted != (self.unknown_value is not None):
            raise DataError("converted 与 unknown_value 不一致")


def _check_total(levels: List[float], total: float) -> None:
    if not levels:
        raise ParameterError("预算划分至少包含一层")
    if total <= 0:
        raise ParameterError(f"总预算必须为正: {total}")
    if any(not (e > 0) for e in levels):
        raise ParameterError(f"每层预算必须为正: {levels}")
    if not math.isclose(math.fsum(levels), total, rel_tol=1e-12, abs_tol=0.0):
        raise ParameterError(f"各层预算之和 {math.fsum(levels)} 不等于总预算 {total}")


@dataclass_json
@dataclass
class BudgetSplit:
    """按层划分的隐私预算，JSON 形式为 {"total": ε, "levels": [...]}"""
    total: float
    epsilons: List[float] = field(metadata=config(field_name="levels"))

    def __post_init__(self):
        self.epsilons = [float(e) for e in self.epsilons]
        self.total = float(self.total)
        _check_total(self.epsilons, self.total)

    @property
    def num_levels(self) -> int:
        return len(self.epsilons)

    def __getitem__(self, level: int) -> float:
        return self.epsilons[level]


@dataclass(frozen=True)
class GreedyConfig:
    """贪心预算参数：阶段数 k、下限比例 gamma、阈值 tau"""
    k: int = 20
    gamma: float = 1e-5
    tau: float = 10.0

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError(f"阶段数 k 必须 >= 1: {self.k}")
        if not (0 < self.gamma < 0.01):
            raise ParameterError(f"gamma 必须在 (0, 0.01) 内: {self.gamma}")
        if self.tau <= 0:
            raise ParameterError(f"tau 必须为正: {self.tau}")


@dataclass(frozen=True)
class NoiseConfig:
    """加噪配置"""
    mode: NoiseMode
    total_epsilon: float
    budget_split: BudgetSplit
    l1_cap: int = DEFAULT_L1_CAP

    def __post_init__(self):
        if self.l1_cap < 1:
            raise ParameterError(f"L1 上限必须为正整数: {self.l1_cap}")
        if not math.isclose(self.budget_split.total, self.total_epsilon, rel_tol=1e-12):
            raise ParameterError("预算划分总量与 total_epsilon 不一致")


@dataclass_json
@dataclass
class ErrorReport:
    """树误差报告"""
    level_mse: List[float]
    tree_rmsre: float
    tau: float
    num_trials: int
    trial_rmsre_mean: float = 0.0
    trial_rmsre_stderr: float = 0.0
