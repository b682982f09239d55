"""
配置文件模型

数据集、合成数据与实验的声明式 JSON 配置，用 pydantic 校验。
"""

import hashlib
import json
from pathlib import Path
from typing import List, Optional, Union

from pydantic import BaseModel, Field, PositiveFloat, PositiveInt, ValidationError, model_validator
from typing_extensions import Literal

from ..models.data_models import (
    AttributeDescriptor,
    AttributeKind,
    AttributeSchema,
    DEFAULT_L1_CAP,
    GreedyConfig,
)
from ..models.errors import ConfigError

DAY_SECONDS = 86400

Method = Literal["equal_no_pp", "equal_pp", "leaves_pp", "greedy_no_pp", "greedy_pp"]
ALL_METHODS = ["equal_no_pp", "equal_pp", "leaves_pp", "greedy_no_pp", "greedy_pp"]


class AttributeMapping(BaseModel):
    """模式属性与源数据列的对应关系；未知属性取自转化延迟分桶"""
    name: str
    column: Optional[str] = None
    kind: Literal["known", "unknown"] = "known"

    @property
    def source_column(self) -> str:
        return self.column or self.name


class DatasetSpec(BaseModel):
    """数据集描述：文件位置、列映射、延迟分桶与先验切分"""
    path: str
    delimiter: Literal[",", "\t"] = ","
    column_names: Optional[List[str]] = None
    attributes: List[AttributeMapping] = Field(min_length=1)
    timestamp_column: str = "click_timestamp"
    conversion_column: str = "Sale"
    conversion_true_values: List[str] = Field(default_factory=lambda: ["1"])
    delay_column: Optional[str] = None
    conversion_timestamp_column: Optional[str] = None
    delay_bucket_seconds: PositiveInt = 2 * DAY_SECONDS
    delay_bucket_count: PositiveInt = 15
    attribution_window_seconds: PositiveInt = 30 * DAY_SECONDS
    missing_values: List[str] = Field(default_factory=lambda: [""])
    max_malformed_fraction: float = Field(default=0.01, ge=0.0, le=1.0)
    chunk_size: PositiveInt = 200_000
    prior_cutoff_timestamp: Optional[int] = None
    prior_days: Optional[PositiveFloat] = None
    prior_fraction: Optional[float] = Field(default=None, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check(self) -> "DatasetSpec":
        unknown = [a for a in self.attributes if a.kind == "unknown"]
        if len(unknown) > 1:
            raise ValueError("最多一个未知属性（转化延迟）")
        if unknown and not (self.delay_column or self.conversion_timestamp_column):
            raise ValueError("未知属性需要 delay_column 或 conversion_timestamp_column")
        if self.delay_bucket_seconds * self.delay_bucket_count < self.attribution_window_seconds:
            raise ValueError("延迟分桶未覆盖完整的归因窗口")
        return self

    @property
    def delay_domain(self) -> List[str]:
        return [str(i) for i in range(self.delay_bucket_count)]

    def attribute_schema(self) -> AttributeSchema:
        descriptors = []
        for attr in self.attributes:
            if attr.kind == "unknown":
                descriptors.append(AttributeDescriptor(attr.name, AttributeKind.UNKNOWN, tuple(self.delay_domain)))
            else:
                descriptors.append(AttributeDescriptor(attr.name, AttributeKind.KNOWN))
        return AttributeSchema(tuple(descriptors))


class SynthSpec(BaseModel):
    """合成数据生成参数，输出列名沿用 CSSCL 的格式"""
    num_groups: PositiveInt = 10
    impressions_per_group: PositiveInt = 1000
    volume_sigma: float = Field(default=0.0, ge=0.0)
    conversion_rate: float = Field(default=0.2, ge=0.0, le=1.0)
    num_countries: PositiveInt = 5
    num_devices: PositiveInt = 3
    num_age_groups: PositiveInt = 4
    include_age_group: bool = False
    category_concentration: PositiveFloat = 0.7
    mean_delay_days: PositiveFloat = 5.0
    days: PositiveInt = 90
    start_timestamp: int = 1_596_240_000
    delay_bucket_days: PositiveInt = 2
    delay_bucket_count: PositiveInt = 15
    attribution_window_days: PositiveInt = 30
    prior_days: Optional[PositiveFloat] = 45
    seed: int = 20240601

    def dataset_spec(self, csv_path: Union[str, Path]) -> DatasetSpec:
        attributes = [
            AttributeMapping(name="partner_id"),
            AttributeMapping(name="product_country"),
            AttributeMapping(name="device_type"),
        ]
        if self.include_age_group:
            attributes.append(AttributeMapping(name="product_age_group"))
        attributes.append(AttributeMapping(name="time_delay_for_conversion", kind="unknown"))
        return DatasetSpec(
            path=str(csv_path),
            attributes=attributes,
            timestamp_column="click_timestamp",
            conversion_column="Sale",
            delay_column="time_delay_for_conversion",
            delay_bucket_seconds=self.delay_bucket_days * DAY_SECONDS,
            delay_bucket_count=self.delay_bucket_count,
            attribution_window_seconds=self.attribution_window_days * DAY_SECONDS,
            prior_days=self.prior_days,
        )


class PriorConfig(BaseModel):
    """贪心方法使用的先验来源"""
    source: Literal["true", "historical", "noisy"] = "noisy"
    epsilon: PositiveFloat = 1.0


class GreedySettings(BaseModel):
    k: PositiveInt = 20
    gamma: float = Field(default=1e-5, gt=0.0, lt=0.01)

    def to_config(self, tau: float) -> GreedyConfig:
        return GreedyConfig(k=self.k, gamma=self.gamma, tau=tau)


class ExperimentConfig(BaseModel):
    """ε 扫描实验配置"""
    dataset: Optional[DatasetSpec] = None
    synthetic: Optional[SynthSpec] = None
    epsilons: List[PositiveFloat] = Field(default_factory=lambda: [1, 2, 4, 8, 16, 32, 64], min_length=1)
    taus: List[PositiveFloat] = Field(default_factory=lambda: [5, 10], min_length=1)
    methods: List[Method] = Field(default_factory=lambda: list(ALL_METHODS), min_length=1)
    trials: PositiveInt = 100
    seed: int = 20240601
    prior: PriorConfig = Field(default_factory=PriorConfig)
    per_group: bool = False
    paired: bool = False
    noise_mode: Literal["abstract", "api_faithful"] = "abstract"
    l1_cap: PositiveInt = DEFAULT_L1_CAP
    greedy: GreedySettings = Field(default_factory=GreedySettings)
    output_dir: str = "output/experiment"
    max_workers: PositiveInt = 4

    @model_validator(mode="after")
    def _check(self) -> "ExperimentConfig":
        if (self.dataset is None) == (self.synthetic is None):
            raise ValueError("dataset 与 synthetic 必须且只能给出一个")
        return self

    @property
    def needs_prior(self) -> bool:
        return any(m.startswith("greedy") for m in self.methods)

    def config_hash(self) -> str:
        """输出目录与并发数不影响结果，不计入哈希"""
        canonical = json.dumps(self.model_dump(mode="json", exclude={"output_dir", "max_workers"}), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_model(model_cls, path: Union[str, Path], **overrides):
    """读取 JSON 配置文件并校验，非 None 的 overrides 覆盖文件中的字段"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"配置文件不存在: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"配置文件不是合法 JSON: {path}: {e}") from e
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"配置校验失败: {path}\n{e}") from e
