"""
合成数据生成

生成与 CSSCL 列格式一致的点击/转化 CSV，给定种子时输出逐字节一致，
用于在没有外部数据集时运行全部测试与基准。
"""

import json
import logging
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import pandas as pd

from ..config.schemas import DAY_SECONDS, DatasetSpec, SynthSpec
from .noise import make_rng

logger = logging.getLogger(__name__)


def _categorical(rng: np.random.Generator, prefix: str, size: int, choices: int, concentration: float) -> np.ndarray:
    # 每个分组有各自偏斜的类别分布，部分类别可能不出现
    probabilities = rng.dirichlet(np.full(choices, concentration))
    picks = rng.choice(choices, size=size, p=probabilities)
    return np.char.add(prefix, picks.astype(str))


def generate_synthetic_frame(spec: SynthSpec) -> pd.DataFrame:
    """按分组生成点击行：分类属性、点击时间、是否转化及转化延迟（未转化为 -1）"""
    rng = make_rng(spec.seed)
    window = spec.attribution_window_days * DAY_SECONDS
    frames = []
    for g in range(spec.num_groups):
        if spec.volume_sigma > 0:
            volume = int(max(1, round(spec.impressions_per_group * rng.lognormal(0.0, spec.volume_sigma))))
        else:
            volume = spec.impressions_per_group
        converted = rng.random(volume) < spec.conversion_rate
        delays = np.minimum(rng.exponential(spec.mean_delay_days * DAY_SECONDS, size=volume), window - 1)
        frame = {
            "partner_id": np.full(volume, f"P{g:03d}"),
            "product_country": _categorical(rng, "C", volume, spec.num_countries, spec.category_concentration),
            "device_type": _categorical(rng, "D", volume, spec.num_devices, spec.category_concentration),
            "product_age_group": _categorical(rng, "A", volume, spec.num_age_groups, spec.category_concentration),
            "click_timestamp": spec.start_timestamp + rng.integers(0, spec.days * DAY_SECONDS, size=volume),
            "Sale": converted.astype(np.int64),
            "time_delay_for_conversion": np.where(converted, delays.astype(np.int64), -1),
        }
        frames.append(pd.DataFrame(frame))
    data = pd.concat(frames, ignore_index=True)
    return data.sort_values(["click_timestamp", "partner_id"], kind="mergesort", ignore_index=True)


def generate_synthetic(spec: SynthSpec, output: Union[str, Path]) -> Tuple[Path, DatasetSpec]:
    """写出合成 CSV 以及旁边的数据集描述 JSON（<name>.spec.json）"""
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    data = generate_synthetic_frame(spec)
    data.to_csv(output, index=False, lineterminator="\n")

    dataset_spec = spec.dataset_spec(output)
    sidecar = output.with_suffix(".spec.json")
    sidecar.write_text(
        json.dumps(dataset_spec.model_dump(mode="json"), ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    logger.info(f"合成数据已写出: {output} ({len(data)} 行, 转化 {int(data['Sale'].sum())} 行)")
    return output, dataset_spec
