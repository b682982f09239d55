"""
数据集加载与准备

流式读取分隔文本、列映射、转化延迟分桶、缺失值处理与按时间切分先验/评估集。
"""

import io
import logging
from pathlib import Path
from typing import Iterator, List, Tuple, Union

import numpy as np
import pandas as pd
import requests

from ..config.schemas import DAY_SECONDS, DatasetSpec
from ..models.data_models import MISSING_TOKEN, AttributionRecord
from ..models.errors import ConfigError, DataError, ParameterError

logger = logging.getLogger(__name__)

MAX_REPORTED_SAMPLES = 5


def discretize_delay(delay_seconds: int, spec: DatasetSpec) -> int:
    """floor(delay / 桶宽)，超出最后一个桶的延迟并入最后一个桶"""
    if delay_seconds < 0:
        raise ParameterError(f"延迟不能为负: {delay_seconds}")
    return int(min(delay_seconds // spec.delay_bucket_seconds, spec.delay_bucket_count - 1))


def _discretize_many(delays: np.ndarray, spec: DatasetSpec) -> np.ndarray:
    return np.minimum(delays // spec.delay_bucket_seconds, spec.delay_bucket_count - 1).astype(np.int64)


def _open_source(path: str) -> Union[str, io.StringIO]:
    if path.startswith(("http://", "https://")):
        try:
            response = requests.get(path, timeout=60)
            response.raise_for_status()
        except requests.RequestException as e:
            raise DataError(f"无法下载数据集: {path}: {e}") from e
        return io.StringIO(response.text)
    if not Path(path).exists():
        raise DataError(f"数据集文件不存在: {path}")
    return path


def _iter_chunks(spec: DatasetSpec) -> Iterator[pd.DataFrame]:
    # 无表头文件（如 CSSCL 原始日志）用 column_names 命名各列
    header = None if spec.column_names else "infer"
    try:
        yield from pd.read_csv(
            _open_source(spec.path), sep=spec.delimiter, dtype=str, header=header,
            names=spec.column_names, keep_default_na=False, chunksize=spec.chunk_size,
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"数据集解析失败: {spec.path}: {e}") from e


def _required_columns(spec: DatasetSpec) -> List[str]:
    columns = [spec.timestamp_column, spec.conversion_column]
    columns += [a.source_column for a in spec.attributes if a.kind == "known"]
    if any(a.kind == "unknown" for a in spec.attributes):
        columns.append(spec.delay_column or spec.conversion_timestamp_column)
    return columns


def load_records(spec: DatasetSpec) -> List[AttributionRecord]:
    """
    每行点击/曝光生成一条记录

    转化行的延迟取 delay_column，或转化时间戳减去曝光时间戳。
    时间戳无法解析、转化延迟缺失或为负的行计为格式错误；
    错误行占比超过 max_malformed_fraction 时中止并附带样例。
    """
    known = [a for a in spec.attributes if a.kind == "known"]
    has_unknown = any(a.kind == "unknown" for a in spec.attributes)
    true_values = set(spec.conversion_true_values)
    missing = set(spec.missing_values)

    records: List[AttributionRecord] = []
    malformed = 0
    samples: List[str] = []
    total = 0
    # 行号从 1 起算，有表头时数据从第 2 行开始
    first_line = 1 if spec.column_names else 2

    for chunk in _iter_chunks(spec):
        absent = [c for c in _required_columns(spec) if c not in chunk.columns]
        if absent:
            raise ConfigError(f"数据集缺少列: {absent}")

        timestamps = pd.to_numeric(chunk[spec.timestamp_column], errors="coerce")
        converted = chunk[spec.conversion_column].str.strip().isin(true_values)
        bad = timestamps.isna() | ~np.isfinite(timestamps.fillna(0))
        reasons = pd.Series("", index=chunk.index)
        reasons[bad] = "时间戳无法解析"

        buckets = pd.Series(-1, index=chunk.index, dtype=np.int64)
        if has_unknown:
            if spec.delay_column:
                delays = pd.to_numeric(chunk[spec.delay_column], errors="coerce")
            else:
                delays = pd.to_numeric(chunk[spec.conversion_timestamp_column], errors="coerce") - timestamps
            missing_delay = converted & delays.isna()
            negative = converted & (delays < 0)
            reasons[missing_delay & ~bad] = "转化行缺少延迟"
            reasons[negative & ~bad] = "转化延迟为负"
            bad = bad | missing_delay | negative
            ok = converted & ~bad
            buckets[ok] = _discretize_many(delays[ok].to_numpy(dtype=np.int64), spec)

        for row, reason in reasons[bad].items():
            if len(samples) < MAX_REPORTED_SAMPLES:
                samples.append(f"第 {int(row) + first_line} 行: {reason}")
        malformed += int(bad.sum())
        total += len(chunk)

        good = chunk[~bad]
        values = {}
        for attr in known:
            column = good[attr.source_column].str.strip()
            values[attr.name] = column.where(~column.isin(missing), MISSING_TOKEN).tolist()
        names = [attr.name for attr in known]
        for i, (ts, conv, bucket) in enumerate(zip(
                timestamps[~bad].to_numpy(), converted[~bad].to_numpy(), buckets[~bad].to_numpy())):
            is_converted = bool(conv)
            unknown_value = None
            if is_converted:
                unknown_value = str(int(bucket)) if has_unknown else ""
            records.append(AttributionRecord(
                known_values={name: values[name][i] for name in names},
                converted=is_converted,
                unknown_value=unknown_value,
                timestamp=int(ts),
            ))

    if total == 0:
        raise DataError(f"数据集为空: {spec.path}")
    if malformed > spec.max_malformed_fraction * total:
        raise DataError(f"格式错误的行过多: {malformed}/{total}", samples)
    if malformed:
        logger.warning(f"跳过 {malformed}/{total} 行格式错误的记录，样例: {samples}")
    logger.info(f"加载 {len(records)} 条记录，其中转化 {sum(r.converted for r in records)} 条")
    return records


def temporal_split(records: List[AttributionRecord], cutoff: int) -> Tuple[List[AttributionRecord], List[AttributionRecord]]:
    """按曝光时间戳切分：早于 cutoff 为先验集，其余为评估集"""
    prior = [r for r in records if r.timestamp < cutoff]
    evaluation = [r for r in records if r.timestamp >= cutoff]
    return prior, evaluation


def cutoff_from_days(records: List[AttributionRecord], days: float) -> int:
    """最早时间戳之后 days 天"""
    if not records:
        raise DataError("记录为空")
    return int(min(r.timestamp for r in records) + days * DAY_SECONDS)


def cutoff_from_fraction(records: List[AttributionRecord], fraction: float) -> int:
    """时间范围内的 fraction 分位点"""
    if not records:
        raise DataError("记录为空")
    first = min(r.timestamp for r in records)
    last = max(r.timestamp for r in records)
    return int(first + fraction * (last - first))


def resolve_cutoff(records: List[AttributionRecord], spec: DatasetSpec) -> int:
    if spec.prior_cutoff_timestamp is not None:
        return spec.prior_cutoff_timestamp
    if spec.prior_days is not None:
        return cutoff_from_days(records, spec.prior_days)
    if spec.prior_fraction is not None:
        return cutoff_from_fraction(records, spec.prior_fraction)
    raise ConfigError("数据集配置没有给出先验切分（prior_cutoff_timestamp / prior_days / prior_fraction）")
