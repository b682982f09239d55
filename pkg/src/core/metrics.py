"""
误差度量

单点 RMSRE_τ 与按层等权平均的树误差 RMSRE_τ(T)。
"""

import math
from typing import Sequence, Union

import numpy as np

from ..models.data_models import ErrorReport
from ..models.errors import ConfigError, DataError, ParameterError
from .postprocess import EstimateTree
from .tree import HierTree, NoisyTree

EstimateLike = Union[EstimateTree, NoisyTree]


def rmsre_point(c: float, chat_samples: Sequence[float], tau: float) -> float:
    """sqrt(mean(((ĉ - c) / max(τ, c))^2))，期望的蒙特卡洛估计"""
    if tau <= 0:
        raise ParameterError(f"tau 必须为正: {tau}")
    samples = np.asarray(chat_samples, dtype=np.float64)
    if samples.size == 0:
        raise DataError("样本为空")
    relative = (samples - c) / max(tau, c)
    return float(np.sqrt(np.mean(relative ** 2)))


def squared_relative_errors(tree: HierTree, estimates: np.ndarray, tau: float) -> np.ndarray:
    """每个节点（每次试验）的平方相对误差，形状与 estimates 相同"""
    counts = tree.counts.astype(np.float64)
    denominators = np.maximum(tau, counts)
    if estimates.ndim == 2:
        counts = counts[:, None]
        denominators = denominators[:, None]
    return ((estimates - counts) / denominators) ** 2


def level_mean_squared_errors(tree: HierTree, squared: np.ndarray) -> np.ndarray:
    """每层内对节点取平均，形状 (levels,) 或 (levels, T)"""
    return np.stack([squared[nodes].mean(axis=0) for nodes in tree.levels])


def tree_rmsre_per_trial(tree: HierTree, estimates: np.ndarray, tau: float) -> np.ndarray:
    """对 (n, T) 批次逐次计算树误差，返回长度为 T 的数组"""
    if tau <= 0:
        raise ParameterError(f"tau 必须为正: {tau}")
    if estimates.shape[0] != tree.num_nodes:
        raise ConfigError("估计与树的节点数不一致")
    batch = estimates if estimates.ndim == 2 else estimates[:, None]
    levels = level_mean_squared_errors(tree, squared_relative_errors(tree, batch, tau))
    return np.sqrt(levels.mean(axis=0))


def rmsre_tree(tree: HierTree, estimate_samples: Sequence[EstimateLike], tau: float) -> ErrorReport:
    """
    树误差：先对试验求平均平方相对误差，层内对节点平均，层间等权平均，再开方

    计数为 0 的节点同样计入，其分母为 τ。
    """
    if tau <= 0:
        raise ParameterError(f"tau 必须为正: {tau}")
    if len(estimate_samples) == 0:
        raise DataError("估计样本为空")
    columns = []
    for sample in estimate_samples:
        if not sample.topology.same_shape(tree.topology):
            raise ConfigError("估计样本的拓扑与树不一致")
        values = sample.estimates
        columns.append(values if values.ndim == 2 else values[:, None])
    estimates = np.concatenate(columns, axis=1)

    per_level = level_mean_squared_errors(tree, squared_relative_errors(tree, estimates, tau))
    level_mse = per_level.mean(axis=1)
    per_trial = np.sqrt(per_level.mean(axis=0))
    num_trials = estimates.shape[1]
    stderr = float(per_trial.std(ddof=1) / math.sqrt(num_trials)) if num_trials > 1 else 0.0
    return ErrorReport(
        level_mse=level_mse.tolist(),
        tree_rmsre=float(np.sqrt(level_mse.mean())),
        tau=float(tau),
        num_trials=int(num_trials),
        trial_rmsre_mean=float(per_trial.mean()),
        trial_rmsre_stderr=stderr,
    )
