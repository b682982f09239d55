"""
离散拉普拉斯机制

DLap(a) 的概率质量函数、方差与精确采样，以及两种加噪模式：
按层抽象 DP（敏感度 1，第 i 层参数 a = ε_i）和模拟聚合 API 的
L1 上限贡献缩放模式。
"""

import logging
import math
from typing import Optional, Sequence, Union

import numpy as np

from ..models.data_models import BudgetSplit, NoiseConfig, NoiseMode
from ..models.errors import ConfigError, ParameterError
from .tree import HierTree, NoisyTree

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]
SeedLike = Union[int, np.random.SeedSequence]

# 方差下限：后处理中两个方差相乘不下溢为 0
VARIANCE_FLOOR = 1e-150


def make_rng(seed: SeedLike) -> np.random.Generator:
    """基于计数器的 Philox 生成器，给定种子结果确定"""
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seq))


def spawn_rngs(seed: SeedLike, count: int) -> list:
    """派生 count 个互相独立的子随机流"""
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [make_rng(child) for child in seq.spawn(count)]


def _check_parameter(a: ArrayLike) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if not np.all(arr > 0):
        raise ParameterError(f"离散拉普拉斯参数必须为正: {a}")
    return arr


def dlap_pmf(k: ArrayLike, a: float) -> ArrayLike:
    """P[K = k] = (e^a - 1)/(e^a + 1) * e^(-a|k|)"""
    _check_parameter(a)
    k = np.asarray(k)
    result = math.tanh(a / 2.0) * np.exp(-a * np.abs(k))
    return float(result) if result.ndim == 0 else result


def dlap_variance(a: ArrayLike) -> ArrayLike:
    """
    Var[DLap(a)] = 2e^a/(e^a - 1)^2，按 2e^(-a)/(1 - e^(-a))^2 计算以免溢出

    a 约大于 345 时结果取 VARIANCE_FLOOR，此时采样恒为 0。
    """
    arr = _check_parameter(a)
    result = np.maximum(2.0 * np.exp(-arr) / np.expm1(-arr) ** 2, VARIANCE_FLOOR)
    return float(result) if result.ndim == 0 else result


def dlap_samples(a: ArrayLike, size, rng: np.random.Generator) -> np.ndarray:
    """
    DLap(a) 的批量采样：两个成功概率为 1 - e^(-a) 的独立几何变量之差（精确，无拒绝）

    a 可以是标量，或可按 numpy 规则广播到 size 的数组。
    """
    arr = _check_parameter(a)
    p = -np.expm1(-arr)
    g1 = rng.geometric(p, size=size)
    g2 = rng.geometric(p, size=size)
    return (g1 - g2).astype(np.int64)


def dlap_sample(a: float, rng: np.random.Generator) -> int:
    return int(dlap_samples(a, None, rng))


def _level_parameters(tree: HierTree, split: BudgetSplit) -> np.ndarray:
    if split.num_levels != tree.num_levels:
        raise ConfigError(f"预算划分有 {split.num_levels} 层，树有 {tree.num_levels} 层")
    return np.asarray(split.epsilons, dtype=np.float64)


def _noise_shape(tree: HierTree, trials: Optional[int]):
    return (tree.num_nodes,) if trials is None else (tree.num_nodes, trials)


def level_variances(epsilons: Sequence[float]) -> np.ndarray:
    """抽象模式下每层的测量方差 Var[DLap(ε_i)]"""
    return np.atleast_1d(np.asarray(dlap_variance(np.asarray(epsilons, dtype=np.float64)), dtype=np.float64))


def noise_tree_abstract(tree: HierTree, split: BudgetSplit, rng: np.random.Generator,
                        trials: Optional[int] = None) -> NoisyTree:
    """
    抽象模式加噪

    一行记录在每层至多改变一个节点的计数 1，故每层敏感度为 1，第 i 层用
    DLap(ε_i)；按基本组合，总隐私为 Σ ε_i。trials 给定时返回 (n, trials) 批次。
    """
    epsilons = _level_parameters(tree, split)
    depth = tree.topology.depth
    node_a = epsilons[depth]
    shape = _noise_shape(tree, trials)
    a = node_a if trials is None else node_a[:, None]
    noise = dlap_samples(a, shape, rng)
    counts = tree.counts.astype(np.float64)
    x = (counts if trials is None else counts[:, None]) + noise
    return NoisyTree(tree.topology, x, level_variances(epsilons)[depth])


def api_contribution_weights(split: BudgetSplit, l1_cap: int) -> np.ndarray:
    """每层贡献值 v_i = floor(L1 * ε_i / ε)，保证 Σ v_i <= L1"""
    ratios = np.asarray(split.epsilons, dtype=np.float64) / split.total
    weights = np.floor(l1_cap * ratios * (1 + 1e-12)).astype(np.int64)
    if weights.sum() > l1_cap:
        weights[np.argmax(weights)] -= weights.sum() - l1_cap
    return weights


def noise_tree_api_faithful(tree: HierTree, config: NoiseConfig, rng: np.random.Generator,
                            trials: Optional[int] = None) -> NoisyTree:
    """
    按聚合 API 的方式模拟：每层贡献缩放到 v_i，汇总噪声为 DLap(ε/L1)，
    再除以 v_i 还原计数尺度。
    """
    _level_parameters(tree, config.budget_split)
    weights = api_contribution_weights(config.budget_split, config.l1_cap)
    if np.any(weights < 1):
        zero_levels = np.flatnonzero(weights < 1).tolist()
        raise ParameterError(
            f"第 {zero_levels} 层的贡献值为 0，请增大这些层的 ε_i 或改用 abstract 模式")
    coarse = np.flatnonzero(weights < 100).tolist()
    if coarse:
        # 取整造成超过 1% 的预算偏差
        logger.warning(f"第 {coarse} 层的贡献值 {weights[coarse].tolist()} 过小，取整后 ε_i 偏差超过 1%")

    a = config.total_epsilon / config.l1_cap
    node_weights = weights[tree.topology.depth].astype(np.float64)
    shape = _noise_shape(tree, trials)
    noise = dlap_samples(a, shape, rng)
    counts = tree.counts.astype(np.float64)
    if trials is None:
        x = (node_weights * counts + noise) / node_weights
    else:
        x = (node_weights[:, None] * counts[:, None] + noise) / node_weights[:, None]
    var = dlap_variance(a) / node_weights ** 2
    logger.debug(f"API 模式贡献值: {weights.tolist()} (L1={config.l1_cap})")
    return NoisyTree(tree.topology, x, var)


def noise_tree(tree: HierTree, config: NoiseConfig, rng: np.random.Generator,
               trials: Optional[int] = None) -> NoisyTree:
    if config.mode is NoiseMode.API_FAITHFUL:
        return noise_tree_api_faithful(tree, config, rng, trials)
    return noise_tree_abstract(tree, config.budget_split, rng, trials)
