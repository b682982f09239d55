"""
按层隐私预算分配

平均分配、全部放在叶子层两种基线，以及以预测树误差为目标的贪心迭代分配。
预测误差只依赖拓扑、计数、tau 与划分，不依赖噪声实现。
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from ..models.data_models import BudgetSplit, GreedyConfig
from ..models.errors import ConfigError, ParameterError
from .noise import level_variances, noise_tree_abstract
from .postprocess import posterior_variances, tree_post_process
from .tree import HierTree

logger = logging.getLogger(__name__)


def equal_split(epsilon: float, levels: int) -> BudgetSplit:
    """每层 ε/(d+1)"""
    if levels < 1:
        raise ParameterError(f"层数必须 >= 1: {levels}")
    return BudgetSplit(total=epsilon, epsilons=[epsilon / levels] * levels)


def leaves_only_split(epsilon: float, levels: int, gamma: float = 1e-5) -> BudgetSplit:
    """非叶子层各得 γ·ε/d 的下限，叶子层得剩余的 (1-γ)·ε"""
    if levels < 1:
        raise ParameterError(f"层数必须 >= 1: {levels}")
    if levels == 1:
        return BudgetSplit(total=epsilon, epsilons=[epsilon])
    d = levels - 1
    floor = gamma * epsilon / d
    return BudgetSplit(total=epsilon, epsilons=[floor] * d + [(1.0 - gamma) * epsilon])


def _level_error(tree: HierTree, varhat: np.ndarray, tau: float) -> float:
    denominators = np.maximum(tau, tree.counts.astype(np.float64)) ** 2
    relative = varhat / denominators
    level_means = [relative[nodes].mean() for nodes in tree.levels]
    return float(np.sqrt(np.mean(level_means)))


def _predict(tree: HierTree, epsilons: np.ndarray, tau: float) -> float:
    var = level_variances(epsilons)[tree.topology.depth]
    return _level_error(tree, posterior_variances(tree.topology, var), tau)


def predict_tree_rmsre(tree: HierTree, split: BudgetSplit, tau: float) -> float:
    """
    由后处理方差直接计算预测的 RMSRE_τ(T)

    第 i 层测量方差取 Var[DLap(ε_i)]，经后处理得到 varhat，
    再按层平均 varhat / max(τ, c_v)^2 后开方。
    """
    if split.num_levels != tree.num_levels:
        raise ConfigError(f"预算划分有 {split.num_levels} 层，树有 {tree.num_levels} 层")
    if tau <= 0:
        raise ParameterError(f"tau 必须为正: {tau}")
    return _predict(tree, np.asarray(split.epsilons), tau)


def split_from_units(epsilon: float, units: Sequence[int], gamma: float) -> BudgetSplit:
    """每层 γ·ε/(d+1) 的下限加上若干个 (1-γ)·ε/k 单位，k 为单位总数"""
    units = np.asarray(units, dtype=np.int64)
    k = int(units.sum())
    if k < 1:
        raise ParameterError("至少需要分配一个预算单位")
    floors = gamma * epsilon / units.shape[0]
    unit = (1.0 - gamma) * epsilon / k
    return BudgetSplit(total=epsilon, epsilons=(floors + units * unit).tolist())


def greedy_split(tree_prior: HierTree, epsilon: float, config: GreedyConfig) -> BudgetSplit:
    """
    贪心迭代分配

    每层先得 γ·ε/(d+1)，剩余 (1-γ)·ε 分成 k 份；每个阶段尝试把一份加到各层，
    选预测误差最小的层（并列时取层号最小者）。
    """
    if config.k < 1:
        raise ParameterError(f"阶段数 k 必须 >= 1: {config.k}")
    levels = tree_prior.num_levels
    if levels == 1:
        return BudgetSplit(total=epsilon, epsilons=[epsilon])

    floors = np.full(levels, config.gamma * epsilon / levels)
    unit = (1.0 - config.gamma) * epsilon / config.k
    units = np.zeros(levels, dtype=np.int64)
    for phase in range(config.k):
        errors = []
        for level in range(levels):
            candidate = floors + units * unit
            candidate[level] += unit
            errors.append(_predict(tree_prior, candidate, config.tau))
        best = int(np.argmin(errors))
        units[best] += 1
        logger.debug(f"贪心阶段 {phase + 1}/{config.k}: 第 {best} 层, 预测误差 {errors[best]:.6g}")

    split = BudgetSplit(total=epsilon, epsilons=(floors + units * unit).tolist())
    logger.info(f"贪心预算划分 ε={epsilon}: 单位分布 {units.tolist()}")
    return split


def greedy_split_per_group(prior_groups: Dict[str, HierTree], eval_groups: Iterable[str],
                           epsilon: float, config: GreedyConfig,
                           pooled_prior: Optional[HierTree] = None,
                           max_workers: int = 4) -> Dict[str, BudgetSplit]:
    """
    为每个分组（第一层节点）单独做贪心分配

    评估期出现但先验期没有的分组使用汇总先验 pooled_prior。
    """
    targets = {}
    for group in eval_groups:
        if group in prior_groups:
            targets[group] = prior_groups[group]
        elif pooled_prior is not None:
            targets[group] = pooled_prior
        else:
            raise ConfigError(f"分组 {group} 没有先验，且未提供汇总先验")

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {group: pool.submit(greedy_split, prior, epsilon, config)
                   for group, prior in targets.items()}
        return {group: future.result() for group, future in futures.items()}


def noisy_prior(tree: HierTree, epsilon_prior: float, rng: np.random.Generator) -> HierTree:
    """
    私有地估计先验：平均划分 ε_prior 加噪并后处理，
    计数字段写入实数估计（不截断、不取整）
    """
    split = equal_split(epsilon_prior, tree.num_levels)
    estimate = tree_post_process(noise_tree_abstract(tree, split, rng))
    return tree.with_counts(estimate.xhat)
