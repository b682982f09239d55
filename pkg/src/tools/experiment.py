"""
实验流程

按 (ε, τ, 方法) 网格运行多次独立加噪试验：构建评估树与先验、选择预算划分、
按方法决定是否后处理，统计每次试验的树误差均值与标准误并写出结果。
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .. import __version__
from ..config.schemas import ExperimentConfig
from ..core.budgeting import (
    equal_split,
    greedy_split_per_group,
    leaves_only_split,
    noisy_prior,
    predict_tree_rmsre,
)
from ..core.ingest import load_records, resolve_cutoff, temporal_split
from ..core.metrics import tree_rmsre_per_trial
from ..core.noise import make_rng, noise_tree
from ..core.postprocess import post_process_batch
from ..core.synthetic import generate_synthetic
from ..core.tree import HierTree, build_tree, merge_groups
from ..models.data_models import AttributeSchema, BudgetSplit, NoiseConfig, NoiseMode
from ..models.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

WHOLE_TREE = "__all__"
MAX_BATCH_CELLS = 2_000_000

SEED_PRIOR = 1
SEED_GRID = 2


@dataclass
class PreparedData:
    """评估树（或按分组的评估子树）及对应的先验树"""
    schema: AttributeSchema
    eval_trees: Dict[str, HierTree]
    priors: Dict[str, HierTree] = field(default_factory=dict)
    pooled_prior: Optional[HierTree] = None


def _seed(config: ExperimentConfig, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=config.seed, spawn_key=key)


def _dataset_spec(config: ExperimentConfig):
    if config.dataset is not None:
        return config.dataset
    csv_path = Path(config.output_dir) / "synthetic.csv"
    _, spec = generate_synthetic(config.synthetic, csv_path)
    return spec


def _has_cutoff(spec) -> bool:
    return any(v is not None for v in (spec.prior_cutoff_timestamp, spec.prior_days, spec.prior_fraction))


def prepare_data(config: ExperimentConfig) -> PreparedData:
    """加载记录、按时间切分并构建评估树与先验树"""
    spec = _dataset_spec(config)
    schema = spec.attribute_schema()
    records = load_records(spec)

    prior_records: List = []
    eval_records = records
    if _has_cutoff(spec):
        prior_records, eval_records = temporal_split(records, resolve_cutoff(records, spec))
    elif config.needs_prior and config.prior.source != "true":
        raise ConfigError("贪心方法需要先验，但数据集配置没有给出先验切分")
    if not eval_records:
        raise DataError("评估集为空")
    if config.needs_prior and config.prior.source != "true" and not prior_records:
        raise DataError("先验集为空")

    eval_tree = build_tree(eval_records, schema)
    eval_trees = eval_tree.groups() if config.per_group else {WHOLE_TREE: eval_tree}
    data = PreparedData(schema=schema, eval_trees=eval_trees)
    if not config.needs_prior:
        return data

    if config.prior.source == "true":
        data.priors = dict(eval_trees)
        return data

    prior_tree = build_tree(prior_records, schema)
    prior_trees = prior_tree.groups() if config.per_group else {WHOLE_TREE: prior_tree}
    pooled = build_tree(prior_records, schema.without_first()) if config.per_group else None

    if config.prior.source == "noisy":
        names = sorted(prior_trees)
        prior_trees = {name: noisy_prior(prior_trees[name], config.prior.epsilon,
                                         make_rng(_seed(config, SEED_PRIOR, i)))
                       for i, name in enumerate(names)}
        if pooled is not None:
            # 先验期只加噪一次，汇总先验由各分组的带噪先验相加
            pooled = merge_groups(pooled, prior_trees)

    data.priors = prior_trees
    data.pooled_prior = pooled
    logger.info(f"先验来源 {config.prior.source}: {len(prior_trees)} 棵先验树")
    return data


def _split_kind(method: str) -> str:
    return method[:-len("_no_pp")] if method.endswith("_no_pp") else method[:-len("_pp")]


def compute_splits(config: ExperimentConfig, data: PreparedData) -> Dict[Tuple[float, float, str], Dict[str, BudgetSplit]]:
    """为每个 (ε, τ, 划分方式) 计算每棵评估树的预算划分"""
    splits = {}
    gamma = config.greedy.gamma
    kinds = sorted({_split_kind(m) for m in config.methods})
    for epsilon in config.epsilons:
        for tau in config.taus:
            for kind in kinds:
                if kind == "equal":
                    value = {g: equal_split(epsilon, t.num_levels) for g, t in data.eval_trees.items()}
                elif kind == "leaves":
                    value = {g: leaves_only_split(epsilon, t.num_levels, gamma) for g, t in data.eval_trees.items()}
                else:
                    value = greedy_split_per_group(
                        data.priors, data.eval_trees.keys(), epsilon,
                        config.greedy.to_config(tau), data.pooled_prior, config.max_workers)
                splits[(epsilon, tau, kind)] = value
    return splits


def _batches(trials: int, num_nodes: int) -> List[int]:
    size = max(1, min(trials, MAX_BATCH_CELLS // max(1, num_nodes)))
    return [min(size, trials - start) for start in range(0, trials, size)]


def run_grid_point(config: ExperimentConfig, data: PreparedData, splits: Dict[str, BudgetSplit],
                   epsilon: float, tau: float, method: str, seed: np.random.SeedSequence) -> Dict:
    """对一个网格点运行全部试验，分组模式下每次试验先对分组的树误差取平均"""
    rng = make_rng(seed)
    post_process = method.endswith("_pp") and not method.endswith("_no_pp")
    mode = NoiseMode(config.noise_mode)
    per_trial = np.zeros(config.trials)
    predicted = []

    for group, tree in data.eval_trees.items():
        split = splits[group]
        noise_config = NoiseConfig(mode=mode, total_epsilon=epsilon, budget_split=split, l1_cap=config.l1_cap)
        offset = 0
        for batch in _batches(config.trials, tree.num_nodes):
            noisy = noise_tree(tree, noise_config, rng, trials=batch)
            estimates = post_process_batch(tree.topology, noisy.x, noisy.var).xhat if post_process else noisy.x
            per_trial[offset:offset + batch] += tree_rmsre_per_trial(tree, estimates, tau)
            offset += batch
        if post_process and mode is NoiseMode.ABSTRACT:
            predicted.append(predict_tree_rmsre(tree, split, tau))

    per_trial /= len(data.eval_trees)
    stderr = float(per_trial.std(ddof=1) / math.sqrt(config.trials)) if config.trials > 1 else 0.0
    return {
        "epsilon": epsilon,
        "tau": tau,
        "method": method,
        "mean_rmsre": float(per_trial.mean()),
        "stderr": stderr,
        "predicted_rmsre": float(np.mean(predicted)) if predicted else float("nan"),
        "trials": config.trials,
        "groups": len(data.eval_trees),
    }


def run_experiment(config: ExperimentConfig, data: Optional[PreparedData] = None) -> pd.DataFrame:
    """
    运行 ε 扫描并写出结果

    各网格点并发执行，每个网格点使用由 (ε, τ, 方法) 下标派生的独立随机流；
    paired 模式下同一 (ε, τ) 的各方法共享随机流。结果按网格顺序写出。
    """
    if data is None:
        data = prepare_data(config)
    splits = compute_splits(config, data)

    points = []
    for i, epsilon in enumerate(config.epsilons):
        for j, tau in enumerate(config.taus):
            for m, method in enumerate(config.methods):
                seed = _seed(config, SEED_GRID, i, j, 0 if config.paired else m)
                points.append((epsilon, tau, method, seed))

    def task(point):
        epsilon, tau, method, seed = point
        row = run_grid_point(config, data, splits[(epsilon, tau, _split_kind(method))],
                             epsilon, tau, method, seed)
        logger.info(f"完成 ε={epsilon} τ={tau} {method}: RMSRE={row['mean_rmsre']:.4f} ± {row['stderr']:.4f}")
        return row

    with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
        rows = list(pool.map(task, points))

    results = pd.DataFrame(rows)
    results["noise_mode"] = config.noise_mode
    results["prior_source"] = config.prior.source if config.needs_prior else ""
    results["per_group"] = config.per_group
    results["seed"] = config.seed
    results["config_hash"] = config.config_hash()
    write_outputs(config, data, splits, results)
    return results


def write_outputs(config: ExperimentConfig, data: PreparedData,
                  splits: Dict[Tuple[float, float, str], Dict[str, BudgetSplit]],
                  results: pd.DataFrame) -> Dict[str, str]:
    """写出结果 CSV、划分 JSON 与运行元数据 JSON"""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "results": str(out / "results.csv"),
        "splits": str(out / "splits.json"),
        "metadata": str(out / "run_metadata.json"),
    }
    results.to_csv(paths["results"], index=False, lineterminator="\n")

    split_dump = [
        {"epsilon": eps, "tau": tau, "split": kind,
         "groups": {group: split.to_dict() for group, split in sorted(value.items())}}
        for (eps, tau, kind), value in sorted(splits.items())
    ]
    Path(paths["splits"]).write_text(json.dumps(split_dump, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")

    metadata = {
        "version": __version__,
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "config": config.model_dump(mode="json"),
        "eval_nodes": {group: tree.num_nodes for group, tree in sorted(data.eval_trees.items())},
        "attributes": data.schema.names,
    }
    Path(paths["metadata"]).write_text(json.dumps(metadata, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    logger.info(f"实验结果已写出: {paths['results']}")
    return paths
