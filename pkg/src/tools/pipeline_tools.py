"""
流水线工具函数

命令行与 MCP 服务器共用的五个操作：合成数据、构建树、预算划分、后处理与实验。
不带 _tool 后缀的函数直接抛出异常，带 _tool 后缀的版本返回结果字典，
失败时返回 {"error": ..., "status": "failed"}。
"""

import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np
import pandas as pd

from ..config.schemas import DatasetSpec, ExperimentConfig, SynthSpec, load_model
from ..core.budgeting import equal_split, greedy_split, leaves_only_split, predict_tree_rmsre
from ..core.ingest import load_records, resolve_cutoff, temporal_split
from ..core.metrics import rmsre_tree
from ..core.noise import make_rng, noise_tree
from ..core.postprocess import tree_post_process
from ..core.synthetic import generate_synthetic
from ..core.tree import HierTree, PATH_SEPARATOR, build_tree, read_noisy, read_tree, write_tree
from ..models.data_models import BudgetSplit, GreedyConfig, NoiseConfig, NoiseMode
from ..models.errors import ConfigError, DataError, HierCountError
from .experiment import run_experiment

logger = logging.getLogger(__name__)

SPLIT_METHODS = ("equal", "leaves", "greedy")


def _write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def synth(spec_path: str, output: str, seed: Optional[int] = None) -> Dict[str, Any]:
    spec = load_model(SynthSpec, spec_path, seed=seed)
    csv_path, dataset_spec = generate_synthetic(spec, output)
    return {
        "csv": str(csv_path),
        "dataset_spec": str(csv_path.with_suffix(".spec.json")),
        "attributes": [a.name for a in dataset_spec.attributes],
    }


def build_tree_file(dataset_path: str, output: str, part: str = "all") -> Dict[str, Any]:
    """按数据集描述构建树并写出；part 为 prior / eval 时先按时间切分"""
    if part not in ("all", "prior", "eval"):
        raise ConfigError(f"未知的数据部分: {part}")
    spec = load_model(DatasetSpec, dataset_path)
    records = load_records(spec)
    if part != "all":
        prior, evaluation = temporal_split(records, resolve_cutoff(records, spec))
        records = prior if part == "prior" else evaluation
        if not records:
            raise DataError(f"{part} 部分没有记录")
    tree = build_tree(records, spec.attribute_schema())
    write_tree(tree, output)
    return {
        "tree": output,
        "nodes": tree.num_nodes,
        "levels": tree.num_levels,
        "level_sizes": [int(nodes.shape[0]) for nodes in tree.levels],
        "conversions": int(tree.counts[tree.topology.root]),
    }


def choose_split(tree: HierTree, method: str, epsilon: float, tau: float = 10.0,
                 k: int = 20, gamma: float = 1e-5) -> BudgetSplit:
    if method == "equal":
        return equal_split(epsilon, tree.num_levels)
    if method == "leaves":
        return leaves_only_split(epsilon, tree.num_levels, gamma)
    if method == "greedy":
        return greedy_split(tree, epsilon, GreedyConfig(k=k, gamma=gamma, tau=tau))
    raise ConfigError(f"未知的划分方法: {method}，可选 {SPLIT_METHODS}")


def budget(tree_path: str, output: str, method: str = "greedy", epsilon: float = 1.0,
           tau: float = 10.0, k: int = 20, gamma: float = 1e-5, per_group: bool = False) -> Dict[str, Any]:
    """
    以树文件的计数为先验计算预算划分

    per_group 时对第一层每个节点的子树分别划分，输出 {"groups": {取值: 划分}}。
    """
    tree = read_tree(tree_path)
    if per_group:
        groups = tree.groups()
        splits = {group: choose_split(sub, method, epsilon, tau, k, gamma)
                  for group, sub in sorted(groups.items())}
        payload = {"groups": {g: s.to_dict() for g, s in splits.items()}}
        predicted = {g: predict_tree_rmsre(groups[g], s, tau) for g, s in splits.items()}
    else:
        split = choose_split(tree, method, epsilon, tau, k, gamma)
        payload = split.to_dict()
        predicted = predict_tree_rmsre(tree, split, tau)
    _write_json(Path(output), payload)
    return {"split_file": output, "split": payload, "predicted_rmsre": predicted}


def read_split(path: str) -> BudgetSplit:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"预算划分文件不存在: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"预算划分文件不是合法 JSON: {path}: {e}") from e
    if "groups" in payload:
        raise ConfigError("后处理需要整棵树的预算划分，不接受按分组的划分文件")
    if "total" not in payload or "levels" not in payload:
        raise ConfigError(f"预算划分文件缺少 total / levels: {path}")
    return BudgetSplit.from_dict(payload)


def postprocess(tree_path: str, output: str, noisy_path: Optional[str] = None,
                split_path: Optional[str] = None, seed: Optional[int] = None,
                mode: str = "abstract", l1_cap: int = 65536, tau: float = 10.0) -> Dict[str, Any]:
    """
    对一次带噪测量做后处理并写出逐节点 CSV

    带噪测量来自 noisy_path（node_id,x,var），或按 split_path 与 seed 模拟加噪。
    """
    tree = read_tree(tree_path)
    if noisy_path:
        noisy = read_noisy(noisy_path, tree.topology)
    elif split_path:
        if mode not in {m.value for m in NoiseMode}:
            raise ConfigError(f"未知的加噪模式: {mode}")
        split = read_split(split_path)
        config = NoiseConfig(mode=NoiseMode(mode), total_epsilon=split.total, budget_split=split, l1_cap=l1_cap)
        noisy = noise_tree(tree, config, make_rng(seed))
    else:
        raise ConfigError("需要提供带噪测量文件或预算划分文件")

    estimate = tree_post_process(noisy)
    frame = pd.DataFrame({
        "node_id": np.arange(tree.num_nodes),
        "level": tree.topology.depth,
        "path": [PATH_SEPARATOR.join(p) for p in tree.paths],
        "true_count": tree.counts,
        "x": noisy.x,
        "var": noisy.var,
        "xhat": estimate.xhat,
        "varhat": estimate.varhat,
    })
    Path(output).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(output, index=False, lineterminator="\n")
    return {
        "output": output,
        "nodes": tree.num_nodes,
        "rmsre_noisy": rmsre_tree(tree, [noisy], tau).tree_rmsre,
        "rmsre_postprocessed": rmsre_tree(tree, [estimate], tau).tree_rmsre,
    }


def experiment(config_path: str, output_dir: Optional[str] = None, seed: Optional[int] = None,
               trials: Optional[int] = None, per_group: Optional[bool] = None,
               paired: Optional[bool] = None, workers: Optional[int] = None) -> Dict[str, Any]:
    config = load_model(ExperimentConfig, config_path, output_dir=output_dir, seed=seed, trials=trials,
                        per_group=per_group, paired=paired, max_workers=workers)
    results = run_experiment(config)
    return {
        "output_dir": config.output_dir,
        "config_hash": config.config_hash(),
        "rows": results[["epsilon", "tau", "method", "mean_rmsre", "stderr"]].to_dict(orient="records"),
    }


def _as_tool(operation: Callable[..., Dict[str, Any]], *args, **kwargs) -> Dict[str, Any]:
    try:
        result = operation(*args, **kwargs)
    except HierCountError as e:
        logger.error(f"{operation.__name__} 失败: {e}")
        failure = {"error": str(e), "status": "failed", "exit_code": e.exit_code}
        if isinstance(e, DataError) and e.samples:
            failure["samples"] = e.samples
        return failure
    result["status"] = "success"
    return result


def synth_tool(spec_path: str, output: str, seed: Optional[int] = None) -> Dict[str, Any]:
    return _as_tool(synth, spec_path, output, seed)


def build_tree_tool(dataset_path: str, output: str, part: str = "all") -> Dict[str, Any]:
    return _as_tool(build_tree_file, dataset_path, output, part)


def budget_tool(tree_path: str, output: str, method: str = "greedy", epsilon: float = 1.0,
                tau: float = 10.0, k: int = 20, gamma: float = 1e-5, per_group: bool = False) -> Dict[str, Any]:
    return _as_tool(budget, tree_path, output, method, epsilon, tau, k, gamma, per_group)


def postprocess_tool(tree_path: str, output: str, noisy_path: Optional[str] = None,
                     split_path: Optional[str] = None, seed: Optional[int] = None,
                     mode: str = "abstract", l1_cap: int = 65536, tau: float = 10.0) -> Dict[str, Any]:
    return _as_tool(postprocess, tree_path, output, noisy_path, split_path, seed, mode, l1_cap, tau)


def experiment_tool(config_path: str, output_dir: Optional[str] = None, seed: Optional[int] = None,
                    trials: Optional[int] = None, per_group: Optional[bool] = None,
                    paired: Optional[bool] = None, workers: Optional[int] = None) -> Dict[str, Any]:
    return _as_tool(experiment, config_path, output_dir, seed, trials, per_group, paired, workers)
