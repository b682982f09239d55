#!/usr/bin/env python3
"""
层级转化计数命令行工具

子命令: synth, build-tree, budget, postprocess, experiment
退出码: 0 成功, 2 配置错误, 3 数据错误
"""

import argparse
import json
import logging
import sys

from src.config.settings import get_settings
from src.models.errors import DataError, HierCountError
from src.tools.pipeline_tools import SPLIT_METHODS, budget, build_tree_file, experiment, postprocess, synth
from src.utils.helpers import ensure_directories, setup_logging

logger = logging.getLogger("hiercount")


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    parser = argparse.ArgumentParser(prog="hiercount", description=settings.description)
    parser.add_argument("--debug", action="store_true", help="输出调试日志")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("synth", help="生成合成数据集")
    p.add_argument("config", help="合成数据参数 JSON")
    p.add_argument("--output", required=True, help="输出 CSV 路径")
    p.add_argument("--seed", type=int, help="覆盖配置中的种子")

    p = commands.add_parser("build-tree", help="从数据集构建层级树")
    p.add_argument("config", help="数据集描述 JSON")
    p.add_argument("--output", required=True, help="输出树文件")
    p.add_argument("--part", choices=["all", "prior", "eval"], default="all", help="使用的数据部分")

    p = commands.add_parser("budget", help="计算按层预算划分")
    p.add_argument("tree", help="树文件（计数作为先验）")
    p.add_argument("--output", required=True, help="输出划分 JSON")
    p.add_argument("--method", choices=SPLIT_METHODS, default="greedy")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--tau", type=float, default=10.0)
    p.add_argument("--k", type=int, default=settings.greedy_phases)
    p.add_argument("--gamma", type=float, default=settings.greedy_gamma)
    p.add_argument("--per-group", action="store_true", help="对第一层每个分组分别划分")

    p = commands.add_parser("postprocess", help="对带噪测量做一致性后处理")
    p.add_argument("tree", help="树文件")
    p.add_argument("--output", required=True, help="输出逐节点 CSV")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--noisy", help="带噪测量 CSV (node_id,x,var)")
    source.add_argument("--split", help="预算划分 JSON，按种子模拟加噪")
    p.add_argument("--seed", type=int, default=settings.default_seed)
    p.add_argument("--mode", choices=["abstract", "api_faithful"], default="abstract")
    p.add_argument("--l1-cap", type=int, default=settings.l1_cap)
    p.add_argument("--tau", type=float, default=10.0)

    p = commands.add_parser("experiment", help="运行 ε 扫描实验")
    p.add_argument("config", help="实验配置 JSON")
    p.add_argument("--output", help="覆盖输出目录")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--per-group", action="store_true", default=None)
    p.add_argument("--paired", action="store_true", default=None)
    p.add_argument("--workers", type=int)
    return parser


def run(args: argparse.Namespace) -> dict:
    if args.command == "synth":
        return synth(args.config, args.output, args.seed)
    if args.command == "build-tree":
        return build_tree_file(args.config, args.output, args.part)
    if args.command == "budget":
        return budget(args.tree, args.output, args.method, args.epsilon, args.tau, args.k, args.gamma, args.per_group)
    if args.command == "postprocess":
        return postprocess(args.tree, args.output, args.noisy, args.split, args.seed, args.mode, args.l1_cap, args.tau)
    return experiment(args.config, args.output, args.seed, args.trials, args.per_group, args.paired, args.workers)


def main(argv=None) -> int:
    """主函数"""
    args = build_parser().parse_args(argv)
    settings = get_settings()
    if args.debug:
        settings.log_level = "DEBUG"
    setup_logging(settings)
    ensure_directories([settings.output_dir, settings.logs_dir])

    try:
        result = run(args)
    except HierCountError as e:
        logger.error(str(e))
        if isinstance(e, DataError):
            for sample in e.samples:
                logger.error(f"  {sample}")
        return e.exit_code
    print(json.dumps(result, indent=2, ensure_ascii=False, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
