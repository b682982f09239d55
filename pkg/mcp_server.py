#!/usr/bin/env python3
"""
层级转化计数 MCP 服务器

把命令行的五个操作注册为 MCP 工具，供分析人员的助手调用。
"""

import argparse
import logging
from typing import Any, Dict, Optional

try:
    from fastmcp import FastMCP
except ImportError:
    print("需要安装fastmcp: pip install fastmcp")
    exit(1)

from src.config.settings import get_settings
from src.utils.helpers import setup_logging, ensure_directories
from src.tools.pipeline_tools import (
    synth_tool as run_synth,
    build_tree_tool as run_build_tree,
    budget_tool as run_budget,
    postprocess_tool as run_postprocess,
    experiment_tool as run_experiment,
)

# 获取设置
settings = get_settings()

# 设置日志
setup_logging(settings)
logger = logging.getLogger(__name__)

# 确保必要目录存在
ensure_directories([
    settings.output_dir,
    settings.logs_dir
])

# 初始化MCP服务器
mcp = FastMCP(settings.server_name)


@mcp.tool()
def synth_tool(spec_path: str, output: str, seed: Optional[int] = None) -> Dict[str, Any]:
    """
    生成合成点击/转化数据集

    Args:
        spec_path: 合成数据参数 JSON 路径
        output: 输出 CSV 路径（旁边写出 .spec.json 数据集描述）
        seed: 覆盖配置中的种子
    """
    return run_synth(spec_path, output, seed)


@mcp.tool()
def build_tree_tool(dataset_path: str, output: str, part: str = "all") -> Dict[str, Any]:
    """
    从数据集构建层级树并写出树文件

    Args:
        dataset_path: 数据集描述 JSON 路径
        output: 输出树文件路径
        part: "all" | "prior" | "eval"
    """
    return run_build_tree(dataset_path, output, part)


@mcp.tool()
def budget_tool(tree_path: str, output: str, method: str = "greedy", epsilon: float = 1.0,
                tau: float = 10.0, k: Optional[int] = None, gamma: Optional[float] = None,
                per_group: bool = False) -> Dict[str, Any]:
    """
    计算按层隐私预算划分

    Args:
        tree_path: 树文件路径，计数作为先验
        output: 输出划分 JSON 路径
        method: "equal" | "leaves" | "greedy"
        epsilon: 总预算
        tau: 相对误差阈值
        k: 贪心阶段数
        gamma: 每层下限比例
        per_group: 是否对第一层每个分组分别划分
    """
    if k is None:
        k = settings.greedy_phases
    if gamma is None:
        gamma = settings.greedy_gamma
    return run_budget(tree_path, output, method, epsilon, tau, k, gamma, per_group)


@mcp.tool()
def postprocess_tool(tree_path: str, output: str, noisy_path: Optional[str] = None,
                     split_path: Optional[str] = None, seed: Optional[int] = None,
                     mode: str = "abstract", tau: float = 10.0) -> Dict[str, Any]:
    """
    对带噪测量做一致性后处理

    Args:
        tree_path: 树文件路径
        output: 输出逐节点 CSV 路径
        noisy_path: 带噪测量 CSV (node_id,x,var)
        split_path: 预算划分 JSON，没有带噪测量时按种子模拟加噪
        seed: 模拟加噪的种子
        mode: "abstract" | "api_faithful"
        tau: 相对误差阈值
    """
    if seed is None:
        seed = settings.default_seed
    return run_postprocess(tree_path, output, noisy_path, split_path, seed, mode, settings.l1_cap, tau)


@mcp.tool()
def experiment_tool(config_path: str, output_dir: Optional[str] = None, seed: Optional[int] = None,
                    trials: Optional[int] = None, per_group: Optional[bool] = None,
                    paired: Optional[bool] = None) -> Dict[str, Any]:
    """
    运行 ε 扫描实验，写出结果 CSV、划分 JSON 与运行元数据

    Args:
        config_path: 实验配置 JSON 路径
        output_dir: 覆盖输出目录
        seed: 覆盖种子
        trials: 覆盖试验次数
        per_group: 是否按分组评估
        paired: 各方法是否共享噪声
    """
    return run_experiment(config_path, output_dir, seed, trials, per_group, paired, settings.max_workers)


def main():
    """主函数"""
    parser = argparse.ArgumentParser(description="层级转化计数MCP服务器")
    parser.add_argument(
        "--transport",
        choices=["stdio", "sse", "streamable-http"],
        default=settings.transport,
        help="通信方式"
    )
    parser.add_argument("--host", default=settings.http_host, help="主机地址")
    parser.add_argument("--port", type=int, default=settings.http_port, help="端口号")
    parser.add_argument("--debug", action="store_true", help="启用调试模式")

    args = parser.parse_args()

    # 更新设置
    settings.transport = args.transport
    settings.debug = args.debug
    settings.http_host = args.host
    settings.http_port = args.port
    if settings.debug:
        logging.getLogger().setLevel(logging.DEBUG)

    logger.info(f"启动 {settings.server_name} - 传输方式: {settings.transport}")

    if settings.transport == "stdio":
        mcp.run()
    else:
        logger.info(f"监听 {settings.http_host}:{settings.http_port}")
        mcp.run(transport=settings.transport, host=settings.http_host, port=settings.http_port)


if __name__ == "__main__":
    main()
