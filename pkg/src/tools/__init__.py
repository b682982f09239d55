"""
工具模块

命令行与 MCP 服务器共用的流水线操作，以及 ε 扫描实验流程。
"""

from .experiment import prepare_data, run_experiment
from .pipeline_tools import (
    budget,
    budget_tool,
    build_tree_file,
    build_tree_tool,
    experiment,
    experiment_tool,
    postprocess,
    postprocess_tool,
    synth,
    synth_tool,
)

__all__ = [
    'prepare_data', 'run_experiment',
    'synth', 'build_tree_file', 'budget', 'postprocess', 'experiment',
    'synth_tool', 'build_tree_tool', 'budget_tool', 'postprocess_tool', 'experiment_tool',
]
