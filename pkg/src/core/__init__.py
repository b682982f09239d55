"""
核心计算模块

包含层级树、离散拉普拉斯加噪、后处理、预算分配、误差度量与数据加载。
"""

from .tree import (
    TreeTopology,
    HierTree,
    NoisyTree,
    build_tree,
    merge_groups,
    validate_consistency,
    read_noisy,
    read_tree,
    write_noisy,
    write_tree,
)
from .noise import (
    dlap_pmf,
    dlap_sample,
    dlap_samples,
    dlap_variance,
    make_rng,
    noise_tree,
    noise_tree_abstract,
    noise_tree_api_faithful,
)
from .postprocess import (
    EstimateTree,
    combine_estimates,
    ols_oracle,
    post_process_batch,
    posterior_variances,
    tree_post_process,
)
from .budgeting import (
    equal_split,
    greedy_split,
    greedy_split_per_group,
    leaves_only_split,
    noisy_prior,
    predict_tree_rmsre,
)
from .metrics import rmsre_point, rmsre_tree, tree_rmsre_per_trial
from .ingest import discretize_delay, load_records, temporal_split
from .synthetic import generate_synthetic

__all__ = [
    'TreeTopology', 'HierTree', 'NoisyTree', 'build_tree', 'validate_consistency',
    'merge_groups', 'read_tree', 'write_tree', 'read_noisy', 'write_noisy',
    'dlap_pmf', 'dlap_sample', 'dlap_samples', 'dlap_variance', 'make_rng',
    'noise_tree', 'noise_tree_abstract', 'noise_tree_api_faithful',
    'EstimateTree', 'combine_estimates', 'ols_oracle', 'post_process_batch',
    'posterior_variances', 'tree_post_process',
    'equal_split', 'greedy_split', 'greedy_split_per_group', 'leaves_only_split',
    'noisy_prior', 'predict_tree_rmsre',
    'rmsre_point', 'rmsre_tree', 'tree_rmsre_per_trial',
    'discretize_delay', 'load_records', 'temporal_split',
    'generate_synthetic',
]
