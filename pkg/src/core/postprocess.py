"""
树后处理

对任意树上的带噪测量做一致、方差最优的线性后处理（两遍：自底向上、自顶向下），
以及用稠密加权最小二乘求解的对照实现。
"""

import logging
from dataclasses import dataclass
from typing import Dict, Tuple, Union

import numpy as np

from ..models.errors import ParameterError
from .tree import NoisyTree, TreeTopology

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

OLS_MAX_NODES = 2000


def combine_estimates(x: ArrayLike, var_x: ArrayLike, y: ArrayLike, var_y: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """两个独立无偏估计的最小方差凸组合"""
    if np.any(np.asarray(var_x) <= 0) or np.any(np.asarray(var_y) <= 0):
        raise ParameterError("合并估计要求方差为正")
    var_z = var_x * var_y / (var_x + var_y)
    z = var_z * (x / var_x + y / var_y)
    return z, var_z


def _column(values: np.ndarray, like: np.ndarray) -> np.ndarray:
    """把按节点的方差扩展成可与 (m, T) 估计广播的形状"""
    return values.reshape(values.shape + (1,) * (like.ndim - 1))


@dataclass(frozen=True, eq=False)
class EstimateTree:
    """
    后处理结果：每个节点的估计 xhat 与后验方差 varhat，并保留中间量。

    中间量命名：up = z↑（子树不含自身），UP = z⇑（子树含自身），
    down = z↓（子树之外），DOWN = z⇓（子树之外并含自身）。
    叶子的 z↑ 与根的 z↓ 无定义，记为 NaN。
    """
    topology: TreeTopology
    xhat: np.ndarray
    varhat: np.ndarray
    z_up: np.ndarray
    var_up: np.ndarray
    z_UP: np.ndarray
    var_UP: np.ndarray
    z_down: np.ndarray
    var_down: np.ndarray
    z_DOWN: np.ndarray
    var_DOWN: np.ndarray

    @property
    def estimates(self) -> np.ndarray:
        return self.xhat

    @property
    def num_trials(self) -> int:
        return 1 if self.xhat.ndim == 1 else int(self.xhat.shape[1])


def _bottom_up(topology: TreeTopology, x: np.ndarray, var: np.ndarray) -> Dict[str, np.ndarray]:
    parents = topology.parents
    is_leaf = topology.is_leaf
    z_up = np.zeros_like(x)
    var_up = np.zeros_like(var)
    z_UP = np.empty_like(x)
    var_UP = np.empty_like(var)

    for depth in range(topology.max_depth, -1, -1):
        nodes = topology.by_depth[depth]
        leaves = nodes[is_leaf[nodes]]
        internal = nodes[~is_leaf[nodes]]
        z_UP[leaves] = x[leaves]
        var_UP[leaves] = var[leaves]
        if internal.size:
            z, _ = combine_estimates(
                x[internal], _column(var[internal], x),
                z_up[internal], _column(var_up[internal], x))
            z_UP[internal] = z
            var_UP[internal] = var[internal] * var_up[internal] / (var[internal] + var_up[internal])
        if depth > 0:
            np.add.at(z_up, parents[nodes], z_UP[nodes])
            np.add.at(var_up, parents[nodes], var_UP[nodes])

    return {"z_up": z_up, "var_up": var_up, "z_UP": z_UP, "var_UP": var_UP}


def post_process_batch(topology: TreeTopology, x: np.ndarray, var: np.ndarray) -> EstimateTree:
    """
    两遍后处理，x 形状为 (n,) 或 (n, T)，方差与 x 无关只传播一次

    自顶向下一步用 z↓_v = z⇓_p - z↑_p + z⇑_v 代替逐个兄弟求和，总体线性时间。
    """
    x = np.asarray(x, dtype=np.float64)
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0):
        raise ParameterError("所有节点方差必须为正")

    up = _bottom_up(topology, x, var)
    z_up, var_up, z_UP, var_UP = up["z_up"], up["var_up"], up["z_UP"], up["var_UP"]
    parents = topology.parents
    root = topology.root

    xhat = np.empty_like(x)
    varhat = np.empty_like(var)
    z_down = np.full_like(x, np.nan)
    var_down = np.full_like(var, np.nan)
    z_DOWN = np.empty_like(x)
    var_DOWN = np.empty_like(var)

    xhat[root] = z_UP[root]
    varhat[root] = var_UP[root]
    z_DOWN[root] = x[root]
    var_DOWN[root] = var[root]

    for depth in range(1, topology.max_depth + 1):
        nodes = topology.by_depth[depth]
        p = parents[nodes]
        z_down[nodes] = z_DOWN[p] - z_up[p] + z_UP[nodes]
        var_down[nodes] = var_DOWN[p] + var_up[p] - var_UP[nodes]
        xhat[nodes], _ = combine_estimates(
            z_UP[nodes], _column(var_UP[nodes], x), z_down[nodes], _column(var_down[nodes], x))
        varhat[nodes] = var_UP[nodes] * var_down[nodes] / (var_UP[nodes] + var_down[nodes])
        z_DOWN[nodes], _ = combine_estimates(
            x[nodes], _column(var[nodes], x), z_down[nodes], _column(var_down[nodes], x))
        var_DOWN[nodes] = var[nodes] * var_down[nodes] / (var[nodes] + var_down[nodes])

    # 叶子没有 z↑
    leaves = topology.leaves
    z_up[leaves] = np.nan
    var_up[leaves] = np.nan

    return EstimateTree(
        topology=topology, xhat=xhat, varhat=varhat,
        z_up=z_up, var_up=var_up, z_UP=z_UP, var_UP=var_UP,
        z_down=z_down, var_down=var_down, z_DOWN=z_DOWN, var_DOWN=var_DOWN,
    )


def tree_post_process(noisy: NoisyTree) -> EstimateTree:
    """对带噪树做一致性后处理，输出每个节点的最佳线性无偏估计与方差"""
    return post_process_batch(noisy.topology, noisy.x, noisy.var)


def posterior_variances(topology: TreeTopology, var: np.ndarray) -> np.ndarray:
    """只传播方差，得到后处理后的 varhat（与测量值无关）"""
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0):
        raise ParameterError("所有节点方差必须为正")
    parents = topology.parents
    is_leaf = topology.is_leaf
    var_up = np.zeros_like(var)
    var_UP = np.empty_like(var)
    for depth in range(topology.max_depth, -1, -1):
        nodes = topology.by_depth[depth]
        internal = nodes[~is_leaf[nodes]]
        var_UP[nodes] = var[nodes]
        var_UP[internal] = var[internal] * var_up[internal] / (var[internal] + var_up[internal])
        if depth > 0:
            np.add.at(var_up, parents[nodes], var_UP[nodes])

    varhat = np.empty_like(var)
    var_DOWN = np.empty_like(var)
    varhat[topology.root] = var_UP[topology.root]
    var_DOWN[topology.root] = var[topology.root]
    for depth in range(1, topology.max_depth + 1):
        nodes = topology.by_depth[depth]
        p = parents[nodes]
        var_down = var_DOWN[p] + var_up[p] - var_UP[nodes]
        varhat[nodes] = var_UP[nodes] * var_down / (var_UP[nodes] + var_down)
        var_DOWN[nodes] = var[nodes] * var_down / (var[nodes] + var_down)
    return varhat


def leaf_design_matrix(topology: TreeTopology) -> np.ndarray:
    """A[u, j] = 1 当且仅当第 j 个叶子等于 u 或是 u 的后代"""
    leaves = topology.leaves
    design = np.zeros((topology.num_nodes, leaves.shape[0]))
    for j, leaf in enumerate(leaves):
        design[topology.ancestors(int(leaf)), j] = 1.0
    return design


def ols_oracle(noisy: NoisyTree) -> EstimateTree:
    """
    稠密加权最小二乘：对叶子向量 θ 最小化 Σ_u (x_u - (Aθ)_u)^2 / var_u，
    返回 xhat = Aθ̂ 及由 Cov(θ̂) 经 A 传播得到的方差。只适用于小树。
    """
    topology = noisy.topology
    if topology.num_nodes > OLS_MAX_NODES:
        raise ParameterError(f"稠密求解只支持不超过 {OLS_MAX_NODES} 个节点")
    design = leaf_design_matrix(topology)
    weights = 1.0 / noisy.var
    normal = design.T @ (weights[:, None] * design)
    rhs = design.T @ (_column(weights, noisy.x) * noisy.x)
    try:
        covariance = np.linalg.inv(normal)
    except np.linalg.LinAlgError as e:
        raise ParameterError(f"正规方程矩阵奇异: {e}") from e
    theta = np.linalg.solve(normal, rhs)
    xhat = design @ theta
    varhat = np.einsum("ij,jk,ik->i", design, covariance, design)
    nan_x = np.full_like(xhat, np.nan)
    nan_v = np.full_like(varhat, np.nan)
    return EstimateTree(
        topology=topology, xhat=xhat, varhat=varhat,
        z_up=nan_x, var_up=nan_v, z_UP=nan_x, var_UP=nan_v,
        z_down=nan_x, var_down=nan_v, z_DOWN=nan_x, var_DOWN=nan_v,
    )
