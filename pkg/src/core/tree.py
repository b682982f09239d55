"""
层级查询树

定义聚合节点树、从属性模式和归因记录构建树、真实计数一致性校验，
以及逐行文本格式的读写。
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..models.data_models import AttributeSchema, AttributionRecord
from ..models.errors import ConfigError, DataError, ParameterError, RecordRejectedError

logger = logging.getLogger(__name__)

Path_ = Tuple[str, ...]

UNKNOWN_COLUMN = "__unknown__"
CONVERTED_COLUMN = "__converted__"
PATH_SEPARATOR = "|"
ATTRIBUTES_HEADER = "# attributes="


class TreeTopology:
    """
    任意有根树的拓扑。节点按 0..n-1 编号，根节点父编号为 -1。

    按深度分桶保存节点，前后两遍遍历都用显式的分桶迭代，不用递归。
    """

    def __init__(self, parents: Sequence[int]):
        parents = np.asarray(parents, dtype=np.int64)
        n = parents.shape[0]
        if n == 0:
            raise ConfigError("树至少需要一个节点")
        roots = np.flatnonzero(parents < 0)
        if roots.shape[0] != 1:
            raise ConfigError(f"树必须恰好有一个根节点，实际 {roots.shape[0]} 个")
        if np.any(parents >= n):
            raise ConfigError("父节点编号越界")

        children: List[List[int]] = [[] for _ in range(n)]
        for v in range(n):
            p = parents[v]
            if p >= 0:
                children[p].append(v)

        depth = np.full(n, -1, dtype=np.int64)
        root = int(roots[0])
        depth[root] = 0
        frontier = [root]
        visited = 1
        while frontier:
            nxt = []
            for v in frontier:
                for u in children[v]:
                    depth[u] = depth[v] + 1
                    nxt.append(u)
            visited += len(nxt)
            frontier = nxt
        if visited != n:
            raise ConfigError("父节点数组包含环或不连通的节点")

        self.parents = parents
        self.parents.setflags(write=False)
        self.depth = depth
        self.depth.setflags(write=False)
        self.root = root
        self._children = [np.asarray(c, dtype=np.int64) for c in children]
        self.is_leaf = np.array([len(c) == 0 for c in children], dtype=bool)
        self.is_leaf.setflags(write=False)
        max_depth = int(depth.max())
        self.by_depth: List[np.ndarray] = [np.flatnonzero(depth == i) for i in range(max_depth + 1)]

    @property
    def num_nodes(self) -> int:
        return int(self.parents.shape[0])

    @property
    def max_depth(self) -> int:
        return len(self.by_depth) - 1

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.is_leaf)

    def children(self, v: int) -> np.ndarray:
        return self._children[v]

    def ancestors(self, v: int) -> List[int]:
        """从 v 到根（含两端）的路径"""
        path = [int(v)]
        while self.parents[path[-1]] >= 0:
            path.append(int(self.parents[path[-1]]))
        return path

    def same_shape(self, other: "TreeTopology") -> bool:
        return self is other or np.array_equal(self.parents, other.parents)

    def child_sums(self, values: np.ndarray) -> np.ndarray:
        """每个节点的子节点取值之和（叶子为 0）；values 可为 (n,) 或 (n, T)"""
        sums = np.zeros(values.shape, dtype=values.dtype)
        non_root = self.parents >= 0
        np.add.at(sums, self.parents[non_root], values[non_root])
        return sums


@dataclass(frozen=True, eq=False)
class HierTree:
    """
    层级聚合树：每个节点有父节点、层号、属性取值路径与计数。

    由 build_tree 得到的计数为整数真实计数；先验树的计数可以是实数估计。
    """
    topology: TreeTopology
    paths: Tuple[Path_, ...]
    counts: np.ndarray
    attribute_names: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        if len(self.paths) != self.topology.num_nodes or self.counts.shape != (self.topology.num_nodes,):
            raise ConfigError("路径/计数数量与节点数不一致")

    @property
    def num_nodes(self) -> int:
        return self.topology.num_nodes

    @property
    def depth(self) -> int:
        return self.topology.max_depth

    @property
    def num_levels(self) -> int:
        return self.topology.max_depth + 1

    @property
    def levels(self) -> List[np.ndarray]:
        return self.topology.by_depth

    def level_of(self, v: int) -> int:
        return int(self.topology.depth[v])

    def parent(self, v: int) -> Optional[int]:
        p = int(self.topology.parents[v])
        return None if p < 0 else p

    def children(self, v: int) -> np.ndarray:
        return self.topology.children(v)

    def find(self, path: Sequence[str]) -> int:
        """按属性取值路径查找节点编号"""
        try:
            return self.paths.index(tuple(path))
        except ValueError:
            raise KeyError(f"路径不存在: {tuple(path)}") from None

    def with_counts(self, counts: np.ndarray) -> "HierTree":
        return HierTree(self.topology, self.paths, np.asarray(counts), self.attribute_names)

    def subtree(self, v: int) -> "HierTree":
        """以 v 为根的子树，路径去掉 v 之上的前缀，节点顺序保持不变"""
        offset = self.level_of(v)
        inside = np.zeros(self.num_nodes, dtype=bool)
        inside[v] = True
        for level in self.levels[offset + 1:]:
            inside[level] = inside[self.topology.parents[level]]
        kept = np.flatnonzero(inside)
        remap = np.full(self.num_nodes, -1, dtype=np.int64)
        remap[kept] = np.arange(kept.shape[0])
        parents = np.where(kept == v, -1, remap[self.topology.parents[kept]])
        return HierTree(
            topology=TreeTopology(parents),
            paths=tuple(self.paths[i][offset:] for i in kept),
            counts=self.counts[kept].copy(),
            attribute_names=self.attribute_names[offset:],
        )

    def groups(self) -> Dict[str, "HierTree"]:
        """第一层每个节点对应的子树，按取值索引"""
        if self.depth < 1:
            raise ConfigError("单层树没有分组")
        return {self.paths[v][0]: self.subtree(int(v)) for v in self.levels[1]}


@dataclass(frozen=True, eq=False)
class NoisyTree:
    """
    每个节点的带噪计数 x 与方差 var（后处理的输入）。

    x 可以是 (n,) 单次测量，或 (n, T) 的 T 次独立测量批次；方差与数据无关。
    """
    topology: TreeTopology
    x: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        n = self.topology.num_nodes
        if self.x.shape[0] != n or self.var.shape != (n,):
            raise ConfigError("带噪树的形状与拓扑不一致")
        if not np.all(np.isfinite(self.var)) or np.any(self.var <= 0):
            raise ParameterError("所有节点方差必须为有限正数")

    @property
    def estimates(self) -> np.ndarray:
        return self.x

    @property
    def num_trials(self) -> int:
        return 1 if self.x.ndim == 1 else int(self.x.shape[1])

    def trial(self, t: int) -> "NoisyTree":
        if self.x.ndim == 1:
            return self
        return NoisyTree(self.topology, self.x[:, t].copy(), self.var)


def _records_frame(records: Sequence[AttributionRecord], schema: AttributeSchema) -> pd.DataFrame:
    unknown = schema.unknown_attribute
    domain = set(unknown.domain) if unknown is not None else set()
    columns: Dict[str, list] = {name: [] for name in schema.known_names}
    unknown_values = []
    converted = []
    for row, record in enumerate(records):
        for name in schema.known_names:
            value = record.known_values.get(name)
            if value is None:
                raise RecordRejectedError(f"缺少已知属性 {name}", row)
            columns[name].append(str(value))
        if record.converted and unknown is not None and record.unknown_value not in domain:
            raise RecordRejectedError(
                f"未知属性 {unknown.name} 的取值 {record.unknown_value!r} 不在取值域内", row)
        unknown_values.append(record.unknown_value)
        converted.append(bool(record.converted))
    columns[UNKNOWN_COLUMN] = unknown_values
    columns[CONVERTED_COLUMN] = converted
    return pd.DataFrame(columns)


def _level_counts(converted: pd.DataFrame, group_columns: List[str]) -> Dict[Path_, int]:
    if converted.empty:
        return {}
    sizes = converted.groupby(group_columns, sort=False).size()
    counts = {}
    for key, size in sizes.items():
        key = key if isinstance(key, tuple) else (key,)
        counts[tuple(str(k) for k in key)] = int(size)
    return counts


def build_tree(records: Sequence[AttributionRecord], schema: AttributeSchema) -> HierTree:
    """
    从记录构建深度为 d 的层级树

    已知属性只展开记录中出现过的取值组合（取值组合只由已知属性决定）；
    未知属性在每个存活前缀下展开完整取值域，包括计数为 0 的节点。
    叶子计数为满足完整条件且有归因转化的记录数，内部节点计数为子节点之和。
    """
    if len(records) == 0:
        raise DataError("记录为空，无法推导已知属性的树形")

    frame = _records_frame(records, schema)
    converted = frame[frame[CONVERTED_COLUMN]]
    known_positions = [j for j, a in enumerate(schema.attributes) if not a.is_unknown]

    paths: List[Path_] = [()]
    parents: List[int] = [-1]
    counts: List[int] = [int(len(converted))]
    previous: List[Tuple[int, Path_]] = [(0, ())]

    for i, attr in enumerate(schema.attributes, start=1):
        current: List[Tuple[int, Path_]] = []
        observed: Dict[Path_, List[str]] = {}
        if not attr.is_unknown:
            known_prefix = [a.name for a in schema.attributes[:i] if not a.is_unknown]
            grouped: Dict[Path_, List[str]] = defaultdict(list)
            for row in frame[known_prefix].drop_duplicates().itertuples(index=False, name=None):
                grouped[tuple(row[:-1])].append(row[-1])
            observed = {key: sorted(values) for key, values in grouped.items()}

        group_columns = [UNKNOWN_COLUMN if a.is_unknown else a.name for a in schema.attributes[:i]]
        level_counts = _level_counts(converted, group_columns)

        for parent_index, prefix in previous:
            if attr.is_unknown:
                values = attr.domain
            else:
                values = observed.get(tuple(prefix[j] for j in known_positions if j < len(prefix)), ())
            for value in values:
                path = prefix + (value,)
                paths.append(path)
                parents.append(parent_index)
                counts.append(level_counts.get(path, 0))
                current.append((len(paths) - 1, path))
        previous = current

    tree = HierTree(
        topology=TreeTopology(parents),
        paths=tuple(paths),
        counts=np.asarray(counts, dtype=np.int64),
        attribute_names=tuple(schema.names),
    )
    logger.info(f"构建层级树完成: {tree.num_nodes} 个节点, {tree.num_levels} 层, 转化数 {counts[0]}")
    return tree


def merge_groups(shape: HierTree, groups: Dict[str, HierTree]) -> HierTree:
    """按路径把各分组子树的计数累加到去掉分组属性的汇总树 shape 上"""
    index = {path: i for i, path in enumerate(shape.paths)}
    counts = np.zeros(shape.num_nodes, dtype=np.float64)
    for name, tree in groups.items():
        missing = [p for p in tree.paths if p not in index]
        if missing:
            raise ConfigError(f"分组 {name} 的路径不在汇总树中: {missing[:3]}")
        positions = np.fromiter((index[p] for p in tree.paths), dtype=np.int64, count=tree.num_nodes)
        np.add.at(counts, positions, np.asarray(tree.counts, dtype=np.float64))
    return shape.with_counts(counts)


def validate_consistency(tree: HierTree, rtol: float = 1e-9) -> bool:
    """每个内部节点的计数是否等于其子节点计数之和"""
    sums = tree.topology.child_sums(tree.counts)
    internal = ~tree.topology.is_leaf
    if tree.counts.dtype.kind in "iu":
        return bool(np.array_equal(tree.counts[internal], sums[internal]))
    diff = np.abs(tree.counts[internal] - sums[internal])
    scale = np.maximum(1.0, np.abs(tree.counts[internal]))
    return bool(np.all(diff <= rtol * scale))


def write_tree(tree: HierTree, path: Union[str, Path]) -> None:
    """写出逐行文本格式: node_id,parent_id|-1,level,path,true_count"""
    for node_path in tree.paths:
        if any(PATH_SEPARATOR in value for value in node_path):
            raise ConfigError(f"属性取值中不能包含 '{PATH_SEPARATOR}': {node_path}")
    frame = pd.DataFrame({
        "node_id": np.arange(tree.num_nodes),
        "parent_id": tree.topology.parents,
        "level": tree.topology.depth,
        "path": [PATH_SEPARATOR.join(p) for p in tree.paths],
        "true_count": tree.counts,
    })
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(ATTRIBUTES_HEADER + PATH_SEPARATOR.join(tree.attribute_names) + "\n")
        frame.to_csv(f, header=False, index=False, lineterminator="\n")


def read_tree(path: Union[str, Path]) -> HierTree:
    """读取 write_tree 的输出"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"树文件不存在: {path}")
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
    skip = 0
    names: Tuple[str, ...] = ()
    if first.startswith(ATTRIBUTES_HEADER):
        skip = 1
        header = first[len(ATTRIBUTES_HEADER):].strip()
        names = tuple(header.split(PATH_SEPARATOR)) if header else ()
    frame = pd.read_csv(
        path, header=None, skiprows=skip, skipinitialspace=True,
        names=["node_id", "parent_id", "level", "path", "true_count"],
        dtype={"path": str}, keep_default_na=False,
    )
    if not np.array_equal(frame["node_id"].to_numpy(), np.arange(len(frame))):
        raise DataError("节点编号必须为从 0 开始的连续整数")
    topology = TreeTopology(frame["parent_id"].to_numpy(dtype=np.int64))
    if not np.array_equal(topology.depth, frame["level"].to_numpy(dtype=np.int64)):
        raise DataError("层号与父子关系不一致")
    raw_counts = pd.to_numeric(frame["true_count"])
    counts = raw_counts.to_numpy(dtype=np.int64 if raw_counts.dtype.kind in "iu" else np.float64)
    paths = tuple(tuple(p.split(PATH_SEPARATOR)) if p else () for p in frame["path"])
    return HierTree(topology, paths, counts, names)


def leaf_total(tree: HierTree) -> Union[int, float]:
    return tree.counts[tree.topology.leaves].sum()


def write_noisy(noisy: NoisyTree, path: Union[str, Path]) -> None:
    """写出单次带噪测量: node_id,x,var"""
    if noisy.x.ndim != 1:
        raise ConfigError("只能写出单次测量，请先用 trial(t) 取出一次试验")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"node_id": np.arange(noisy.topology.num_nodes), "x": noisy.x, "var": noisy.var})
    frame.to_csv(path, index=False, lineterminator="\n")


def read_noisy(path: Union[str, Path], topology: TreeTopology) -> NoisyTree:
    path = Path(path)
    if not path.exists():
        raise DataError(f"带噪测量文件不存在: {path}")
    frame = pd.read_csv(path)
    absent = [c for c in ("node_id", "x", "var") if c not in frame.columns]
    if absent:
        raise DataError(f"带噪测量文件缺少列: {absent}")
    frame = frame.sort_values("node_id")
    if not np.array_equal(frame["node_id"].to_numpy(), np.arange(topology.num_nodes)):
        raise DataError("带噪测量的节点编号与树不一致")
    return NoisyTree(topology, frame["x"].to_numpy(dtype=np.float64), frame["var"].to_numpy(dtype=np.float64))
