"""
树后处理单元测试
"""

import time
import unittest

import numpy as np
from hypothesis import given, settings, strategies as st

from src.core.budgeting import equal_split
from src.core.noise import make_rng, noise_tree_abstract
from src.core.postprocess import (
    combine_estimates,
    ols_oracle,
    post_process_batch,
    posterior_variances,
    tree_post_process,
)
from src.core.tree import HierTree, NoisyTree, TreeTopology
from src.models.errors import ParameterError


def random_topology(rng: np.random.Generator, max_nodes: int = 50) -> TreeTopology:
    """随机树：每个节点 1-5 个子节点，部分节点停止展开"""
    parents = [-1]
    frontier = [0]
    while frontier and len(parents) < max_nodes:
        nxt = []
        for v in frontier:
            if v != 0 and rng.random() < 0.3:
                continue
            for _ in range(int(rng.integers(1, 6))):
                if len(parents) >= max_nodes:
                    break
                parents.append(v)
                nxt.append(len(parents) - 1)
        frontier = nxt
    return TreeTopology(parents)


def random_noisy(rng: np.random.Generator) -> NoisyTree:
    topology = random_topology(rng)
    n = topology.num_nodes
    return NoisyTree(topology, rng.normal(0.0, 20.0, size=n), rng.uniform(0.1, 10.0, size=n))


def chain(n: int) -> TreeTopology:
    return TreeTopology([-1] + list(range(n - 1)))


def star(n: int) -> TreeTopology:
    return TreeTopology([-1] + [0] * (n - 1))


class TestCombineEstimates(unittest.TestCase):
    """两个独立估计的合并"""

    def test_equal_variances_average(self):
        self.assertEqual(combine_estimates(4.0, 2.0, 8.0, 2.0), (6.0, 1.0))

    def test_weighted(self):
        z, var = combine_estimates(10.0, 1.0, 0.0, 9.0)
        self.assertAlmostEqual(z, 9.0, places=12)
        self.assertAlmostEqual(var, 0.9, places=12)

    @given(st.floats(-1e6, 1e6), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
    def test_identical_estimates_fixed_point(self, x, v1, v2):
        z, var = combine_estimates(x, v1, x, v2)
        self.assertAlmostEqual(z, x, delta=1e-9 * max(1.0, abs(x)))
        self.assertLessEqual(var, min(v1, v2))

    def test_non_positive_variance_rejected(self):
        with self.assertRaises(ParameterError):
            combine_estimates(1.0, 0.0, 2.0, 1.0)


class TestTreePostProcess(unittest.TestCase):
    """两遍后处理"""

    def test_three_node_tree(self):
        noisy = NoisyTree(star(3), np.array([10.0, 4.0, 4.0]), np.ones(3))
        est = tree_post_process(noisy)
        np.testing.assert_allclose(est.xhat, [28 / 3, 14 / 3, 14 / 3], rtol=0, atol=1e-12)
        self.assertAlmostEqual(est.varhat[0], 2 / 3, places=12)

    def test_single_node(self):
        noisy = NoisyTree(TreeTopology([-1]), np.array([7.5]), np.array([2.0]))
        est = tree_post_process(noisy)
        self.assertEqual(est.xhat.tolist(), [7.5])
        self.assertEqual(est.varhat.tolist(), [2.0])

    def test_undefined_intermediates_are_nan(self):
        est = tree_post_process(NoisyTree(star(3), np.array([10.0, 4.0, 4.0]), np.ones(3)))
        self.assertTrue(np.isnan(est.z_up[1:]).all())
        self.assertTrue(np.isnan(est.z_down[0]))
        self.assertFalse(np.isnan(est.z_up[0]))
        self.assertFalse(np.isnan(est.z_down[1:]).any())

    def test_three_node_matches_oracle(self):
        noisy = NoisyTree(star(3), np.array([10.0, 4.0, 4.0]), np.ones(3))
        est = tree_post_process(noisy)
        oracle = ols_oracle(noisy)
        np.testing.assert_allclose(est.xhat, oracle.xhat, rtol=0, atol=1e-10)
        np.testing.assert_allclose(est.varhat, oracle.varhat, rtol=0, atol=1e-10)

    def test_chain_matches_oracle(self):
        noisy = NoisyTree(chain(3), np.array([3.0, 2.0, 1.0]), np.ones(3))
        est = tree_post_process(noisy)
        oracle = ols_oracle(noisy)
        np.testing.assert_allclose(est.xhat, oracle.xhat, rtol=0, atol=1e-10)
        np.testing.assert_allclose(est.xhat, [2.0, 2.0, 2.0], rtol=0, atol=1e-12)
        np.testing.assert_allclose(est.varhat, [1 / 3] * 3, rtol=0, atol=1e-12)

    def test_random_trees_match_oracle(self):
        """500 棵随机树上与稠密加权最小二乘一致（1e-8），并在 10 秒内完成"""
        rng = make_rng(20240601)
        start = time.perf_counter()
        worst_x = worst_v = 0.0
        for _ in range(500):
            noisy = random_noisy(rng)
            est = tree_post_process(noisy)
            oracle = ols_oracle(noisy)
            worst_x = max(worst_x, float(np.max(np.abs(est.xhat - oracle.xhat))))
            worst_v = max(worst_v, float(np.max(np.abs(est.varhat - oracle.varhat))))
        self.assertLess(worst_x, 1e-8)
        self.assertLess(worst_v, 1e-8)
        self.assertLess(time.perf_counter() - start, 10.0)

    def assert_tree_properties(self, noisy: NoisyTree):
        """一致性、按权重的根到叶和保持、方差不增"""
        est = tree_post_process(noisy)
        topo = noisy.topology
        sums = topo.child_sums(est.xhat)
        magnitude = topo.child_sums(np.abs(est.xhat))
        for v in np.flatnonzero(~topo.is_leaf):
            self.assertLessEqual(abs(est.xhat[v] - sums[v]), 1e-9 * max(1.0, magnitude[v]))
        for leaf in topo.leaves:
            path = topo.ancestors(int(leaf))
            before = np.sum(noisy.x[path] / noisy.var[path])
            after = np.sum(est.xhat[path] / noisy.var[path])
            scale = np.sum(np.abs(noisy.x[path]) / noisy.var[path])
            self.assertLessEqual(abs(before - after), 1e-9 * max(1.0, scale))
        self.assertTrue(np.all(est.varhat > 0))
        self.assertTrue(np.all(est.varhat <= noisy.var * (1 + 1e-12)))

    def test_properties_on_random_trees(self):
        rng = make_rng(7)
        for _ in range(500):
            self.assert_tree_properties(random_noisy(rng))

    def test_properties_on_degenerate_shapes(self):
        rng = make_rng(8)
        for topology in (TreeTopology([-1]), chain(2), chain(12), star(2), star(30)):
            n = topology.num_nodes
            noisy = NoisyTree(topology, rng.normal(0, 5, size=n), rng.uniform(0.1, 10.0, size=n))
            self.assert_tree_properties(noisy)

    def test_batch_matches_single(self):
        rng = make_rng(3)
        noisy = random_noisy(rng)
        batch_x = np.stack([noisy.x, noisy.x * 2 + 1, -noisy.x], axis=1)
        batch = post_process_batch(noisy.topology, batch_x, noisy.var)
        for t in range(3):
            single = post_process_batch(noisy.topology, batch_x[:, t], noisy.var)
            np.testing.assert_allclose(batch.xhat[:, t], single.xhat, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(batch.varhat, single.varhat, rtol=1e-12)
        self.assertEqual(batch.num_trials, 3)

    def test_posterior_variances_match(self):
        rng = make_rng(4)
        for _ in range(20):
            noisy = random_noisy(rng)
            np.testing.assert_allclose(
                posterior_variances(noisy.topology, noisy.var), tree_post_process(noisy).varhat, rtol=1e-12)

    def test_non_positive_variance_rejected(self):
        with self.assertRaises(ParameterError):
            post_process_batch(star(3), np.zeros(3), np.array([1.0, 0.0, 1.0]))
        with self.assertRaises(ParameterError):
            posterior_variances(star(3), np.array([1.0, -1.0, 1.0]))


class TestVarianceCalibration(unittest.TestCase):
    """后处理估计的无偏性与方差校准"""

    def test_depth3_tree_calibration(self):
        """10^5 次抽象模式加噪：经验方差在 5% 以内，均值在 4 个标准误以内"""
        parents = [-1, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6]
        counts = np.zeros(15, dtype=np.int64)
        counts[7:] = [3, 0, 12, 5, 40, 1, 0, 9]
        topology = TreeTopology(parents)
        for depth in (2, 1, 0):
            nodes = topology.by_depth[depth]
            counts[nodes] = topology.child_sums(counts)[nodes]
        tree = HierTree(topology, tuple((str(v),) * int(topology.depth[v]) for v in range(15)), counts)

        trials = 100_000
        start = time.perf_counter()
        noisy = noise_tree_abstract(tree, equal_split(2.0, 4), make_rng(99), trials=trials)
        est = post_process_batch(topology, noisy.x, noisy.var)
        for v in range(15):
            empirical = est.xhat[v].var()
            self.assertLess(abs(empirical / est.varhat[v] - 1.0), 0.05)
            standard_error = np.sqrt(est.varhat[v] / trials)
            self.assertLess(abs(est.xhat[v].mean() - counts[v]), 4 * standard_error)
        self.assertLess(time.perf_counter() - start, 60.0)


if __name__ == '__main__':
    unittest.main()
