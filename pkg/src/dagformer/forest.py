"""Honest regression forest.

Each tree draws a without-replacement subsample and splits it in half: one
half chooses the split structure (variance-reduction CART splits), the other
supplies the leaf means. Split-selection rows therefore never contribute to
leaf estimates, which is what makes the forest honest.
"""

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import DataError


@dataclass
class ForestConfig:
    n_trees: int = 200
    max_depth: int = 8
    min_leaf: int = 5
    subsample_fraction: float = 0.5
    seed: int = 0


class TreeNode:
    __slots__ = ("feature", "threshold", "left", "right", "value", "estimate_rows")

    def __init__(self):
        self.feature = None
        self.threshold = None
        self.left = None
        self.right = None
        self.value = None
        self.estimate_rows = None

    @property
    def is_leaf(self):
        return self.feature is None


def _best_split(x: np.ndarray, y: np.ndarray, rows: np.ndarray, min_leaf: int):
    """(feature, threshold, left_rows, right_rows) minimizing child SSE, or None."""
    m = rows.size
    best_sse = np.inf
    best = None
    for j in range(x.shape[1]):
        xs = x[rows, j]
        order = np.argsort(xs, kind="stable")
        xs_sorted = xs[order]
        ys_sorted = y[rows][order]
        csum = np.cumsum(ys_sorted)
        csq = np.cumsum(ys_sorted * ys_sorted)
        total_sum, total_sq = csum[-1], csq[-1]
        k = np.arange(1, m)
        valid = (xs_sorted[:-1] != xs_sorted[1:]) & (k >= min_leaf) & (m - k >= min_leaf)
        if not valid.any():
            continue
        left_sse = csq[:-1] - csum[:-1] ** 2 / k
        right_n = m - k
        right_sum = total_sum - csum[:-1]
        right_sse = (total_sq - csq[:-1]) - right_sum ** 2 / right_n
        sse = np.where(valid, left_sse + right_sse, np.inf)
        i = int(np.argmin(sse))
        if sse[i] < best_sse - 1e-12:
            best_sse = sse[i]
            threshold = 0.5 * (xs_sorted[i] + xs_sorted[i + 1])
            best = (j, threshold, rows[order[:i + 1]], rows[order[i + 1:]])
    return best


class HonestTree:
    def __init__(self, max_depth: int, min_leaf: int):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.root = None
        self.structure_rows = None
        self.estimate_rows = None

    def fit(self, x: np.ndarray, y: np.ndarray, structure: np.ndarray, estimate: np.ndarray):
        self.structure_rows = np.asarray(structure)
        self.estimate_rows = np.asarray(estimate)
        self.root = self._grow(x, y, self.structure_rows, depth=0)
        fallback = float(y[self.estimate_rows].mean())
        self._attach_estimates(self.root, x, y, self.estimate_rows, fallback)
        return self

    def _grow(self, x, y, rows, depth):
        node = TreeNode()
        if depth >= self.max_depth or rows.size < 2 * self.min_leaf or np.ptp(y[rows]) == 0.0:
            return node
        split = _best_split(x, y, rows, self.min_leaf)
        if split is None:
            return node
        node.feature, node.threshold, left_rows, right_rows = split
        node.left = self._grow(x, y, left_rows, depth + 1)
        node.right = self._grow(x, y, right_rows, depth + 1)
        return node

    def _attach_estimates(self, node, x, y, rows, inherited):
        if rows.size:
            inherited = float(y[rows].mean())
        if node.is_leaf:
            node.value = inherited
            node.estimate_rows = rows
            return
        goes_left = x[rows, node.feature] <= node.threshold
        self._attach_estimates(node.left, x, y, rows[goes_left], inherited)
        self._attach_estimates(node.right, x, y, rows[~goes_left], inherited)

    def predict(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(x.shape[0])
        idx = np.arange(x.shape[0])
        stack = [(self.root, idx)]
        while stack:
            node, rows = stack.pop()
            if not rows.size:
                continue
            if node.is_leaf:
                out[rows] = node.value
                continue
            goes_left = x[rows, node.feature] <= node.threshold
            stack.append((node.left, rows[goes_left]))
            stack.append((node.right, rows[~goes_left]))
        return out

    def leaves(self) -> list[TreeNode]:
        found = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                found.append(node)
            else:
                stack.extend([node.left, node.right])
        return found


class HonestForestRegressor:
    """Average of honest trees fit on independent subsamples."""

    def __init__(self, config: ForestConfig):
        self.config = config
        self.trees: list[HonestTree] = []

    def fit(self, x: np.ndarray, y: np.ndarray) -> "HonestForestRegressor":
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        n = y.size
        cfg = self.config
        if n < max(2, cfg.min_leaf):
            raise DataError(f"need at least {max(2, cfg.min_leaf)} rows to fit a forest, got {n}")
        self.trees = []
        for t in range(cfg.n_trees):
            g = rng.stream(cfg.seed, "tree", t)
            m = min(n, max(2, int(round(cfg.subsample_fraction * n))))
            sub = g.choice(n, size=m, replace=False)
            half = m // 2
            tree = HonestTree(cfg.max_depth, cfg.min_leaf)
            tree.fit(x, y, structure=sub[:half], estimate=sub[half:])
            self.trees.append(tree)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        total = np.zeros(x.shape[0])
        for tree in self.trees:
            total += tree.predict(x)
        return total / len(self.trees)
