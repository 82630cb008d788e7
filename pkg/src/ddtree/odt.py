"""Ordinary (CART-style) decision trees stored as flat arrays.

The same representation backs the predictive subtrees of a distillation tree
and the members of the built-in random forest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ddtree.criteria import SplitCriterion
from ddtree.domain import Region, split_region
from ddtree.errors import UninformativeSplit
from ddtree.stump import best_split


@numba.njit(cache=True, nogil=True)
def _apply(X, feature, threshold, categorical, left, right, root):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        k = root
        while feature[k] >= 0:
            v = X[i, feature[k]]
            if categorical[k]:
                go_left = v == threshold[k]
            else:
                go_left = v < threshold[k]
            k = left[k] if go_left else right[k]
        out[i] = k
    return out


@numba.njit(cache=True, nogil=True)
def _forest_leaves(X, feature, threshold, categorical, child, root, depth, out):
    # fixed-depth, branch-free descent: right child sits at child + 1, leaves loop on themselves
    if categorical.any():
        for i in range(X.shape[0]):
            k = root
            for _ in range(depth):
                v = X[i, feature[k]]
                c = categorical[k]
                k = child[k] + (c * (v != threshold[k]) + (1 - c) * (v >= threshold[k]))
            out[i] = k
    else:
        for i in range(X.shape[0]):
            k = root
            for _ in range(depth):
                k = child[k] + (X[i, feature[k]] >= threshold[k])
            out[i] = k


@numba.njit(cache=True, nogil=True)
def _forest_mean(X, feature, threshold, categorical, child, value, roots, depths):
    n = X.shape[0]
    out = np.zeros(n)
    leaf = np.empty(n, dtype=np.int64)
    for t in range(roots.shape[0]):
        _forest_leaves(X, feature, threshold, categorical, child, roots[t], depths[t], leaf)
        for i in range(n):
            out[i] += value[leaf[i]]
    return out / roots.shape[0]


@numba.njit(cache=True, nogil=True)
def _forest_vote(X, feature, threshold, categorical, child, value, roots, depths, n_classes):
    n = X.shape[0]
    votes = np.zeros((n, n_classes), dtype=np.int64)
    leaf = np.empty(n, dtype=np.int64)
    for t in range(roots.shape[0]):
        _forest_leaves(X, feature, threshold, categorical, child, roots[t], depths[t], leaf)
        for i in range(n):
            votes[i, int(value[leaf[i]])] += 1
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = np.argmax(votes[i])
    return out


@dataclass
class ArrayTree:
    """Binary tree in parallel arrays; node 0 is the root, ``feature == -1`` marks a leaf.

    ``value`` holds the leaf mean (regression) or majority class code
    (classification). ``counts`` holds per-node class counts for
    classification trees and is ``None`` otherwise.
    """

    feature: np.ndarray
    threshold: np.ndarray
    categorical: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    impurity: np.ndarray
    counts: np.ndarray | None = None
    max_depth: int | None = None
    min_leaf: int = 1

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def is_classification(self) -> bool:
        return self.counts is not None

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.ascontiguousarray(X, dtype=float)
        return _apply(X, self.feature, self.threshold, self.categorical, self.left, self.right, 0)

    def predict(self, X: np.ndarray) -> np.ndarray:
        v = self.value[self.apply(X)]
        return v.astype(np.int64) if self.is_classification else v

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for k in range(self.n_nodes):
            if self.feature[k] >= 0:
                depth[self.left[k]] = depth[self.right[k]] = depth[k] + 1
        return int(depth.max())

    def weighted_decrease(self) -> np.ndarray:
        """Per-node ``n_node * impurity - sum(n_child * impurity_child)`` on the training rows."""
        out = np.zeros(self.n_nodes)
        internal = self.feature >= 0
        k = np.nonzero(internal)[0]
        l, r = self.left[k], self.right[k]
        out[k] = (
            self.n_samples[k] * self.impurity[k]
            - self.n_samples[l] * self.impurity[l]
            - self.n_samples[r] * self.impurity[r]
        )
        return out

    def to_dict(self) -> dict:
        d = {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "categorical": self.categorical.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "impurity": self.impurity.tolist(),
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
        }
        if self.counts is not None:
            d["counts"] = self.counts.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArrayTree":
        counts = d.get("counts")
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=float),
            np.array(d["categorical"], dtype=bool),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["value"], dtype=float),
            np.array(d["n_samples"], dtype=np.int64),
            np.array(d["impurity"], dtype=float),
            None if counts is None else np.array(counts, dtype=np.int64).reshape(len(d["feature"]), -1),
            d.get("max_depth"),
            d.get("min_leaf", 1),
        )


def node_impurity(y: np.ndarray, criterion: SplitCriterion, n_classes: int | None = None) -> float:
    """Variance for regression, the criterion's entropy for classification."""
    if len(y) == 0:
        return 0.0
    if criterion.is_regression:
        return float(np.var(y))
    return criterion.impurity(np.bincount(y, minlength=n_classes or int(y.max()) + 1))


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    region: Region,
    criterion: SplitCriterion,
    rng: np.random.Generator | None = None,
    *,
    max_depth: int | None = None,
    min_leaf: int = 1,
    n_classes: int | None = None,
    max_features: int | None = None,
    cp: float = 0.0,
) -> ArrayTree:
    """Recursive greedy induction: one split search per node, no repeats.

    Growth stops at ``max_depth``, when a node has fewer than ``2 * min_leaf``
    rows, when it is pure, or when no split improves it. With ``cp > 0`` a
    split is also rejected if its impurity decrease, weighted by the node's
    share of the rows, is below ``cp`` times the root impurity.
    ``max_features`` draws that many covariates per node (random forests).
    """
    X = np.asarray(X, dtype=float)
    classification = not criterion.is_regression
    if classification:
        y = np.asarray(y, dtype=np.int64)
        C = n_classes if n_classes is not None else int(y.max()) + 1
    else:
        y = np.asarray(y, dtype=float)
        C = None
    n_total = len(y)
    p = X.shape[1]
    feature, threshold, categorical, left, right = [], [], [], [], []
    value, n_samples, impurity, counts = [], [], [], []
    cat_mask = region.schema.categorical_mask
    root_imp = node_impurity(y, criterion, C)

    def new_node(idx):
        yy = y[idx]
        k = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        categorical.append(False)
        left.append(-1)
        right.append(-1)
        n_samples.append(len(idx))
        impurity.append(node_impurity(yy, criterion, C))
        if classification:
            c = np.bincount(yy, minlength=C)
            counts.append(c)
            value.append(float(np.argmax(c)))
        else:
            value.append(float(yy.mean()) if len(yy) else 0.0)
        return k

    # explicit stack keeps node ids in depth-first preorder
    root = new_node(np.arange(n_total))
    stack = [(root, np.arange(n_total), region, 0)]
    while stack:
        k, idx, reg, depth = stack.pop()
        if (max_depth is not None and depth >= max_depth) or len(idx) < 2 * min_leaf:
            continue
        feats = None
        if max_features is not None and max_features < p:
            feats = np.sort(rng.choice(p, size=max_features, replace=False))
        try:
            cand = best_split(
                X[idx], y[idx], reg, criterion, rng, min_samples_leaf=min_leaf, features=feats, n_classes=C
            )
        except UninformativeSplit:
            continue
        go_left = cand.split.goes_left(X[idx])
        li, ri = idx[go_left], idx[~go_left]
        if cp > 0:
            nl, nr = len(li), len(ri)
            dec = impurity[k] - (nl * node_impurity(y[li], criterion, C) + nr * node_impurity(y[ri], criterion, C)) / len(idx)
            if len(idx) / n_total * dec < cp * root_imp:
                continue
        s = cand.split
        feature[k] = s.covariate
        categorical[k] = bool(cat_mask[s.covariate])
        threshold[k] = float(s.level) if s.is_categorical else s.threshold
        lreg, rreg = split_region(reg, s)
        lk = new_node(li)
        rk = new_node(ri)
        left[k], right[k] = lk, rk
        stack.append((rk, ri, rreg, depth + 1))
        stack.append((lk, li, lreg, depth + 1))
    return ArrayTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(categorical, dtype=bool),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=float),
        np.array(n_samples, dtype=np.int64),
        np.array(impurity, dtype=float),
        np.array(counts, dtype=np.int64).reshape(-1, C) if classification else None,
        max_depth,
        min_leaf,
    )


@dataclass
class ForestArrays:
    """Trees re-laid breadth-first and concatenated for the forest kernels."""

    feature: np.ndarray
    threshold: np.ndarray
    categorical: np.ndarray
    child: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    depths: np.ndarray

    def mean(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        return _forest_mean(X, self.feature, self.threshold, self.categorical, self.child, self.value, self.roots, self.depths)

    def vote(self, X: np.ndarray, n_classes: int) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        return _forest_vote(
            X, self.feature, self.threshold, self.categorical, self.child, self.value, self.roots, self.depths, n_classes
        )


def stack_trees(trees: list[ArrayTree]) -> ForestArrays:
    """Concatenate trees, each in breadth-first order so a right child follows its left sibling."""
    feature, threshold, categorical, child, value, roots, depths = [], [], [], [], [], [], []
    offset = 0
    for tree in trees:
        order, pos = [0], {0: 0}
        q = 0
        while q < len(order):
            k = order[q]
            q += 1
            if tree.feature[k] >= 0:
                for c in (tree.left[k], tree.right[k]):
                    pos[int(c)] = len(order)
                    order.append(int(c))
        for k in order:
            if tree.feature[k] >= 0:
                feature.append(tree.feature[k])
                threshold.append(tree.threshold[k])
                categorical.append(int(tree.categorical[k]))
                child.append(offset + pos[int(tree.left[k])])
            else:
                feature.append(0)
                threshold.append(np.inf)
                categorical.append(0)
                child.append(offset + pos[k])
            value.append(tree.value[k])
        roots.append(offset)
        depths.append(tree.depth())
        offset += len(order)
    return ForestArrays(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(categorical, dtype=np.int64),
        np.array(child, dtype=np.int64),
        np.array(value, dtype=float),
        np.array(roots, dtype=np.int64),
        np.array(depths, dtype=np.int64),
    )
