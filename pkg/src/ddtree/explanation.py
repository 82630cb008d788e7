"""Explanation indices for a built distillation tree.

Each interpretable node ``i`` gets ``XI_i = (n_i/n) D_i / D``; each predictive
node ``j`` gets ``PXI_j = (n_j/n) D_j / D``, where ``D_i`` is the impurity
decrease of the node's split or subtree and ``D`` the sum of all weighted
decreases, so the indices add up to one. The node weights ``n_i/n`` and the
decreases can come from the observed data or from the pseudo evaluation
sample, independently.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ddtree.domain import OBSERVED, PSEUDO
from ddtree.errors import DataError

log = logging.getLogger(__name__)

WEAK_SUPPORT = 0.02

INTERPRETABLE = "interpretable"
PREDICTIVE = "predictive"
LEAF = "leaf"


@dataclass
class ExplanationSummary:
    weight_source: str
    impurity_source: str
    xi: dict = field(default_factory=dict)
    pxi: dict = field(default_factory=dict)
    path_xi: dict = field(default_factory=dict)
    interpretation_degree: dict = field(default_factory=dict)
    variable_importance: list = field(default_factory=list)
    observed_percent: dict = field(default_factory=dict)
    weak_support: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def total(self) -> float:
        return float(sum(self.xi.values()) + sum(self.pxi.values()))

    def to_dict(self) -> dict:
        return {
            "weight_source": self.weight_source,
            "impurity_source": self.impurity_source,
            "xi": {str(k): v for k, v in sorted(self.xi.items())},
            "pxi": {str(k): v for k, v in sorted(self.pxi.items())},
            "path_xi": {str(k): v for k, v in sorted(self.path_xi.items())},
            "interpretation_degree": {str(k): list(v) for k, v in sorted(self.interpretation_degree.items())},
            "variable_importance": list(self.variable_importance),
            "observed_percent": {str(k): v for k, v in sorted(self.observed_percent.items())},
            "weak_support": list(self.weak_support),
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExplanationSummary":
        def keyed(m):
            return {int(k): v for k, v in m.items()}

        return cls(
            d["weight_source"],
            d["impurity_source"],
            keyed(d["xi"]),
            keyed(d["pxi"]),
            keyed(d["path_xi"]),
            {int(k): tuple(v) for k, v in d["interpretation_degree"].items()},
            list(d["variable_importance"]),
            keyed(d["observed_percent"]),
            list(d["weak_support"]),
            list(d.get("notes", [])),
        )


def interpretation_degree(path_value: float, pxi_value: float) -> tuple[float, float]:
    """Split ``XI_{1,j} + PXI_j`` into its interpretable and predictive shares."""
    total = path_value + pxi_value
    if total <= 0:
        return (0.0, 0.0)
    return (path_value / total, pxi_value / total)


def is_descendant(node: int, ancestor: int) -> bool:
    node >>= 1
    while node >= ancestor:
        if node == ancestor:
            return True
        node >>= 1
    return False


def path_xi(summary: ExplanationSummary, from_node: int, to_node: int) -> float:
    """Sum of XI over the nodes from ``from_node`` down to the parent of ``to_node``."""
    if not is_descendant(to_node, from_node):
        raise ValueError(f"node {to_node} is not a descendant of node {from_node}")
    total, k = 0.0, to_node >> 1
    while True:
        if k not in summary.xi:
            raise ValueError(f"node {k} on the path {from_node}->{to_node} is not interpretable")
        total += summary.xi[k]
        if k == from_node:
            return total
        k >>= 1


def _source_stats(node, source: str) -> dict:
    return node.stats.get(source, {})


def compute_indices(tree, weight_source: str = OBSERVED, impurity_source: str = PSEUDO) -> ExplanationSummary:
    """XI/PXI, path XI, interpretation degrees, variable importance and observed support."""
    for s in (weight_source, impurity_source):
        if s not in (OBSERVED, PSEUDO):
            raise ValueError(f"unknown source {s!r}")
    summary = ExplanationSummary(weight_source, impurity_source)
    nodes = tree.nodes
    root = nodes[1]
    n_obs = root.stats.get(OBSERVED, {}).get("n", 0)
    if weight_source == OBSERVED and n_obs == 0:
        summary.notes.append("no observed rows; node weights taken from the pseudo evaluation sample")
        weight_source = PSEUDO
    if impurity_source == OBSERVED and n_obs == 0:
        raise DataError("no observed rows; set impurity_source to pseudo")
    n_w = _source_stats(root, weight_source)["n"]

    weighted = {}
    weights = {}
    for k in sorted(nodes):
        node = nodes[k]
        w = _source_stats(node, weight_source).get("n", 0) / n_w
        weights[k] = w
        if node.kind == LEAF:
            weighted[k] = 0.0
            continue
        delta = _source_stats(node, impurity_source).get("delta")
        if delta is None:
            raise DataError(
                f"node {k} holds no {impurity_source} rows so its impurity decrease is undefined; "
                "switch impurity_source to pseudo"
            )
        weighted[k] = w * delta if delta > 0 else 0.0
    total = sum(weighted.values())
    terminal = [k for k in sorted(nodes) if nodes[k].kind != INTERPRETABLE]
    for k in sorted(nodes):
        if total > 0:
            share = weighted[k] / total
        else:
            # nothing explains anything: spread by node weight over the terminal nodes
            tw = sum(weights[t] for t in terminal)
            share = (weights[k] / tw if tw > 0 else 1.0 / len(terminal)) if k in terminal else 0.0
        if nodes[k].kind == INTERPRETABLE:
            summary.xi[k] = share
        else:
            summary.pxi[k] = share
    if total <= 0:
        summary.notes.append("tree explains no impurity; indices fall back to node weight shares")
    for j in terminal:
        summary.path_xi[j] = path_xi(summary, 1, j) if j > 1 else 0.0
        summary.interpretation_degree[j] = interpretation_degree(summary.path_xi[j], summary.pxi[j])
    for k in sorted(nodes):
        if n_obs:
            pct = _source_stats(nodes[k], OBSERVED).get("n", 0) / n_obs
            summary.observed_percent[k] = pct
            if pct < WEAK_SUPPORT:
                summary.weak_support.append(k)
    summary.variable_importance = variable_importance(tree, impurity_source)
    return summary


def variable_importance(tree, source: str = PSEUDO) -> list:
    """Impurity decrease attributed to each covariate, normalised to sum to one.

    Interpretable splits and every split inside the predictive subtrees
    contribute ``n_node * decrease``, measured on ``source`` rows.
    """
    p = tree.schema.p
    acc = np.zeros(p)
    for k in sorted(tree.nodes):
        gains = tree.nodes[k].stats.get(source, {}).get("var_gain")
        if gains:
            acc += np.maximum(np.asarray(gains, dtype=float), 0.0)
    total = acc.sum()
    if total <= 0:
        log.warning("tree has no splits with positive impurity decrease; importance is all zero")
        return [0.0] * p
    return [float(v) for v in acc / total]
