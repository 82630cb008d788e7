"""Distillation tree induction.

The tree grows one depth level at a time. Every frontier node first gets a
pilot CART subtree fit on fresh pseudo data in its region; the predictive
index that subtree would earn decides whether the node stops (and keeps the
pilot as its predictive subtree) or is split. Splits come from the Monte-Carlo
stability measurement, so they are stable under resampling. Node ids follow
the heap scheme: root 1, children ``2i`` and ``2i + 1``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ddtree.criteria import SSE, SplitCriterion, parse_criterion
from ddtree.domain import OBSERVED, PSEUDO, CovariateSchema, Dataset, Region, sample_region, split_region
from ddtree.errors import ConfigError, DataError, UninformativeSplit
from ddtree.explanation import INTERPRETABLE, LEAF, PREDICTIVE, ExplanationSummary, compute_indices
from ddtree.odt import ArrayTree, grow_tree, node_impurity
from ddtree.stability import (
    STAGE_EVAL,
    STAGE_ODT,
    STAGE_PILOT,
    OscillationConfig,
    StabilityReport,
    default_workers,
    measure_split_stability,
    node_rng,
)
from ddtree.stump import SplitCandidate

log = logging.getLogger(__name__)

BREADTH_FIRST = "breadth_first"
PATH = "path"
PARALLEL = "parallel"


@dataclass(frozen=True)
class Strategy:
    """Sampling order. ``target`` is a string of ``L``/``R`` moves for the path strategy."""

    kind: str = BREADTH_FIRST
    target: str = ""

    def __post_init__(self):
        if self.kind not in (BREADTH_FIRST, PATH, PARALLEL):
            raise ConfigError(f"unknown strategy {self.kind!r}")
        bad = set(self.target.upper()) - {"L", "R"}
        if bad:
            raise ConfigError(f"path target may contain only L and R, got {sorted(bad)}")
        object.__setattr__(self, "target", self.target.upper())

    @property
    def target_id(self) -> int:
        k = 1
        for move in self.target:
            k = 2 * k + (move == "R")
        return k

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == PATH:
            d["target"] = self.target
        return d


@dataclass(frozen=True)
class StoppingConfig:
    max_interpretable_depth: int | None = 4
    max_interpretable_nodes: int | None = None
    pxi_threshold: float = 0.10
    min_region_observed: int = 0

    def __post_init__(self):
        if not 0 < self.pxi_threshold <= 1:
            raise ConfigError("pxi_threshold must lie in (0, 1]")


@dataclass(frozen=True)
class OdtConfig:
    max_depth: int | None = 6
    min_leaf: int = 5
    pseudo_sample_size: int = 10_000

    def __post_init__(self):
        if self.min_leaf < 1 or self.pseudo_sample_size < 1:
            raise ConfigError("odt min_leaf and pseudo_sample_size must be positive")


@dataclass(frozen=True)
class InductionConfig:
    criterion: SplitCriterion = SplitCriterion(SSE)
    repeats: int = 100
    sample_size: int | None = None
    stopping: StoppingConfig = StoppingConfig()
    odt: OdtConfig = OdtConfig()
    strategy: Strategy = Strategy()
    seed: int = 0
    oscillation: OscillationConfig = OscillationConfig()
    escalate: bool = True
    weight_source: str = OBSERVED
    impurity_source: str = PSEUDO
    eval_sample_size: int = 10_000

    def __post_init__(self):
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.sample_size is not None and self.sample_size < 2:
            raise ConfigError("sample_size must be >= 2")
        for s in (self.weight_source, self.impurity_source):
            if s not in (OBSERVED, PSEUDO):
                raise ConfigError(f"unknown source {s!r}")

    def to_dict(self) -> dict:
        return {
            "criterion": str(self.criterion),
            "weighted_children": self.criterion.weighted_children,
            "repeats": self.repeats,
            "sample_size": self.sample_size,
            "stopping": dict(self.stopping.__dict__),
            "odt": dict(self.odt.__dict__),
            "strategy": self.strategy.to_dict(),
            "seed": self.seed,
            "oscillation": self.oscillation.to_dict(),
            "escalate": self.escalate,
            "weight_source": self.weight_source,
            "impurity_source": self.impurity_source,
            "eval_sample_size": self.eval_sample_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InductionConfig":
        known = {
            "criterion", "weighted_children", "repeats", "sample_size", "stopping", "odt", "strategy",
            "seed", "oscillation", "escalate", "weight_source", "impurity_source", "eval_sample_size",
        }  # fmt: skip
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown induction keys: {sorted(unknown)}")
        try:
            kw = {}
            if "criterion" in d:
                kw["criterion"] = parse_criterion(d["criterion"], d.get("weighted_children", True))
            for key in ("repeats", "sample_size", "seed", "escalate", "weight_source", "impurity_source"):
                if key in d:
                    kw[key] = d[key]
            if "eval_sample_size" in d:
                kw["eval_sample_size"] = int(d["eval_sample_size"])
            if "stopping" in d:
                kw["stopping"] = StoppingConfig(**d["stopping"])
            if "odt" in d:
                kw["odt"] = OdtConfig(**d["odt"])
            if "strategy" in d:
                s = d["strategy"]
                kw["strategy"] = Strategy(s) if isinstance(s, str) else Strategy(**s)
            if "oscillation" in d:
                kw["oscillation"] = OscillationConfig(**d["oscillation"])
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(f"bad induction config: {exc}") from None


@dataclass
class DdtNode:
    id: int
    region: Region
    kind: str = LEAF
    value: float | int = 0.0
    split: SplitCandidate | None = None
    stability: StabilityReport | None = None
    subtree: ArrayTree | None = None
    observed_count: int = 0
    stats: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def depth(self) -> int:
        return self.id.bit_length() - 1

    @property
    def children(self) -> tuple[int, int]:
        return (2 * self.id, 2 * self.id + 1)


@dataclass
class DdtTree:
    schema: CovariateSchema
    nodes: dict
    config: InductionConfig
    teacher: str = ""
    summary: ExplanationSummary | None = None
    notes: list = field(default_factory=list)

    @property
    def interpretable(self) -> list[int]:
        return [k for k in sorted(self.nodes) if self.nodes[k].kind == INTERPRETABLE]

    @property
    def terminal(self) -> list[int]:
        return [k for k in sorted(self.nodes) if self.nodes[k].kind != INTERPRETABLE]

    def route(self, X: np.ndarray) -> np.ndarray:
        """Terminal node id reached by each row."""
        X = np.asarray(X, dtype=float)
        at = np.ones(len(X), dtype=np.int64)
        for k in sorted(self.nodes):
            node = self.nodes[k]
            if node.kind != INTERPRETABLE:
                continue
            here = at == k
            if here.any():
                left = node.split.split.goes_left(X[here])
                at[here] = np.where(left, 2 * k, 2 * k + 1)
        return at

    def partition_values(self, X: np.ndarray) -> np.ndarray:
        """Prediction of the interpretable part alone: each terminal node's pseudo mean (or majority)."""
        ids = self.route(X)
        return np.array([self.nodes[k].value for k in ids])


def schedule(strategy: Strategy, nodes) -> list[list[int]]:
    """Order node ids into batches that may be processed together.

    Breadth-first yields whole depth levels. The path strategy yields only the
    nodes on the root-to-target path, one per batch. The parallel strategy
    packs nodes, in breadth-first order, into batches with no node an
    ancestor of another (their sampling paths do not intersect).
    """
    ids = sorted(set(int(k) for k in nodes), key=lambda k: (k.bit_length(), k))
    if strategy.kind == BREADTH_FIRST:
        levels: dict[int, list[int]] = {}
        for k in ids:
            levels.setdefault(k.bit_length(), []).append(k)
        return [levels[d] for d in sorted(levels)]
    if strategy.kind == PATH:
        path, k = [], 1
        path.append(k)
        for move in strategy.target:
            k = 2 * k + (move == "R")
            path.append(k)
        return [[k] for k in path if k in set(ids)]
    batches: list[list[int]] = []
    for k in ids:
        if batches and not any(_related(k, m) for m in batches[-1]):
            batches[-1].append(k)
        else:
            batches.append([k])
    return batches


def _related(a: int, b: int) -> bool:
    lo, hi = min(a, b), max(a, b)
    return hi >> (hi.bit_length() - lo.bit_length()) == lo


def induce_odt(data: Dataset, region: Region, criterion: SplitCriterion, odt: OdtConfig = OdtConfig(), rng=None) -> ArrayTree:
    """Ordinary greedy CART fit to ``data`` inside ``region``."""
    if len(data) == 0:
        raise DataError("cannot fit a tree to empty data")
    C = len(data.schema.classes) if data.schema.is_classification else None
    return grow_tree(data.X, data.y, region, criterion, rng, max_depth=odt.max_depth, min_leaf=odt.min_leaf, n_classes=C)


def _majority_or_mean(y: np.ndarray, classification: bool):
    if classification:
        return int(np.argmax(np.bincount(y)))
    return float(y.mean())


def _subtree_rows(tree: ArrayTree, X: np.ndarray) -> list:
    rows = [None] * tree.n_nodes
    rows[0] = np.arange(len(X))
    for k in range(tree.n_nodes):
        if tree.feature[k] < 0 or rows[k] is None:
            continue
        idx = rows[k]
        col = X[idx, tree.feature[k]]
        left = col == tree.threshold[k] if tree.categorical[k] else col < tree.threshold[k]
        rows[tree.left[k]], rows[tree.right[k]] = idx[left], idx[~left]
    return rows


def _node_stats(nodes: dict, X: np.ndarray, y: np.ndarray, criterion: SplitCriterion, C) -> dict:
    """Per-node row count, impurity, impurity decrease and per-covariate gains on one data source."""
    p = X.shape[1]
    masks, out = {}, {}
    for k in sorted(nodes):
        parent = masks.get(k >> 1)
        base = np.arange(len(X)) if parent is None else parent
        inside = nodes[k].region.mask(X[base]) if len(base) else np.zeros(0, dtype=bool)
        masks[k] = base[inside]
    imp = {}
    for k in sorted(nodes):
        yy = y[masks[k]]
        imp[k] = node_impurity(yy, criterion, C) if len(yy) else None
    for k in sorted(nodes):
        node, n = nodes[k], len(masks[k])
        stats = {"n": int(n), "impurity": imp[k], "delta": None, "var_gain": [0.0] * p}
        if n and node.kind == INTERPRETABLE:
            l, r = node.children
            nl, nr = len(masks[l]), len(masks[r])
            dec = imp[k] - (nl * (imp[l] or 0.0) + nr * (imp[r] or 0.0)) / n
            stats["delta"] = float(dec)
            stats["var_gain"][node.split.covariate_index] = float(n * dec)
        elif n and node.kind == PREDICTIVE:
            Xs, ys = X[masks[k]], y[masks[k]]
            rows = _subtree_rows(node.subtree, Xs)
            sub_imp = [node_impurity(ys[r], criterion, C) if r is not None and len(r) else 0.0 for r in rows]
            gains = stats["var_gain"]
            for t in range(node.subtree.n_nodes):
                f = node.subtree.feature[t]
                if f < 0 or rows[t] is None or not len(rows[t]):
                    continue
                lt, rt = node.subtree.left[t], node.subtree.right[t]
                g = len(rows[t]) * sub_imp[t] - len(rows[lt]) * sub_imp[lt] - len(rows[rt]) * sub_imp[rt]
                gains[f] += float(g)
            leaves = [t for t in range(node.subtree.n_nodes) if node.subtree.feature[t] < 0 and rows[t] is not None]
            stats["delta"] = float(imp[k] - sum(len(rows[t]) * sub_imp[t] for t in leaves) / n)
        elif n:
            stats["delta"] = 0.0
        out[k] = stats
    return out


def annotate(tree: DdtTree, eval_data: Dataset, observed: Dataset) -> None:
    """Fill every node's per-source statistics and observed count, then the explanation summary."""
    crit = tree.config.criterion
    C = len(tree.schema.classes) if tree.schema.is_classification else None
    pseudo = _node_stats(tree.nodes, eval_data.X, eval_data.y, crit, C)
    obs = _node_stats(tree.nodes, observed.X, observed.y, crit, C)
    for k, node in tree.nodes.items():
        node.stats = {PSEUDO: pseudo[k], OBSERVED: obs[k]}
        node.observed_count = obs[k]["n"]
    tree.summary = compute_indices(tree, tree.config.weight_source, tree.config.impurity_source)


def _pilot(teacher, node: DdtNode, config: InductionConfig, classification: bool, C):
    rng = node_rng(config.seed, node.id, STAGE_PILOT)
    X = sample_region(node.region, config.odt.pseudo_sample_size, rng)
    y = teacher.predict_batch(X)
    sub = grow_tree(
        X,
        y,
        node.region,
        config.criterion,
        node_rng(config.seed, node.id, STAGE_ODT),
        max_depth=config.odt.max_depth,
        min_leaf=config.odt.min_leaf,
        n_classes=C,
    )
    return sub, _majority_or_mean(y, classification)


def _check_inputs(teacher, schema: CovariateSchema, observed: Dataset | None, config: InductionConfig):
    if teacher.schema.names != schema.names or teacher.schema.is_classification != schema.is_classification:
        raise DataError("teacher schema does not match the covariate schema")
    if config.criterion.is_regression == schema.is_classification:
        raise ConfigError(f"criterion {config.criterion} does not match the response kind")
    if observed is not None and observed.schema.names != schema.names:
        raise DataError("observed data schema does not match the covariate schema")


def induce_ddt(
    teacher,
    schema: CovariateSchema,
    observed: Dataset | None,
    config: InductionConfig = InductionConfig(),
    *,
    workers: int | None = None,
) -> DdtTree:
    """Grow a hybrid distillation tree that approximates ``teacher``.

    A frontier node stops and becomes predictive when the predictive index of
    its pilot subtree is at most ``pxi_threshold``, when the depth or node
    limits bind, when it is off the target path, when its stability report is
    uninformative, or when a child would hold fewer than
    ``min_region_observed`` observed rows. A node whose pilot subtree finds no
    split at all becomes a leaf. ``workers`` changes speed only, never the tree.
    """
    _check_inputs(teacher, schema, observed, config)
    workers = default_workers() if workers is None else max(1, int(workers))
    classification = schema.is_classification
    C = len(schema.classes) if classification else None
    notes = []
    if observed is None or len(observed) == 0:
        notes.append("no observed data; observed counts are zero")
        observed = Dataset(schema, np.empty((0, schema.p)), np.empty(0))
    full = schema.full_region()
    eval_X = sample_region(full, config.eval_sample_size, node_rng(config.seed, 0, STAGE_EVAL))
    eval_data = Dataset(schema, eval_X, teacher.predict_batch(eval_X), provenance=PSEUDO)

    tree = DdtTree(schema, {1: DdtNode(1, full)}, config, teacher.descriptor, notes=notes)
    stop = config.stopping
    target = config.strategy.target_id if config.strategy.kind == PATH else None
    frontier = [1]
    n_interp = 0
    pool = ThreadPoolExecutor(workers) if workers > 1 else None

    def pmap(fn, items):
        return list(pool.map(fn, items)) if pool and len(items) > 1 else [fn(x) for x in items]

    try:
        while frontier:
            order = [k for batch in schedule(Strategy(BREADTH_FIRST), frontier) for k in batch]
            pilots = pmap(lambda k: _pilot(teacher, tree.nodes[k], config, classification, C), order)
            for k, (sub, value) in zip(order, pilots):
                node = tree.nodes[k]
                node.value = value
                node.subtree = sub
                node.kind = PREDICTIVE if sub.n_nodes > 1 else LEAF
                if node.kind == LEAF:
                    node.subtree = None
            annotate(tree, eval_data, observed)
            pxi = tree.summary.pxi
            candidates = []
            for k in order:
                node = tree.nodes[k]
                if node.kind == LEAF:
                    continue
                if target is not None and not (k == target or _related(k, target) and k < target):
                    node.flags.append("off target path")
                    continue
                if stop.max_interpretable_depth is not None and node.depth >= stop.max_interpretable_depth:
                    continue
                if stop.max_interpretable_nodes is not None and n_interp + len(candidates) >= stop.max_interpretable_nodes:
                    continue
                if target is not None and k == target:
                    continue
                # an explicit path target overrides the predictive-index rule
                if target is None and pxi.get(k, 0.0) <= stop.pxi_threshold:
                    continue
                candidates.append(k)

            def measure(k):
                try:
                    return measure_split_stability(
                        teacher,
                        tree.nodes[k].region,
                        config.criterion,
                        config.repeats,
                        config.sample_size,
                        config.seed,
                        k,
                        workers=1 if pool else workers,
                        oscillation=config.oscillation,
                        escalate=config.escalate,
                    )
                except UninformativeSplit:
                    return None

            reports = pmap(measure, candidates)
            frontier = []
            for k, report in zip(candidates, reports):
                node = tree.nodes[k]
                if report is None:
                    node.flags.append("uninformative stability report")
                    continue
                left, right = split_region(node.region, report.chosen)
                if stop.min_region_observed > 0:
                    counts = [int(r.mask(observed.X).sum()) if len(observed) else 0 for r in (left, right)]
                    if min(counts) < stop.min_region_observed:
                        node.flags.append(f"split suppressed: child observed counts {counts}")
                        continue
                node.kind = INTERPRETABLE
                node.split = report.chosen
                node.stability = report
                node.subtree = None
                n_interp += 1
                l, r = node.children
                tree.nodes[l] = DdtNode(l, left)
                tree.nodes[r] = DdtNode(r, right)
                frontier += [l, r]
            tree.nodes = dict(sorted(tree.nodes.items()))
    finally:
        if pool:
            pool.shutdown()
    annotate(tree, eval_data, observed)
    return tree


def predict(tree: DdtTree, rows) -> np.ndarray:
    """Route rows through the interpretable splits and then the predictive subtrees."""
    X = np.asarray(rows, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != tree.schema.p:
        raise DataError(f"rows have {X.shape[1]} columns, tree expects {tree.schema.p}")
    inside = tree.schema.full_region().mask(X)
    if not inside.all():
        bad = int(np.nonzero(~inside)[0][0])
        raise DataError(f"row {bad} lies outside the schema domain")
    ids = tree.route(X)
    out = np.empty(len(X), dtype=np.int64 if tree.schema.is_classification else float)
    for k in np.unique(ids):
        node = tree.nodes[int(k)]
        sel = ids == k
        out[sel] = node.subtree.predict(X[sel]) if node.subtree is not None else node.value
    return out


def with_config(config: InductionConfig, **changes) -> InductionConfig:
    """Copy of ``config`` with top-level fields or nested ``stopping__x``/``odt__x`` fields replaced."""
    top, nested = {}, {}
    for key, v in changes.items():
        if "__" in key:
            group, name = key.split("__", 1)
            nested.setdefault(group, {})[name] = v
        else:
            top[key] = v
    for group, vals in nested.items():
        top[group] = replace(getattr(config, group), **vals)
    return replace(config, **top)
