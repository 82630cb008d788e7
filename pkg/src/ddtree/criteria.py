"""Splitting criteria: SSE/MSE for regression and the Tsallis entropy family.

Shannon entropy (q -> 1) and the Gini index (q = 2) are special cases of the
Tsallis entropy. Gain ratio normalises the Shannon information gain by the
split information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ddtree.errors import ConfigError

SSE = "sse"
MSE = "mse"
TSALLIS = "tsallis"
SHANNON = "shannon"
GINI = "gini"
GAIN_RATIO = "gain_ratio"

REGRESSION_KINDS = (SSE, MSE)
ENTROPY_KINDS = (TSALLIS, SHANNON, GINI, GAIN_RATIO)


@dataclass(frozen=True)
class SplitCriterion:
    kind: str
    q: float | None = None
    weighted_children: bool = True

    def __post_init__(self):
        if self.kind not in REGRESSION_KINDS + ENTROPY_KINDS:
            raise ConfigError(f"unknown criterion {self.kind!r}")
        if self.kind == TSALLIS:
            q = 2.0 if self.q is None else float(self.q)
            if q == 1.0:
                raise ConfigError("tsallis q = 1 is the Shannon entropy; use criterion 'shannon'")
            object.__setattr__(self, "q", q)
        elif self.q is not None:
            raise ConfigError(f"criterion {self.kind!r} takes no q parameter")

    @property
    def is_regression(self) -> bool:
        return self.kind in REGRESSION_KINDS

    def impurity(self, counts) -> float:
        """Node impurity used for explanation indices (entropy of the class distribution)."""
        if self.kind == TSALLIS:
            return tsallis_entropy(counts, self.q)
        if self.kind == GINI:
            return gini_index(counts)
        return shannon_entropy(counts)

    def __str__(self):
        return f"tsallis:{self.q!r}" if self.kind == TSALLIS else self.kind


def parse_criterion(text: str, weighted_children: bool = True) -> SplitCriterion:
    """Parse ``sse``, ``mse``, ``shannon``, ``gini``, ``gain_ratio``, ``tsallis`` or ``tsallis:<q>``."""
    text = str(text).strip().lower()
    if text.startswith(TSALLIS):
        _, _, q = text.partition(":")
        try:
            return SplitCriterion(TSALLIS, float(q) if q else None, weighted_children)
        except ValueError:
            raise ConfigError(f"bad tsallis parameter in {text!r}") from None
    return SplitCriterion(text, None, weighted_children)


@dataclass(frozen=True)
class ClassDistribution:
    counts: tuple

    @classmethod
    def from_labels(cls, labels, n_classes: int) -> "ClassDistribution":
        return cls(tuple(int(c) for c in np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)))

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    @property
    def probabilities(self) -> np.ndarray:
        return _probabilities(self.counts)


def _probabilities(dist) -> np.ndarray:
    counts = np.asarray(getattr(dist, "counts", dist), dtype=float)
    if counts.ndim != 1 or (counts < 0).any():
        raise ValueError("class counts must be a non-negative vector")
    total = counts.sum()
    if total <= 0:
        raise ValueError("empty class distribution")
    return counts / total


def tsallis_entropy(dist, q: float) -> float:
    if q == 1:
        raise ValueError("q = 1 is the Shannon limit; call shannon_entropy")
    p = _probabilities(dist)
    if q <= 0:
        p = p[p > 0]
    return float((np.sum(p**q) - 1.0) / (1.0 - q))


def shannon_entropy(dist) -> float:
    p = _probabilities(dist)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def gini_index(dist) -> float:
    p = _probabilities(dist)
    # same summation as tsallis_entropy(dist, 2) so the two agree bit for bit
    return float((np.sum(p**2) - 1.0) / (1.0 - 2.0))


def regression_split_loss(left_y, right_y, kind: str = SSE) -> float:
    left_y = np.asarray(left_y, dtype=float)
    right_y = np.asarray(right_y, dtype=float)
    if left_y.size == 0 or right_y.size == 0:
        raise ValueError("both sides of a split must be non-empty")
    sl = float(np.sum((left_y - left_y.mean()) ** 2))
    sr = float(np.sum((right_y - right_y.mean()) ** 2))
    if kind == SSE:
        return sl + sr
    if kind == MSE:
        return sl / left_y.size + sr / right_y.size
    raise ValueError(f"not a regression criterion: {kind!r}")


def split_information(n_left: float, n_right: float) -> float:
    return shannon_entropy([n_left, n_right])


def impurity_gain(parent, left, right, criterion: SplitCriterion) -> float:
    """Reduction in impurity from splitting ``parent`` into ``left`` and ``right``.

    Children are weighted by their share of the parent unless
    ``criterion.weighted_children`` is off. Gain ratio divides the Shannon gain
    by the split information and raises :class:`ZeroDivisionError` when a side
    is empty.
    """
    pc = np.asarray(getattr(parent, "counts", parent), dtype=float)
    lc = np.asarray(getattr(left, "counts", left), dtype=float)
    rc = np.asarray(getattr(right, "counts", right), dtype=float)
    if pc.sum() <= 0:
        raise ValueError("empty parent distribution")
    if not np.allclose(lc + rc, pc):
        raise ValueError("child counts do not add up to the parent counts")
    n, nl, nr = pc.sum(), lc.sum(), rc.sum()
    if criterion.kind == GAIN_RATIO:
        if nl == 0 or nr == 0:
            raise ZeroDivisionError("uninformative split: all rows on one side")
        gain = shannon_entropy(pc) - nl / n * shannon_entropy(lc) - nr / n * shannon_entropy(rc)
        return gain / split_information(nl, nr)
    if criterion.is_regression:
        raise ValueError("impurity_gain needs an entropy criterion")
    wl, wr = (nl / n, nr / n) if criterion.weighted_children else (1.0, 1.0)
    el = criterion.impurity(lc) if nl else 0.0
    er = criterion.impurity(rc) if nr else 0.0
    return criterion.impurity(pc) - (wl * el + wr * er)


# Vectorised forms over rows of count matrices, used by the split search.


def entropy_rows(counts: np.ndarray, criterion: SplitCriterion) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    tot = counts.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(tot > 0, counts / np.where(tot > 0, tot, 1), 0.0)
    if criterion.kind == GINI:
        return 1.0 - np.sum(p * p, axis=1)
    if criterion.kind == TSALLIS:
        pq = np.where(p > 0, p, 0.0) ** criterion.q
        pq = np.where(p > 0, pq, 0.0)
        return (np.sum(pq, axis=1) - 1.0) / (1.0 - criterion.q)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -np.sum(terms, axis=1)


def gain_rows(parent: np.ndarray, left: np.ndarray, right: np.ndarray, criterion: SplitCriterion) -> np.ndarray:
    n = parent.sum()
    nl = left.sum(axis=1)
    nr = right.sum(axis=1)
    shannon = SplitCriterion(SHANNON) if criterion.kind == GAIN_RATIO else criterion
    e = entropy_rows(parent[None, :], shannon)[0]
    el = entropy_rows(left, shannon)
    er = entropy_rows(right, shannon)
    if criterion.kind == GAIN_RATIO or criterion.weighted_children:
        gain = e - (nl / n * el + nr / n * er)
    else:
        gain = e - (el + er)
    if criterion.kind == GAIN_RATIO:
        info = entropy_rows(np.column_stack([nl, nr]), shannon)
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(info > 0, gain / np.where(info > 0, info, 1.0), -np.inf)
    return gain
