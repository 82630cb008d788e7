"""Greedy single-split search over every covariate and every candidate cut.

Continuous candidates are midpoints between consecutive distinct values;
categorical candidates are one-vs-rest on each level present in the data.
Scores come from prefix sums (regression) or prefix class counts
(classification), so one search costs O(p n log n).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ddtree.criteria import SSE, SplitCriterion, gain_rows
from ddtree.domain import Dataset, Region, Split
from ddtree.errors import DataError, UninformativeSplit

TIE_RTOL = 1e-10


@dataclass(frozen=True)
class SplitCandidate:
    """A chosen split with its criterion value and the fitted child statistics.

    ``criterion_value`` is the loss for SSE/MSE and the gain for entropy
    criteria. ``left_stat``/``right_stat`` are child means (regression) or
    class-count tuples (classification).
    """

    split: Split
    criterion_value: float
    left_stat: object
    right_stat: object
    n_left: int
    n_right: int
    n_ties: int = 1

    @property
    def covariate_index(self) -> int:
        return self.split.covariate

    @property
    def cut(self):
        return self.split.level if self.split.is_categorical else self.split.threshold

    def to_dict(self) -> dict:
        def stat(s):
            return list(s) if isinstance(s, tuple) else s

        return {
            "split": self.split.to_dict(),
            "criterion_value": self.criterion_value,
            "left_stat": stat(self.left_stat),
            "right_stat": stat(self.right_stat),
            "n_left": self.n_left,
            "n_right": self.n_right,
            "n_ties": self.n_ties,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitCandidate":
        def stat(s):
            return tuple(s) if isinstance(s, list) else s

        return cls(
            Split.from_dict(d["split"]),
            d["criterion_value"],
            stat(d["left_stat"]),
            stat(d["right_stat"]),
            d["n_left"],
            d["n_right"],
            d.get("n_ties", 1),
        )


def enumerate_candidates(data: Dataset, region: Region) -> list[Split]:
    """Every (covariate, cut) the search considers, in a fixed sorted order."""
    if len(data) == 0:
        raise DataError("empty data")
    out = []
    for j, b in enumerate(region.bounds):
        col = data.X[:, j]
        if isinstance(b, frozenset):
            present = sorted(set(int(v) for v in np.unique(col)) & b)
            if len(present) >= 2:
                out.extend(Split(j, level=k) for k in present)
        else:
            u = np.unique(col)
            out.extend(Split(j, threshold=float(t)) for t in _midpoints(u[:-1], u[1:]))
    return out


def _midpoints(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    mid = (lo + hi) / 2.0
    # rounding can land the midpoint on the lower value, which would route it right
    return np.where(mid <= lo, hi, mid)


def _regression_scores(nl, s1l, s2l, n, s1, s2, kind):
    nr = n - nl
    sse_l = np.maximum(s2l - s1l * s1l / nl, 0.0)
    sse_r = np.maximum((s2 - s2l) - (s1 - s1l) ** 2 / nr, 0.0)
    if kind == SSE:
        return sse_l + sse_r
    return sse_l / nl + sse_r / nr


class _Candidates:
    def __init__(self):
        self.cov, self.thr, self.lvl, self.score = [], [], [], []

    def add(self, j, thresholds, levels, scores):
        k = len(scores)
        if k == 0:
            return
        self.cov.append(np.full(k, j))
        self.thr.append(np.asarray(thresholds, dtype=float) if thresholds is not None else np.full(k, np.nan))
        self.lvl.append(np.asarray(levels, dtype=np.int64) if levels is not None else np.full(k, -1))
        self.score.append(np.asarray(scores, dtype=float))


def best_split(
    X: np.ndarray,
    y: np.ndarray,
    region: Region,
    criterion: SplitCriterion,
    rng: np.random.Generator | None = None,
    *,
    min_samples_leaf: int = 1,
    features=None,
    n_classes: int | None = None,
) -> SplitCandidate:
    """Array-level split search; see :func:`fit_stump`."""
    n = len(y)
    if n == 0:
        raise UninformativeSplit("empty data")
    regression = criterion.is_regression
    if regression:
        yc = y - y.mean()
        if np.ptp(y) == 0:
            raise UninformativeSplit("constant response")
        s1, s2 = yc.sum(), np.dot(yc, yc)
    else:
        C = n_classes if n_classes is not None else int(y.max()) + 1
        parent = np.bincount(y, minlength=C).astype(float)
        if np.count_nonzero(parent) <= 1:
            raise UninformativeSplit("pure node")
    m = max(1, int(min_samples_leaf))
    cands = _Candidates()
    cols = range(X.shape[1]) if features is None else features
    for j in cols:
        b = region.bounds[j]
        col = X[:, j]
        if isinstance(b, frozenset):
            codes = col.astype(np.int64)
            L = int(codes.max()) + 1
            cnt = np.bincount(codes, minlength=L)
            present = [k for k in sorted(b) if k < L and cnt[k] > 0]
            if len(present) < 2:
                continue
            lv = np.array(present)
            nl = cnt[lv].astype(float)
            ok = (nl >= m) & (n - nl >= m)
            lv, nl = lv[ok], nl[ok]
            if not len(lv):
                continue
            if regression:
                s1l = np.bincount(codes, weights=yc, minlength=L)[lv]
                s2l = np.bincount(codes, weights=yc * yc, minlength=L)[lv]
                sc = _regression_scores(nl, s1l, s2l, n, s1, s2, criterion.kind)
            else:
                joint = np.bincount(codes * C + y, minlength=L * C).reshape(L, C).astype(float)
                left = joint[lv]
                sc = -gain_rows(parent, left, parent[None, :] - left, criterion)
            cands.add(j, None, lv, sc)
        else:
            order = np.argsort(col, kind="stable")
            xs = col[order]
            nl_all = np.arange(1, n)
            ok = (xs[:-1] < xs[1:]) & (nl_all >= m) & (n - nl_all >= m)
            idx = np.nonzero(ok)[0]
            if not len(idx):
                continue
            thr = _midpoints(xs[idx], xs[idx + 1])
            nl = (idx + 1).astype(float)
            if regression:
                ys = yc[order]
                cs = np.cumsum(ys)
                cs2 = np.cumsum(ys * ys)
                sc = _regression_scores(nl, cs[idx], cs2[idx], n, s1, s2, criterion.kind)
            else:
                onehot = np.zeros((n, C))
                onehot[np.arange(n), y[order]] = 1.0
                left = np.cumsum(onehot, axis=0)[idx]
                sc = -gain_rows(parent, left, parent[None, :] - left, criterion)
            cands.add(j, thr, None, sc)
    if not cands.score:
        raise UninformativeSplit("no candidate splits")
    cov = np.concatenate(cands.cov)
    thr = np.concatenate(cands.thr)
    lvl = np.concatenate(cands.lvl)
    score = np.concatenate(cands.score)
    best = score.min()
    if not np.isfinite(best):
        raise UninformativeSplit("no finite criterion value")
    if regression and criterion.kind == SSE and best >= s2 * (1 - 1e-12):
        raise UninformativeSplit("no split reduces the sum of squares")
    if not regression and (criterion.weighted_children or criterion.kind == "gain_ratio") and -best <= 1e-12:
        raise UninformativeSplit("no split has positive gain")
    ties = np.nonzero(score <= best + TIE_RTOL * max(1.0, abs(best)))[0]
    pick = ties[0] if len(ties) == 1 or rng is None else ties[rng.integers(len(ties))]
    j = int(cov[pick])
    split = Split(j, level=int(lvl[pick])) if lvl[pick] >= 0 else Split(j, threshold=float(thr[pick]))
    go_left = split.goes_left(X)
    yl, yr = y[go_left], y[~go_left]
    if regression:
        value = float(score[pick])
        ls, rs = float(yl.mean()), float(yr.mean())
    else:
        value = float(-score[pick])
        ls = tuple(int(c) for c in np.bincount(yl, minlength=C))
        rs = tuple(int(c) for c in np.bincount(yr, minlength=C))
    return SplitCandidate(split, value, ls, rs, int(go_left.sum()), int((~go_left).sum()), len(ties))


def fit_stump(
    data: Dataset,
    region: Region,
    criterion: SplitCriterion,
    rng: np.random.Generator | None = None,
    *,
    min_samples_leaf: int = 1,
) -> SplitCandidate:
    """Fit one split to ``data`` by exhaustive greedy search.

    Exact ties between candidates are broken uniformly at random with ``rng``
    (the first candidate wins when ``rng`` is None). Raises
    :class:`UninformativeSplit` for constant responses, when no candidate
    exists, or when no candidate improves on the unsplit node.
    """
    if len(data) == 0:
        raise DataError("empty data")
    if criterion.is_regression == data.schema.is_classification:
        raise DataError(f"criterion {criterion} does not match the response kind")
    return best_split(
        data.X,
        data.y,
        region,
        criterion,
        rng,
        min_samples_leaf=min_samples_leaf,
        n_classes=len(data.schema.classes) if data.schema.is_classification else None,
    )

