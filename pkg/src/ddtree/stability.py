"""Monte-Carlo split stability, confidence intervals and oscillation detection.

A node's split is measured by fitting a stump to ``repeats`` independent
uniform pseudo samples of its region. The first level of stability is the
distribution of the winning covariate, the second level the distribution of
the winning value on each covariate.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ddtree.criteria import MSE, SSE, SplitCriterion, impurity_gain, parse_criterion, regression_split_loss
from ddtree.domain import Region, Split, sample_region
from ddtree.errors import ConfigError, UninformativeSplit
from ddtree.stump import SplitCandidate, best_split

# seed-stream stages; each random draw is keyed by (seed, node id, stage, ...)
STAGE_STABILITY = 1
STAGE_SELECT = 2
STAGE_PILOT = 3
STAGE_EVAL = 4
STAGE_ODT = 5

DEFAULT_REPEATS = 100
MAX_SAMPLE_SIZE = 60_000
AUTO_HALF_WIDTH = 0.005
KDE_GRID = 512
HIST_BINS = 20

NONE = "none"
FINITE_POINTS = "finite_points"
INTERVAL = "interval"


def node_rng(seed: int, node_id: int, stage: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(node_id), int(stage), *map(int, extra)]))


def default_workers() -> int:
    env = os.environ.get("DDT_WORKERS")
    if env:
        try:
            w = int(env)
        except ValueError:
            raise ConfigError(f"DDT_WORKERS must be an integer, got {env!r}") from None
        if w < 1:
            raise ConfigError("DDT_WORKERS must be >= 1")
        return w
    return os.cpu_count() or 1


def split_confidence_interval(split_value: float, region_width: float, sample_size: int, bounds=None):
    """Approximate 95% interval ``x -/+ 3w/(2n)``, clipped to ``bounds`` when given."""
    if region_width <= 0 or sample_size < 1:
        raise ValueError("need region_width > 0 and sample_size >= 1")
    h = 3.0 * region_width / (2.0 * sample_size)
    lo, hi = split_value - h, split_value + h
    if bounds is not None:
        lo, hi = max(lo, bounds[0]), min(hi, bounds[1])
    return (lo, hi)


def required_sample_size(region_width: float, half_width_d: float) -> int:
    """Smallest ``n`` whose interval half-width ``3w/(2n)`` is at most ``d``."""
    if region_width <= 0:
        raise ValueError("region_width must be positive")
    if not 0 < half_width_d <= region_width / 2:
        raise ValueError(f"half width must lie in (0, {region_width / 2}], got {half_width_d}")
    # guard against 3w/(2d) landing a hair above an integer through rounding
    return int(math.ceil(3.0 * region_width / (2.0 * half_width_d) - 1e-9))


def auto_sample_size(region: Region) -> int:
    widths = [region.width(j) for j, b in enumerate(region.bounds) if not isinstance(b, frozenset)]
    if not widths:
        return 1000
    w = max(widths)
    return min(required_sample_size(w, AUTO_HALF_WIDTH * w), MAX_SAMPLE_SIZE)


def bandwidth_nrd0(values: np.ndarray) -> float:
    """Silverman's rule of thumb, with the fallbacks R's ``bw.nrd0`` uses."""
    x = np.asarray(values, dtype=float)
    sd = float(np.std(x, ddof=1)) if len(x) > 1 else 0.0
    iqr = float(np.subtract(*np.percentile(x, [75, 25])))
    lo = min(sd, iqr / 1.34)
    if lo <= 0:
        lo = sd or abs(float(x[0])) or 1.0
    return 0.9 * lo * len(x) ** -0.2


def kde_mode(values, bounds=None) -> tuple[float, float]:
    """Mode of a Gaussian kernel density estimate evaluated on a 512-point grid.

    Returns ``(mode, bandwidth)``. The grid spans the data range padded by
    three bandwidths, clipped to ``bounds``.
    """
    x = np.asarray(values, dtype=float)
    if len(x) == 0:
        raise ValueError("no values")
    if len(x) == 1 or np.ptp(x) == 0:
        return float(x[0]), 0.0
    bw = bandwidth_nrd0(x)
    lo, hi = x.min() - 3 * bw, x.max() + 3 * bw
    if bounds is not None:
        lo, hi = max(lo, bounds[0]), min(hi, bounds[1])
    grid = np.linspace(lo, hi, KDE_GRID)
    kde = stats.gaussian_kde(x, bw_method=bw / np.std(x, ddof=1))
    return float(grid[np.argmax(kde(grid))]), float(bw)


@dataclass(frozen=True)
class OscillationConfig:
    """Thresholds for :func:`detect_oscillation`.

    ``cluster_gap`` and the width of an interval are fractions of the region
    width. Cluster criteria agree when their means differ by less than
    ``rel_tol`` relatively or by less than ``se_factor`` standard errors.
    """

    cluster_gap: float = 0.05
    rel_tol: float = 1e-3
    ks_max: float = 0.15
    min_values: int = 30
    min_cluster_mass: float = 0.05
    se_factor: float = 3.0

    @classmethod
    def from_dict(cls, d: dict) -> "OscillationConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class Oscillation:
    kind: str = NONE
    atoms: tuple = ()
    lo: float | None = None
    hi: float | None = None
    note: str = ""

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == FINITE_POINTS:
            d["atoms"] = [[v, m] for v, m in self.atoms]
        if self.kind == INTERVAL:
            d["lo"], d["hi"] = self.lo, self.hi
        if self.note:
            d["note"] = self.note
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Oscillation":
        return cls(d["kind"], tuple((a[0], a[1]) for a in d.get("atoms", [])), d.get("lo"), d.get("hi"), d.get("note", ""))


def detect_oscillation(values, criterion_values, config: OscillationConfig = OscillationConfig(), region_width=None):
    """Classify the spread of repeated split values.

    Values are clustered by single linkage with a gap threshold. Two or more
    substantial clusters with indistinguishable criterion values give
    ``finite_points``; a single wide cluster that looks uniform gives
    ``interval``. Criterion values should be comparable across repeats
    (per-row losses or gains), and lower is taken to be better.
    """
    v = np.asarray(values, dtype=float)
    c = np.asarray(criterion_values, dtype=float)
    if len(v) != len(c):
        raise ValueError("values and criterion_values differ in length")
    if len(v) < config.min_values:
        return Oscillation(NONE, note=f"insufficient repeats ({len(v)} < {config.min_values})")
    width = region_width if region_width else (np.ptp(v) or 1.0)
    gap = config.cluster_gap * width
    order = np.argsort(v, kind="stable")
    vs, cs = v[order], c[order]
    breaks = np.nonzero(np.diff(vs) > gap)[0] + 1
    clusters = [(a, b) for a, b in zip(np.r_[0, breaks], np.r_[breaks, len(vs)])]
    big = [(a, b) for a, b in clusters if (b - a) / len(vs) >= config.min_cluster_mass and b - a >= 2]
    if not big:
        return Oscillation(NONE, note="no substantial cluster")

    def summary(a, b):
        seg = cs[a:b]
        return float(seg.mean()), float(seg.std(ddof=1) / math.sqrt(len(seg)))

    sums = [summary(a, b) for a, b in big]
    best = int(np.argmin([m for m, _ in sums]))
    mb, sb = sums[best]
    agree = [
        k
        for k, (m, s) in enumerate(sums)
        if abs(m - mb) <= config.rel_tol * max(abs(mb), 1e-300) or abs(m - mb) <= config.se_factor * math.hypot(s, sb)
    ]
    if len(agree) >= 2:
        atoms = tuple(
            (float(np.median(vs[big[k][0] : big[k][1]])), float((big[k][1] - big[k][0]) / len(vs))) for k in agree
        )
        return Oscillation(FINITE_POINTS, atoms=atoms)
    a, b = big[best]
    seg = vs[a:b]
    lo, hi = float(seg[0]), float(seg[-1])
    if hi - lo <= gap:
        return Oscillation(NONE)
    ks = stats.kstest(seg, stats.uniform(loc=lo, scale=hi - lo).cdf).statistic
    if ks < config.ks_max:
        return Oscillation(INTERVAL, lo=lo, hi=hi, note=f"ks={ks:.3f}")
    return Oscillation(NONE, note=f"wide cluster not uniform (ks={ks:.3f})")


@dataclass
class Draw:
    """Outcome of one repeat: the stump's split and its per-row criterion score (None if uninformative)."""

    covariate: int | None
    value: float | None
    score: float | None


@dataclass
class StabilityReport:
    region: Region
    criterion: SplitCriterion
    repeats: int
    sample_size: int
    draws: list
    first_level: list
    second_level: list
    chosen: SplitCandidate | None = None
    ci: tuple | None = None
    oscillation: Oscillation | None = None
    escalated: bool = False
    first_level_tie: bool = False
    notes: list = field(default_factory=list)

    @property
    def n_informative(self) -> int:
        return sum(d.covariate is not None for d in self.draws)

    def values_for(self, j: int) -> np.ndarray:
        return np.array([d.value for d in self.draws if d.covariate == j], dtype=float)

    def scores_for(self, j: int) -> np.ndarray:
        return np.array([d.score for d in self.draws if d.covariate == j], dtype=float)

    def to_dict(self, include_draws: bool = False) -> dict:
        d = {
            "criterion": str(self.criterion),
            "repeats": self.repeats,
            "sample_size": self.sample_size,
            "first_level": self.first_level,
            "second_level": self.second_level,
            "chosen": self.chosen.to_dict() if self.chosen else None,
            "ci": list(self.ci) if self.ci else None,
            "ci_note": "approximate" if self.ci else None,
            "oscillation": self.oscillation.to_dict() if self.oscillation else None,
            "escalated": self.escalated,
            "first_level_tie": self.first_level_tie,
            "notes": list(self.notes),
        }
        if include_draws:
            d["draws"] = [[dr.covariate, dr.value, dr.score] for dr in self.draws]
        return d

    @classmethod
    def from_dict(cls, d: dict, region: Region) -> "StabilityReport":
        draws = [Draw(*x) for x in d.get("draws", [])]
        return cls(
            region,
            parse_criterion(d["criterion"]),
            d["repeats"],
            d["sample_size"],
            draws,
            d["first_level"],
            d["second_level"],
            SplitCandidate.from_dict(d["chosen"]) if d.get("chosen") else None,
            tuple(d["ci"]) if d.get("ci") else None,
            Oscillation.from_dict(d["oscillation"]) if d.get("oscillation") else None,
            d.get("escalated", False),
            d.get("first_level_tie", False),
            list(d.get("notes", [])),
        )


def _score(cand: SplitCandidate, n: int, criterion: SplitCriterion) -> float:
    # lower is better; SSE scaled per row so repeats of any size compare
    if criterion.kind == SSE:
        return cand.criterion_value / n
    if criterion.kind == MSE:
        return cand.criterion_value
    return -cand.criterion_value


def _run_draws(teacher, region, criterion, repeats, n, seed, node_id, attempt, workers, chunk_rows, min_leaf):
    C = len(teacher.schema.classes) if teacher.schema.is_classification else None
    per_chunk = max(1, chunk_rows // n)
    chunks = [range(s, min(s + per_chunk, repeats)) for s in range(0, repeats, per_chunk)]

    def run(chunk):
        rngs = [node_rng(seed, node_id, STAGE_STABILITY, attempt, r) for r in chunk]
        Xs = [sample_region(region, n, g) for g in rngs]
        Y = teacher.predict_batch(np.concatenate(Xs))
        out = []
        for k, (X, g) in enumerate(zip(Xs, rngs)):
            y = Y[k * n : (k + 1) * n]
            try:
                cand = best_split(X, y, region, criterion, g, min_samples_leaf=min_leaf, n_classes=C)
            except UninformativeSplit:
                out.append(Draw(None, None, None))
                continue
            out.append(Draw(cand.covariate_index, float(cand.cut), _score(cand, n, criterion)))
        return out

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    return [d for r in results for d in r]


def _summarise(region: Region, draws: list):
    p = region.schema.p
    informative = [d for d in draws if d.covariate is not None]
    total = len(informative)
    counts = np.bincount([d.covariate for d in informative], minlength=p)
    first = [float(c / total) for c in counts]
    second = []
    for j, b in enumerate(region.bounds):
        vals = np.array([d.value for d in informative if d.covariate == j])
        if not len(vals):
            second.append(None)
        elif isinstance(b, frozenset):
            lv, ct = np.unique(vals.astype(int), return_counts=True)
            second.append({"kind": "categorical", "pmf": [[int(l), float(c / len(vals))] for l, c in zip(lv, ct)]})
        else:
            hist, edges = np.histogram(vals, bins=HIST_BINS, range=b)
            mode, bw = kde_mode(vals, b)
            second.append(
                {
                    "kind": "continuous",
                    "n": int(len(vals)),
                    "edges": [float(e) for e in edges],
                    "mass": [float(h / len(vals)) for h in hist],
                    "mode": mode,
                    "bandwidth": bw,
                    "median": float(np.median(vals)),
                    "iqr": float(np.subtract(*np.percentile(vals, [75, 25]))),
                }
            )
    return first, second


def select_best_split(
    report: StabilityReport,
    teacher=None,
    *,
    seed: int = 0,
    node_id: int = 1,
    min_samples_leaf: int = 1,
) -> SplitCandidate:
    """The modal covariate, then the modal value on it.

    A first-level tie is broken with a seeded draw and flagged on the report.
    Continuous values use the kernel-density mode, categorical ones the modal
    level. With a teacher, node statistics are refit on one fresh pseudo
    sample at the chosen split; otherwise they are left empty.
    """
    if report.n_informative == 0:
        raise UninformativeSplit("every repeat was uninformative")
    rng = node_rng(seed, node_id, STAGE_SELECT, int(report.escalated))
    first = np.asarray(report.first_level)
    top = np.nonzero(first >= first.max() - 1e-12)[0]
    report.first_level_tie = len(top) > 1
    j = int(top[rng.integers(len(top))]) if len(top) > 1 else int(top[0])
    b = report.region.bounds[j]
    vals = report.values_for(j)
    if isinstance(b, frozenset):
        lv, ct = np.unique(vals.astype(int), return_counts=True)
        best = lv[ct == ct.max()]
        split = Split(j, level=int(best[rng.integers(len(best))]) if len(best) > 1 else int(best[0]))
    else:
        mode = report.second_level[j]["mode"] if report.second_level[j] else kde_mode(vals, b)[0]
        if not b[0] < mode < b[1]:
            mode = float(np.median(vals))
        split = Split(j, threshold=float(mode))
    if teacher is None:
        return SplitCandidate(split, float("nan"), None, None, 0, 0)
    X = sample_region(report.region, report.sample_size, rng)
    y = teacher.predict_batch(X)
    left = split.goes_left(X)
    yl, yr = y[left], y[~left]
    crit = report.criterion
    if crit.is_regression:
        ls = float(yl.mean()) if len(yl) else None
        rs = float(yr.mean()) if len(yr) else None
        if len(yl) and len(yr):
            value = regression_split_loss(yl, yr, crit.kind)
        else:
            value = float("nan")
    else:
        C = len(teacher.schema.classes)
        lc, rc = np.bincount(yl, minlength=C), np.bincount(yr, minlength=C)
        ls, rs = tuple(int(c) for c in lc), tuple(int(c) for c in rc)
        try:
            value = impurity_gain(lc + rc, lc, rc, crit)
        except ZeroDivisionError:
            value = float("nan")
    return SplitCandidate(split, float(value), ls, rs, int(left.sum()), int((~left).sum()))


def measure_split_stability(
    teacher,
    region: Region,
    criterion: SplitCriterion,
    repeats: int = DEFAULT_REPEATS,
    sample_size: int | None = None,
    seed: int = 0,
    node_id: int = 1,
    *,
    workers: int | None = None,
    oscillation: OscillationConfig = OscillationConfig(),
    escalate: bool = True,
    min_samples_leaf: int = 1,
    chunk_rows: int = 200_000,
) -> StabilityReport:
    """Fit ``repeats`` stumps on fresh pseudo samples of ``region`` and summarise them.

    Each repeat owns a generator keyed by ``(seed, node_id, repeat)``, so the
    result does not depend on ``workers``. Teacher calls are batched across
    repeats. When the chosen continuous covariate's values have an
    inter-quartile range above twice the interval half-width, the sample size
    is doubled once and the measurement rerun.
    """
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    if criterion.is_regression == teacher.schema.is_classification:
        raise ConfigError(f"criterion {criterion} does not match the teacher's response kind")
    n = auto_sample_size(region) if sample_size is None else int(sample_size)
    if n < 2:
        raise ConfigError("sample_size must be >= 2")
    workers = default_workers() if workers is None else max(1, int(workers))
    attempt = 0
    while True:
        draws = _run_draws(
            teacher, region, criterion, repeats, n, seed, node_id, attempt, workers, chunk_rows, min_samples_leaf
        )
        if not any(d.covariate is not None for d in draws):
            raise UninformativeSplit(f"all {repeats} repeats were uninformative")
        first, second = _summarise(region, draws)
        report = StabilityReport(region, criterion, repeats, n, draws, first, second, escalated=attempt > 0)
        j = int(np.argmax(first))
        s2 = second[j]
        if (
            escalate
            and attempt == 0
            and s2["kind"] == "continuous"
            and n < MAX_SAMPLE_SIZE
            and s2["iqr"] > 2 * 3 * region.width(j) / (2 * n)
        ):
            report.notes.append(f"second-level IQR {s2['iqr']:.4g} above twice the half-width at n={n}")
            n = min(2 * n, MAX_SAMPLE_SIZE)
            attempt = 1
            continue
        break
    if attempt:
        report.notes = [f"sample size escalated to {n}"]
    n_bad = repeats - report.n_informative
    if n_bad:
        report.notes.append(f"{n_bad} of {repeats} repeats uninformative")
    report.chosen = select_best_split(report, teacher, seed=seed, node_id=node_id, min_samples_leaf=min_samples_leaf)
    j = report.chosen.covariate_index
    b = region.bounds[j]
    if not isinstance(b, frozenset):
        report.ci = split_confidence_interval(report.chosen.cut, region.width(j), n, b)
    if repeats > 1:
        report.oscillation = detect_oscillation(
            report.values_for(j),
            report.scores_for(j),
            oscillation,
            region.width(j) if not isinstance(b, frozenset) else None,
        )
        if isinstance(b, frozenset) and report.oscillation.kind == INTERVAL:
            report.oscillation = Oscillation(NONE)
    return report
