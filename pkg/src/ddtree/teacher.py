"""Teachers: the black-box models a distillation tree approximates.

Every teacher maps a batch of encoded covariate rows to responses (floats,
or class codes for a categorical response) and must be deterministic.
"""

from __future__ import annotations

import collections
import logging
import math
import queue
import shlex
import subprocess
import sys
import threading
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from ddtree.criteria import GINI, SSE, SplitCriterion
from ddtree.domain import Continuous, Covariate, CovariateSchema, Dataset
from ddtree.errors import DataError, TeacherError
from ddtree.odt import ArrayTree, grow_tree, stack_trees

log = logging.getLogger(__name__)

HANDSHAKE = "DDT-TEACHER 1"


class Teacher:
    """Base class. Subclasses implement ``_predict`` on a validated ``(n, p)`` array."""

    def __init__(self, schema: CovariateSchema, descriptor: str):
        self.schema = schema
        self.descriptor = descriptor

    @property
    def response_kind(self) -> str:
        return "categorical" if self.schema.is_classification else "continuous"

    def predict_batch(self, rows) -> np.ndarray:
        X = np.asarray(rows, dtype=float)
        if X.size == 0:
            return np.empty(0, dtype=np.int64 if self.schema.is_classification else float)
        X = X.reshape(-1, self.schema.p) if X.ndim == 1 and self.schema.p > 1 else X
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] != self.schema.p:
            raise DataError(f"rows have {X.shape[1]} columns, teacher expects {self.schema.p}")
        if not np.isfinite(X).all():
            raise DataError("rows contain non-finite values")
        out = np.asarray(self._predict(X))
        if out.shape != (len(X),):
            raise TeacherError(f"{self.descriptor}: returned {out.size} values for {len(X)} rows")
        if self.schema.is_classification:
            out = out.astype(np.int64)
            if out.min() < 0 or out.max() >= len(self.schema.classes):
                raise TeacherError(f"{self.descriptor}: class code outside the schema's classes")
        else:
            out = out.astype(float)
            if not np.isfinite(out).all():
                raise TeacherError(f"{self.descriptor}: non-finite output")
        return out

    def _predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__} {self.descriptor}>"


class FunctionTeacher(Teacher):
    """Wraps a vectorised function of the ``(n, p)`` row matrix."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], schema: CovariateSchema, descriptor: str = "function"):
        super().__init__(schema, descriptor)
        self.fn = fn

    def _predict(self, X):
        return self.fn(X)


def _unary_schema(a: float, b: float, name: str = "x") -> CovariateSchema:
    return CovariateSchema((Covariate(name, Continuous(float(a), float(b))),))


def make_step_teacher(
    a: float = 0.0, b: float = 2.0, cut: float = 1.0, left: float = 0.0, right: float = 10.0
) -> FunctionTeacher:
    """f(x) = left for x < cut, right otherwise, on [a, b]."""
    if not a < cut < b:
        raise DataError(f"cut {cut} must lie strictly inside ({a}, {b})")
    left, right, cut = float(left), float(right), float(cut)

    def f(X):
        return np.where(X[:, 0] < cut, left, right)

    t = FunctionTeacher(f, _unary_schema(a, b), f"step(a={a:g}, b={b:g}, cut={cut:g}, left={left:g}, right={right:g})")
    t.optimal_split = cut
    return t


def make_two_cut_teacher(
    a: float = 0.0, b: float = 2.0, cuts: tuple = (0.5, 1.5), low: float = 0.0, high: float = 10.0
) -> FunctionTeacher:
    """A bump: ``high`` between the two cuts, ``low`` outside.

    With cuts placed symmetrically in [a, b] the SSE criterion has two optimal
    splits of equal loss, one at each cut.
    """
    c1, c2 = float(cuts[0]), float(cuts[1])
    if not a < c1 < c2 < b:
        raise DataError("cuts must satisfy a < c1 < c2 < b")

    def f(X):
        x = X[:, 0]
        return np.where((x >= c1) & (x < c2), float(high), float(low))

    t = FunctionTeacher(f, _unary_schema(a, b), f"two_cut(a={a:g}, b={b:g}, cuts=({c1:g}, {c2:g}))")
    t.optimal_splits = (c1, c2)
    return t


def make_plateau_teacher(
    a: float = 0.0, b: float = 2.0, c: float = 0.8, d: float = 1.2, scale: float = 10.0, texture: float = 0.0
):
    """A teacher whose SSE split loss on ``x`` is exactly flat on ``[c, d]``.

    Two constant levels flank a shallow ramp on ``[c, d]``. With ``F`` the
    integral of the (zero-mean) teacher from ``a``, the between-group sum of
    squares of a cut at ``x`` is ``F(x)^2 (b-a) / ((x-a)(b-x))``. The ramp
    makes ``F(x) = scale * sqrt((x-a)(b-x))`` on ``[c, d]`` so every cut
    there is optimal; the flanks make ``F`` the chord of that curve, which
    lies strictly below it, so cuts outside ``[c, d]`` are worse.

    With ``texture > 0`` a second covariate ``z`` on ``[0, 1]`` adds
    ``-texture`` (``z < 0.5``) or ``+texture`` inside the band. The
    conditional mean given ``x`` is unchanged, so the flat set is the same,
    but finite samples see local variation across the band.
    """
    if not a < c < d < b:
        raise DataError("need a < c < d < b")
    k = float(scale)
    fc = k * math.sqrt((c - a) * (b - c))
    fd = k * math.sqrt((d - a) * (b - d))
    v_left = fc / (c - a)
    v_right = -fd / (b - d)
    tex = float(texture)

    def f(X):
        x = X[:, 0]
        with np.errstate(invalid="ignore", divide="ignore"):
            ramp = k * (a + b - 2 * x) / (2 * np.sqrt((x - a) * (b - x)))
        out = np.where(x < c, v_left, np.where(x <= d, ramp, v_right))
        if tex:
            band = (x >= c) & (x <= d)
            out = out + np.where(band, np.where(X[:, 1] < 0.5, -tex, tex), 0.0)
        return out

    if tex:
        schema = CovariateSchema((Covariate("x", Continuous(float(a), float(b))), Covariate("z", Continuous(0.0, 1.0))))
    else:
        schema = _unary_schema(a, b)
    t = FunctionTeacher(f, schema, f"plateau(a={a:g}, b={b:g}, c={c:g}, d={d:g}, texture={tex:g})")
    t.optimal_interval = (float(c), float(d))
    return t


class GridTeacher(Teacher):
    """Nearest-neighbour lookup into a grid of labelled rows.

    Distance is Euclidean on min-max normalised continuous coordinates, with
    categorical coordinates required to match exactly. Ties go to the
    lexicographically smallest grid row.
    """

    def __init__(self, grid: Dataset, descriptor: str | None = None):
        if len(grid) == 0:
            raise DataError("empty grid")
        super().__init__(grid.schema, descriptor or f"grid({len(grid)} rows)")
        self.grid = grid
        cat = grid.schema.categorical_mask
        self._cont = np.nonzero(~cat)[0]
        self._cat = np.nonzero(cat)[0]
        Z = grid.X[:, self._cont]
        self._lo = Z.min(axis=0) if len(self._cont) else np.zeros(0)
        span = Z.max(axis=0) - self._lo if len(self._cont) else np.zeros(0)
        self._span = np.where(span > 0, span, 1.0)
        rank = np.empty(len(grid), dtype=np.int64)
        rank[np.lexsort(grid.X.T[::-1])] = np.arange(len(grid))
        self._rank = rank
        self._groups = {}
        keys = [tuple(r) for r in grid.X[:, self._cat]] if len(self._cat) else [()] * len(grid)
        for key in sorted(set(keys)):
            idx = np.array([i for i, k in enumerate(keys) if k == key])
            self._groups[key] = (idx, cKDTree(self._norm(grid.X[idx])))

    def _norm(self, X):
        return (X[:, self._cont] - self._lo) / self._span if len(self._cont) else np.zeros((len(X), 1))

    def _predict(self, X):
        out = np.empty(len(X), dtype=self.grid.y.dtype)
        keys = [tuple(r) for r in X[:, self._cat]] if len(self._cat) else [()] * len(X)
        keys_arr = np.array([hash(k) for k in keys])
        for key, (idx, tree) in self._groups.items():
            sel = np.nonzero(keys_arr == hash(key))[0]
            if not len(sel):
                continue
            kq = min(8, len(idx))
            dist, nb = tree.query(self._norm(X[sel]), k=kq)
            if kq == 1:
                dist, nb = dist[:, None], nb[:, None]
            tied = dist <= dist[:, :1] * (1 + 1e-9) + 1e-12
            ranks = np.where(tied, self._rank[idx[nb]], np.iinfo(np.int64).max)
            best = nb[np.arange(len(sel)), np.argmin(ranks, axis=1)]
            out[sel] = self.grid.y[idx[best]]
        missing = set(keys) - set(self._groups)
        if missing:
            raise DataError(f"no grid rows for categorical combination(s) {sorted(missing)}")
        return out


def make_grid_teacher(grid: Dataset) -> GridTeacher:
    return GridTeacher(grid)


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_leaf: int | None = None
    max_features: float | None = None
    seed: int = 0
    bootstrap: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "ForestConfig":
        keys = {"n_trees", "max_depth", "min_leaf", "max_features", "seed", "bootstrap"}
        return cls(**{k: v for k, v in d.items() if k in keys})


class ForestTeacher(Teacher):
    """Bagged CART ensemble: mean of tree outputs, or majority vote."""

    def __init__(self, schema: CovariateSchema, trees: list[ArrayTree], config: ForestConfig, importance: np.ndarray):
        super().__init__(schema, f"forest(n_trees={len(trees)}, seed={config.seed})")
        self.trees = trees
        self.config = config
        self.importance = importance
        self._arrays = stack_trees(trees)

    def _predict(self, X):
        if self.schema.is_classification:
            return self._arrays.vote(X, len(self.schema.classes))
        return self._arrays.mean(X)


def fit_forest_teacher(data: Dataset, config: ForestConfig = ForestConfig()) -> Teacher:
    """Train the built-in random forest on ``data``.

    Defaults follow the usual random-forest conventions: a third of the
    covariates per split and leaves of at least 5 rows for regression, the
    square root of the covariate count and leaves of 1 row for classification.
    Deterministic for a fixed ``config.seed``.
    """
    if len(data) == 0:
        raise DataError("cannot fit a forest to empty data")
    schema = data.schema
    if schema.is_classification and len(np.unique(data.y)) == 1:
        label = int(data.y[0])
        log.warning("single-class training data; forest teacher is the constant class %s", schema.classes[label])
        return FunctionTeacher(lambda X: np.full(len(X), label), schema, f"constant({schema.classes[label]})")
    p = schema.p
    if schema.is_classification:
        criterion = SplitCriterion(GINI)
        min_leaf = 1 if config.min_leaf is None else config.min_leaf
        mtry = config.max_features if config.max_features is not None else math.sqrt(p) / p
    else:
        criterion = SplitCriterion(SSE)
        min_leaf = 5 if config.min_leaf is None else config.min_leaf
        mtry = config.max_features if config.max_features is not None else 1 / 3
    n_feat = max(1, min(p, int(math.floor(mtry * p))))
    region = schema.full_region()
    n = len(data)
    C = len(schema.classes) if schema.is_classification else None
    trees, importance = [], np.zeros(p)
    for t in range(config.n_trees):
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, t]))
        idx = rng.integers(0, n, size=n) if config.bootstrap else np.arange(n)
        tree = grow_tree(
            data.X[idx],
            data.y[idx],
            region,
            criterion,
            rng,
            max_depth=config.max_depth,
            min_leaf=min_leaf,
            n_classes=C,
            max_features=n_feat,
        )
        dec = tree.weighted_decrease()
        internal = tree.feature >= 0
        np.add.at(importance, tree.feature[internal], dec[internal])
        trees.append(tree)
    total = importance.sum()
    importance = importance / total if total > 0 else importance
    return ForestTeacher(schema, trees, config, importance)


class ExternalTeacher(Teacher):
    """A teacher living in a child process that speaks the line protocol.

    The child prints ``DDT-TEACHER 1`` on start-up. Each request is a header
    ``PREDICT <n> <p>`` followed by ``n`` comma-separated rows; the reply is
    ``n`` lines, one response each. Standard error is collected only for
    error messages. Calls are serialised: one batch in flight at a time.
    """

    def __init__(self, command, schema: CovariateSchema, timeout: float = 60.0):
        super().__init__(schema, f"external({command if isinstance(command, str) else ' '.join(command)})")
        self.timeout = float(timeout)
        self.exchanges = 0
        self._lock = threading.Lock()
        self._lines: queue.Queue = queue.Queue()
        self._stderr = collections.deque(maxlen=20)
        args = shlex.split(command) if isinstance(command, str) else list(command)
        try:
            self._proc = subprocess.Popen(
                args,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise TeacherError(f"cannot start external teacher {command!r}: {exc}") from None
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        threading.Thread(target=self._pump_stderr, daemon=True).start()
        first = self._next_line(time.monotonic() + self.timeout, "handshake")
        if first.strip() != HANDSHAKE:
            self.close()
            raise TeacherError(f"external teacher sent {first.strip()!r} instead of handshake {HANDSHAKE!r}")

    def _pump_stdout(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _pump_stderr(self):
        for line in self._proc.stderr:
            self._stderr.append(line.rstrip("\n"))

    def _excerpt(self) -> str:
        time.sleep(0.05)
        text = " | ".join(self._stderr)
        return f" (stderr: {text[-500:]})" if text else ""

    def _next_line(self, deadline: float, what: str) -> str:
        remaining = deadline - time.monotonic()
        try:
            line = self._lines.get(timeout=max(remaining, 0.0))
        except queue.Empty:
            raise TeacherError(f"external teacher timed out waiting for {what} after {self.timeout:g} s") from None
        if line is None:
            self._lines.put(None)
            code = self._proc.poll()
            raise TeacherError(f"external teacher exited (code {code}) while waiting for {what}{self._excerpt()}")
        return line

    def _format_row(self, row) -> str:
        return ",".join(self.schema.format_value(j, v) for j, v in enumerate(row))

    def _predict(self, X):
        with self._lock:
            if self._proc.poll() is not None:
                raise TeacherError(f"external teacher is not running{self._excerpt()}")
            n, p = X.shape
            payload = [f"PREDICT {n} {p}\n"] + [self._format_row(r) + "\n" for r in X]
            try:
                self._proc.stdin.write("".join(payload))
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError):
                raise TeacherError(f"external teacher unreachable (broken pipe){self._excerpt()}") from None
            self.exchanges += 1
            deadline = time.monotonic() + self.timeout
            replies = []
            for i in range(n):
                try:
                    replies.append(self._next_line(deadline, f"reply {i + 1} of {n}").strip())
                except TeacherError as exc:
                    # the stream is out of step now; later batches cannot be trusted
                    self._proc.kill()
                    raise TeacherError(f"protocol violation: got {len(replies)} of {n} replies; {exc}") from None
        if self.schema.is_classification:
            index = {c: i for i, c in enumerate(self.schema.classes)}
            try:
                return np.array([index[r] for r in replies], dtype=np.int64)
            except KeyError as exc:
                raise TeacherError(f"protocol violation: unknown class label {exc.args[0]!r}") from None
        try:
            return np.array([float(r) for r in replies])
        except ValueError:
            raise TeacherError("protocol violation: non-numeric reply") from None

    def close(self):
        proc = getattr(self, "_proc", None)
        if proc is not None and proc.poll() is None:
            try:
                proc.stdin.close()
            except OSError:
                pass
            try:
                proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def connect_external_teacher(command, schema: CovariateSchema, timeout: float = 60.0) -> ExternalTeacher:
    return ExternalTeacher(command, schema, timeout)


def serve(predict: Callable[[list[list[str]]], list], stdin=None, stdout=None) -> None:
    """Run the child side of the protocol around ``predict``.

    ``predict`` receives the raw string fields of each row and returns one
    response per row. Useful for wrapping a Python model as an external teacher.
    """
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    stdout.write(HANDSHAKE + "\n")
    stdout.flush()
    while True:
        header = stdin.readline()
        if not header:
            return
        parts = header.split()
        if len(parts) != 3 or parts[0] != "PREDICT":
            continue
        n = int(parts[1])
        rows = [stdin.readline().rstrip("\n").split(",") for _ in range(n)]
        out = predict(rows)
        stdout.write("".join(f"{v}\n" for v in out))
        stdout.flush()
