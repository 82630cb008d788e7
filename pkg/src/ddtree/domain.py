"""Covariate schemas, sampling regions and datasets.

Rows are stored as float matrices. Categorical covariates are encoded by the
integer index of their level in the schema, and categorical responses by the
index of their class, so every numeric routine can work on plain arrays.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ddtree.errors import DataError

OBSERVED = "observed"
PSEUDO = "pseudo"


@dataclass(frozen=True)
class Continuous:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise DataError(f"continuous domain must be finite, got [{self.lo}, {self.hi}]")
        if not self.lo < self.hi:
            raise DataError(f"continuous domain needs lo < hi, got [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class Categorical:
    levels: tuple

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        if len(set(self.levels)) != len(self.levels):
            raise DataError(f"categorical levels must be distinct: {self.levels}")
        if len(self.levels) < 2:
            raise DataError(f"categorical covariate needs >= 2 levels, got {self.levels}")

    def code(self, level: str) -> int:
        try:
            return self.levels.index(str(level))
        except ValueError:
            raise DataError(f"unknown level {level!r}; expected one of {self.levels}") from None


@dataclass(frozen=True)
class Covariate:
    name: str
    kind: Continuous | Categorical

    @property
    def is_categorical(self) -> bool:
        return isinstance(self.kind, Categorical)


@dataclass(frozen=True)
class CovariateSchema:
    """Ordered covariates plus the response kind.

    ``classes`` is ``None`` for a continuous response, otherwise the ordered
    class labels of a categorical response.
    """

    covariates: tuple
    classes: tuple | None = None
    response_name: str = "y"

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        names = [c.name for c in self.covariates]
        if not names:
            raise DataError("schema needs at least one covariate")
        if len(set(names)) != len(names):
            raise DataError(f"covariate names must be unique: {names}")
        if self.classes is not None:
            classes = tuple(str(c) for c in self.classes)
            if len(set(classes)) != len(classes) or len(classes) < 1:
                raise DataError(f"invalid response classes: {self.classes}")
            object.__setattr__(self, "classes", classes)

    @property
    def p(self) -> int:
        return len(self.covariates)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.covariates]

    @property
    def is_classification(self) -> bool:
        return self.classes is not None

    @property
    def categorical_mask(self) -> np.ndarray:
        return np.array([c.is_categorical for c in self.covariates], dtype=bool)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown covariate {name!r}") from None

    def full_region(self) -> "Region":
        bounds = []
        for c in self.covariates:
            if c.is_categorical:
                bounds.append(frozenset(range(len(c.kind.levels))))
            else:
                bounds.append((c.kind.lo, c.kind.hi))
        return Region(self, tuple(bounds))

    def encode_response(self, values: Sequence) -> np.ndarray:
        if self.classes is None:
            return np.asarray(values, dtype=float)
        index = {c: i for i, c in enumerate(self.classes)}
        try:
            return np.array([index[str(v)] for v in values], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"unknown response class {exc.args[0]!r}") from None

    def decode_response(self, codes: Sequence) -> list:
        if self.classes is None:
            return [float(v) for v in codes]
        return [self.classes[int(v)] for v in codes]

    def format_value(self, j: int, value: float) -> str:
        cov = self.covariates[j]
        if cov.is_categorical:
            return cov.kind.levels[int(value)]
        return repr(float(value))

    def to_dict(self) -> dict:
        covs = []
        for c in self.covariates:
            if c.is_categorical:
                covs.append({"name": c.name, "kind": "categorical", "levels": list(c.kind.levels)})
            else:
                covs.append({"name": c.name, "kind": "continuous", "lo": c.kind.lo, "hi": c.kind.hi})
        response = {"name": self.response_name}
        if self.classes is None:
            response["kind"] = "continuous"
        else:
            response["kind"] = "categorical"
            response["classes"] = list(self.classes)
        return {"covariates": covs, "response": response}

    @classmethod
    def from_dict(cls, d: dict) -> "CovariateSchema":
        try:
            covs = []
            for c in d["covariates"]:
                if c["kind"] == "categorical":
                    covs.append(Covariate(c["name"], Categorical(tuple(c["levels"]))))
                elif c["kind"] == "continuous":
                    covs.append(Covariate(c["name"], Continuous(float(c["lo"]), float(c["hi"]))))
                else:
                    raise DataError(f"unknown covariate kind {c['kind']!r}")
            resp = d.get("response", {"kind": "continuous"})
            classes = tuple(resp["classes"]) if resp.get("kind") == "categorical" else None
            return cls(tuple(covs), classes, resp.get("name", "y"))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed schema document: {exc}") from None


class Region:
    """Per-covariate restriction of a schema's domain.

    Continuous bounds are half-open ``[lo, hi)``; the upper bound is inclusive
    only where it coincides with the schema's own upper bound.
    """

    __slots__ = ("schema", "bounds")

    def __init__(self, schema: CovariateSchema, bounds: Sequence):
        if len(bounds) != schema.p:
            raise DataError(f"region has {len(bounds)} bounds for {schema.p} covariates")
        norm = []
        for cov, b in zip(schema.covariates, bounds):
            if cov.is_categorical:
                subset = frozenset(int(v) for v in b)
                if not subset or not subset <= set(range(len(cov.kind.levels))):
                    raise DataError(f"invalid level subset for {cov.name}: {sorted(subset)}")
                norm.append(subset)
            else:
                lo, hi = float(b[0]), float(b[1])
                if not (cov.kind.lo <= lo < hi <= cov.kind.hi):
                    raise DataError(
                        f"interval [{lo}, {hi}] for {cov.name} not inside [{cov.kind.lo}, {cov.kind.hi}]"
                    )
                norm.append((lo, hi))
        self.schema = schema
        self.bounds = tuple(norm)

    def __eq__(self, other):
        return isinstance(other, Region) and self.bounds == other.bounds

    def __hash__(self):
        return hash(self.bounds)

    def __repr__(self):
        parts = []
        for cov, b in zip(self.schema.covariates, self.bounds):
            if cov.is_categorical:
                parts.append(f"{cov.name}∈{{{','.join(cov.kind.levels[i] for i in sorted(b))}}}")
            else:
                parts.append(f"{cov.name}∈[{b[0]:g},{b[1]:g})")
        return f"Region({', '.join(parts)})"

    def width(self, j: int) -> float:
        lo, hi = self.bounds[j]
        return hi - lo

    def contains(self, other: "Region") -> bool:
        for b, o in zip(self.bounds, other.bounds):
            if isinstance(b, frozenset):
                if not o <= b:
                    return False
            elif not (b[0] <= o[0] and o[1] <= b[1]):
                return False
        return True

    def mask(self, X: np.ndarray) -> np.ndarray:
        """Vectorised membership test for the rows of ``X``."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.schema.p:
            raise DataError(f"rows have shape {X.shape}, expected (n, {self.schema.p})")
        inside = np.ones(len(X), dtype=bool)
        for j, (cov, b) in enumerate(zip(self.schema.covariates, self.bounds)):
            col = X[:, j]
            if cov.is_categorical:
                inside &= np.isin(col, sorted(b))
            else:
                upper = col <= b[1] if b[1] == cov.kind.hi else col < b[1]
                inside &= (col >= b[0]) & upper
        return inside

    def to_list(self) -> list:
        return [sorted(b) if isinstance(b, frozenset) else [b[0], b[1]] for b in self.bounds]


def region_contains(region: Region, row: Sequence[float]) -> bool:
    row = np.asarray(row, dtype=float)
    if row.ndim != 1 or row.shape[0] != region.schema.p:
        raise DataError(f"row has {row.size} values, schema has {region.schema.p} covariates")
    return bool(region.mask(row[None, :])[0])


@dataclass(frozen=True)
class Split:
    """A binary split rule: ``x[covariate] < threshold`` or ``x[covariate] == level`` goes left."""

    covariate: int
    threshold: float | None = None
    level: int | None = None

    def __post_init__(self):
        if (self.threshold is None) == (self.level is None):
            raise ValueError("split needs exactly one of threshold or level")

    @property
    def is_categorical(self) -> bool:
        return self.level is not None

    def goes_left(self, X: np.ndarray) -> np.ndarray:
        col = np.asarray(X, dtype=float)[:, self.covariate]
        if self.level is not None:
            return col == self.level
        return col < self.threshold

    def describe(self, schema: CovariateSchema) -> str:
        cov = schema.covariates[self.covariate]
        if self.level is not None:
            return f"{cov.name} = {cov.kind.levels[self.level]}"
        return f"{cov.name} < {self.threshold:.6g}"

    def to_dict(self) -> dict:
        if self.level is not None:
            return {"covariate": self.covariate, "level": self.level}
        return {"covariate": self.covariate, "threshold": self.threshold}

    @classmethod
    def from_dict(cls, d: dict) -> "Split":
        return cls(int(d["covariate"]), d.get("threshold"), d.get("level"))


def split_region(region: Region, split) -> tuple[Region, Region]:
    """Child regions of ``region`` under ``split`` (a :class:`Split` or anything with ``.split``)."""
    split = getattr(split, "split", split)
    j = split.covariate
    b = region.bounds[j]
    left, right = list(region.bounds), list(region.bounds)
    if split.is_categorical:
        if not isinstance(b, frozenset):
            raise DataError("categorical split on a continuous covariate")
        if split.level not in b:
            raise DataError(f"level {split.level} not in region subset {sorted(b)}")
        if len(b) < 2:
            raise DataError("cannot split a single-level subset")
        left[j] = frozenset([split.level])
        right[j] = b - {split.level}
    else:
        if isinstance(b, frozenset):
            raise DataError("threshold split on a categorical covariate")
        lo, hi = b
        if not lo < split.threshold < hi:
            raise DataError(f"cut {split.threshold} outside region interval ({lo}, {hi})")
        left[j] = (lo, split.threshold)
        right[j] = (split.threshold, hi)
    return Region(region.schema, left), Region(region.schema, right)


@dataclass(frozen=True)
class SamplingPath:
    """A strictly nested chain of sampling regions."""

    regions: tuple

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        for outer, inner in zip(self.regions, self.regions[1:]):
            if outer == inner or not outer.contains(inner):
                raise DataError("sampling path regions must be strictly nested")


@dataclass
class Dataset:
    schema: CovariateSchema
    X: np.ndarray
    y: np.ndarray
    provenance: str = OBSERVED
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, self.schema.p)
        self.y = np.asarray(self.y, dtype=np.int64 if self.schema.is_classification else float)
        if len(self.X) != len(self.y):
            raise DataError(f"{len(self.X)} rows but {len(self.y)} responses")
        if len(self.X) and not self.schema.full_region().mask(self.X).all():
            raise DataError("dataset has rows outside the schema domain")

    def __len__(self):
        return len(self.y)

    def subset(self, mask: np.ndarray) -> "Dataset":
        return Dataset(self.schema, self.X[mask], self.y[mask], self.provenance)


def sample_region(region: Region, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` rows uniformly from ``region``."""
    X = np.empty((n, region.schema.p))
    for j, b in enumerate(region.bounds):
        if isinstance(b, frozenset):
            X[:, j] = rng.choice(np.array(sorted(b), dtype=float), size=n)
        else:
            X[:, j] = rng.uniform(b[0], b[1], size=n)
    return X


def _is_number(text: str) -> bool:
    try:
        return math.isfinite(float(text))
    except ValueError:
        return False


def load_dataset(
    path,
    schema_hint: CovariateSchema | None = None,
    *,
    response: str | None = None,
    categorical_response: bool | None = None,
    margin: float = 0.0,
) -> tuple[CovariateSchema, Dataset]:
    """Read a comma-separated file with a header row.

    The response is the column named ``response`` (default: the last column).
    Without a hint, a column is continuous when every cell parses as a finite
    number and categorical otherwise. Continuous domains are the observed
    ``[min, max]`` widened on each side by ``margin`` times the range.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [[cell.strip() for cell in r] for r in rows[1:]]
    if not body:
        raise DataError(f"{path}: no data rows")
    for lineno, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataError(f"{path}:{lineno}: malformed row, {len(r)} fields for {len(header)} columns")
    resp_name = response or header[-1]
    if resp_name not in header:
        raise DataError(f"{path}: response column {resp_name!r} not found")
    ri = header.index(resp_name)
    cov_idx = [i for i in range(len(header)) if i != ri]
    columns = {i: [r[i] for r in body] for i in range(len(header))}

    if schema_hint is not None:
        schema = schema_hint
        names = [header[i] for i in cov_idx]
        if names != schema.names:
            raise DataError(f"{path}: columns {names} do not match schema {schema.names}")
    else:
        covs = []
        for i in cov_idx:
            col = columns[i]
            if all(_is_number(v) for v in col):
                vals = np.array(col, dtype=float)
                lo, hi = float(vals.min()), float(vals.max())
                pad = margin * (hi - lo)
                if hi == lo:
                    pad = max(pad, 0.5 if lo == 0 else abs(lo) * 0.5)
                covs.append(Covariate(header[i], Continuous(lo - pad, hi + pad)))
            else:
                covs.append(Covariate(header[i], Categorical(tuple(sorted(set(col))))))
        resp = columns[ri]
        if categorical_response is None:
            categorical_response = not all(_is_number(v) for v in resp)
        classes = tuple(sorted(set(resp))) if categorical_response else None
        schema = CovariateSchema(tuple(covs), classes, resp_name)

    X = np.empty((len(body), schema.p))
    for j, (i, cov) in enumerate(zip(cov_idx, schema.covariates)):
        col = columns[i]
        if cov.is_categorical:
            X[:, j] = [cov.kind.code(v) for v in col]
        else:
            try:
                X[:, j] = np.array(col, dtype=float)
            except ValueError:
                raise DataError(f"{path}: non-numeric value in continuous column {cov.name!r}") from None
    y = schema.encode_response(columns[ri])
    if not schema.is_classification and not np.isfinite(y).all():
        raise DataError(f"{path}: non-finite response values")
    data = Dataset(schema, X, y, OBSERVED)
    if schema_hint is None:
        data.notes.append("covariate domains inferred from the observed hull" + (f" widened by {margin:g}" if margin else ""))
    return schema, data


def write_dataset(path, data: Dataset) -> None:
    schema = data.schema
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(schema.names + [schema.response_name])
        for row, yv in zip(data.X, schema.decode_response(data.y)):
            w.writerow([schema.format_value(j, v) for j, v in enumerate(row)] + [yv if schema.is_classification else repr(yv)])
