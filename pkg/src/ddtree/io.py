"""Run configuration, tree documents and report files.

A run configuration is one flat JSON object: every induction setting at the
top level, plus ``seed`` (required), ``teacher``, ``data``, ``schema`` and
``output``. Relative input paths resolve against the configuration file's
folder; a relative ``output`` resolves against the working directory.

The tree document is the single source of truth for a fitted tree. Loading
and re-dumping it reproduces the original bytes.
"""

from __future__ import annotations

import csv
import json
import math
import shlex
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ddtree.domain import CovariateSchema, Dataset, Region, load_dataset
from ddtree.errors import ConfigError, DataError, InvariantError
from ddtree.explanation import INTERPRETABLE, LEAF, PREDICTIVE, ExplanationSummary
from ddtree.induction import DdtNode, DdtTree, InductionConfig
from ddtree.odt import ArrayTree
from ddtree.stability import StabilityReport
from ddtree.stump import SplitCandidate
from ddtree.teacher import (
    ForestConfig,
    Teacher,
    connect_external_teacher,
    fit_forest_teacher,
    make_grid_teacher,
    make_plateau_teacher,
    make_step_teacher,
    make_two_cut_teacher,
)

FORMAT = "ddtree-tree"
FORMAT_VERSION = 1

RUN_KEYS = {"seed", "teacher", "data", "schema", "output", "domain_margin"}
INDUCTION_KEYS = {
    "criterion", "weighted_children", "repeats", "sample_size", "stopping", "odt", "strategy",
    "oscillation", "escalate", "weight_source", "impurity_source", "eval_sample_size",
}  # fmt: skip

_FUNCTION_TEACHERS = {
    "step": (make_step_teacher, {"a", "b", "cut", "left", "right"}),
    "two_cut": (make_two_cut_teacher, {"a", "b", "cuts", "low", "high"}),
    "plateau": (make_plateau_teacher, {"a", "b", "c", "d", "scale", "texture"}),
}
_FOREST_KEYS = {"n_trees", "max_depth", "min_leaf", "max_features", "seed", "bootstrap"}


# ------------------------------------------------------------------ json helpers


def _plain(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=1, default=_plain) + "\n"


def _read_json(path) -> dict:
    try:
        with Path(path).open(encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise DataError(f"{path}: expected a JSON object")
    return doc


# ------------------------------------------------------------------ run config


@dataclass
class RunConfig:
    seed: int
    teacher: dict
    induction: InductionConfig
    data: Path | None = None
    schema: CovariateSchema | None = None
    output: Path = Path("ddt-out")
    domain_margin: float = 0.0
    base_dir: Path = field(default_factory=Path.cwd)


def parse_run_config(doc: dict, base_dir=None) -> RunConfig:
    """Validate a configuration object; raises :class:`ConfigError` on any problem."""
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    unknown = set(doc) - RUN_KEYS - INDUCTION_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    if "seed" not in doc:
        raise ConfigError("configuration has no 'seed'; set one explicitly so the run is reproducible")
    seed = doc["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    teacher = doc.get("teacher")
    if not isinstance(teacher, dict) or ("builtin" in teacher) == ("external" in teacher):
        raise ConfigError("'teacher' must be an object with exactly one of 'builtin' or 'external'")
    induction = InductionConfig.from_dict({**{k: doc[k] for k in INDUCTION_KEYS & set(doc)}, "seed": seed})
    schema = None
    if "schema" in doc:
        try:
            schema = CovariateSchema.from_dict(doc["schema"])
        except DataError as exc:
            raise ConfigError(str(exc)) from None

    def resolve(p):
        return None if p is None else (base / p if not Path(p).is_absolute() else Path(p))

    return RunConfig(
        seed=seed,
        teacher=teacher,
        induction=induction,
        data=resolve(doc.get("data")),
        schema=schema,
        output=Path(doc.get("output", "ddt-out")),
        domain_margin=float(doc.get("domain_margin", 0.0)),
        base_dir=base,
    )


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: configuration file not found")
    try:
        doc = _read_json(path)
    except DataError as exc:
        raise ConfigError(str(exc)) from None
    return parse_run_config(doc, path.parent)


def _params(spec: dict, allowed: set, what: str) -> dict:
    params = {k: v for k, v in spec.items() if k not in ("builtin", "data")}
    bad = set(params) - allowed
    if bad:
        raise ConfigError(f"unknown {what} teacher parameters: {sorted(bad)}")
    return params


def _load_observed(run: RunConfig, schema: CovariateSchema | None) -> Dataset | None:
    if run.data is None:
        return None
    _, data = load_dataset(run.data, schema, margin=run.domain_margin)
    return data


def build_run(run: RunConfig) -> tuple[Teacher, CovariateSchema, Dataset | None]:
    """Create the teacher, settle the covariate schema and read the observed data."""
    spec = run.teacher
    if "external" in spec:
        ext = spec["external"]
        if isinstance(ext, str):
            ext = {"command": ext}
        command = ext.get("command")
        if not command:
            raise ConfigError("external teacher needs a 'command'")
        if isinstance(command, str):
            command = shlex.split(command)
        schema = run.schema
        observed = _load_observed(run, schema)
        if schema is None:
            if observed is None:
                raise ConfigError("external teacher needs a 'schema' or 'data' to define the covariates")
            schema = observed.schema
        teacher = connect_external_teacher(command, schema, float(ext.get("timeout", 60.0)))
        return teacher, schema, observed

    kind = spec["builtin"]
    if kind in _FUNCTION_TEACHERS:
        factory, allowed = _FUNCTION_TEACHERS[kind]
        params = _params(spec, allowed, kind)
        if "cuts" in params:
            params["cuts"] = tuple(params["cuts"])
        try:
            teacher = factory(**params)
        except TypeError as exc:
            raise ConfigError(f"{kind} teacher: {exc}") from None
        schema = teacher.schema
        if run.schema is not None and run.schema != schema:
            raise ConfigError(f"configured schema does not match the {kind} teacher's covariates")
        return teacher, schema, _load_observed(run, schema)
    if kind == "grid":
        _params(spec, set(), kind)
        if "data" in spec:
            _, grid = load_dataset(run.base_dir / spec["data"], run.schema)
        else:
            from ddtree.simulation import load_sim2d

            grid = load_sim2d()
        teacher = make_grid_teacher(grid)
        return teacher, grid.schema, _load_observed(run, grid.schema)
    if kind == "forest":
        params = _params(spec, _FOREST_KEYS, kind)
        params.setdefault("seed", run.seed)
        if "data" in spec:
            _, train = load_dataset(run.base_dir / spec["data"], run.schema, margin=run.domain_margin)
            observed = _load_observed(run, train.schema)
        else:
            train = observed = _load_observed(run, run.schema)
        if train is None:
            raise ConfigError("forest teacher needs training rows: set 'data' at the top level or in the teacher")
        teacher = fit_forest_teacher(train, ForestConfig(**params))
        return teacher, train.schema, observed
    raise ConfigError(f"unknown builtin teacher {kind!r}; choose step, two_cut, plateau, grid or forest")


# ------------------------------------------------------------------ tree document


def _node_to_dict(node: DdtNode, schema: CovariateSchema) -> dict:
    d = {
        "id": node.id,
        "kind": node.kind,
        "depth": node.depth,
        "region": node.region.to_list(),
        "value": node.value,
        "observed_count": node.observed_count,
    }
    if node.split is not None:
        d["rule"] = node.split.split.describe(schema)
        d["split"] = node.split.to_dict()
    if node.stability is not None:
        d["stability"] = node.stability.to_dict(include_draws=False)
    if node.subtree is not None:
        d["subtree"] = node.subtree.to_dict()
    d["stats"] = node.stats
    d["flags"] = list(node.flags)
    return d


def _node_from_dict(d: dict, schema: CovariateSchema) -> DdtNode:
    region = Region(schema, d["region"])
    value = d["value"]
    return DdtNode(
        id=int(d["id"]),
        region=region,
        kind=d["kind"],
        value=int(value) if schema.is_classification else float(value),
        split=SplitCandidate.from_dict(d["split"]) if "split" in d else None,
        stability=StabilityReport.from_dict(d["stability"], region) if "stability" in d else None,
        subtree=ArrayTree.from_dict(d["subtree"]) if "subtree" in d else None,
        observed_count=int(d["observed_count"]),
        stats=d.get("stats", {}),
        flags=list(d.get("flags", [])),
    )


def tree_to_dict(tree: DdtTree) -> dict:
    return {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "teacher": tree.teacher,
        "schema": tree.schema.to_dict(),
        "config": tree.config.to_dict(),
        "notes": list(tree.notes),
        "nodes": {str(k): _node_to_dict(tree.nodes[k], tree.schema) for k in sorted(tree.nodes)},
        "summary": tree.summary.to_dict() if tree.summary else None,
    }


def tree_from_dict(doc: dict) -> DdtTree:
    if doc.get("format") != FORMAT:
        raise DataError("not a ddtree tree document")
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported tree format version {doc.get('format_version')!r}")
    try:
        schema = CovariateSchema.from_dict(doc["schema"])
        config = InductionConfig.from_dict(doc["config"])
        nodes = {int(k): _node_from_dict(v, schema) for k, v in doc["nodes"].items()}
        summary = ExplanationSummary.from_dict(doc["summary"]) if doc.get("summary") else None
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed tree document: {exc!r}") from None
    if 1 not in nodes:
        raise DataError("tree document has no root node")
    return DdtTree(schema, dict(sorted(nodes.items())), config, doc.get("teacher", ""), summary, list(doc.get("notes", [])))


def dumps_tree(tree: DdtTree) -> str:
    return dumps(tree_to_dict(tree))


def save_tree(tree: DdtTree, path) -> None:
    Path(path).write_text(dumps_tree(tree), encoding="utf-8")


def load_tree(path) -> DdtTree:
    """Read a tree file; a document that breaks the tree invariants is rejected as bad input."""
    tree = tree_from_dict(_read_json(path))
    try:
        check_tree(tree)
    except InvariantError as exc:
        raise DataError(f"{path}: {exc}") from None
    return tree


def check_tree(tree: DdtTree, tol: float = 1e-9) -> None:
    """Structural checks that must hold for any tree the induction produces."""
    for k, node in tree.nodes.items():
        if k > 1 and (k >> 1) not in tree.nodes:
            raise InvariantError(f"node {k} has no parent")
        if node.kind == INTERPRETABLE and (node.split is None or any(c not in tree.nodes for c in node.children)):
            raise InvariantError(f"interpretable node {k} lacks a split or children")
        if node.kind != INTERPRETABLE and any(c in tree.nodes for c in node.children):
            raise InvariantError(f"terminal node {k} has children")
    if tree.summary is not None:
        total = tree.summary.total()
        if abs(total - 1.0) > tol:
            raise InvariantError(f"explanation indices sum to {total!r}, not 1")


# ------------------------------------------------------------------ reports


def write_stability_report(report: StabilityReport, node_id: int, folder) -> Path:
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    doc = {"node": node_id, "region": report.region.to_list(), **report.to_dict(include_draws=True)}
    path = folder / f"{node_id}.json"
    path.write_text(dumps(doc), encoding="utf-8")
    return path


def write_draws_csv(report: StabilityReport, path) -> None:
    """One row per Monte-Carlo repeat: covariate name, split value, per-row criterion score."""
    schema = report.region.schema
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["repeat", "covariate", "value", "score"])
        for r, dr in enumerate(report.draws):
            if dr.covariate < 0:
                w.writerow([r, "", "", ""])
                continue
            value = schema.format_value(dr.covariate, dr.value)
            w.writerow([r, schema.names[dr.covariate], value, repr(float(dr.score))])


def _pct(x) -> str:
    return "" if x is None else f"{100 * x:.2f}"


EXPLANATION_COLUMNS = [
    "node", "kind", "depth", "rule", "xi_pct", "pxi_pct", "path_xi_pct",
    "interpretable_share_pct", "predictive_share_pct", "observed_pct", "weak_support", "value",
]  # fmt: skip


def explanation_rows(tree: DdtTree) -> list[dict]:
    s = tree.summary
    rows = []
    for k in sorted(tree.nodes):
        node = tree.nodes[k]
        degree = s.interpretation_degree.get(k)
        rows.append(
            {
                "node": k,
                "kind": node.kind,
                "depth": node.depth,
                "rule": node.split.split.describe(tree.schema) if node.split else "",
                "xi_pct": _pct(s.xi.get(k)),
                "pxi_pct": _pct(s.pxi.get(k)),
                "path_xi_pct": _pct(s.path_xi.get(k)),
                "interpretable_share_pct": _pct(degree[0]) if degree else "",
                "predictive_share_pct": _pct(degree[1]) if degree else "",
                "observed_pct": _pct(s.observed_percent.get(k)),
                "weak_support": "yes" if k in s.weak_support else "",
                "value": _format_value(tree, node.value),
            }
        )
    return rows


def _format_value(tree: DdtTree, value) -> str:
    if tree.schema.is_classification:
        return str(tree.schema.classes[int(value)])
    return f"{value:.6g}"


def write_explanation_csv(tree: DdtTree, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, EXPLANATION_COLUMNS)
        w.writeheader()
        w.writerows(explanation_rows(tree))


WEAK_MARKER = "(!) weak support"


def _dot_escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def export_dot(tree: DdtTree) -> str:
    """Graphviz text with one box per node, ordered by node id."""
    s = tree.summary
    lines = ["digraph ddt {", '  node [shape=box, fontname="Helvetica"];']
    for k in sorted(tree.nodes):
        node = tree.nodes[k]
        parts = [f"#{k}"]
        if node.kind == INTERPRETABLE:
            parts.append(node.split.split.describe(tree.schema))
            if s is not None:
                parts.append(f"XI {_pct(s.xi.get(k))}%")
        else:
            if node.kind == PREDICTIVE:
                parts.append(f"predictive subtree, {node.subtree.n_leaves} leaves")
            elif node.kind == LEAF:
                parts.append("leaf")
            if s is not None:
                parts.append(f"PXI {_pct(s.pxi.get(k))}%")
            parts.append(f"value {_format_value(tree, node.value)}")
        if s is not None and k in s.observed_percent:
            parts.append(f"observed {_pct(s.observed_percent[k])}%")
        attrs = ""
        if s is not None and k in s.weak_support:
            parts.append(WEAK_MARKER)
            attrs = ", style=dashed"
        label = "\\n".join(_dot_escape(p) for p in parts)
        lines.append(f'  n{k} [label="{label}"{attrs}];')
    for k in sorted(tree.nodes):
        if tree.nodes[k].kind == INTERPRETABLE:
            l, r = tree.nodes[k].children
            lines.append(f'  n{k} -> n{l} [label="yes"];')
            lines.append(f'  n{k} -> n{r} [label="no"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_run_outputs(tree: DdtTree, outdir) -> Path:
    """tree.json, explanation.csv, tree.dot and one stability file per interpretable node."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    save_tree(tree, out / "tree.json")
    write_explanation_csv(tree, out / "explanation.csv")
    (out / "tree.dot").write_text(export_dot(tree), encoding="utf-8")
    for k in tree.interpretable:
        write_stability_report(tree.nodes[k].stability, k, out / "stability")
    return out


def read_rows(path, schema: CovariateSchema) -> np.ndarray:
    """Covariate rows from a CSV with a header; extra columns (such as a response) are ignored."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [n for n in schema.names if n not in header]
    if missing:
        raise DataError(f"{path}: missing covariate columns {missing}")
    idx = [header.index(n) for n in schema.names]
    X = np.empty((len(rows) - 1, schema.p))
    for i, r in enumerate(rows[1:]):
        if len(r) != len(header):
            raise DataError(f"{path}:{i + 2}: {len(r)} fields for {len(header)} columns")
        for j, (col, cov) in enumerate(zip(idx, schema.covariates)):
            cell = r[col].strip()
            if cov.is_categorical:
                X[i, j] = cov.kind.code(cell)
            else:
                try:
                    X[i, j] = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{i + 2}: non-numeric value {cell!r} for {cov.name}") from None
                if not math.isfinite(X[i, j]):
                    raise DataError(f"{path}:{i + 2}: non-finite value for {cov.name}")
    return X
