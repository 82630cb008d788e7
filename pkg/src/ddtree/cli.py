"""The ``ddt`` command.

Exit codes: 0 success, 2 configuration or input error, 3 teacher failure,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from ddtree import __version__
from ddtree.errors import ConfigError, DataError, InvariantError, TeacherError, UninformativeSplit
from ddtree.induction import induce_ddt, predict
from ddtree.io import (
    build_run,
    check_tree,
    export_dot,
    load_run_config,
    load_tree,
    read_rows,
    write_draws_csv,
    write_run_outputs,
    write_stability_report,
)
from ddtree.stability import default_workers, measure_split_stability

log = logging.getLogger("ddtree")

EXIT_OK, EXIT_CONFIG, EXIT_TEACHER, EXIT_INTERNAL = 0, 2, 3, 4


def _close(teacher):
    close = getattr(teacher, "close", None)
    if close:
        close()


def cmd_distill(args) -> int:
    run = load_run_config(args.config)
    teacher, schema, observed = build_run(run)
    try:
        t0 = time.perf_counter()
        tree = induce_ddt(teacher, schema, observed, run.induction)
        elapsed = time.perf_counter() - t0
    finally:
        _close(teacher)
    check_tree(tree)
    out = write_run_outputs(tree, args.output or run.output)
    print(f"{len(tree.interpretable)} interpretable nodes, {len(tree.terminal)} terminal nodes in {elapsed:.1f}s")
    print(f"wrote {out / 'tree.json'}, explanation.csv, tree.dot, stability/")
    return EXIT_OK


def _stability_region(args, run, schema):
    from ddtree.domain import Region

    if args.region:
        try:
            return Region(schema, json.loads(args.region))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--region is not valid JSON: {exc}") from None
    if args.node == 1:
        return schema.full_region()
    tree_path = Path(args.tree) if args.tree else run.output / "tree.json"
    if not tree_path.is_file():
        raise ConfigError(f"node {args.node} needs a fitted tree; pass --tree or run 'ddt distill' first")
    tree = load_tree(tree_path)
    if args.node not in tree.nodes:
        raise ConfigError(f"node {args.node} is not in {tree_path}")
    return tree.nodes[args.node].region


def cmd_stability(args) -> int:
    run = load_run_config(args.config)
    teacher, schema, _ = build_run(run)
    cfg = run.induction
    try:
        region = _stability_region(args, run, schema)
        t0 = time.perf_counter()
        try:
            report = measure_split_stability(
                teacher,
                region,
                cfg.criterion,
                cfg.repeats,
                cfg.sample_size,
                cfg.seed,
                args.node,
                workers=default_workers(),
                oscillation=cfg.oscillation,
                escalate=cfg.escalate,
            )
        except UninformativeSplit as exc:
            raise ConfigError(f"no informative split in this region: {exc}") from None
        elapsed = time.perf_counter() - t0
    finally:
        _close(teacher)
    folder = Path(args.output) if args.output else run.output / "stability"
    path = write_stability_report(report, args.node, folder)
    write_draws_csv(report, folder / f"{args.node}_draws.csv")
    names = schema.names
    first = ", ".join(f"{names[j]}: {m:.3f}" for j, m in enumerate(report.first_level) if m > 0)
    print(f"node {args.node}: first level {{{first}}}")
    print(f"chosen split: {report.chosen.split.describe(schema)}")
    if report.ci:
        print(f"approximate interval: [{report.ci[0]:.6g}, {report.ci[1]:.6g}]")
    print(f"oscillation: {report.oscillation.kind if report.oscillation else 'none'}")
    print(f"N={report.repeats} n={report.sample_size} runtime {elapsed:.1f}s; wrote {path}")
    return EXIT_OK


def _write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def cmd_validate(args) -> int:
    from ddtree import simulation as sim

    out = Path(args.output)
    seed = args.seed
    if args.suite == "convergence":
        rows = sim.convergence_table(reps=args.reps or (50 if args.fast else 200), seed=seed)
        for r in rows:
            ratio = r.get("ratio_to_next")
            extra = f"  ratio to next {ratio:.2f}" if ratio is not None else ""
            print(f"n={r['n']:5d}  median |x - x*| = {r['median_error']:.3e}{extra}")
    elif args.suite == "coverage":
        outer, inner = (10, 200) if args.fast else (100, 1000)
        rows = sim.coverage_table(outer=args.reps or outer, inner=inner, seed=seed)
        for r in rows:
            print(f"n={r['n']:5d}  mean coverage {r['mean_coverage']:.3f}  (5%-95%: {r['q05']:.3f}-{r['q95']:.3f})")
    else:
        runs = args.reps or (10 if args.fast else 100)
        t0 = time.perf_counter()
        results = sim.interpretation_suite(runs, seed=seed, workers=default_workers())
        rows = [
            {
                "run": r.run,
                "odt_mse": r.odt_mse,
                "ddt_mse": r.ddt_mse,
                "ddt_wins": int(r.ddt_wins),
                "ddt_splits": r.ddt_splits,
                "min_first_level": r.min_first_level,
                "seconds": round(r.seconds, 3),
            }
            for r in results
        ]
        wins = sum(r.ddt_wins for r in results)
        print(f"DDT partition MSE below ODT in {wins} of {runs} runs ({time.perf_counter() - t0:.0f}s)")
    path = out / f"{args.suite}.csv"
    _write_csv(path, rows)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_export_dot(args) -> int:
    text = export_dot(load_tree(args.tree))
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_predict(args) -> int:
    tree = load_tree(args.tree)
    X = read_rows(args.rows, tree.schema)
    pred = predict(tree, X)
    schema = tree.schema
    fh = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.names + [schema.response_name])
        for row, v in zip(X, pred):
            cells = [schema.format_value(j, x) for j, x in enumerate(row)]
            w.writerow(cells + [schema.classes[int(v)] if schema.is_classification else repr(float(v))])
    finally:
        if args.output:
            fh.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddt", description="Distill a black-box teacher into a stable decision tree.")
    p.add_argument("--version", action="version", version=f"ddt {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("distill", help="grow a tree and write its artifacts")
    d.add_argument("-c", "--config", required=True)
    d.add_argument("-o", "--output", help="output folder (default: the config's 'output')")
    d.set_defaults(func=cmd_distill)

    s = sub.add_parser("stability", help="measure split stability in one node's region")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("--node", type=int, default=1, help="node id (root is 1)")
    s.add_argument("--tree", help="tree.json holding the node (default: <output>/tree.json)")
    s.add_argument("--region", help="region as a JSON list of [lo, hi] pairs or level lists")
    s.add_argument("-o", "--output", help="folder for the report (default: <output>/stability)")
    s.set_defaults(func=cmd_stability)

    v = sub.add_parser("validate", help="run a built-in validation experiment")
    v.add_argument("--suite", required=True, choices=["convergence", "coverage", "interpretation"])
    v.add_argument("--fast", action="store_true", help="fewer repetitions for a quick look")
    v.add_argument("--reps", type=int, help="override repeats (convergence), outer reps (coverage) or runs")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("-o", "--output", default="ddt-validate")
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("export-dot", help="print a tree as Graphviz DOT")
    e.add_argument("tree")
    e.add_argument("-o", "--output")
    e.set_defaults(func=cmd_export_dot)

    r = sub.add_parser("predict", help="predict rows with a fitted tree")
    r.add_argument("tree")
    r.add_argument("rows")
    r.add_argument("-o", "--output")
    r.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TeacherError as exc:
        print(f"ddt: teacher error: {exc}", file=sys.stderr)
        return EXIT_TEACHER
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"ddt: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantError as exc:
        print(f"ddt: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - anything else is a bug
        log.exception("unexpected failure")
        print(f"ddt: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
