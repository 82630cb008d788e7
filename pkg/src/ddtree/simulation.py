"""The bundled two-dimensional test function and the validation experiments.

The function lives on ``[0, 50]^2`` and is tabulated on the 51 x 51 integer
grid (2601 rows). It combines axis-aligned blocks with a smooth bump in the
upper-right corner and a low-amplitude interaction ripple, so a depth-4 CART
fit to the whole grid needs nine splits while a tree fit to a few dozen
samples misses most of them.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from ddtree.criteria import SplitCriterion
from ddtree.domain import Continuous, Covariate, CovariateSchema, Dataset, load_dataset, sample_region, write_dataset
from ddtree.induction import InductionConfig, OdtConfig, StoppingConfig, induce_ddt
from ddtree.odt import grow_tree
from ddtree.stability import split_confidence_interval
from ddtree.stump import best_split
from ddtree.teacher import ForestConfig, fit_forest_teacher, make_step_teacher

GRID_SIZE = 51
LIMIT = 50.0
TRUE_PARTITION_DEPTH = 4
TRUE_PARTITION_CP = 0.002
ODT_BASELINE = OdtConfig(max_depth=4, min_leaf=5)
ODT_BASELINE_CP = 0.01
# a sharp teacher: bagged trees on all covariates grown to single-row leaves
TEACHER_FOREST = dict(max_features=1.0, min_leaf=1)


def sim2d_function(x1, x2):
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    left = x1 < 20
    y = np.where(left, 8 + 14 * (x2 >= 32), 26 - 14 * (x2 < 14))
    y = y + np.where(~left & (x1 < 36) & (x2 >= 30), 18, 0)
    y = y + np.where(left & (x2 < 32) & (x1 >= 10), 6, 0)
    y = y + np.where(~left & (x2 < 14) & (x1 >= 38), 7, 0)
    y = y + 9 * np.exp(-((x1 - 42) ** 2 + (x2 - 42) ** 2) / 30.0)
    y = y + 2.5 * np.sin(x1 / 3.0) * np.cos(x2 / 4.0)
    return y


def sim2d_schema() -> CovariateSchema:
    return CovariateSchema((Covariate("x1", Continuous(0.0, LIMIT)), Covariate("x2", Continuous(0.0, LIMIT))))


def make_sim2d_grid() -> Dataset:
    g = np.linspace(0.0, LIMIT, GRID_SIZE)
    x1, x2 = np.meshgrid(g, g, indexing="ij")
    X = np.column_stack([x1.ravel(), x2.ravel()])
    return Dataset(sim2d_schema(), X, sim2d_function(X[:, 0], X[:, 1]))


def write_sim2d_grid(path) -> None:
    write_dataset(path, make_sim2d_grid())


def sim2d_path() -> Path:
    return Path(str(resources.files("ddtree") / "data" / "sim2d.csv"))


def sim2d_config_path() -> Path:
    """The bundled run configuration for the headline 2D distillation."""
    return Path(str(resources.files("ddtree") / "data" / "sim2d_config.json"))


def load_sim2d() -> Dataset:
    """The bundled grid, read back from its CSV."""
    _, data = load_dataset(sim2d_path())
    return data


def true_partition(grid: Dataset):
    """The depth-4 CART partition of the full grid; its prediction is the reference interpretation."""
    return grow_tree(
        grid.X, grid.y, grid.schema.full_region(), SplitCriterion("sse"), max_depth=TRUE_PARTITION_DEPTH, cp=TRUE_PARTITION_CP
    )


def partition_mse(reference: np.ndarray, estimate: np.ndarray) -> float:
    return float(np.mean((np.asarray(reference) - np.asarray(estimate)) ** 2))


# ---------------------------------------------------------------- convergence


def step_split_errors(n: int, reps: int, seed: int = 0) -> np.ndarray:
    """|x_s - 1| for ``reps`` stumps fit to n uniform samples of the 0/10 step teacher on [0, 2]."""
    t = make_step_teacher(0.0, 2.0, 1.0, 0.0, 10.0)
    region = t.schema.full_region()
    crit = SplitCriterion("sse")
    out = np.empty(reps)
    for r in range(reps):
        rng = np.random.default_rng(np.random.SeedSequence([seed, n, r]))
        X = sample_region(region, n, rng)
        out[r] = abs(best_split(X, t.predict_batch(X), region, crit, rng).cut - 1.0)
    return out


def convergence_table(sizes=(250, 500, 1000, 2000, 4000), reps: int = 200, seed: int = 0) -> list[dict]:
    rows = []
    for n in sizes:
        err = step_split_errors(n, reps, seed)
        rows.append({"n": n, "median_error": float(np.median(err)), "mean_error": float(err.mean())})
    for a, b in zip(rows, rows[1:]):
        a["ratio_to_next"] = a["median_error"] / b["median_error"]
    return rows


# ------------------------------------------------------------------- coverage


def coverage_rate(n: int, reps: int, seed: int = 0) -> float:
    """Share of ``reps`` step-teacher intervals that contain the true split 1.0."""
    err = step_split_errors(n, reps, seed)
    h = split_confidence_interval(1.0, 2.0, n)[1] - 1.0
    return float(np.mean(err <= h))


def coverage_table(sizes=(100, 500, 1000), outer: int = 100, inner: int = 1000, seed: int = 0) -> list[dict]:
    rows = []
    for n in sizes:
        rates = np.array([coverage_rate(n, inner, seed * 100_003 + o) for o in range(outer)])
        rows.append(
            {
                "n": n,
                "mean_coverage": float(rates.mean()),
                "q05": float(np.quantile(rates, 0.05)),
                "q95": float(np.quantile(rates, 0.95)),
                "outer": outer,
                "inner": inner,
            }
        )
    return rows


# ------------------------------------------------------------- interpretation


def interpretation_config(seed: int) -> InductionConfig:
    return InductionConfig(
        repeats=100,
        sample_size=2000,
        stopping=StoppingConfig(max_interpretable_depth=4, max_interpretable_nodes=9, pxi_threshold=0.01),
        odt=OdtConfig(max_depth=6, min_leaf=5, pseudo_sample_size=5000),
        seed=seed,
        escalate=False,
        eval_sample_size=10_000,
    )


@dataclass
class InterpretationRun:
    run: int
    odt_mse: float
    ddt_mse: float
    ddt_splits: int
    min_first_level: float
    seconds: float

    @property
    def ddt_wins(self) -> bool:
        return self.ddt_mse < self.odt_mse


def sim2d_sample(grid: Dataset, run: int, seed: int = 0, n_samples: int = 50) -> Dataset:
    """The ``n_samples`` grid rows observed in one run of the interpretation experiment."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, run]))
    return grid.subset(rng.choice(len(grid), size=n_samples, replace=False))


def run_seed(run: int, seed: int = 0) -> int:
    return seed * 7919 + run


def interpretation_run(run: int, grid: Dataset, reference: np.ndarray, seed: int = 0, n_samples: int = 50,
                       n_trees: int = 100, workers: int = 1) -> InterpretationRun:  # fmt: skip
    """One ODT-versus-DDT comparison on a fresh draw of ``n_samples`` grid rows."""
    t0 = time.perf_counter()
    sample = sim2d_sample(grid, run, seed, n_samples)
    odt = grow_tree(
        sample.X,
        sample.y,
        grid.schema.full_region(),
        SplitCriterion("sse"),
        max_depth=ODT_BASELINE.max_depth,
        min_leaf=ODT_BASELINE.min_leaf,
        cp=ODT_BASELINE_CP,
    )
    teacher = fit_forest_teacher(sample, ForestConfig(n_trees=n_trees, seed=run_seed(run, seed), **TEACHER_FOREST))
    tree = induce_ddt(teacher, grid.schema, sample, interpretation_config(run_seed(run, seed)), workers=workers)
    firsts = [max(tree.nodes[k].stability.first_level) for k in tree.interpretable]
    return InterpretationRun(
        run,
        partition_mse(reference, odt.predict(grid.X)),
        partition_mse(reference, tree.partition_values(grid.X)),
        len(tree.interpretable),
        min(firsts) if firsts else math.nan,
        time.perf_counter() - t0,
    )


def interpretation_suite(runs: int = 100, seed: int = 0, n_samples: int = 50, workers: int = 1) -> list[InterpretationRun]:
    grid = load_sim2d()
    reference = true_partition(grid).predict(grid.X)
    return [interpretation_run(r, grid, reference, seed, n_samples, workers=workers) for r in range(runs)]
