import numpy as np
import pytest

from ddtree.domain import load_dataset
from ddtree.simulation import (
    coverage_table,
    convergence_table,
    interpretation_run,
    load_sim2d,
    make_sim2d_grid,
    partition_mse,
    run_seed,
    sim2d_function,
    sim2d_path,
    sim2d_sample,
    true_partition,
)


def test_bundled_grid_matches_generator():
    grid, made = load_sim2d(), make_sim2d_grid()
    np.testing.assert_array_equal(grid.X, made.X)
    np.testing.assert_allclose(grid.y, made.y, rtol=0, atol=1e-12)
    assert sorted(set(grid.X[:, 0])) == [float(v) for v in range(51)]
    _, again = load_dataset(sim2d_path())
    assert len(again) == 2601


def test_function_is_piecewise_with_texture():
    assert sim2d_function(5, 5) == pytest.approx(8 + 2.5 * np.sin(5 / 3) * np.cos(5 / 4) + 9 * np.exp(-(37**2 + 37**2) / 30))
    assert sim2d_function(30, 40) - sim2d_function(30, 20) > 15


def test_true_partition_has_nine_splits():
    tree = true_partition(load_sim2d())
    assert int(np.sum(tree.feature >= 0)) == 9
    assert tree.depth() == 4
    assert set(tree.feature[tree.feature >= 0]) == {0, 1}


def test_partition_mse():
    assert partition_mse([1.0, 2.0], [1.0, 4.0]) == 2.0
    grid = load_sim2d()
    ref = true_partition(grid).predict(grid.X)
    assert partition_mse(ref, ref) == 0.0


def test_samples_are_distinct_grid_rows_and_seeded():
    grid = load_sim2d()
    a = sim2d_sample(grid, 5, 0)
    assert len({tuple(r) for r in a.X.tolist()}) == 50
    lookup = {tuple(r): y for r, y in zip(grid.X.tolist(), grid.y.tolist())}
    assert all(lookup[tuple(r)] == y for r, y in zip(a.X.tolist(), a.y.tolist()))
    np.testing.assert_array_equal(sim2d_sample(grid, 5, 0).X, a.X)
    assert not np.array_equal(sim2d_sample(grid, 6, 0).X, a.X)
    assert not np.array_equal(sim2d_sample(grid, 5, 1).X, a.X)
    assert run_seed(0, 0) == 0 and run_seed(3, 2) == 2 * 7919 + 3


def test_bundled_sample_is_run_zero():
    grid = load_sim2d()
    from ddtree.io import build_run, load_run_config
    from ddtree.simulation import sim2d_config_path

    _, _, observed = build_run(load_run_config(sim2d_config_path()))
    np.testing.assert_array_equal(observed.X, sim2d_sample(grid, 0, 0).X)
    np.testing.assert_allclose(observed.y, sim2d_sample(grid, 0, 0).y, rtol=0, atol=1e-12)


def test_suite_run_zero_equals_bundled_distillation(sim2d_run):
    grid = load_sim2d()
    ref = true_partition(grid).predict(grid.X)
    r = interpretation_run(0, grid, ref, seed=0)
    tree = sim2d_run[3]
    assert r.ddt_splits == len(tree.interpretable)
    assert r.ddt_mse == partition_mse(ref, tree.partition_values(grid.X))
    assert r.ddt_wins == (r.ddt_mse < r.odt_mse)


def test_tables_have_expected_shape():
    rows = convergence_table(sizes=(250, 500), reps=20, seed=1)
    assert [r["n"] for r in rows] == [250, 500] and "ratio_to_next" in rows[0]
    cov = coverage_table(sizes=(100,), outer=3, inner=50, seed=2)
    assert cov[0]["outer"] == 3 and 0 <= cov[0]["q05"] <= cov[0]["mean_coverage"] <= cov[0]["q95"] <= 1
