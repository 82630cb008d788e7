import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddtree.criteria import SplitCriterion
from ddtree.domain import Dataset
from ddtree.errors import ConfigError, DataError
from ddtree.explanation import INTERPRETABLE, LEAF, PREDICTIVE
from ddtree.induction import (
    BREADTH_FIRST,
    PARALLEL,
    PATH,
    InductionConfig,
    OdtConfig,
    StoppingConfig,
    Strategy,
    induce_ddt,
    predict,
    schedule,
    with_config,
)
from ddtree.io import dumps_tree
from ddtree.odt import grow_tree
from ddtree.simulation import ODT_BASELINE, ODT_BASELINE_CP, load_sim2d, partition_mse, sim2d_sample, true_partition
from ddtree.teacher import make_grid_teacher, make_step_teacher, make_two_cut_teacher

SSE = SplitCriterion("sse")
FIG4 = [1, 2, 3, 4, 6, 8, 13]

LIGHT = InductionConfig(
    repeats=30,
    sample_size=1000,
    seed=0,
    escalate=False,
    eval_sample_size=5000,
    stopping=StoppingConfig(max_interpretable_depth=3, pxi_threshold=0.05),
    odt=OdtConfig(max_depth=4, pseudo_sample_size=2000),
)


def assert_normalised(tree):
    assert tree.summary.total() == pytest.approx(1.0, abs=1e-9)


def test_schedule_examples():
    assert schedule(Strategy(BREADTH_FIRST), [13, 8, 6, 4, 3, 2, 1]) == [[1], [2, 3], [4, 6], [8, 13]]
    flat = [k for b in schedule(Strategy(BREADTH_FIRST), FIG4) for k in b]
    assert flat == FIG4
    s = Strategy(PATH, "rlr")
    assert s.target_id == 13
    assert schedule(s, FIG4) == [[1], [3], [6], [13]]
    assert schedule(Strategy(PARALLEL), [2, 3]) == [[2, 3]]
    assert schedule(Strategy(PARALLEL), [1, 2, 3, 6, 13]) == [[1], [2, 3], [6], [13]]
    with pytest.raises(ConfigError):
        Strategy(PATH, "LX")
    with pytest.raises(ConfigError):
        Strategy("depth_first")


@given(st.sets(st.integers(1, 200), min_size=1, max_size=30))
def test_parallel_batches_never_share_a_path(ids):
    batches = schedule(Strategy(PARALLEL), ids)
    assert sorted(k for b in batches for k in b) == sorted(ids)
    for b in batches:
        for a in b:
            for c in b:
                if a < c:
                    assert c >> (c.bit_length() - a.bit_length()) != a


def test_experiment_tree_shape(sim2d_run):
    run, teacher, observed, tree = sim2d_run
    assert_normalised(tree)
    n_interp = len(tree.interpretable)
    assert 1 <= n_interp <= run.induction.stopping.max_interpretable_nodes
    assert max(tree.nodes[k].depth for k in tree.interpretable) < 4
    grid = load_sim2d()
    reference = true_partition(grid).predict(grid.X)
    ddt_mse = partition_mse(reference, tree.partition_values(grid.X))
    sample = sim2d_sample(grid, 0, 0)
    odt = grow_tree(
        sample.X, sample.y, grid.schema.full_region(), SSE,
        max_depth=ODT_BASELINE.max_depth, min_leaf=ODT_BASELINE.min_leaf, cp=ODT_BASELINE_CP,
    )
    assert ddt_mse < partition_mse(reference, odt.predict(grid.X))
    for k in tree.interpretable:
        assert tree.nodes[k].stability.repeats == 100
        assert 2 * k in tree.nodes and 2 * k + 1 in tree.nodes


def test_routing_partitions_observed_rows(sim2d_run):
    _, _, observed, tree = sim2d_run
    ids = tree.route(observed.X)
    assert set(ids) <= set(tree.terminal)
    assert sum(tree.nodes[k].observed_count for k in tree.terminal) == len(observed)
    for k in tree.terminal:
        assert tree.nodes[k].observed_count == int(np.sum(ids == k))
    for k in tree.interpretable:
        l, r = 2 * k, 2 * k + 1
        assert tree.nodes[l].observed_count + tree.nodes[r].observed_count == tree.nodes[k].observed_count


def test_constant_teacher_gives_single_leaf():
    t = make_step_teacher(0, 2, 1, 4, 4)
    tree = induce_ddt(t, t.schema, None, LIGHT, workers=1)
    assert list(tree.nodes) == [1] and tree.nodes[1].kind == LEAF and tree.nodes[1].value == 4.0
    assert predict(tree, [[0.3], [1.9]]).tolist() == [4.0, 4.0]
    assert_normalised(tree)


def test_pxi_threshold_one_keeps_root_predictive():
    t = make_two_cut_teacher()
    tree = induce_ddt(t, t.schema, None, with_config(LIGHT, stopping__pxi_threshold=1.0), workers=1)
    assert list(tree.nodes) == [1]
    assert tree.nodes[1].kind == PREDICTIVE and tree.nodes[1].subtree.n_nodes > 1
    assert tree.summary.pxi == {1: 1.0}


def test_step_teacher_predictions():
    t = make_step_teacher(0, 2, 1, 0, 10)
    tree = induce_ddt(t, t.schema, None, with_config(LIGHT, stopping__max_interpretable_depth=1), workers=1)
    assert tree.interpretable == [1]
    cut = tree.nodes[1].split.cut
    assert abs(cut - 1.0) <= 3 * 2.0 / (2 * 1000)
    assert predict(tree, [[0.5], [1.5]]).tolist() == [0.0, 10.0]
    assert tree.route([[cut]]).tolist() == [3]
    with pytest.raises(DataError):
        predict(tree, [[2.5]])
    with pytest.raises(DataError):
        predict(tree, [[0.5, 0.5]])
    assert_normalised(tree)


def test_workers_and_schedule_do_not_change_the_tree():
    teacher = make_grid_teacher(load_sim2d())
    observed = sim2d_sample(load_sim2d(), 4, 0)
    base = dumps_tree(induce_ddt(teacher, teacher.schema, observed, LIGHT, workers=1))
    assert dumps_tree(induce_ddt(teacher, teacher.schema, observed, LIGHT, workers=3)) == base
    par = with_config(LIGHT, strategy=Strategy(PARALLEL))
    a = induce_ddt(teacher, teacher.schema, observed, par, workers=2)
    assert [(k, n.kind, n.split and n.split.split) for k, n in a.nodes.items()] == [
        (k, n.kind, n.split and n.split.split) for k, n in induce_ddt(teacher, teacher.schema, observed, LIGHT, workers=1).nodes.items()
    ]


def test_path_strategy_grows_one_branch():
    teacher = make_grid_teacher(load_sim2d())
    cfg = with_config(LIGHT, strategy=Strategy(PATH, "RL"), stopping__max_interpretable_depth=None)
    tree = induce_ddt(teacher, teacher.schema, None, cfg, workers=1)
    assert tree.interpretable == [1, 3]
    assert tree.nodes[6].kind in (PREDICTIVE, LEAF)
    assert "off target path" in tree.nodes[2].flags
    assert_normalised(tree)


def test_min_region_observed_suppresses_splits():
    teacher = make_grid_teacher(load_sim2d())
    observed = sim2d_sample(load_sim2d(), 0, 0)
    cfg = with_config(LIGHT, stopping__min_region_observed=20)
    tree = induce_ddt(teacher, teacher.schema, observed, cfg, workers=1)
    for k in tree.interpretable:
        assert tree.nodes[2 * k].observed_count >= 20 and tree.nodes[2 * k + 1].observed_count >= 20
    assert any("suppressed" in f for n in tree.nodes.values() for f in n.flags)


def test_approximation_improves_with_subtree_depth():
    teacher = make_grid_teacher(load_sim2d())
    probe = np.random.default_rng(123).uniform(0, 50, (10_000, 2))
    target = teacher.predict_batch(probe)
    devs = []
    for depth in (2, 4, 8):
        cfg = with_config(LIGHT, odt__max_depth=depth)
        tree = induce_ddt(teacher, teacher.schema, None, cfg, workers=1)
        assert_normalised(tree)
        devs.append(float(np.mean((predict(tree, probe) - target) ** 2)))
    assert devs[0] >= devs[1] >= devs[2]


def test_classification_tree():
    from ddtree.domain import Continuous, Covariate, CovariateSchema
    from ddtree.teacher import FunctionTeacher

    schema = CovariateSchema((Covariate("x", Continuous(0.0, 1.0)), Covariate("z", Continuous(0.0, 1.0))), classes=("a", "b"))
    t = FunctionTeacher(lambda X: (X[:, 0] + 0.2 * X[:, 1] > 0.6).astype(int), schema)
    cfg = with_config(LIGHT, criterion=SplitCriterion("gini"))
    tree = induce_ddt(t, schema, None, cfg, workers=1)
    assert tree.nodes[1].kind == INTERPRETABLE and tree.nodes[1].split.covariate_index == 0
    probe = np.random.default_rng(0).uniform(0, 1, (2000, 2))
    assert np.mean(predict(tree, probe) == t.predict_batch(probe)) > 0.97
    assert_normalised(tree)
    with pytest.raises(ConfigError):
        induce_ddt(t, schema, None, LIGHT)


def test_config_roundtrip_and_errors():
    assert InductionConfig.from_dict(LIGHT.to_dict()) == LIGHT
    with pytest.raises(ConfigError):
        InductionConfig.from_dict({"repeats": 10, "bogus": 1})
    with pytest.raises(ConfigError):
        StoppingConfig(pxi_threshold=0.0)


@settings(max_examples=10)
@given(st.integers(0, 2**31), st.integers(5, 40))
def test_observed_rows_always_partition(seed, n):
    t = make_two_cut_teacher()
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 2, (n, 1))
    obs = Dataset(t.schema, X, t.predict_batch(X))
    cfg = with_config(LIGHT, seed=seed % 1000, repeats=10, sample_size=300, odt__pseudo_sample_size=500, eval_sample_size=1000)
    tree = induce_ddt(t, t.schema, obs, cfg, workers=1)
    assert sum(tree.nodes[k].observed_count for k in tree.terminal) == n
    assert_normalised(tree)
