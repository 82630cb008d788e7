"""
Distilling a forest on the 2D grid
==================================

Fifty rows of a blocky 2D function train a random forest. The forest is
accurate but opaque; a single CART tree on the same fifty rows is readable
but coarse. The distillation tree reads the forest through fresh pseudo
samples instead, and reports how stable each of its splits is.
"""

import numpy as np

from ddtree.induction import induce_ddt, predict
from ddtree.io import build_run, export_dot, load_run_config
from ddtree.odt import grow_tree
from ddtree.criteria import SplitCriterion
from ddtree.simulation import ODT_BASELINE, ODT_BASELINE_CP, load_sim2d, partition_mse, sim2d_config_path, true_partition

run = load_run_config(sim2d_config_path())
teacher, schema, observed = build_run(run)
grid = load_sim2d()
reference = true_partition(grid).predict(grid.X)

tree = induce_ddt(teacher, schema, observed, run.induction)
odt = grow_tree(observed.X, observed.y, schema.full_region(), SplitCriterion("sse"),
                max_depth=ODT_BASELINE.max_depth, min_leaf=ODT_BASELINE.min_leaf, cp=ODT_BASELINE_CP)

print("partition MSE against the true partition")
print("  single tree  %.2f" % partition_mse(reference, odt.predict(grid.X)))
print("  distilled    %.2f" % partition_mse(reference, tree.partition_values(grid.X)))

# each interpretable node: its rule and how often the covariate won
for k in tree.interpretable:
    node = tree.nodes[k]
    first = max(node.stability.first_level)
    print("node %2d  %-14s first level %.2f  XI %.1f%%" % (
        k, node.split.split.describe(schema), first, 100 * tree.summary.xi[k]))

s = tree.summary
print("sum of XI %.3f, sum of PXI %.3f" % (sum(s.xi.values()), sum(s.pxi.values())))
print("variable importance", np.round(s.variable_importance, 3))

# the forest's own predictions against the hybrid tree's
probe = np.random.default_rng(0).uniform(0, 50, (5000, 2))
print("tree vs teacher MSE on 5000 probes: %.3f" % np.mean((predict(tree, probe) - teacher.predict_batch(probe)) ** 2))

print(export_dot(tree)[:400], "...")
