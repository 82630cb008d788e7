"""
Any program can be a teacher
============================

The tree only needs predictions. A child process that speaks a tiny line
protocol (a handshake line, then PREDICT requests answered one value per
line) is enough, so the black box can live in another language entirely.
Here the child is this same file run with ``--serve``.
"""

import sys

import numpy as np

from ddtree.criteria import SplitCriterion
from ddtree.domain import Continuous, Covariate, CovariateSchema
from ddtree.induction import InductionConfig, OdtConfig, StoppingConfig, induce_ddt
from ddtree.teacher import connect_external_teacher, serve


def black_box(rows):
    out = []
    for r in rows:
        age, income = float(r[0]), float(r[1])
        out.append("approved" if (age > 40 and income > 30) or income > 80 else "declined")
    return out


if "--serve" in sys.argv:
    serve(black_box)
    sys.exit(0)

schema = CovariateSchema(
    (Covariate("age", Continuous(18.0, 80.0)), Covariate("income", Continuous(0.0, 120.0))),
    classes=("declined", "approved"),
)
config = InductionConfig(
    criterion=SplitCriterion("gini"), repeats=50, sample_size=2000, seed=1,
    stopping=StoppingConfig(max_interpretable_depth=3, pxi_threshold=0.02),
    odt=OdtConfig(max_depth=3, pseudo_sample_size=3000),
)

with connect_external_teacher([sys.executable, __file__, "--serve"], schema, timeout=30) as teacher:
    tree = induce_ddt(teacher, schema, None, config, workers=1)
    print("teacher exchanges:", teacher.exchanges)

for k in tree.interpretable:
    node = tree.nodes[k]
    print(k, node.split.split.describe(schema), "first level", np.round(node.stability.first_level, 2))
for k in tree.terminal:
    node = tree.nodes[k]
    print(k, node.kind, schema.classes[int(node.value)], "PXI %.3f" % tree.summary.pxi[k])
