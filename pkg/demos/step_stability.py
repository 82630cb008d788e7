"""
Split stability on a one-dimensional step
=========================================

A teacher that jumps from 0 to 10 at x = 1 on [0, 2] has one true split.
Fitting a stump to uniform pseudo samples recovers it up to sampling
noise; repeating the fit shows how large that noise is.
"""

import numpy as np

from ddtree.criteria import SplitCriterion
from ddtree.simulation import convergence_table, coverage_rate
from ddtree.stability import measure_split_stability, required_sample_size
from ddtree.teacher import make_step_teacher

teacher = make_step_teacher(0, 2, 1, 0, 10)
region = teacher.schema.full_region()

# 100 stumps, each on 1000 fresh rows
report = measure_split_stability(teacher, region, SplitCriterion("sse"), repeats=100, sample_size=1000, seed=0)
print("first level:", report.first_level)
print("chosen cut: %.5f" % report.chosen.cut)
print("interval:", tuple(round(v, 5) for v in report.ci))

vals = report.values_for(0)
print("spread of the 100 cuts: min %.5f  median %.5f  max %.5f" % (vals.min(), np.median(vals), vals.max()))

# how many rows are needed for a half-width of 0.001?
print("rows for d = 0.001:", required_sample_size(2.0, 0.001))

# the error shrinks like 1/n
for row in convergence_table(reps=200, seed=0):
    print("n = %4d   median error %.2e" % (row["n"], row["median_error"]))

# and the interval covers the true cut about 95% of the time
for n in (100, 500, 1000):
    print("coverage at n = %4d: %.3f" % (n, coverage_rate(n, 1000, seed=0)))
