"""
When the best split is not unique
=================================

Two shapes make the optimal cut ambiguous. A symmetric bump has two cuts
of equal loss, and repeated stumps flip between them. A teacher built so
that every cut on [0.8, 1.2] is equally good spreads the chosen cuts over
that whole band.
"""

import numpy as np

from ddtree.criteria import SplitCriterion
from ddtree.stability import measure_split_stability
from ddtree.teacher import make_plateau_teacher, make_two_cut_teacher

sse = SplitCriterion("sse")

bump = make_two_cut_teacher()  # 10 on [0.5, 1.5), 0 elsewhere
rep = measure_split_stability(bump, bump.schema.full_region(), sse, 1000, 1000, seed=0, escalate=False)
print(rep.oscillation.kind)
for value, mass in rep.oscillation.atoms:
    print("  cut %.4f  chosen in %.1f%% of repeats" % (value, 100 * mass))

plateau = make_plateau_teacher(texture=10.0)
rep = measure_split_stability(plateau, plateau.schema.full_region(), sse, 1000, 1000, seed=0, escalate=False)
print(rep.oscillation.kind, "[%.3f, %.3f]" % (rep.oscillation.lo, rep.oscillation.hi))

# a rough text histogram of the cuts on x
vals = rep.values_for(0)
hist, edges = np.histogram(vals, bins=8, range=(0.8, 1.2))
for h, lo in zip(hist, edges):
    print("  %.2f  %s" % (lo, "#" * (h // 10)))
