"""A kink the degenerate equation cannot see, and how regularization removes it.

With omega(t) = |t|^a evaluated at the nodes, the kink u = b+ t_+ + b- t_-
has zero residual everywhere: its second difference vanishes off the
origin and the weight vanishes at the origin. So does the straight line
through the same boundary values. Regularizing the weight to
(t^2 + eps^2)^(a/2) leaves the kink a residual eps^a (b+ + b-) / h at the
origin, and the ladder eps -> 0 started from the kink lands on the line.
"""

import numpy as np

from degenlab import (DirichletProblem, Field, OperatorSpec, WeightSpec, build_grid,
                      nonuniqueness_demo, regularization_ladder, sample_field)

a, bp, bm, eps = 0.5, 1.0, 2.0, 0.1
rep = nonuniqueness_demo(a, bp, bm, eps=eps, n=257)
print(f"node-weight residual of the kink, max over nodes: {rep.node_max:.1e}")
print(f"regularized residual at 0: {rep.regularized_at_zero:.10f}")
print(f"predicted eps^a (b+ + b-) / h: {rep.predicted_at_zero:.10f}")

g = build_grid(1, (-1, 1), 257)
line = sample_field("0.5*(t + 1)", g)
kink = sample_field("0.2 + 0.8*maximum(t, 0) + 0.2*minimum(t, 0)", g)
p = DirichletProblem(g, OperatorSpec.trace(), WeightSpec(a), Field.constant(g, 0.0), line)
ladder = regularization_ladder(p, [2.0 ** -k * g.h ** 0.5 for k in range(11)], u0=kink)
print("\nladder from the kink start:")
for lv in ladder.history:
    print(f"  eps = {lv.eps:9.3e}   change from previous level = {lv.difference:.2e}")
err = np.max(np.abs(ladder.solution.values - line.values))
print(f"distance of the limit to the straight line: {err:.1e}")
