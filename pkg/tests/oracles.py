"""Independent reference computations shared by the test modules."""

import math

import numpy as np


def nested_quadrature(env, p, q):
    """Direct nested sums for one or two jumps."""
    spec = env.spec
    i0, i1 = spec.index(p.time), spec.index(q.time)
    rows = [env.paths[spec.level_row(level)] for level in range(p.level, q.level + 1)]
    dt = spec.dt
    if q.level - p.level == 1:
        w = np.arange(i0, i1)
        terms = rows[0][w] - rows[0][i0] + rows[1][i1] - rows[1][w]
        return math.log(math.fsum(np.exp(terms)) * dt)
    if q.level - p.level == 2:
        total = []
        for a in range(i0, i1):
            b = np.arange(a + 1, i1)
            terms = rows[0][a] - rows[0][i0] + rows[1][b] - rows[1][a] + rows[2][i1] - rows[2][b]
            total.extend(np.exp(terms))
        return math.log(math.fsum(total) * dt * dt)
    raise ValueError("only one or two jumps are supported")
