"""
The nonnegative quadratic program behind every coefficient update
=================================================================

Each subject's coefficients solve ``min 1/2 c'Hc + f'c`` subject to
``c >= 0``.  The active-set solver returns the clamped coordinates and a
KKT residual; here it is checked against brute-force enumeration.
"""

import itertools

import numpy as np

from corrbasis import QpProblem, solve_nonneg_qp

rng = np.random.default_rng(1)
A = rng.normal(size=(5, 5))
H = A @ A.T + 0.5 * np.eye(5)
f = rng.normal(size=5)

sol = solve_nonneg_qp(QpProblem(H, f), record=True)
print("solution:", np.round(sol.c, 6))
print("clamped at zero:", sorted(sol.active_set))
print("KKT residual:", sol.kkt_residual)
print("objective per iteration:", np.round(sol.objective_trace, 6))

# brute force: solve the equality system on every candidate free set
best = 0.0
for r in range(1, 6):
    for free in itertools.combinations(range(5), r):
        free = list(free)
        c = np.zeros(5)
        c[free] = np.linalg.solve(H[np.ix_(free, free)], -f[free])
        if np.all(c >= 0):
            best = min(best, 0.5 * c @ H @ c + f @ c)
print("enumeration optimum:", best, " solver:", QpProblem(H, f).objective(sol.c))
