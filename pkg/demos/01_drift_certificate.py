"""
Checking a drift condition on a grid
====================================

The Ornstein-Uhlenbeck diffusion dX = -X dt + sqrt(2) dB with the pair
V = x^2/4, W = 1 + x^2/8 satisfies H(V) <= -W + 1.5 on C = {|x| <= 2 sqrt 3}.
We check this node by node and read off the constant b' = b exp(sup_C V).
"""

import math

import numpy as np

from diffhmm import build_grid, certify_dv3, preset

ou = preset("ou1d")
grid = build_grid([(-6.0, 6.0)], [1201], lambda x: x**2 / 4)
x = grid.points[:, 0]

V = x**2 / 4
W = 1 + x**2 / 8
C = np.flatnonzero(np.abs(x) <= 2 * math.sqrt(3) + 1e-12)

cert = certify_dv3(ou, V, W, 1.0, 1.5, C, grid, sup_V_on_C=3.0)
print(f"passed: {cert.passed}")
print(f"worst slack {cert.worst_slack:.3g} at x = {x[cert.worst_node]:+.2f}")
print(f"b' = {cert.b_prime:.6f}   (1.5 e^3 = {1.5 * math.exp(3):.6f})")

# Without the constant b the condition fails at the origin, where H(V) + W = 1.5.
bad = certify_dv3(ou, V, W, 1.0, 0.0, C, grid)
print(f"b = 0: passed {bad.passed}, slack {bad.worst_slack:.4f} at x = {x[bad.worst_node]:+.2f}")

# The slack is -x^2/8 on C and 1.5 - x^2/8 off C: zero at the origin and just outside C.
for xi in (0.0, 1.0, 2.0, 3.0, 3.46, 3.48, 4.0, 5.0):
    i = grid.nearest_node([xi])
    print(f"  x = {x[i]:5.2f}   slack {cert.slack[i]:+.4f}")
