"""
From the diffusion to a jump process
====================================

Sampling the diffusion at the jump times of a Poisson(kappa) clock gives a
pure jump process with rate matrix D_kappa = kappa (kappa R_kappa - I).
Its resolvent approaches R_alpha at rate 1/kappa in the weighted operator
norm, well inside the guaranteed bound 4 (1 + b') / kappa.
"""

import math

import numpy as np

from diffhmm import build_grid, discretize_generator, jump_generator, jump_resolvent_series, preset, resolvent_direct
from diffhmm.jump import jump_law_mc, jump_semigroup
from diffhmm.statespace import operator_norm_v

b_prime = 1.5 * math.exp(3)
grid = build_grid([(-6.0, 6.0)], [601], lambda x: x**2 / 4)
Dh = discretize_generator(preset("ou1d"), grid)
R1 = resolvent_direct(Dh, 1.0)

print(" kappa   |||R_k1 - R_1|||_v   bound")
prev = None
for kappa in (5.0, 10.0, 20.0, 40.0):
    Dk = jump_generator(resolvent_direct(Dh, kappa), kappa)
    err = operator_norm_v(jump_resolvent_series(Dk, 1.0, grid).entries - R1.entries, grid)
    ratio = "" if prev is None else f"   ratio {prev / err:.2f}"
    print(f" {kappa:5.0f}   {err:.5f}            {4 * (1 + b_prime) / kappa:.2f}{ratio}")
    prev = err

# The law of the jump process at t = 1, by simulation and by the matrix exponential.
Dk = jump_generator(resolvent_direct(Dh, 10.0), 10.0)
i0 = grid.nearest_node([1.0])
n = 50_000
pos, counts = jump_law_mc(Dk, 10.0, i0, 1.0, n, seed=3)
exact = jump_semigroup(Dk, 1.0).entries[i0]
x = grid.points[:, 0]
print(f"\nmean jumps in [0, 1]: {counts.mean():.3f} (kappa t = 10)")
# kappa R_kappa x = kappa x / (kappa + 1), so the mean decays at rate kappa / (kappa + 1), not 1.
print(f"mean position: MC {x[pos].mean():+.4f}, matrix {exact @ x:+.4f}, exp(-10/11) {math.exp(-10 / 11):+.4f}")
