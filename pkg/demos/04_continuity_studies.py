"""Numerical studies of how the forward map behaves.

First a manufactured plane-wave solution checks discretization rates. Then
an oscillating contrast sin(n pi x) sin(n pi y), which tends weakly to zero,
shows the scattered field converging strongly as n grows. Last, the H2 norm
of the P2 solution stays proportional to (k + 1 + 1/k + 1/k^2) |f|.
"""

import numpy as np

from vlshelm.experiments import h2_sweep, mms_convergence, weak_convergence_study
from vlshelm.fem import FunctionSpace
from vlshelm.mesh import generate_rect_mesh


def bump(x):
    return np.exp(-((x[..., 0] - 0.5) ** 2 + (x[..., 1] - 0.5) ** 2) / 0.02)


mms = mms_convergence(k=2.0, refinements=3)
print("plane-wave convergence rates (L2, H1) per refinement:")
for row in mms.rows[1:]:
    print(f"  h = {row['h']:.4f}: {row['l2_rate']:.3f}, {row['h1_rate']:.3f}")

# 128x128 keeps the demo quick; the acceptance suite uses 256x256
weak = weak_convergence_study(None, 0.3, [2, 4, 8], FunctionSpace(generate_rect_mesh(128, 128)), 2.0, bump)
print("oscillating contrast, relative H1 change of the field:")
for row in weak.rows:
    print(f"  n = {row['n']:2d}: e_n = {row['e_n']:.3e}")

h2 = h2_sweep([1.0, 2.0, 4.0, 8.0], FunctionSpace(generate_rect_mesh(16, 16), 2), bump, refine_check=False)
print("H2 ratio per wavenumber:", ", ".join(f"k={r['k']:g}: {r['ratio']:.3f}" for r in h2.rows))
