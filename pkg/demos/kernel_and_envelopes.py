#!/usr/bin/env python3
"""Walk through the two analytic workhorses behind the abstraction: the
Gaussian box-mass kernel and the affine envelopes of the whitened dynamics.

Everything here is printed, no files are written. Run it from anywhere:

    python3 demos/kernel_and_envelopes.py
"""

import numpy as np

from nndm_synth.fixtures import reach_avoid_2d
from nndm_synth.geometry import build_grid, post_image_hull, rect_hull, whitening_transform
from nndm_synth.networks import evaluate
from nndm_synth.relaxation import relax
from nndm_synth.transitions import gaussian_box_mass, transition_row

rng = np.random.default_rng(0)

# -- the kernel ---------------------------------------------------------------
# After whitening, one step of the closed loop is a standard normal around the
# transformed mean, so the probability of landing in an axis box factors into
# per-dimension erf differences.

print("== Gaussian box mass ==")
z = np.array([0.3, -0.2])
lo, hi = np.array([0.0, -1.0]), np.array([1.0, 1.0])
mass = gaussian_box_mass(z, lo, hi)
print(f"mean {z}, box [{lo[0]},{hi[0]}]x[{lo[1]},{hi[1]}] -> mass {mass:.6f}")

mc = rng.standard_normal((200_000, 2)) + z
inside = np.all((mc >= lo) & (mc <= hi), axis=1).mean()
print(f"200k-sample Monte Carlo estimate            -> mass {inside:.6f}")

far = gaussian_box_mass(np.zeros(1), np.array([8.0]), np.array([9.0]))
print(f"deep tail [8, 9] from the origin            -> mass {far:.3e} (stays positive)\n")

# -- whitening ----------------------------------------------------------------

nd, config = reach_avoid_2d()
transform = whitening_transform(config.covariance)
print("== Whitening ==")
print(f"noise covariance:\n{config.covariance}")
print(f"transform T:\n{transform.matrix}")
print(f"T Sigma T^T (should be identity):\n{transform.matrix @ config.covariance @ transform.matrix.T}\n")

# -- affine envelopes on one cell ----------------------------------------------

grid = build_grid(config.domain, transform, config.grid, config.regions)
cell_id = grid.num_cells // 2 + 3
cell = grid.cells[cell_id]
action = nd.actions[0]
bounds = relax(nd, action, transform, cell)

print("== Affine envelopes ==")
print(f"cell {cell_id}: z in [{cell.lo.round(3)}, {cell.hi.round(3)}], action {action!r}")
z_s = rng.uniform(cell.lo, cell.hi, size=(50_000, 2))
w = evaluate(nd, action, z_s @ transform.inverse.T) @ transform.matrix.T
env_lo = z_s @ bounds.A_lo.T + bounds.b_lo
env_hi = z_s @ bounds.A_hi.T + bounds.b_hi
print(f"worst slack below: {np.min(w - env_lo):.3e}   (negative would be unsound)")
print(f"worst slack above: {np.min(env_hi - w):.3e}")
print(f"mean envelope width per output: {np.mean(env_hi - env_lo, axis=0).round(4)}\n")

# -- post image and one transition row ------------------------------------------

poly = post_image_hull(bounds, cell)
hull = rect_hull(poly)
print("== Post image ==")
print(f"{poly.vertices.shape[0]} candidate corners, bounding box "
      f"[{hull.lo.round(3)}, {hull.hi.round(3)}]")

row = transition_row(grid, cell_id, action, bounds)
order = np.argsort(-row.upper)[:5]
print(f"transition row keeps {row.targets.size} of {grid.num_cells} targets; largest:")
for k in order:
    print(f"  cell {row.targets[k]:3d}: [{row.lower[k]:.4f}, {row.upper[k]:.4f}]")
print(f"out-of-domain mass in [{row.unsafe_lower:.2e}, {row.unsafe_upper:.2e}]")
