"""Tour of the block-moment manifold machinery.

Shows how a reference image pins per-block mean/variance targets through
time, how the block re-standardization restricts any point onto them, how a
vector splits into tangent (refinement) and normal (denoising) parts, and
how the closed-form transport hops between neighbouring manifolds.
"""

import numpy as np

import momentdiff.manifold as mf
from momentdiff import default_schedule

rng = np.random.default_rng(7)
s = default_schedule()
p = mf.BlockPartition(n=2, c=1, h=8, w=8)
y0 = rng.uniform(-1, 1, size=(1, 8, 8))
stats = mf.block_stats(y0, p)
print("reference block means:\n", np.round(stats.mean[0], 3))
print("reference block vars:\n", np.round(stats.var[0], 3))

t = 60
m = mf.manifold_at(stats, s, t, p)
print(f"\nat t={t} (alpha_bar={s.alpha_bar(t):.3f}) the targets become")
print(" means:\n", np.round(m.target.mean[0], 3))
print(" vars:\n", np.round(m.target.var[0], 3))

x = rng.standard_normal((1, 8, 8)) * 2.0
print(f"\ndistance of raw noise to the manifold, per block (d2/sqrt(d_b)):")
print(np.round(mf.manifold_distance(x, m)[0] / np.sqrt(p.block_len), 3))
x_on = mf.badain_project(x, m)
print("after restriction:", np.max(mf.manifold_distance(x_on, m)), "(exact)")

v = rng.standard_normal((1, 8, 8))
v_r = mf.tangent_project(x_on, v, m)
v_d = mf.normal_project(x_on, v, m)
print(f"\nsplit a random vector: ||v||={np.linalg.norm(v):.3f}, "
      f"tangent {np.linalg.norm(v_r):.3f}, normal {np.linalg.norm(v_d):.3f}")
print(f"reconstruction error {np.linalg.norm(v - v_r - v_d):.2e}, "
      f"cross inner product {float(np.vdot(v_r, v_d)):.2e}")
print(f"the point itself is purely normal: tangent part of x has norm "
      f"{np.linalg.norm(mf.tangent_project(x_on, x_on, m)):.2e}")

vmap = mf.adjacent_map_v(x_on, stats, s, t, p)
m_prev = mf.manifold_at(stats, s, t - 1, p)
print(f"\nadjacent transport: ||v||={np.linalg.norm(vmap):.4f}, lands on "
      f"M_(t-1) within {np.max(mf.manifold_distance(x_on + vmap, m_prev)):.2e}")

phi = mf.low_pass_filter(y0, p)
print(f"\nblock-mean low-pass: idempotent to "
      f"{np.max(np.abs(mf.low_pass_filter(phi, p) - phi)):.1e}; "
      f"unique values per channel: {len(np.unique(phi[0]))}")
