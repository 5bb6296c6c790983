"""Min-norm combination of guidance vectors.

Two orthogonal objectives average; opposed objectives cancel to a Pareto
stationary point; and whichever nonzero direction comes back improves every
objective at once. Larger per-energy coefficients inflate a vector's norm
and so shrink its influence.
"""

import numpy as np

from momentdiff import min_norm, min_norm_2, min_norm_fw, normalize_guidances

v1 = np.array([1.0, 0.0])
v2 = np.array([0.0, 1.0])
sol = min_norm_2(v1, v2)
print(f"orthogonal pair: weights ({sol.alpha:.2f}, {sol.betas[0]:.2f}), "
      f"direction {sol.direction}, |d|^2 = {sol.sq_norm:.2f}")

opp = min_norm_2(v1, -v1)
print(f"opposed pair: |d|^2 = {opp.sq_norm:.1e}  (Pareto stationary)")

rng = np.random.default_rng(1)
vs = [rng.normal(size=6) + 1.0 for _ in range(4)]
sol = min_norm(vs)
ips = [float(np.vdot(sol.direction, v)) for v in vs]
print(f"\nfour objectives: |d|^2 = {sol.sq_norm:.4f}")
print("  <d, v_i> =", np.round(ips, 4), " (each >= |d|^2: descent for all)")

w = np.array([0.2, 0.3, 0.5])
deg = [rng.normal(size=5) for _ in range(2)]
deg.append(-(w[0] * deg[0] + w[1] * deg[1]) / w[2])
print(f"hull containing the origin: |d|^2 = {min_norm_fw(deg).sq_norm:.1e}")

s_r = rng.normal(size=8)
g = rng.normal(size=8) * 10
for lam in (1.0, 5.0, 25.0):
    scaled = normalize_guidances(s_r, [g], [lam])[0]
    sol = min_norm_2(s_r, -scaled)
    print(f"lambda_i={lam:>5}: ||g'||={np.linalg.norm(scaled):7.3f}  "
          f"weight on s_r = {sol.alpha:.3f}  (bigger norm, less influence)")
