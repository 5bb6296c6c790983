"""Run the Monte Carlo verification suites and print their reports.

Each suite states its gates inline: concentration of perturbed blocks around
the moment manifold, hyperplane separability of far time steps, the low-pass
expectation identity, and exactness of the score decomposition.
"""

import numpy as np

import momentdiff.manifold as mf
from momentdiff import (
    GaussianDomain,
    GaussianScore,
    concentration_suite,
    decomposition_suite,
    default_schedule,
    lowpass_expectation_suite,
    separability_suite,
)

s = default_schedule()
rng = np.random.default_rng(0)

print(concentration_suite(s, n=4000, seed=7).to_text())
print()

block = rng.uniform(-1, 1, size=1024) + 0.5
print(separability_suite(s, block, n=4000, seed=11).to_text())
print()

y0 = rng.uniform(-1, 1, size=(1, 16, 16))
p = mf.BlockPartition(n=2, c=1, h=16, w=16)
print(lowpass_expectation_suite(y0, p, s, n=20_000, seed=13).to_text())
print()

stats = mf.block_stats(y0, p)
m = mf.manifold_at(stats, s, 50, p)
dom = GaussianDomain(rng.uniform(-1, 1, (1, 16, 16)), np.ones((1, 16, 16)))
print(decomposition_suite(GaussianScore(dom, s), m, n=300, seed=17).to_text())
