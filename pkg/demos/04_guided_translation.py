"""End-to-end guided translation on a synthetic toy.

A Gaussian score whose mean is a blockwise-smoothed copy of the reference
stands in for the target-domain model; the reference pins the moment
constraints; a one-layer feature energy pulls block statistics. The run
reports structural similarity against the reference, the negative-impact
probability, the tangent-vs-normal norm profile, and the low-pass baseline
for comparison. This is a mechanism demo, not a quality benchmark: with an
analytic score both chains land close to the same Gaussian.
"""

import numpy as np

import momentdiff.manifold as mf
from momentdiff import (
    BadainFeatureEnergy,
    GaussianDomain,
    GaussianScore,
    SamplerConfig,
    default_schedule,
    extractor_from_seed,
    generate,
    ilvr_generate,
    pni,
    ssim,
    trace_norm_profile,
)

rng = np.random.default_rng(0)
shape = (1, 32, 32)
s = default_schedule()
ii, jj = np.indices(shape[1:])
y0 = (0.6 * np.sin(ii / 5.0) * np.cos(jj / 7.0) + 0.2)[None]
y0 = np.clip(y0 + 0.1 * rng.standard_normal(shape), -1, 1)
# smooth at a finer scale than the manifold blocks, so the domain mean still
# varies inside each block and the tangent (refinement) signal is nonzero
p8 = mf.BlockPartition(n=8, c=1, h=32, w=32)
dom = GaussianDomain(mean=0.8 * mf.low_pass_filter(y0, p8),
                     var=np.full(shape, 0.05))
score = GaussianScore(dom, s)
fe = extractor_from_seed(42, in_channels=1, out_channels=4)
energy = BadainFeatureEnergy(fe, blocks_n=4, schedule=s)

cfg = SamplerConfig(T=100, T0=50, lambda_step=2.0, lambdas=(25.0,), blocks_n=4,
                    eps_policy="P3")
x0, traces = generate(y0, score, [energy], cfg, s, np.random.default_rng(1))
print(f"guided chain: {len(traces)} guided steps, then {cfg.T0 - 1} unconditional")
print(f"ssim vs reference: {ssim(x0, y0):.4f}")
print(f"negative-impact probability: {pni(traces):.4f}")

rows = trace_norm_profile(traces)
print("\n  t   ||s_r||   ||s_d||   ||drift_n||")
for r in rows[:: max(1, len(rows) // 8)]:
    print(f"{r['t']:>4}  {r['s_r_mean']:8.4f}  {r['score_normal_mean']:8.3f}"
          f"  {r['drift_normal_mean']:10.4f}")
print("(the normal component dominates: most of the guidance is denoising)")

base = ilvr_generate(y0, score, cfg, s, np.random.default_rng(1))
print(f"\nlow-pass baseline ssim vs reference: {ssim(base, y0):.4f}")
print(f"moment-manifold   ssim vs reference: {ssim(x0, y0):.4f}")
print("(comparable by construction here; the manifold chain additionally "
      "guarantees exact block statistics at every guided step)")
