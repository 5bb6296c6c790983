"""Monte Carlo verification suites, SSIM, and trace analysis.

Every suite is deterministic given (seed, n): each grid cell derives its own
generator from seed XOR a cell index, so cells can run in any order or in
parallel. A report always carries explicit gates; suites that merely observe
a quantity still gate on something (these gates are what `verify` exits on).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import manifold as mf
from .schedule import Schedule

Array = np.ndarray


@dataclass
class VerificationReport:
    suite: str
    seed: int
    params: dict
    cases: list = field(default_factory=list)
    gates: list = field(default_factory=list)

    def __post_init__(self):
        if not isinstance(self.params, dict):
            raise ValueError("params must be a dict")

    @property
    def passed(self) -> bool:
        if not self.gates:
            raise ValueError(f"suite {self.suite!r} declared no gates")
        return all(g["passed"] for g in self.gates)

    def add_gate(self, name: str, observed, requirement: str, passed: bool):
        self.gates.append({"name": name, "observed": observed,
                           "requirement": requirement, "passed": bool(passed)})

    def to_dict(self) -> dict:
        return {"suite": self.suite, "seed": self.seed, "params": self.params,
                "cases": self.cases, "gates": self.gates, "passed": self.passed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"suite: {self.suite}   seed: {self.seed}",
                 f"params: {self.params}"]
        for c in self.cases:
            lines.append("  case " + "  ".join(f"{k}={_fmt(v)}" for k, v in c.items()))
        for g in self.gates:
            tag = "PASS" if g["passed"] else "FAIL"
            lines.append(f"  gate [{tag}] {g['name']}: observed {_fmt(g['observed'])}"
                         f"  (requires {g['requirement']})")
        lines.append(f"result: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return v


def _cell_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(seed ^ index)


def concentration_suite(s: Schedule, d_grid=(64, 256, 1024), t_grid=(25, 50, 75),
                        n: int = 10_000, seed: int = 7) -> VerificationReport:
    """Distance to the block manifold shrinks with block size.

    For each (d_b, t) cell, n perturbed blocks are sampled around a fixed
    reference block and the closed-form distance ratio d2 / sqrt(d_b) is
    summarized. Gates: medians strictly decreasing in d_b for every t, and at
    the largest d_b at least 95% of samples fall below ratio 0.2.
    """
    if min(d_grid) < 3:
        raise ValueError("block sizes must be at least 3")
    rep = VerificationReport("concentration", seed,
                             {"d_grid": list(d_grid), "t_grid": list(t_grid), "n": n})
    medians = {}
    idx = 0
    for t in t_grid:
        a, b = s.alpha_hat(t), s.beta_hat(t)
        for d_b in d_grid:
            rng = _cell_rng(seed, idx)
            idx += 1
            y0 = rng.uniform(-1.0, 1.0, size=d_b)
            target_m = a * y0.mean()
            target_v = s.alpha_bar(t) * y0.var() + (1.0 - s.alpha_bar(t))
            samples = a * y0 + b * rng.standard_normal((n, d_b))
            ratio = mf.block_distance(samples, target_m, target_v) / np.sqrt(d_b)
            medians[(t, d_b)] = float(np.median(ratio))
            rep.cases.append({"t": t, "d_b": d_b,
                              "median_ratio": medians[(t, d_b)],
                              "frac_below_0.2": float(np.mean(ratio < 0.2))})
    for t in t_grid:
        seq = [medians[(t, d)] for d in d_grid]
        rep.add_gate(f"median_decreasing_t{t}", seq,
                     "strictly decreasing over d_grid",
                     all(x > y for x, y in zip(seq, seq[1:])))
    d_max = max(d_grid)
    for c in rep.cases:
        if c["d_b"] == d_max:
            rep.add_gate(f"frac_below_0.2_d{d_max}_t{c['t']}", c["frac_below_0.2"],
                         ">= 0.95", c["frac_below_0.2"] >= 0.95)
    return rep


def separability_suite(s: Schedule, y0_block: Array, n: int = 10_000,
                       seed: int = 11) -> VerificationReport:
    """Mean-threshold hyperplane separates far perturbation times.

    The far pair is (0.9T, 0.1T) and must have mean targets more than 6
    pooled standard errors apart; the threshold sits at the midpoint time's
    mean target. The adjacent mid-schedule pair is reported without a gate
    (its separation is asymptotic in d_b).
    """
    y0 = np.asarray(y0_block, dtype=np.float64).ravel()
    mu0 = float(y0.mean())
    if abs(mu0) < 1e-6:
        raise ValueError("reference block mean is ~0; the mean hyperplane degenerates")
    d_b = y0.size
    T = s.T
    t_hi, t_lo = round(0.9 * T), round(0.1 * T)
    t_mid = (t_hi + t_lo) // 2
    rep = VerificationReport("separability", seed,
                             {"d_b": d_b, "n": n, "far_pair": [t_hi, t_lo],
                              "mid": t_mid})

    def mean_target(t):
        return s.alpha_hat(t) * mu0

    def mean_se(t):
        return s.beta_hat(t) / np.sqrt(d_b)

    pooled = np.sqrt(mean_se(t_hi) ** 2 + mean_se(t_lo) ** 2)
    gap_se = abs(mean_target(t_hi) - mean_target(t_lo)) / pooled
    rep.add_gate("far_pair_mean_gap", gap_se, "> 6 pooled SEs", gap_se > 6.0)

    def correct_fraction(ta, tb, thr, rng):
        side = np.sign(mean_target(ta) - thr)
        za = s.alpha_hat(ta) * y0 + s.beta_hat(ta) * rng.standard_normal((n, d_b))
        zb = s.alpha_hat(tb) * y0 + s.beta_hat(tb) * rng.standard_normal((n, d_b))
        ok_a = np.mean(side * (za.mean(axis=1) - thr) > 0)
        ok_b = np.mean(-side * (zb.mean(axis=1) - thr) > 0)
        return float((ok_a + ok_b) / 2.0)

    thr_far = mean_target(t_mid)
    frac_far = correct_fraction(t_hi, t_lo, thr_far, _cell_rng(seed, 0))
    margin_hi = abs(mean_target(t_hi) - thr_far) / mean_se(t_hi)
    margin_lo = abs(mean_target(t_lo) - thr_far) / mean_se(t_lo)
    rep.cases.append({"pair": f"{t_hi}/{t_lo}", "fraction_correct": frac_far,
                      "margin_hi_sigma": float(margin_hi),
                      "margin_lo_sigma": float(margin_lo)})
    rep.add_gate("far_pair_fraction", frac_far, ">= 0.99", frac_far >= 0.99)

    ta, tb = t_mid, t_mid - 1
    thr_adj = 0.5 * (mean_target(ta) + mean_target(tb))
    frac_adj = correct_fraction(ta, tb, thr_adj, _cell_rng(seed, 1))
    rep.cases.append({"pair": f"{ta}/{tb}", "fraction_correct": frac_adj,
                      "gated": False})
    return rep


def lowpass_expectation_suite(y0: Array, p: mf.BlockPartition, s: Schedule,
                              t_grid=(30, 70), n: int = 100_000,
                              seed: int = 13, chunk: int = 5_000) -> VerificationReport:
    """E[low-pass of y_t] equals the scaled reference block means.

    The empirical mean of the block means over n perturbations must land
    within 4 standard errors of alpha_hat(t) * mean(y0 block) in every block.
    """
    y0 = p.check_image(y0)
    y0b = mf.to_blocks(y0, p)
    rep = VerificationReport("lowpass_expectation", seed,
                             {"t_grid": list(t_grid), "n": n,
                              "blocks": [p.c, p.n, p.n], "d_b": p.block_len})
    for ci, t in enumerate(t_grid):
        rng = _cell_rng(seed, ci)
        a, b = s.alpha_hat(t), s.beta_hat(t)
        acc = np.zeros((p.c, p.n, p.n))
        done = 0
        while done < n:
            k = min(chunk, n - done)
            z = rng.standard_normal((k,) + y0b.shape)
            acc += (a * y0b + b * z).mean(axis=-1).sum(axis=0)
            done += k
        emp = acc / n
        target = a * y0b.mean(axis=-1)
        se = b / np.sqrt(p.block_len * n)
        worst = float(np.max(np.abs(emp - target)) / se)
        rep.cases.append({"t": t, "worst_abs_err_in_se": worst,
                          "se": float(se)})
        rep.add_gate(f"mean_within_4se_t{t}", worst, "<= 4", worst <= 4.0)
    return rep


def decomposition_suite(score_model, m: mf.MomentManifold, n: int = 1000,
                        seed: int = 17) -> VerificationReport:
    """Tangent + normal parts reconstruct the score and stay orthogonal.

    Also checks that an on-manifold point itself lies entirely in its own
    normal space (its tangent part is numerically zero).
    """
    rng = _cell_rng(seed, 0)
    p = m.partition
    worst_recon = worst_ortho = worst_self = 0.0
    for _ in range(n):
        x = mf.badain_project(rng.standard_normal((p.c, p.h, p.w)), m)
        sc = np.asarray(score_model.score(x, m.t), dtype=np.float64)
        s_r = mf.tangent_project(x, sc, m)
        s_d = mf.normal_project(x, sc, m)
        ns = np.linalg.norm(sc)
        recon = np.linalg.norm(sc - (s_r + s_d)) / ns if ns else 0.0
        nr, nd = np.linalg.norm(s_r), np.linalg.norm(s_d)
        ortho = abs(float(np.vdot(s_r, s_d))) / (nr * nd) if nr * nd else 0.0
        self_t = np.linalg.norm(mf.tangent_project(x, x, m)) / np.linalg.norm(x)
        worst_recon = max(worst_recon, recon)
        worst_ortho = max(worst_ortho, ortho)
        worst_self = max(worst_self, self_t)
    rep = VerificationReport("decomposition", seed,
                             {"n": n, "t": m.t, "blocks": [p.c, p.n, p.n]})
    rep.cases.append({"worst_reconstruction_rel": worst_recon,
                      "worst_orthogonality_rel": worst_ortho,
                      "worst_self_tangent_rel": worst_self})
    rep.add_gate("reconstruction", worst_recon, "<= 1e-12", worst_recon <= 1e-12)
    rep.add_gate("orthogonality", worst_ortho, "<= 1e-12", worst_ortho <= 1e-12)
    rep.add_gate("point_in_normal_space", worst_self, "<= 1e-9", worst_self <= 1e-9)
    return rep


_SSIM_SIGMA = 1.5
_SSIM_RADIUS = 5


def _ssim_kernel() -> Array:
    x = np.arange(-_SSIM_RADIUS, _SSIM_RADIUS + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / _SSIM_SIGMA) ** 2)
    return k / k.sum()


def _valid_filter(img: Array, k1: Array) -> Array:
    t = sliding_window_view(img, len(k1), axis=0) @ k1
    return sliding_window_view(t, len(k1), axis=1) @ k1


def ssim(a: Array, b: Array, data_range: float = 2.0) -> float:
    """Structural similarity with an 11x11 gaussian window (sigma 1.5).

    Inputs are (C, H, W) in the [-1, 1] convention (data_range 2); the score
    is averaged over channels and window positions and lies in [-1, 1].
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[1] < 11 or a.shape[2] < 11:
        raise ValueError("need (C, H, W) images at least 11x11")
    k1 = _ssim_kernel()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    scores = []
    for ch in range(a.shape[0]):
        ax, bx = a[ch], b[ch]
        ua = _valid_filter(ax, k1)
        ub = _valid_filter(bx, k1)
        va = _valid_filter(ax * ax, k1) - ua * ua
        vb = _valid_filter(bx * bx, k1) - ub * ub
        cab = _valid_filter(ax * bx, k1) - ua * ub
        s = ((2 * ua * ub + c1) * (2 * cab + c2)) / ((ua * ua + ub * ub + c1) * (va + vb + c2))
        scores.append(s.mean())
    return float(np.mean(scores))


def trace_norm_profile(traces) -> list[dict]:
    """Per-time means/stds of the tangent and normal guidance norms."""
    traces = list(traces)
    if not traces:
        raise ValueError("no traces to profile")
    by_t: dict[int, list] = {}
    for tr in traces:
        by_t.setdefault(tr.t, []).append(tr)
    rows = []
    for t in sorted(by_t):
        grp = by_t[t]
        sr = np.array([tr.s_r_norm for tr in grp])
        sd = np.array([tr.score_normal_norm for tr in grp])
        dn = np.array([tr.drift_normal_norm for tr in grp])
        rows.append({
            "t": t, "count": len(grp),
            "s_r_mean": float(sr.mean()), "s_r_std": float(sr.std()),
            "score_normal_mean": float(sd.mean()), "score_normal_std": float(sd.std()),
            "drift_normal_mean": float(dn.mean()), "drift_normal_std": float(dn.std()),
        })
    return rows
