"""Two-stage guided generation on block-moment manifolds.

Per guided time step t:

  stage 1 (refinement): split the score at x_t into its tangent part s_r,
  take tangent parts of the energy gradients, rescale them relative to
  ||s_r||, combine ascent directions by the min-norm solver, move by
  lambda * d and re-standardize back onto M_t; repeat per the iteration
  policy.

  stage 2 (denoising): apply the reverse ancestral update using only the
  normal part of the score, project the injected noise onto the normal
  space, and restrict onto M_{t-1}.

Below the milestone step T0 the chain runs unconditionally with the full
score and no restriction. A baseline chain with block-mean low-pass
refinement is provided for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import manifold as mf
from . import moo
from .schedule import Schedule
from .scores import BridgeError

Array = np.ndarray

EPS_POLICIES = ("P1", "P2", "P3")
PARETO_SQ_NORM_TOL = 1e-12
PNI_TOL = 1e-8


class SamplerBridgeError(RuntimeError):
    """Bridge failure during a chain; step index is kept for resuming."""

    def __init__(self, step: int, cause: BridgeError):
        super().__init__(f"bridge failure at step t={step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class SamplerConfig:
    T: int = 100
    T0: int = 50
    lambda_step: float = 2.0
    lambdas: tuple = (25.0,)
    blocks_n: int = 16
    eps_policy: str = "P3"
    p3_extra_iters: int = 4
    seed: int = 0
    sigma_min: float = 1e-6
    moo_enabled: bool = True

    def __post_init__(self):
        if not 1 <= self.T0 <= self.T:
            raise ValueError(f"need 1 <= T0 <= T, got T0={self.T0}, T={self.T}")
        if self.lambda_step <= 0:
            raise ValueError("lambda_step must be positive")
        if any(l <= 0 for l in self.lambdas):
            raise ValueError("energy lambdas must be positive")
        if self.eps_policy not in EPS_POLICIES:
            raise ValueError(f"eps_policy must be one of {EPS_POLICIES}")
        if self.p3_extra_iters < 0:
            raise ValueError("p3_extra_iters must be nonnegative")
        if self.blocks_n < 1:
            raise ValueError("blocks_n must be positive")


@dataclass
class StepTrace:
    t: int
    s_r_norm: float = 0.0
    score_normal_norm: float = 0.0
    drift_normal_norm: float = 0.0
    moo_sq_norm: float = 0.0
    moo_alpha: float = 1.0
    moo_betas: tuple = ()
    pni_flag: bool = False
    energy_values: tuple = ()
    iterations: int = 0


def epsilon_policy_iters(policy: str, t: int, T0: int, p3_extra_iters: int = 4) -> int:
    """Refinement iterations per step: P1 once, P2 twice, P3 extra at T0."""
    if policy == "P1":
        return 1
    if policy == "P2":
        return 2
    if policy == "P3":
        return 1 + p3_extra_iters if t == T0 else 1
    raise ValueError(f"unknown policy {policy!r}")


def _norm(v: Array) -> float:
    return float(np.linalg.norm(v))


def optimize_on_manifold(x_t: Array, m: mf.MomentManifold, score, energies,
                         cfg: SamplerConfig, iters: int, y0: Array | None = None,
                         ) -> tuple[Array, StepTrace]:
    """Stage-1 refinement: min-norm combined moves along the tangent space.

    Score and energy gradients are re-evaluated at the current iterate on
    every iteration. A zero min-norm solution is Pareto stationary and exits
    early; the restriction back onto M_t runs after every applied move. The
    pni flag records whether any applied move had negative inner product with
    s_r beyond rounding tolerance.
    """
    mf._require_on_manifold(x_t, m, mf.ON_MANIFOLD_TOL)
    if energies and y0 is None:
        raise ValueError("energies require the reference image y0")
    x = np.asarray(x_t, dtype=np.float64)
    trace = StepTrace(t=m.t)
    for it in range(iters):
        s = np.asarray(score.score(x, m.t), dtype=np.float64)
        s_r = mf.tangent_project(x, s, m)
        s_d = mf.normal_project(x, s, m)
        grads = []
        e_vals = []
        for e in energies:
            g = np.asarray(e.gradient(x, y0, m.t), dtype=np.float64)
            grads.append(mf.tangent_project(x, g, m))
            e_vals.append(float(e.value(x, y0, m.t)))
        if it == 0:
            trace.s_r_norm = _norm(s_r)
            trace.score_normal_norm = _norm(s_d)
            trace.energy_values = tuple(e_vals)
        live = [(g, lam) for g, lam in zip(grads, cfg.lambdas) if _norm(g) > 0.0]
        if _norm(s_r) == 0.0 and not live:
            trace.iterations = it
            return x, trace
        scaled = moo.normalize_guidances(s_r, [g for g, _ in live],
                                         [lam for _, lam in live])
        vectors = [s_r] + [-g for g in scaled]
        if cfg.moo_enabled:
            sol = moo.min_norm(vectors)
            d = sol.direction
            if it == 0:
                trace.moo_sq_norm = sol.sq_norm
                trace.moo_alpha = sol.alpha
                trace.moo_betas = sol.betas
            if sol.sq_norm < PARETO_SQ_NORM_TOL:
                trace.iterations = it
                return x, trace
        else:
            d = s_r - sum(scaled) if scaled else s_r.copy()
            if it == 0:
                trace.moo_sq_norm = float(d.ravel() @ d.ravel())
        u = cfg.lambda_step * d
        if float(np.vdot(u, s_r)) < -PNI_TOL * (1.0 + _norm(u) * _norm(s_r)):
            trace.pni_flag = True
        x = mf.badain_project(x + u, m, sigma_floor=cfg.sigma_min)
        trace.iterations = it + 1
    return x, trace


def transfer_step(x_star: Array, t: int, m_t: mf.MomentManifold,
                  m_prev: mf.MomentManifold, score, s: Schedule,
                  rng: np.random.Generator, cfg: SamplerConfig,
                  trace: StepTrace | None = None) -> Array:
    """Stage-2 move onto M_{t-1}.

    The ancestral update is driven by the normal score component only; its
    noise is projected onto the normal space before the restriction, so the
    tangent refinement of stage 1 survives untouched.
    """
    mf._require_on_manifold(x_star, m_t, mf.ON_MANIFOLD_TOL)
    x = np.asarray(x_star, dtype=np.float64)
    s_full = np.asarray(score.score(x, t), dtype=np.float64)
    s_d = mf.normal_project(x, s_full, m_t)
    add_noise = t > 1
    raw = s.ancestral_step(x, t, s_d, rng=rng, add_noise=add_noise)
    delta = raw - x
    delta_n = mf.normal_project(x, delta, m_t)
    if trace is not None:
        b = s.beta(t)
        det = (x + b * s_d) / np.sqrt(1.0 - b) - x
        trace.drift_normal_norm = _norm(mf.normal_project(x, det, m_t))
    return mf.badain_project(x + delta_n, m_prev, sigma_floor=cfg.sigma_min)


def generate(y0: Array, score, energies, cfg: SamplerConfig, s: Schedule,
             rng: np.random.Generator) -> tuple[Array, list[StepTrace]]:
    """Full chain: init on M_T, guided steps down to T0, unconditional tail.

    Returns the terminal sample and one trace per guided step. Bridge
    failures abort with the failing step index attached.
    """
    y0 = np.asarray(y0, dtype=np.float64)
    if cfg.T != s.T:
        raise ValueError(f"config T={cfg.T} does not match schedule T={s.T}")
    p = mf.BlockPartition(n=cfg.blocks_n, c=y0.shape[0], h=y0.shape[1], w=y0.shape[2])
    stats0 = mf.block_stats(y0, p)
    x = rng.standard_normal(y0.shape)
    x = mf.badain_project(x, mf.manifold_at(stats0, s, cfg.T, p),
                          sigma_floor=cfg.sigma_min)
    traces: list[StepTrace] = []
    for t in range(cfg.T, cfg.T0 - 1, -1):
        m_t = mf.manifold_at(stats0, s, t, p)
        m_prev = mf.manifold_at(stats0, s, t - 1, p)
        iters = epsilon_policy_iters(cfg.eps_policy, t, cfg.T0, cfg.p3_extra_iters)
        try:
            x_star, trace = optimize_on_manifold(x, m_t, score, energies, cfg,
                                                 iters, y0=y0)
            x = transfer_step(x_star, t, m_t, m_prev, score, s, rng, cfg,
                              trace=trace)
        except BridgeError as exc:
            raise SamplerBridgeError(t, exc) from exc
        traces.append(trace)
    for t in range(cfg.T0 - 1, 0, -1):
        try:
            s_val = np.asarray(score.score(x, t), dtype=np.float64)
        except BridgeError as exc:
            raise SamplerBridgeError(t, exc) from exc
        x = s.ancestral_step(x, t, s_val, rng=rng, add_noise=t > 1)
    return x, traces


def ilvr_generate(y0: Array, score, cfg: SamplerConfig, s: Schedule,
                  rng: np.random.Generator) -> Array:
    """Low-pass baseline: swap block means with a sampled reference after
    each ancestral step while t >= T0."""
    y0 = np.asarray(y0, dtype=np.float64)
    if cfg.T != s.T:
        raise ValueError(f"config T={cfg.T} does not match schedule T={s.T}")
    p = mf.BlockPartition(n=cfg.blocks_n, c=y0.shape[0], h=y0.shape[1], w=y0.shape[2])
    x = rng.standard_normal(y0.shape)
    for t in range(cfg.T, 0, -1):
        try:
            s_val = np.asarray(score.score(x, t), dtype=np.float64)
        except BridgeError as exc:
            raise SamplerBridgeError(t, exc) from exc
        x = s.ancestral_step(x, t, s_val, rng=rng, add_noise=t > 1)
        if t - 1 >= cfg.T0:
            y_t = s.perturb(y0, t - 1, rng)
            x = x - mf.low_pass_filter(x, p) + mf.low_pass_filter(y_t, p)
    return x


def pni(traces) -> float:
    """Fraction of guided steps whose applied update opposed s_r."""
    traces = list(traces)
    if not traces:
        raise ValueError("no traces to aggregate")
    return float(np.mean([bool(tr.pni_flag) for tr in traces]))
