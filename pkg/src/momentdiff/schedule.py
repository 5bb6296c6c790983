"""Discrete variance-preserving noise schedules and the ancestral reverse step.

Time is an integer index t in [0, T]. t = 0 is the clean state, t = T the
most perturbed one. The forward marginal at time t of a clean point x0 is

    x_t = alpha_hat(t) * x0 + beta_hat(t) * z,   z ~ N(0, I),

with alpha_hat(t)^2 + beta_hat(t)^2 = 1 (variance preserving). alpha_hat(t)
is sqrt of the cumulative product of (1 - beta_i) up to t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Array = np.ndarray

_CONSISTENCY_TOL = 1e-10


@dataclass(frozen=True)
class Schedule:
    """Validated discrete VP schedule.

    betas[i] is the noise increment used by the step t = i + 1, so the arrays
    have length T and alpha_bar(0) = 1 is implicit.
    """

    betas: Array
    alpha_bars: Array

    def __post_init__(self):
        betas = np.ascontiguousarray(self.betas, dtype=np.float64)
        alpha_bars = np.ascontiguousarray(self.alpha_bars, dtype=np.float64)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alpha_bars", alpha_bars)
        if betas.ndim != 1 or alpha_bars.shape != betas.shape:
            raise ValueError("betas and alpha_bars must be 1-D arrays of equal length")
        if len(betas) < 2:
            raise ValueError("schedule needs at least T = 2 steps")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("betas must lie strictly inside (0, 1)")
        if np.any(alpha_bars <= 0.0) or np.any(alpha_bars > 1.0):
            raise ValueError("alpha_bars must lie in (0, 1]")
        if np.any(np.diff(alpha_bars) >= 0.0):
            raise ValueError("alpha_bars must be strictly decreasing")
        expected = np.cumprod(1.0 - betas)
        if np.max(np.abs(expected - alpha_bars)) > _CONSISTENCY_TOL:
            raise ValueError("alpha_bars inconsistent with cumprod(1 - betas)")

    @property
    def T(self) -> int:
        return len(self.betas)

    def _check_t(self, t: int, low: int) -> int:
        t = int(t)
        if not low <= t <= self.T:
            raise ValueError(f"time index {t} outside [{low}, {self.T}]")
        return t

    def beta(self, t: int) -> float:
        t = self._check_t(t, 1)
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        t = self._check_t(t, 0)
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def alpha_hat(self, t: int) -> float:
        return float(np.sqrt(self.alpha_bar(t)))

    def beta_hat(self, t: int) -> float:
        return float(np.sqrt(1.0 - self.alpha_bar(t)))

    def perturb(self, x0: Array, t: int, rng: np.random.Generator) -> Array:
        """Sample the forward marginal x_t | x0 in one step.

        t = 0 is permitted and returns x0 unchanged (beta_hat(0) = 0).
        """
        t = self._check_t(t, 0)
        x0 = np.asarray(x0, dtype=np.float64)
        if t == 0:
            return x0.copy()
        z = rng.standard_normal(x0.shape)
        return self.alpha_hat(t) * x0 + self.beta_hat(t) * z

    def ancestral_step(
        self,
        x: Array,
        t: int,
        score: Array,
        rng: np.random.Generator | None = None,
        add_noise: bool = True,
    ) -> Array:
        """One reverse ancestral step from x_t to x_{t-1}.

        Uses the update (x + beta_t * score) / sqrt(1 - beta_t) + sqrt(beta_t) * z,
        with z = 0 when add_noise is false or t = 1 (the final step carries no
        noise).
        """
        t = self._check_t(t, 1)
        x = np.asarray(x, dtype=np.float64)
        score = np.asarray(score, dtype=np.float64)
        if score.shape != x.shape:
            raise ValueError(f"score shape {score.shape} != state shape {x.shape}")
        b = self.beta(t)
        out = (x + b * score) / np.sqrt(1.0 - b)
        if add_noise and t > 1:
            if rng is None:
                raise ValueError("rng required when add_noise is true")
            out = out + np.sqrt(b) * rng.standard_normal(x.shape)
        return out


def build_linear_schedule(T: int, beta_min: float, beta_max: float) -> Schedule:
    """Schedule with betas linearly interpolated from beta_min to beta_max."""
    if T < 2:
        raise ValueError("T must be at least 2")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError("need 0 < beta_min <= beta_max < 1")
    betas = np.linspace(beta_min, beta_max, T)
    return Schedule(betas=betas, alpha_bars=np.cumprod(1.0 - betas))


def build_respaced_schedule(
    T: int,
    beta_min: float = 1e-4,
    beta_max: float = 0.02,
    base_steps: int = 1000,
) -> Schedule:
    """T-step schedule whose alpha_bars subsample a base linear schedule.

    The base schedule has base_steps linear betas in [beta_min, beta_max]; its
    cumulative alpha_bar sequence is subsampled at uniform stride, keeping the
    terminal value, and the betas are re-derived so the subsampled alpha_bars
    reproduce exactly. T = base_steps returns the base schedule itself.
    """
    if T < 2 or T > base_steps or base_steps % T != 0:
        raise ValueError("T must divide base_steps and satisfy 2 <= T <= base_steps")
    base = build_linear_schedule(base_steps, beta_min, beta_max)
    stride = base_steps // T
    ab = base.alpha_bars[stride - 1 :: stride]
    prev = np.concatenate([[1.0], ab[:-1]])
    betas = 1.0 - ab / prev
    return Schedule(betas=betas, alpha_bars=ab)


def default_schedule() -> Schedule:
    """100-step respacing of the usual 1000-step linear [1e-4, 0.02] schedule."""
    return build_respaced_schedule(100)
