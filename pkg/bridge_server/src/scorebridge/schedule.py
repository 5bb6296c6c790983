"""Server-side noise schedule, kept protocol-compatible with clients.

The server never imports the client package; hash compatibility rests on
building alpha_bars with the exact same arithmetic (cumprod of linspace
betas, uniform-stride subsampling keeping the terminal value).
"""

from __future__ import annotations

import hashlib

import numpy as np


class ServerSchedule:
    def __init__(self, betas: np.ndarray, alpha_bars: np.ndarray):
        self.betas = np.ascontiguousarray(betas, dtype=np.float64)
        self.alpha_bars = np.ascontiguousarray(alpha_bars, dtype=np.float64)
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise ValueError("betas must lie in (0, 1)")
        if np.any(np.diff(self.alpha_bars) >= 0):
            raise ValueError("alpha_bars must be strictly decreasing")

    @property
    def T(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValueError(f"time index {t} outside [0, {self.T}]")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def alpha_hat(self, t: int) -> float:
        return float(np.sqrt(self.alpha_bar(t)))

    def beta_hat(self, t: int) -> float:
        return float(np.sqrt(1.0 - self.alpha_bar(t)))

    def hash(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.T).encode())
        h.update(b":")
        h.update(np.ascontiguousarray(self.alpha_bars, dtype="<f8").tobytes())
        return h.hexdigest()


def linear_schedule(T: int, beta_min: float, beta_max: float) -> ServerSchedule:
    betas = np.linspace(beta_min, beta_max, T)
    return ServerSchedule(betas, np.cumprod(1.0 - betas))


def respaced_schedule(T: int, beta_min: float = 1e-4, beta_max: float = 0.02,
                      base_steps: int = 1000) -> ServerSchedule:
    if T < 2 or T > base_steps or base_steps % T != 0:
        raise ValueError("T must divide base_steps and satisfy 2 <= T <= base_steps")
    base = linear_schedule(base_steps, beta_min, beta_max)
    stride = base_steps // T
    ab = base.alpha_bars[stride - 1 :: stride]
    prev = np.concatenate([[1.0], ab[:-1]])
    return ServerSchedule(1.0 - ab / prev, ab)
