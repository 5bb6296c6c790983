"""Served score models: analytic closed forms and an optional neural wrapper."""

from __future__ import annotations

import numpy as np

from .schedule import ServerSchedule


class AnalyticGaussian:
    """Exact score of the perturbed diagonal Gaussian N(mean, var)."""

    def __init__(self, schedule: ServerSchedule, mean, var):
        self.schedule = schedule
        self.mean = np.asarray(mean, dtype=np.float64)
        self.var = np.asarray(var, dtype=np.float64)
        if np.any(self.var <= 0):
            raise ValueError("variance must be positive")

    def score(self, x: np.ndarray, t: int) -> np.ndarray:
        ab = self.schedule.alpha_bar(t)
        marginal_var = ab * self.var + (1.0 - ab)
        return -(x - np.sqrt(ab) * self.mean) / marginal_var


class AnalyticKde:
    """Exact score of the perturbed empirical mixture over a point set."""

    def __init__(self, schedule: ServerSchedule, points: np.ndarray):
        self.schedule = schedule
        self.points = np.asarray(points, dtype=np.float64)
        if self.points.ndim < 2 or len(self.points) < 1:
            raise ValueError("need points shaped (K, ...)")

    def score(self, x: np.ndarray, t: int) -> np.ndarray:
        ab = self.schedule.alpha_bar(t)
        var = 1.0 - ab
        if var <= 0:
            raise ValueError("score undefined at t = 0")
        diffs = x[None, ...] - np.sqrt(ab) * self.points
        sq = (diffs.reshape(len(self.points), -1) ** 2).sum(axis=1)
        logits = -sq / (2.0 * var)
        w = np.exp(logits - logits.max())
        w /= w.sum()
        return np.tensordot(w, -diffs / var, axes=(0, 0))


class NeuralCheckpoint:
    """TorchScript denoiser wrapper: the module predicts the injected noise
    from (x, t) and the score is the negated prediction over beta_hat(t)."""

    def __init__(self, schedule: ServerSchedule, checkpoint_path: str):
        import torch  # local import: neural serving is optional

        self.torch = torch
        self.schedule = schedule
        self.module = torch.jit.load(checkpoint_path, map_location="cpu")
        self.module.eval()

    def score(self, x: np.ndarray, t: int) -> np.ndarray:
        bh = self.schedule.beta_hat(t)
        if bh == 0.0:
            raise ValueError("score undefined at t = 0")
        with self.torch.no_grad():
            xt = self.torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))[None]
            tt = self.torch.tensor([int(t)], dtype=self.torch.int64)
            eps = self.module(xt, tt)[0].numpy().astype(np.float64)
        if eps.shape != x.shape:
            raise ValueError(f"checkpoint returned shape {eps.shape}, expected {x.shape}")
        return -eps / bh
