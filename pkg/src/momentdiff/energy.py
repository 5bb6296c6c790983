"""Guidance energies with analytic gradients.

The faithfulness energy compares per-block feature statistics: features are a
single seeded (or user-loaded) conv layer with rectification, the energy is
the squared distance between the feature map and its block-restandardized
version toward the reference's feature moments. Everything is differentiated
in closed form so the sampler never needs numeric gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .manifold import BlockPartition, to_blocks, from_blocks
from .schedule import Schedule

Array = np.ndarray

WEIGHT_MAGIC = "SDDMCONV1"


class EnergyFunction(Protocol):
    def value(self, x: Array, y0: Array, t: int) -> float: ...
    def gradient(self, x: Array, y0: Array, t: int) -> Array: ...


@dataclass(frozen=True)
class FeatureExtractor:
    """One conv layer (stride 1, zero padding k//2) followed by max(., 0)."""

    weights: Array   # (out, in, k, k)
    bias: Array      # (out,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        if w.ndim != 4 or w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
            raise ValueError("weights must be (out, in, k, k) with odd k")
        if b.shape != (w.shape[0],):
            raise ValueError("bias must be (out,)")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def k(self) -> int:
        return self.weights.shape[2]


def extractor_from_seed(seed: int, in_channels: int, out_channels: int = 8,
                        k: int = 3) -> FeatureExtractor:
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(in_channels * k * k)
    w = rng.normal(0.0, scale, size=(out_channels, in_channels, k, k))
    b = rng.normal(0.0, 0.1, size=out_channels)
    return FeatureExtractor(weights=w, bias=b)


def save_extractor(fe: FeatureExtractor, path):
    header = f"{WEIGHT_MAGIC} {fe.out_channels} {fe.in_channels} {fe.k}\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(np.ascontiguousarray(fe.weights, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(fe.bias, dtype="<f4").tobytes())


def load_extractor(path) -> FeatureExtractor:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii").split()
        if len(header) != 4 or header[0] != WEIGHT_MAGIC:
            raise ValueError(f"not a {WEIGHT_MAGIC} weight file: {path}")
        out, inc, k = (int(v) for v in header[1:])
        w = np.frombuffer(f.read(4 * out * inc * k * k), dtype="<f4")
        b = np.frombuffer(f.read(4 * out), dtype="<f4")
    if w.size != out * inc * k * k or b.size != out:
        raise ValueError(f"truncated weight file: {path}")
    return FeatureExtractor(weights=w.astype(np.float64).reshape(out, inc, k, k),
                            bias=b.astype(np.float64))


def _conv(fe: FeatureExtractor, x: Array) -> Array:
    """Stride-1 same-size cross-correlation, (C, H, W) -> (O, H, W)."""
    pad = fe.k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (fe.k, fe.k), axis=(1, 2))   # (C, H, W, k, k)
    pre = np.tensordot(fe.weights, win, axes=([1, 2, 3], [0, 3, 4]))
    return pre + fe.bias[:, None, None]


def _conv_transpose(fe: FeatureExtractor, g: Array) -> Array:
    """Adjoint of _conv (bias excluded), (O, H, W) -> (C, H, W)."""
    pad = fe.k // 2
    gp = np.pad(g, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(gp, (fe.k, fe.k), axis=(1, 2))   # (O, H, W, k, k)
    wf = fe.weights[:, :, ::-1, ::-1]
    return np.tensordot(wf, win, axes=([0, 2, 3], [0, 3, 4]))


def extract(fe: FeatureExtractor, x: Array) -> Array:
    """Rectified conv features of x; spatial dims are preserved."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != fe.in_channels:
        raise ValueError(f"input shape {x.shape} does not match {fe.in_channels} input channels")
    return np.maximum(_conv(fe, x), 0.0)


class BadainFeatureEnergy:
    """Squared distance between the feature map and its block restriction.

    With x_hat = extract(x), y_hat = extract(alpha_hat(t) * y0) and per-block
    moments (mu, sigma) over the feature map, the energy is

        sum_b d_b * [ rho_b^2 * sigma_x_b^2 + (mu_x_b - mu_y_b)^2 ],
        rho_b = sigma~_y_b / sigma~_x_b - 1,

    which equals || BAdaIN(x_hat, y_hat) - x_hat ||^2 with the shared sigma
    floor applied to both standard deviations. Zero exactly when the feature
    block moments agree. The y0 features use the expected perturbation
    alpha_hat(t) * y0 rather than a sampled one, keeping the objective fixed
    within a time step.
    """

    def __init__(self, fe: FeatureExtractor, blocks_n: int, schedule: Schedule,
                 sigma_min: float = 1e-6):
        self.fe = fe
        self.blocks_n = blocks_n
        self.schedule = schedule
        self.sigma_min = float(sigma_min)

    def _feature_partition(self, shape) -> BlockPartition:
        return BlockPartition(n=self.blocks_n, c=self.fe.out_channels,
                              h=shape[1], w=shape[2])

    def _moments(self, feats: Array, p: BlockPartition):
        b = to_blocks(feats, p)
        mu = b.mean(axis=-1)
        sd = np.sqrt(b.var(axis=-1))
        return b, mu, sd

    def _terms(self, x: Array, y0: Array, t: int):
        x = np.asarray(x, dtype=np.float64)
        y0 = np.asarray(y0, dtype=np.float64)
        p = self._feature_partition(x.shape)
        pre = _conv(self.fe, x)
        x_hat = np.maximum(pre, 0.0)
        y_hat = extract(self.fe, self.schedule.alpha_hat(t) * y0)
        xb, mu_x, sd_x = self._moments(x_hat, p)
        _, mu_y, sd_y = self._moments(y_hat, p)
        sdf_x = np.maximum(sd_x, self.sigma_min)
        sdf_y = np.maximum(sd_y, self.sigma_min)
        rho = sdf_y / sdf_x - 1.0
        return p, pre, xb, mu_x, sd_x, sdf_x, mu_y, rho

    def value(self, x: Array, y0: Array, t: int) -> float:
        p, _, _, mu_x, sd_x, _, mu_y, rho = self._terms(x, y0, t)
        d_b = p.block_len
        return float(np.sum(d_b * (rho ** 2 * sd_x ** 2 + (mu_x - mu_y) ** 2)))

    def gradient(self, x: Array, y0: Array, t: int) -> Array:
        p, pre, xb, mu_x, sd_x, sdf_x, mu_y, rho = self._terms(x, y0, t)
        centered = xb - mu_x[..., None]
        # variance term: -2*rho*(feat - mu) when sigma is free (rho already
        # carries the 1/sigma), 2*rho^2*(feat - mu) when the floor pins it
        floored = sd_x < self.sigma_min
        coef = np.where(floored, 2.0 * rho ** 2, -2.0 * rho)
        var_grad = coef[..., None] * centered
        mean_grad = 2.0 * (mu_x - mu_y)
        g_feat = from_blocks(var_grad + mean_grad[..., None], p)
        g_pre = g_feat * (pre > 0.0)      # rectifier subgradient, 0 at the kink
        return _conv_transpose(self.fe, g_pre)
