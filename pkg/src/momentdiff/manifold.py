"""Per-block moment manifolds and the operations that live on them.

An image x of shape (C, H, W) is cut into C * N * N blocks of d_b pixels.
For a reference image y0 and time t, the constraint set M_t pins every
block's mean and population variance to

    mean  = alpha_hat(t) * mean(y0 block)
    var   = alpha_bar(t) * var(y0 block) + (1 - alpha_bar(t)),

a product of (d_b - 2)-spheres (one sphere inside one hyperplane per block).
At any on-manifold point the normal space of a block is spanned by the
constant direction and the centered block itself, which makes projections,
the restriction map, and the transport to the neighbouring manifold all
closed-form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .schedule import Schedule

Array = np.ndarray

ON_MANIFOLD_TOL = 1e-8


class DegenerateBlockError(ValueError):
    """A block has zero variance where a direction is required."""


class OffManifoldError(ValueError):
    """Input point does not satisfy the moment constraints within tolerance."""


@dataclass(frozen=True)
class BlockPartition:
    """N x N spatial blocking of a (C, H, W) image. N must divide H and W."""

    n: int
    c: int
    h: int
    w: int

    def __post_init__(self):
        if self.n < 1 or self.c < 1:
            raise ValueError("block count and channels must be positive")
        if self.h % self.n or self.w % self.n:
            raise ValueError(f"N={self.n} must divide H={self.h} and W={self.w}")

    @property
    def block_h(self) -> int:
        return self.h // self.n

    @property
    def block_w(self) -> int:
        return self.w // self.n

    @property
    def block_len(self) -> int:
        return self.block_h * self.block_w

    def check_image(self, x: Array) -> Array:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.c, self.h, self.w):
            raise ValueError(f"image shape {x.shape} does not match partition "
                             f"({self.c}, {self.h}, {self.w})")
        return x

    def require_manifold_dims(self):
        # each block manifold has dimension d_b - 2, so moment constraints
        # need at least 3 pixels per block
        if self.block_len < 3:
            raise ValueError(f"block length {self.block_len} < 3: no manifold dimension left")


def to_blocks(x: Array, p: BlockPartition) -> Array:
    """(C, H, W) -> (C, N, N, d_b) with blocks flattened row-major."""
    x = p.check_image(x)
    b = x.reshape(p.c, p.n, p.block_h, p.n, p.block_w)
    return b.transpose(0, 1, 3, 2, 4).reshape(p.c, p.n, p.n, p.block_len)


def from_blocks(b: Array, p: BlockPartition) -> Array:
    """Inverse of to_blocks."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (p.c, p.n, p.n, p.block_len):
        raise ValueError(f"block array shape {b.shape} does not match partition")
    b = b.reshape(p.c, p.n, p.n, p.block_h, p.block_w)
    return b.transpose(0, 1, 3, 2, 4).reshape(p.c, p.h, p.w)


@dataclass(frozen=True)
class BlockStats:
    """Per-block mean and population variance, each shaped (C, N, N)."""

    mean: Array
    var: Array

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        var = np.asarray(self.var, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)
        if mean.shape != var.shape:
            raise ValueError("mean and var shapes differ")
        if np.any(var < 0.0):
            raise ValueError("block variance must be nonnegative")


def block_stats(x: Array, p: BlockPartition) -> BlockStats:
    """Empirical block moments; variance is the population (1/d_b) estimator."""
    b = to_blocks(x, p)
    return BlockStats(mean=b.mean(axis=-1), var=b.var(axis=-1))


@dataclass(frozen=True)
class MomentManifold:
    """Moment constraint set at time t for a fixed reference's block stats."""

    t: int
    target: BlockStats
    partition: BlockPartition


def manifold_at(y0_stats: BlockStats, s: Schedule, t: int, p: BlockPartition) -> MomentManifold:
    """Targets: mean scaled by alpha_hat(t), variance mixed toward 1."""
    p.require_manifold_dims()
    ab = s.alpha_bar(t)      # validates t in [0, T]
    mean = np.sqrt(ab) * y0_stats.mean
    var = ab * y0_stats.var + (1.0 - ab)
    return MomentManifold(t=int(t), target=BlockStats(mean=mean, var=var), partition=p)


def manifold_distance(x: Array, m: MomentManifold) -> Array:
    """Per-block Euclidean distance from x to the constraint set, (C, N, N).

    Computed in the block's normal 2-plane: the hyperplane offset from the
    mean constraint plus the radial gap to the sphere of radius
    sqrt(d_b * var_target).
    """
    p = m.partition
    b = to_blocks(x, p)
    return block_distance(b, m.target.mean, m.target.var)


def block_distance(blocks: Array, mean: Array, var: Array) -> Array:
    """Distance of raw block vectors (..., d_b) to moment targets (...)."""
    d_b = blocks.shape[-1]
    mu = blocks.mean(axis=-1)
    c = blocks - mu[..., None]
    radius = np.sqrt(d_b * var)
    radial = np.linalg.norm(c, axis=-1) - radius
    return np.sqrt(d_b * (mu - mean) ** 2 + radial ** 2)


def _stats_residual(x: Array, m: MomentManifold) -> float:
    st = block_stats(x, m.partition)
    rel_mean = np.abs(st.mean - m.target.mean) / (1.0 + np.abs(m.target.mean))
    rel_var = np.abs(st.var - m.target.var) / (1.0 + m.target.var)
    return float(max(rel_mean.max(), rel_var.max()))


def is_on_manifold(x: Array, m: MomentManifold, tol: float = ON_MANIFOLD_TOL) -> bool:
    return _stats_residual(x, m) <= tol


def _require_on_manifold(x: Array, m: MomentManifold, tol: float):
    resid = _stats_residual(x, m)
    if resid > tol:
        raise OffManifoldError(f"point is off-manifold: residual {resid:.3e} > {tol:.1e}")


def badain_project(x: Array, m: MomentManifold, sigma_floor: float | None = None) -> Array:
    """Re-standardize every block to the manifold's target moments.

    Exact restriction onto M_t: output block stats equal the targets up to
    float rounding, and the map is idempotent. Blocks with zero variance have
    no direction to rescale; they raise DegenerateBlockError unless a
    sigma_floor is supplied (the sampler passes its configured floor).
    """
    p = m.partition
    p.require_manifold_dims()
    b = to_blocks(x, p)
    mu = b.mean(axis=-1, keepdims=True)
    sd = np.sqrt(b.var(axis=-1))
    if sigma_floor is not None:
        sd = np.maximum(sd, sigma_floor)
    elif np.any(sd == 0.0):
        raise DegenerateBlockError("constant block: zero variance under projection")
    scale = np.sqrt(m.target.var) / sd
    out = scale[..., None] * (b - mu) + m.target.mean[..., None]
    return from_blocks(out, p)


def normal_basis(x_on_m: Array, m: MomentManifold, tol: float = ON_MANIFOLD_TOL):
    """Orthonormal pair spanning each block's normal space at x.

    n1 is the constant direction 1/sqrt(d_b), n2 the unit centered block.
    Both are returned in block layout (C, N, N, d_b).
    """
    p = m.partition
    p.require_manifold_dims()
    x = p.check_image(x_on_m)
    _require_on_manifold(x, m, tol)
    b = to_blocks(x, p)
    c = b - b.mean(axis=-1, keepdims=True)
    norms = np.linalg.norm(c, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateBlockError("constant block: normal basis undefined")
    n1 = np.full_like(b, 1.0 / np.sqrt(p.block_len))
    n2 = c / norms
    return n1, n2


def _split(x_on_m: Array, v: Array, m: MomentManifold, tol: float):
    p = m.partition
    v = p.check_image(v)
    n1, n2 = normal_basis(x_on_m, m, tol=tol)
    vb = to_blocks(v, p)
    a1 = np.einsum("cijk,cijk->cij", vb, n1)
    a2 = np.einsum("cijk,cijk->cij", vb, n2)
    normal = a1[..., None] * n1 + a2[..., None] * n2
    return vb, normal


def tangent_project(x_on_m: Array, v: Array, m: MomentManifold,
                    tol: float = ON_MANIFOLD_TOL) -> Array:
    """Component of v tangent to M_t at x (blockwise removal of n1, n2)."""
    vb, normal = _split(x_on_m, v, m, tol)
    return from_blocks(vb - normal, m.partition)


def normal_project(x_on_m: Array, v: Array, m: MomentManifold,
                   tol: float = ON_MANIFOLD_TOL) -> Array:
    """Component of v in the normal space of M_t at x."""
    _, normal = _split(x_on_m, v, m, tol)
    return from_blocks(normal, m.partition)


def adjacent_map_v(x_t: Array, y0_stats: BlockStats, s: Schedule, t: int,
                   p: BlockPartition, tol: float = ON_MANIFOLD_TOL) -> Array:
    """Unique normal-space displacement carrying x_t from M_t onto M_{t-1}.

    Per block, with mu0/var0 the reference stats and V_t the manifold's
    variance target at time t:

        x' = sqrt(V_{t-1}) * (x - alpha_hat(t) * mu0) / sqrt(V_t)
             + alpha_hat(t-1) * mu0

    and v = x' - x. On-manifold input is required; then x - alpha_hat(t)*mu0
    is the centered block, so v lies in span{constant, centered} per block.
    """
    t = int(t)
    if t < 1:
        raise ValueError("adjacent map needs t >= 1")
    m_t = manifold_at(y0_stats, s, t, p)
    x = p.check_image(x_t)
    _require_on_manifold(x, m_t, tol)
    ab_t, ab_p = s.alpha_bar(t), s.alpha_bar(t - 1)
    v_t = ab_t * y0_stats.var + (1.0 - ab_t)
    v_p = ab_p * y0_stats.var + (1.0 - ab_p)
    b = to_blocks(x, p)
    centered = b - (np.sqrt(ab_t) * y0_stats.mean)[..., None]
    scale = np.sqrt(v_p / v_t)
    xp = scale[..., None] * centered + (np.sqrt(ab_p) * y0_stats.mean)[..., None]
    return from_blocks(xp - b, p)


def low_pass_filter(x: Array, p: BlockPartition) -> Array:
    """Replace every pixel by its block mean (idempotent)."""
    b = to_blocks(x, p)
    mean = b.mean(axis=-1, keepdims=True)
    return from_blocks(np.broadcast_to(mean, b.shape), p)
