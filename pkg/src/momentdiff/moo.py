"""Min-norm combination of guidance vectors (multiple-gradient descent).

Given vectors v_1..v_m, find the convex combination of smallest norm. A
nonzero minimizer d satisfies <d, v_i> >= ||d||^2 for every i, so moving
along d improves every objective to first order; d = 0 means the point is
Pareto stationary. Two vectors have a closed form; more use Frank-Wolfe.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

Array = np.ndarray

log = logging.getLogger(__name__)

FW_MAX_ITER = 100
FW_TOL = 1e-9


@dataclass(frozen=True)
class MinNormSolution:
    alpha: float                 # weight on the first input vector
    betas: tuple                 # weights on the remaining vectors
    direction: Array             # alpha * v_0 + sum(betas_i * v_i)
    sq_norm: float

    @property
    def weights(self) -> np.ndarray:
        return np.array((self.alpha,) + self.betas)


def normalize_guidances(s_r: Array, grads, lambdas) -> list:
    """Rescale each gradient to norm lambda_i * ||s_r||.

    Zero gradients carry no direction; they are dropped (and logged) instead
    of being inflated. A zero s_r zeroes every output.
    """
    s_r = np.asarray(s_r, dtype=np.float64)
    if len(grads) != len(lambdas):
        raise ValueError("one lambda per gradient required")
    if any(l <= 0 for l in lambdas):
        raise ValueError("lambdas must be positive")
    s_norm = float(np.linalg.norm(s_r))
    out = []
    for i, (g, lam) in enumerate(zip(grads, lambdas)):
        g = np.asarray(g, dtype=np.float64)
        n = float(np.linalg.norm(g))
        if n == 0.0:
            log.warning("guidance %d has zero gradient; dropped", i)
            continue
        out.append((lam * s_norm / n) * g)
    return out


def min_norm_2(v1: Array, v2: Array) -> MinNormSolution:
    """Closed-form min-norm point of the segment [v1, v2].

    lambda* = clamp(<v2 - v1, v2> / ||v2 - v1||^2, 0, 1); identical inputs
    take lambda = 0.5 deterministically.
    """
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.shape != v2.shape:
        raise ValueError("vectors must share a shape")
    diff = (v2 - v1).ravel()
    den = float(diff @ diff)
    if den == 0.0:
        lam = 0.5
    else:
        lam = float(np.clip((diff @ v2.ravel()) / den, 0.0, 1.0))
    direction = lam * v1 + (1.0 - lam) * v2
    return MinNormSolution(
        alpha=lam,
        betas=(1.0 - lam,),
        direction=direction,
        sq_norm=float(direction.ravel() @ direction.ravel()),
    )


def _affine_minimizer(gram_s: Array):
    """Weights minimizing w^T G w over the affine hull (sum w = 1)."""
    k = gram_s.shape[0]
    ones = np.ones(k)
    try:
        u = np.linalg.solve(gram_s, ones)
    except np.linalg.LinAlgError:
        u = np.linalg.lstsq(gram_s, ones, rcond=None)[0]
    total = u.sum()
    if not np.isfinite(total) or abs(total) < 1e-300:
        return None
    return u / total


def min_norm_fw(vs, max_iter: int = FW_MAX_ITER, tol: float = FW_TOL) -> MinNormSolution:
    """Fully corrective Frank-Wolfe for min ||sum w_i v_i||^2 on the simplex.

    Each major step adds the vertex of steepest descent to the active set and
    re-solves the quadratic exactly over its convex hull (the classical
    min-norm-point active-set inner loop), so the objective never increases
    and the solve terminates finitely on this quadratic. Stops when the
    Frank-Wolfe gap drops below tol or max_iter is reached.
    """
    mats = [np.asarray(v, dtype=np.float64) for v in vs]
    if not mats:
        raise ValueError("need at least one vector")
    shape = mats[0].shape
    V = np.stack([v.ravel() for v in mats])
    if not np.any(np.linalg.norm(V, axis=1) > 0.0):
        raise ValueError("need at least one nonzero vector")
    m = len(mats)
    gram = V @ V.T
    active = [int(np.argmin(np.diag(gram)))]
    w_act = np.array([1.0])
    tiny = 1e-12
    for _ in range(max_iter):
        gd = gram[:, active] @ w_act       # <d, v_i> for every i
        obj = float(w_act @ gd[active])
        j = int(np.argmin(gd))
        gap = 2.0 * (obj - float(gd[j]))
        if gap < tol or j in active:
            break
        active.append(j)
        w_act = np.append(w_act, 0.0)
        # inner loop: exact affine solve, clipping back to the hull face
        while True:
            sub = gram[np.ix_(active, active)]
            u = _affine_minimizer(sub)
            if u is None:
                break
            if np.all(u > tiny):
                w_act = u
                break
            dec = w_act - u
            steps = [w_act[i] / dec[i] for i in range(len(u))
                     if u[i] <= tiny and dec[i] > 0.0]
            if not steps:
                break
            theta = min(1.0, min(steps))
            w_act = (1.0 - theta) * w_act + theta * u
            keep = w_act > tiny
            if keep.all():
                w_act = np.clip(w_act, 0.0, None)
                continue
            active = [a for a, k in zip(active, keep) if k]
            w_act = w_act[keep]
            w_act = w_act / w_act.sum()
    w = np.zeros(m)
    w[active] = np.clip(w_act, 0.0, None)
    w = w / w.sum()
    direction = (w @ V).reshape(shape)
    return MinNormSolution(
        alpha=float(w[0]),
        betas=tuple(float(b) for b in w[1:]),
        direction=direction,
        sq_norm=float(direction.ravel() @ direction.ravel()),
    )


def min_norm(vs, max_iter: int = FW_MAX_ITER, tol: float = FW_TOL) -> MinNormSolution:
    """Dispatch: one vector is itself, two use the closed form, more Frank-Wolfe."""
    if len(vs) == 1:
        v = np.asarray(vs[0], dtype=np.float64)
        return MinNormSolution(alpha=1.0, betas=(), direction=v,
                               sq_norm=float(v.ravel() @ v.ravel()))
    if len(vs) == 2:
        return min_norm_2(vs[0], vs[1])
    return min_norm_fw(vs, max_iter=max_iter, tol=tol)
