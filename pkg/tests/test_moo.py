import logging

import numpy as np
import pytest

from momentdiff import min_norm, min_norm_2, min_norm_fw, normalize_guidances


def grid_search_lambda(v1, v2, step=1e-4):
    """Honest argmin over the segment: form each candidate and take its norm."""
    grid = np.arange(0.0, 1.0 + step, step)
    best_l, best_v = 0.0, np.inf
    for lam in grid:
        val = np.linalg.norm(lam * v1 + (1 - lam) * v2)
        if val < best_v:
            best_l, best_v = lam, val
    return best_l


def test_normalize_unit_lambda():
    rng = np.random.default_rng(0)
    s_r = rng.normal(size=(1, 2, 2))
    g = rng.normal(size=(1, 2, 2)) * 5
    out = normalize_guidances(s_r, [g], [1.0])
    assert np.linalg.norm(out[0]) == pytest.approx(np.linalg.norm(s_r))


def test_normalize_zero_refinement():
    g = np.ones((1, 2, 2))
    out = normalize_guidances(np.zeros((1, 2, 2)), [g, g], [1.0, 2.0])
    assert all(np.linalg.norm(o) == 0.0 for o in out)


def test_normalize_plugin_values():
    # lambda 25, ||s_r|| 2, ||g|| 10 -> output norm 50
    s_r = np.zeros(16)
    s_r[0] = 2.0
    g = np.zeros(16)
    g[1] = 10.0
    out = normalize_guidances(s_r, [g], [25.0])
    assert np.linalg.norm(out[0]) == pytest.approx(50.0)
    assert out[0][1] == pytest.approx(50.0)


def test_normalize_drops_zero_gradient(caplog):
    s_r = np.ones(4)
    with caplog.at_level(logging.WARNING):
        out = normalize_guidances(s_r, [np.zeros(4), np.ones(4)], [1.0, 1.0])
    assert len(out) == 1
    assert any("zero gradient" in r.message for r in caplog.records)


def test_normalize_validates_lambdas():
    with pytest.raises(ValueError):
        normalize_guidances(np.ones(4), [np.ones(4)], [-1.0])
    with pytest.raises(ValueError):
        normalize_guidances(np.ones(4), [np.ones(4)], [1.0, 2.0])


def test_min_norm_2_orthogonal_pair():
    v1 = np.array([1.0, 0.0])
    v2 = np.array([0.0, 1.0])
    sol = min_norm_2(v1, v2)
    assert sol.alpha == pytest.approx(0.5)
    assert np.allclose(sol.direction, [0.5, 0.5])
    assert sol.sq_norm == pytest.approx(0.5)
    assert abs(sol.alpha - grid_search_lambda(v1, v2)) < 1e-3


def test_min_norm_2_opposed_pair():
    v1 = np.array([1.0, 2.0])
    sol = min_norm_2(v1, -v1)
    assert sol.sq_norm == pytest.approx(0.0, abs=1e-30)
    assert np.allclose(sol.direction, 0.0)


def test_min_norm_2_clamped():
    v1 = np.array([1.0, 0.0])
    v2 = np.array([2.0, 0.0])
    sol = min_norm_2(v1, v2)
    assert sol.alpha == 1.0
    assert np.allclose(sol.direction, v1)
    assert abs(sol.alpha - grid_search_lambda(v1, v2)) < 1e-3


def test_min_norm_2_identical_inputs_tiebreak():
    v = np.array([0.3, -0.7])
    sol = min_norm_2(v, v.copy())
    assert sol.alpha == 0.5
    assert np.allclose(sol.direction, v)


def test_min_norm_2_scale_equivariance():
    rng = np.random.default_rng(1)
    v1, v2 = rng.normal(size=(2, 8))
    base = min_norm_2(v1, v2)
    scaled = min_norm_2(3.5 * v1, 3.5 * v2)
    assert scaled.alpha == pytest.approx(base.alpha, rel=1e-12)
    assert np.allclose(scaled.direction, 3.5 * base.direction, rtol=1e-12)


def test_min_norm_2_grid_oracle_random_pairs():
    rng = np.random.default_rng(2)
    for _ in range(50):
        v1, v2 = rng.normal(size=(2, 16))
        sol = min_norm_2(v1, v2)
        assert abs(sol.alpha - grid_search_lambda(v1, v2)) <= 1e-3


def test_fw_single_vector():
    v = np.array([[1.0, -2.0], [0.5, 0.0]])
    sol = min_norm_fw([v])
    assert sol.alpha == pytest.approx(1.0)
    assert np.allclose(sol.direction, v)


def test_fw_matches_closed_form_on_pairs():
    rng = np.random.default_rng(3)
    for _ in range(30):
        v1, v2 = rng.normal(size=(2, 12))
        cf = min_norm_2(v1, v2)
        fw = min_norm_fw([v1, v2])
        assert abs(fw.sq_norm - cf.sq_norm) < 1e-6


def test_fw_triangle_containing_origin():
    rng = np.random.default_rng(4)
    v1 = rng.normal(size=8)
    v2 = rng.normal(size=8)
    w = np.array([0.2, 0.3, 0.5])
    v3 = -(w[0] * v1 + w[1] * v2) / w[2]
    sol = min_norm_fw([v1, v2, v3])
    assert sol.sq_norm < 1e-8


def test_fw_objective_nonincreasing_and_feasible():
    rng = np.random.default_rng(5)
    vs = [rng.normal(size=10) for _ in range(4)]
    prev = np.inf
    for iters in range(1, 30):
        sol = min_norm_fw(vs, max_iter=iters)
        assert sol.sq_norm <= prev + 1e-12
        prev = sol.sq_norm
        w = sol.weights
        assert np.all(w >= -1e-12)
        assert abs(w.sum() - 1.0) <= 1e-12


def test_min_norm_point_property():
    # nonzero solution improves every objective: <d, v_i> >= ||d||^2
    rng = np.random.default_rng(6)
    for m in (2, 3, 5):
        for _ in range(20):
            vs = [rng.normal(size=6) + 0.8 for _ in range(m)]
            sol = min_norm(vs)
            if sol.sq_norm > 0:
                for v in vs:
                    assert np.vdot(sol.direction, v) >= sol.sq_norm - 1e-8 * (1 + sol.sq_norm)


def test_min_norm_rejects_empty_and_all_zero():
    with pytest.raises(ValueError):
        min_norm_fw([])
    with pytest.raises(ValueError):
        min_norm_fw([np.zeros(4), np.zeros(4)])
