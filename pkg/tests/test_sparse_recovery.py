import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spikeslab import DomainError, PriorSpec, draw_instance, make_rng
from spikeslab.model import gen_gaussian_matrix
from spikeslab.oracle import enumerate_posterior_gaussian
from spikeslab.sparse_recovery import (
    EstimatorKind,
    LassoProblem,
    RecoveryConfig,
    build_hint,
    clip,
    estimate_l2_iht,
    estimate_linf,
    hard_threshold,
    lasso_lambda,
    solve_lasso,
)

DESK = RecoveryConfig(c_inf=0.12, refit=True, eps_lambda=0.02, lambda_scale=0.1)


def soft(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0)


def test_lasso_identity_design():
    theta = solve_lasso(LassoProblem(np.eye(2), np.array([2.0, 0.3]), 1.0, 1e-10))
    assert np.allclose(theta, [1.0, 0.0], atol=1e-10)


def test_lasso_large_lambda_is_zero():
    X = gen_gaussian_matrix(20, 30, 0)
    y = make_rng(1).standard_normal(20)
    lam = float(np.max(np.abs(X.T @ y)))
    assert not solve_lasso(LassoProblem(X, y, lam, 1e-8)).any()


def test_lasso_kkt():
    X = gen_gaussian_matrix(30, 50, 3)
    y = make_rng(4).standard_normal(30)
    lam, tol = 0.1, 1e-8
    res = solve_lasso(LassoProblem(X, y, lam, tol), return_result=True)
    th = res.theta
    g = X.T @ (y - X @ th)
    S = th != 0
    slack = 10 * tol * np.linalg.norm(X, 2) ** 2 + 1e-9
    assert np.max(np.abs(g[S] - lam * np.sign(th[S])), initial=0) <= slack
    assert np.max(np.abs(g[~S])) <= lam + slack


@given(st.integers(0, 10_000), st.floats(0.01, 2.0))
def test_lasso_orthonormal_equals_soft_threshold(seed, lam):
    rng = np.random.default_rng(seed)
    X = np.linalg.qr(rng.standard_normal((12, 6)))[0]
    y = rng.standard_normal(12) * 2
    tol = 1e-9
    th = solve_lasso(LassoProblem(X, y, lam, tol))
    assert np.allclose(th, soft(X.T @ y, lam), atol=10 * tol)


def test_lasso_noiseless_identity_recovers():
    th_star = np.array([1.0, 0.0, -2.0])
    th = solve_lasso(LassoProblem(np.eye(3), th_star, 1e-12, 1e-12))
    assert np.allclose(th, th_star, atol=1e-9)


def test_lasso_rejects_bad_problem():
    with pytest.raises(DomainError):
        LassoProblem(np.eye(2), np.ones(2), 0.0, 1e-6)


def test_linf_one_dimensional_soft_threshold():
    lam, _ = lasso_lambda(1.0, 0.0, 1, 0.5, 1)
    th = estimate_linf(np.array([[1.0]]), np.array([3.0]), 1.0, 0.5, k=1, eps=0.0)
    assert th[0] == pytest.approx(max(3.0 - lam, 0.0), abs=1e-9)


def test_linf_refuses_vacuous_rule():
    with pytest.raises(DomainError, match="incoherence"):
        lasso_lambda(1.0, 0.5, 10, 0.1, 3)


def test_iht_identity_one_step():
    th_star = np.array([0.0, 3.0, 0.0, -1.0])
    th = estimate_l2_iht(np.eye(4), th_star, 2, n_iter=1)
    assert np.allclose(th, th_star)
    assert not estimate_l2_iht(np.eye(4), th_star, 0).any()


def test_iht_iterates_stay_sparse():
    X = gen_gaussian_matrix(60, 40, 2)
    y = make_rng(0).standard_normal(60)
    for it in range(1, 6):
        assert np.count_nonzero(estimate_l2_iht(X, y, 3, n_iter=it)) <= 3


def test_iht_l2_recovery():
    n, d, k, sigma = 300, 100, 5, 0.05
    ok = 0
    for s in range(100):
        X = gen_gaussian_matrix(n, d, [s, 1])
        rng = make_rng([s, 2])
        th = np.zeros(d)
        th[rng.choice(d, k, replace=False)] = rng.standard_normal(k)
        y = X @ th + sigma * rng.standard_normal(n)
        est = estimate_l2_iht(X, y, 3 * k, sigma=sigma)
        ok += np.linalg.norm(est - th) <= 20 * sigma * math.sqrt(n)
    assert ok >= 95


def test_hard_threshold_ties_by_index():
    assert np.array_equal(hard_threshold([1.0, -1.0, 0.5], 1), [1.0, 0.0, 0.0])


def test_clip_examples():
    assert np.array_equal(clip([3, 0.1, -2], 1), [3, 0, -2])
    v = np.array([0.0, 1.5, -0.2])
    assert np.array_equal(clip(v, 0), v)
    assert np.array_equal(clip([1, -1], 1), [0, 0])


@given(st.lists(st.floats(-10, 10), max_size=30), st.floats(0, 5))
def test_clip_idempotent(v, a):
    once = clip(v, a)
    assert np.array_equal(clip(once, a), once)


def test_hint_empty_for_large_sigma():
    X = gen_gaussian_matrix(64, 10, 0)
    inst = draw_instance(PriorSpec.uniform(10, 0.3), X, 50.0, 1)
    h = build_hint(inst, 8, 0.1, 0.05, DESK)
    assert h.support == ()


def test_hint_invariant_holds():
    for s in range(50):
        X = gen_gaussian_matrix(64, 10, [s, 1])
        inst = draw_instance(PriorSpec.uniform(10, 0.3), X, 0.1, [s, 2])
        h = build_hint(inst, 8, 0.1, 0.05, DESK)
        nz = np.flatnonzero(h.theta_hat)
        assert tuple(nz) == h.support
        assert np.all(np.abs(h.theta_hat[nz]) > h.clip_level)


def test_hint_finds_single_strong_coordinate():
    hits = 0
    for s in range(100):
        X = gen_gaussian_matrix(200, 50, [s, 1])
        th = np.zeros(50)
        th[0] = 5.0
        y = X @ th + 0.01 * make_rng([s, 2]).standard_normal(200)
        from spikeslab.model import Instance
        inst = Instance(X, y, 0.01, PriorSpec.uniform(50, 0.02), th, y - X @ th)
        hits += build_hint(inst, 4, 0.1, 0.05, RecoveryConfig(eps_lambda=0.02)).support == (0,)
    assert hits >= 99


def test_hint_l2_path_runs():
    X = gen_gaussian_matrix(64, 10, 0)
    inst = draw_instance(PriorSpec.uniform(10, 0.3), X, 0.01, 1)
    h = build_hint(inst, 8, 0.1, 0.05, RecoveryConfig(estimator="l2"))
    assert h.estimator_kind is EstimatorKind.L2_IHT


def test_hint_support_contained_in_posterior():
    # fraction of (instance, posterior draw) pairs where the hint is not inside the draw
    delta, trials, fails = 0.05, 100, 0
    rng = make_rng(7)
    for s in range(trials):
        X = gen_gaussian_matrix(64, 10, [s, 1])
        inst = draw_instance(PriorSpec.uniform(10, 0.2), X, 0.1, [s, 2])
        h = build_hint(inst, 8, 0.3, delta, DESK)
        S = enumerate_posterior_gaussian(inst).sample(rng, 1)[0]
        fails += not set(h.support) <= set(S)
    p = fails / trials
    assert p <= delta + 3 * math.sqrt(delta * (1 - delta) / trials)
