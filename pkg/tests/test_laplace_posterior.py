import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import erfc, ndtr

from spikeslab import AnnealingError, DomainError, PriorSpec, draw_instance, make_rng
from spikeslab.laplace_posterior import (
    AnnealConfig,
    LaplacePosteriorSampler,
    LaplaceSamplerConfig,
    LaplaceWeightCache,
    draw_theta_given_support_laplace,
    estimate_log_Z,
    gibbs_quadratic_l1,
    l1_quadratic_mode,
    laplace_slab_weight,
    laplace_state,
    log_laplace_slab_weight,
    log_P_tilde_laplace,
    log_Q_laplace,
    posterior_sample_laplace,
    product_sample_laplace,
    truncated_normal_positive,
)
from spikeslab.model import Instance, gen_gaussian_matrix
from spikeslab.oracle import (
    SupportPmf,
    empirical_support_pmf,
    enumerate_posterior_laplace,
    log_Z_quadrature,
    tv_distance,
)
from spikeslab.subset_sampling import DpTable, conditional_poisson_pmf


def quad_weight(u, sigma, eps):
    f = lambda x: math.exp(-(1 + eps) * x * x / (2 * sigma ** 2) + u * x - abs(x)) / math.sqrt(2 * math.pi)
    return integrate.quad(f, -np.inf, 0, epsabs=0, epsrel=1e-12)[0] + \
        integrate.quad(f, 0, np.inf, epsabs=0, epsrel=1e-12)[0]


def test_slab_weight_value_and_symmetry():
    assert laplace_slab_weight(0.0, 1.0, 0.0) == pytest.approx(2 * math.exp(0.5) * ndtr(-1), rel=1e-12)
    assert laplace_slab_weight(0.0, 1.0, 0.0) == pytest.approx(0.523157, abs=1e-6)
    u = np.linspace(-5, 5, 41)
    assert np.allclose(log_laplace_slab_weight(u, 0.7, 0.2), log_laplace_slab_weight(-u, 0.7, 0.2), rtol=0, atol=1e-13)


@given(st.floats(-4, 4), st.floats(0.1, 2), st.floats(0, 0.9))
def test_slab_weight_matches_quadrature(u, sigma, eps):
    assert laplace_slab_weight(u, sigma, eps) == pytest.approx(quad_weight(u, sigma, eps), rel=1e-8)


def test_slab_weight_domain():
    with pytest.raises(DomainError):
        log_laplace_slab_weight(1.0, 0.0)
    with pytest.raises(DomainError):
        log_laplace_slab_weight(np.nan, 1.0)
    assert np.isfinite(log_laplace_slab_weight(1e4, 1.0))


def test_small_sigma_kills_inclusion_odds():
    odds = [log_laplace_slab_weight(2.0, s) for s in (1e-1, 1e-3, 1e-6)]
    assert odds[0] > odds[1] > odds[2] and odds[2] < -10


def lap_instance(seed, d=6, n=64, sigma=0.05, q=0.15):
    X = gen_gaussian_matrix(n, d, [seed, 1])
    return draw_instance(PriorSpec.uniform(d, q, "laplace"), X, sigma, [seed, 2])


def test_q_law_exactness():
    inst = lap_instance(1, d=7, sigma=0.3, q=0.3)
    st_ = laplace_state(inst, None, 0.1)
    cap = 3
    dom = [S for r in range(cap + 1) for S in itertools.combinations(range(7), r)]
    lq = np.array([log_Q_laplace(st_, S) for S in dom])
    w = np.exp(lq - lq.max())
    table = DpTable.from_log_odds(st_.proposal_log_odds, cap)
    for S, v in zip(dom, w / w.sum()):
        assert conditional_poisson_pmf(table, S) == pytest.approx(v, rel=1e-10)
    draws = product_sample_laplace(st_, cap, make_rng(0), size=100_000)
    emp = empirical_support_pmf(draws, 7)
    assert tv_distance(emp, SupportPmf(dict(zip(dom, w / w.sum())), 7)) < 0.02


def test_product_sampler_keeps_hint():
    inst = lap_instance(2, sigma=0.2, q=0.3)
    hint = np.array([0, 1.5, 0, 0, 0, 0])
    for S in product_sample_laplace(laplace_state(inst, hint), 3, make_rng(0), size=300):
        assert 1 in S and len(S) <= 3


@pytest.mark.parametrize("mu,s", [(0.3, 1.0), (-2.0, 0.5), (-8.0, 1.0), (-50.0, 2.0)])
def test_truncated_normal_moments(mu, s):
    x = truncated_normal_positive(np.full(200_000, mu), s, make_rng(1))
    ref = stats.truncnorm(-mu / s, np.inf, loc=mu, scale=s)
    assert np.all(x > 0)
    assert x.mean() == pytest.approx(ref.mean(), abs=4 * ref.std() / math.sqrt(x.size))
    assert x.std() == pytest.approx(ref.std(), rel=0.02)


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_mode_satisfies_kkt(seed, k):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(k, k))
    A = B @ B.T + 0.5 * np.eye(k)
    b = rng.normal(size=k) * 3
    m = l1_quadratic_mode(A, b)
    g = b - A @ m
    on = m != 0
    assert np.allclose(g[on], np.sign(m[on]), atol=1e-8)
    assert np.all(np.abs(g[~on]) <= 1 + 1e-8)


def test_gibbs_symmetric_identity():
    th = gibbs_quadratic_l1(np.eye(2), np.zeros(2), 30, make_rng(0), chains=100_000)
    se = th.std(axis=0) / math.sqrt(th.shape[0])
    assert np.all(np.abs(th.mean(axis=0)) <= 4 * se)


def quad_moment(A, b, fn):
    lz = log_Z_quadrature(A, b)
    f = lambda *x: fn(np.array(x)) * math.exp(-0.5 * np.array(x) @ A @ np.array(x) + b @ np.array(x)
                                               - np.abs(x).sum() - lz)
    if len(b) == 1:
        return integrate.quad(lambda x: f(x), -np.inf, 0)[0] + integrate.quad(lambda x: f(x), 0, np.inf)[0]
    return sum(integrate.dblquad(lambda y, x: f(x, y), *xl, *yl)[0]
               for xl in ((-12, 0), (0, 12)) for yl in ((-12, 0), (0, 12)))


def test_gibbs_second_moment_one_dimension():
    A, b = np.array([[1.0]]), np.zeros(1)
    th = gibbs_quadratic_l1(A, b, 20, make_rng(2), chains=100_000)
    assert np.mean(th[:, 0] ** 2) == pytest.approx(quad_moment(A, b, lambda x: x[0] ** 2), rel=0.01)


def test_gibbs_first_moments_two_dimensions():
    A = np.array([[2.0, 0.3], [0.3, 2.0]])
    b = np.array([0.5, -0.2])
    th = gibbs_quadratic_l1(A, b, 30, make_rng(3), chains=200_000)
    for i in range(2):
        ref = quad_moment(A, b, lambda x: x[i])
        assert th[:, i].mean() == pytest.approx(ref, rel=0.02)


def test_log_Z_quadrature_closed_forms():
    assert math.exp(log_Z_quadrature(np.eye(1), np.zeros(1))) == pytest.approx(
        2 * math.exp(0.5) * math.sqrt(2 * math.pi) * ndtr(-1), rel=1e-10)
    assert math.exp(log_Z_quadrature(2 * np.eye(2), np.zeros(2))) == pytest.approx(
        (math.exp(0.25) * math.sqrt(math.pi) * erfc(0.5)) ** 2, rel=1e-10)


@pytest.mark.parametrize("A,b", [(np.eye(1), np.zeros(1)), (2 * np.eye(2), np.zeros(2))])
def test_estimate_log_Z_accuracy(A, b):
    truth = log_Z_quadrature(A, b)
    errs = [abs(math.exp(estimate_log_Z(A, b, AnnealConfig(Delta=0.1), make_rng(s)) - truth) - 1)
            for s in range(20)]
    assert np.mean(np.array(errs) <= 0.1) >= 0.9


def test_estimate_log_Z_needs_rng_and_spd():
    with pytest.raises(DomainError):
        estimate_log_Z(np.eye(1), np.zeros(1))
    with pytest.raises(DomainError):
        estimate_log_Z(-np.eye(2), np.zeros(2), rng=make_rng(0))


def test_anneal_guard_raises():
    cfg = AnnealConfig(Delta=0.5, M=1, N=64, max_rel_var=1e-12)
    with pytest.raises(AnnealingError) as exc:
        estimate_log_Z(np.eye(2), np.ones(2), cfg, make_rng(0))
    assert exc.value.stage == 0


def test_anneal_schedule_ends_at_zero():
    lams = AnnealConfig().schedule(2, 1.0, 1.0)
    assert lams[-1] == 0.0 and np.all(np.diff(lams) < 0)
    assert AnnealConfig(delta=0.01).n_repeats() == 2 * math.ceil(math.log(100)) + 1


def test_empty_support_weight_is_zero():
    inst = lap_instance(0)
    st_ = laplace_state(inst, None)
    assert log_P_tilde_laplace(st_, (), rng=make_rng(0)) == 0.0


def test_cache_is_order_independent():
    inst = lap_instance(3, sigma=0.1)
    st_ = laplace_state(inst, None)
    cfg = AnnealConfig(Delta=0.1)
    subsets = [(0,), (1, 2), (3,), (0, 4)]
    a, b = LaplaceWeightCache(7), LaplaceWeightCache(7)
    va = [log_P_tilde_laplace(st_, S, cfg, cache=a) for S in subsets]
    vb = [log_P_tilde_laplace(st_, S, cfg, cache=b) for S in reversed(subsets)][::-1]
    assert va == vb
    log_P_tilde_laplace(st_, (0,), cfg, cache=a)
    assert a.hits == 1 and a.computed == 4


def test_lower_envelope_and_bounded_ratio_orthonormal():
    d, n = 5, 30
    X = np.linalg.qr(np.random.default_rng(0).normal(size=(n, d)))[0]
    inst = draw_instance(PriorSpec.uniform(d, 0.3, "laplace"), X, 0.04, 5)
    cfg = LaplaceSamplerConfig(k_star=4, Delta=0.1, ratio_cap="exact")
    s = LaplacePosteriorSampler(inst, None, cfg)
    dom, lr = s.exact_log_ratios()
    assert np.all(lr >= math.log(1 - 0.1))
    assert np.all(np.abs(lr) <= math.log(4))


def test_sampler_warns_outside_regime():
    inst = lap_instance(0, sigma=0.5)
    with pytest.warns(RuntimeWarning):
        LaplacePosteriorSampler(inst, None, LaplaceSamplerConfig(k_star=3))


def test_end_to_end_small():
    inst = lap_instance(11, d=5, sigma=0.05, q=0.2)
    cfg = LaplaceSamplerConfig(k_star=3, Delta=0.05, delta=0.05, ratio_cap="exact", seed=1)
    samples, rep = posterior_sample_laplace(inst, None, cfg, make_rng(0), size=20_000)
    assert rep.z_estimates_computed == 16
    cap = cfg.proposal_cap
    oracle = enumerate_posterior_laplace(inst, 100_000, make_rng(2)).conditioned(lambda S: len(S) <= cap)
    assert tv_distance(empirical_support_pmf(samples, 5), oracle) <= 0.05


def test_theta_draws():
    X = np.array([[1.0]])
    inst = Instance(X, np.array([0.0]), 1.0, PriorSpec.uniform(1, 0.5, "laplace"), np.zeros(1), np.zeros(1))
    assert not draw_theta_given_support_laplace(inst, (), 2, make_rng(0)).any()
    th = draw_theta_given_support_laplace(inst, (0,), 5, make_rng(0), size=100_000)[:, 0]
    A, b = np.eye(1), np.zeros(1)
    assert abs(th.mean()) <= 4 * th.std() / math.sqrt(th.size)
    assert np.mean(th ** 2) == pytest.approx(quad_moment(A, b, lambda x: x[0] ** 2), rel=0.01)
