import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spikeslab import DimensionError, DomainError, OracleError, PriorSpec, draw_instance, make_rng
from spikeslab.model import Instance, gen_gaussian_matrix, support_law_log_prob
from spikeslab.oracle import (
    SupportPmf,
    empirical_support_pmf,
    enumerate_posterior_gaussian,
    enumerate_posterior_laplace,
    log_evidence_gaussian,
    log_Z_importance,
    log_Z_quadrature,
    pmf_from_log_weights,
    tv_distance,
    tv_of_weights,
)

from conftest import small_instance


def one_dim(diffuse="gaussian", q=0.5):
    return Instance(np.array([[1.0]]), np.array([0.0]), 1.0, PriorSpec.uniform(1, q, diffuse),
                    np.zeros(1), np.zeros(1))


def test_one_dimensional_gaussian_by_hand():
    pmf = enumerate_posterior_gaussian(one_dim())
    assert pmf[()] == pytest.approx(1 / (1 + 1 / math.sqrt(2)), rel=1e-12)
    assert pmf[()] == pytest.approx(0.58579, abs=1e-5)


@pytest.mark.parametrize("diffuse", ["gaussian", "laplace"])
def test_zero_q_is_point_mass(diffuse):
    inst = small_instance(d=5, q=0.0, diffuse=diffuse)
    pmf = enumerate_posterior_gaussian(inst) if diffuse == "gaussian" else \
        enumerate_posterior_laplace(inst, method="quadrature")
    assert pmf.entries == {(): 1.0}


def test_huge_sigma_recovers_prior():
    inst = small_instance(d=6, q=0.3, sigma=1e6)
    pmf = enumerate_posterior_gaussian(inst)
    prior = SupportPmf({S: math.exp(support_law_log_prob(inst.prior, S))
                        for r in range(7) for S in itertools.combinations(range(6), r)}, 6)
    assert tv_distance(pmf, prior) <= 1e-3


@given(st.integers(0, 10_000), st.integers(1, 9))
def test_gaussian_two_routes_agree(seed, d):
    rng = np.random.default_rng(seed)
    inst = draw_instance(PriorSpec(rng.uniform(0.05, 0.95, size=d)), gen_gaussian_matrix(15, d, rng),
                         rng.uniform(0.1, 3), rng)
    pmf = enumerate_posterior_gaussian(inst)
    subsets = [S for r in range(d + 1) for S in itertools.combinations(range(d), r)]
    ref = pmf_from_log_weights(subsets, [log_evidence_gaussian(inst, S) for S in subsets], d)
    for S in subsets:
        assert pmf[S] == pytest.approx(ref[S], rel=1e-10, abs=1e-300)
    assert math.fsum(pmf.entries.values()) == pytest.approx(1.0, abs=1e-9)


def test_forced_coordinates():
    inst = small_instance(d=5)
    q = inst.prior.q.copy()
    q[2] = 1.0
    pmf = enumerate_posterior_gaussian(inst.with_prior(PriorSpec(q)))
    assert all(2 in S for S in pmf.entries) and len(pmf) == 16


def test_size_limits():
    with pytest.raises(OracleError):
        enumerate_posterior_gaussian(small_instance(d=8), max_d=7)
    with pytest.raises(OracleError):
        enumerate_posterior_laplace(small_instance(d=13, n=20, diffuse="laplace"), rng=make_rng(0))


def test_laplace_quadrature_and_importance_agree_one_dim():
    inst = one_dim("laplace")
    a = enumerate_posterior_laplace(inst, method="quadrature")
    b = enumerate_posterior_laplace(inst, 1_000_000, make_rng(0), method="importance")
    se = b.stderr[(0,)]
    assert abs(a[(0,)] - b[(0,)]) <= 3 * se + 1e-12
    assert se > 0


@given(st.integers(0, 1000), st.integers(1, 3))
def test_quadrature_vs_importance_log_Z(seed, k):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(k, k))
    A = B @ B.T + np.eye(k)
    b = rng.normal(size=k) * 2
    lz_q = log_Z_quadrature(A, b)
    lz_i, rel, ess = log_Z_importance(A, b, 200_000, make_rng(seed))
    assert ess > 1000
    assert abs(math.exp(lz_i - lz_q) - 1) <= 4 * rel + 1e-3


def test_laplace_auto_uses_importance_above_three():
    inst = small_instance(d=5, n=30, q=0.3, sigma=0.5, diffuse="laplace")
    pmf = enumerate_posterior_laplace(inst, 50_000, make_rng(1))
    assert pmf.stderr[(0, 1, 2, 3)] > 0
    with pytest.raises(DomainError):
        enumerate_posterior_laplace(inst, method="importance")


def test_tv_examples():
    p = SupportPmf({(): 0.5, (1,): 0.5}, 3)
    q = SupportPmf({(): 1.0}, 3)
    assert tv_distance(p, p) == 0.0
    assert tv_distance(q, SupportPmf({(2,): 1.0}, 3)) == 1.0
    assert tv_distance(p, q) == 0.5
    with pytest.raises(DimensionError):
        tv_distance(p, SupportPmf({(): 1.0}, 4))


@given(st.integers(0, 10_000))
def test_tv_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    keys = [(), (0,), (1,), (0, 1)]
    a, b, c = (SupportPmf(dict(zip(keys, rng.dirichlet(np.ones(4)))), 2) for _ in range(3))
    assert tv_distance(a, b) == pytest.approx(tv_distance(b, a))
    assert tv_distance(a, c) <= tv_distance(a, b) + tv_distance(b, c) + 1e-15


def test_tv_of_weights():
    assert tv_of_weights([1, 1], [2, 2]) == 0.0
    assert tv_of_weights([1, 0], [0, 1]) == 1.0
    with pytest.raises(DomainError):
        tv_of_weights([0, 0], [1, 1])


def test_empirical_pmf_point_mass():
    pmf = empirical_support_pmf([(2, 0)] * 10, 3)
    assert pmf.entries == {(0, 2): 1.0}
    with pytest.raises(DomainError):
        empirical_support_pmf([], 3)


def test_pmf_validation_and_views():
    with pytest.raises(DomainError):
        SupportPmf({(): 0.7}, 1)
    pmf = SupportPmf({(): 0.2, (0,): 0.3, (0, 1): 0.5}, 2)
    assert np.allclose(pmf.marginals(), [0.8, 0.5])
    assert pmf.size_law() == {0: 0.2, 1: 0.3, 2: 0.5}
    cond = pmf.conditioned(lambda S: 0 in S)
    assert cond[(0,)] == pytest.approx(0.375)
    draws = pmf.sample(make_rng(0), 20_000)
    assert tv_distance(empirical_support_pmf(draws, 2), pmf) < 0.02


def test_pmf_json_round_trip(tmp_path):
    inst = small_instance(d=5)
    pmf = enumerate_posterior_gaussian(inst)
    path = tmp_path / "pmf.json"
    pmf.save(path)
    back = SupportPmf.load(path, domain_d=5)
    assert back.entries == pmf.entries and back.domain_d == 5
    keys = pmf.to_json_dict()
    assert "" in keys and "1,2" in keys
