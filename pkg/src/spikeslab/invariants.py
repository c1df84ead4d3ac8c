"""Fast self-checks behind ``spikeslab verify --mode invariants``.

Each check builds its own small seeded problem, measures one number and
compares it with a fixed tolerance.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import integrate

from .gaussian_posterior import log_P_gaussian, recenter
from .laplace_posterior import laplace_slab_weight
from .model import PriorSpec, draw_instance, gen_gaussian_matrix, make_rng
from .oracle import enumerate_posterior_gaussian, log_evidence_gaussian
from .sparse_recovery import clip
from .subset_sampling import build_dp_table, conditional_poisson_pmf, default_max_attempts, rejection_output_pmf


def _conditional_poisson(rng) -> float:
    p = rng.uniform(0.05, 0.9, size=8)
    table = build_dp_table(p, 3)
    w = {}
    for r in range(4):
        for S in itertools.combinations(range(8), r):
            w[S] = math.prod(p[i] / (1 - p[i]) for i in S)
    tot = math.fsum(w.values())
    return max(abs(conditional_poisson_pmf(table, S) - v / tot) for S, v in w.items())


def _rejection_law(rng) -> float:
    lq = np.log(rng.dirichlet(np.ones(12)))
    lp = lq + rng.uniform(-math.log(2), math.log(2), size=12)
    delta = 1e-2
    out = rejection_output_pmf(lp, lq, 2.0, default_max_attempts(2.0, delta))
    target = np.exp(lp) / np.exp(lp).sum()
    return 0.5 * float(np.abs(out - target).sum())


def _recentering(rng) -> float:
    X = gen_gaussian_matrix(30, 10, rng)
    inst = draw_instance(PriorSpec.uniform(10, 0.3), X, 0.4, rng)
    hint = np.where(rng.random(10) < 0.3, rng.normal(size=10), 0.0)
    state = recenter(inst, hint)
    T = state.T
    worst = 0.0
    for _ in range(20):
        extra = [tuple(i for i in range(10) if i not in T and rng.random() < 0.3) for _ in range(2)]
        S1, S2 = (tuple(sorted(T + e)) for e in extra)
        lhs = log_P_gaussian(state, S1) - log_P_gaussian(state, S2)
        rhs = log_evidence_gaussian(inst, S1) - log_evidence_gaussian(inst, S2)
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(rhs)))
    return worst


def _oracle_routes(rng) -> float:
    X = gen_gaussian_matrix(20, 6, rng)
    inst = draw_instance(PriorSpec.uniform(6, 0.3), X, 0.7, rng)
    pmf = enumerate_posterior_gaussian(inst)
    logs = {S: log_evidence_gaussian(inst, S)
            for r in range(7) for S in itertools.combinations(range(6), r)}
    m = max(logs.values())
    tot = math.fsum(math.exp(v - m) for v in logs.values())
    return max(abs(pmf[S] - math.exp(v - m) / tot) for S, v in logs.items())


def _slab_weight(rng) -> float:
    worst = 0.0
    for _ in range(5):
        u, sigma, eps = rng.uniform(-3, 3), rng.uniform(0.2, 1.5), rng.uniform(0, 0.5)
        f = lambda x: math.exp(-(1 + eps) * x * x / (2 * sigma ** 2) + u * x - abs(x)) / math.sqrt(2 * math.pi)
        ref = integrate.quad(f, -np.inf, 0)[0] + integrate.quad(f, 0, np.inf)[0]
        worst = max(worst, abs(float(laplace_slab_weight(u, sigma, eps)) - ref) / ref)
    return worst


def _clip_idempotent(rng) -> float:
    v = rng.normal(size=50)
    once = clip(v, 0.7)
    return float(np.max(np.abs(clip(once, 0.7) - once)))


CHECKS = {
    "conditional_poisson_pmf": (_conditional_poisson, 1e-10),
    "rejection_law_within_delta": (_rejection_law, 1e-2),
    "recentering_identity": (_recentering, 1e-9),
    "oracle_two_routes": (_oracle_routes, 1e-10),
    "laplace_slab_weight_quadrature": (_slab_weight, 1e-7),
    "clip_idempotent": (_clip_idempotent, 0.0),
}


def run_invariants(seed: int = 0) -> dict:
    """Run every check; ``pass`` is true when each measured value is within tolerance."""
    rng = make_rng(seed)
    checks = []
    for name, (fn, tol) in CHECKS.items():
        value = float(fn(rng))
        checks.append({"name": name, "measured": value, "tolerance": tol, "pass": value <= tol})
    return {"mode": "invariants", "seed": seed, "checks": checks, "pass": all(c["pass"] for c in checks)}
