"""Posterior support sampling under a Laplace slab.

The support weight of ``S`` involves the normaliser of a quadratic plus
l1 density, which has no closed form. It is estimated by annealing a
Gaussian regulariser centred at the mode down to zero, with every stage
sampled by exact-conditional coordinate Gibbs. The proposal is again a
product law, built from the closed-form one-dimensional integrals
``v_i`` obtained by replacing the Gram block with ``(1+eps) I / sigma^2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr, ndtri

from ._support_sampler import SupportRejectionSampler
from .errors import AnnealingError, ConvergenceError, DimensionError, DomainError
from .gaussian_posterior import SamplerReport, _hint_vector
from .model import Instance

__all__ = [
    "SLAB_WEIGHT_GRID",
    "log_laplace_slab_weight",
    "laplace_slab_weight",
    "LaplaceState",
    "laplace_state",
    "log_Q_laplace",
    "product_sample_laplace",
    "l1_quadratic_mode",
    "truncated_normal_positive",
    "gibbs_quadratic_l1",
    "AnnealConfig",
    "estimate_log_Z",
    "LaplaceWeightCache",
    "log_P_tilde_laplace",
    "LaplaceSamplerConfig",
    "LaplaceSamplerReport",
    "LaplacePosteriorSampler",
    "posterior_sample_laplace",
    "draw_theta_given_support_laplace",
]

_LOG_HALF_SQRT_2PI = math.log(0.5 * math.sqrt(2.0 * math.pi))


# --- closed-form slab weight -------------------------------------------------

#: grid on which the closed form is checked against quadrature
SLAB_WEIGHT_GRID = {
    "u": (-30.0, -10.0, -3.0, -1.0, -0.5, 0.0, 0.5, 1.0, 3.0, 10.0, 30.0),
    "sigma": (0.05, 0.2, 0.5, 1.0, 2.0),
    "eps": (0.0, 0.1, 0.3, 0.5),
}

def log_laplace_slab_weight(u, sigma: float, eps: float = 0.0):
    """``log v`` with ``v = (2 pi)^{-1/2} int exp(-(1+eps) x^2/(2 sigma^2) + u x - |x|) dx``.

    Evaluated as ``s [e^{s^2 (u-1)^2/2} Phi(s(u-1)) + e^{s^2 (u+1)^2/2} Phi(-s(u+1))]``
    with ``s = sigma / sqrt(1+eps)``, entirely in log space.
    """
    u = np.asarray(u, dtype=float)
    if not (np.all(np.isfinite(u)) and math.isfinite(sigma) and math.isfinite(eps)):
        raise DomainError("slab weight inputs must be finite")
    if sigma <= 0:
        raise DomainError("sigma must be positive")
    if not (0.0 <= eps < 1.0):
        raise DomainError("eps must lie in [0, 1)")
    s = sigma / math.sqrt(1.0 + eps)
    a, b = s * (u - 1.0), s * (u + 1.0)
    out = math.log(s) + np.logaddexp(0.5 * a * a + log_ndtr(a), 0.5 * b * b + log_ndtr(-b))
    return float(out) if out.ndim == 0 else out


def laplace_slab_weight(u, sigma: float, eps: float = 0.0):
    return np.exp(log_laplace_slab_weight(u, sigma, eps))


def _log_upper_slab_weight(u, sigma: float, eps: float):
    """Same integral with ``1-eps`` in place of ``1+eps`` (an upper bound under RIP)."""
    s = sigma / math.sqrt(1.0 - eps)
    u = np.asarray(u, dtype=float)
    a, b = s * (u - 1.0), s * (u + 1.0)
    return math.log(s) + np.logaddexp(0.5 * a * a + log_ndtr(a), 0.5 * b * b + log_ndtr(-b))


# --- state and proposal --------------------------------------------------------

@dataclass(frozen=True)
class LaplaceState:
    u: np.ndarray
    theta_hat: np.ndarray
    T: tuple
    sigma: float
    X: np.ndarray
    y: np.ndarray
    eps: float
    log_odds: np.ndarray
    forced: tuple
    log_v: np.ndarray
    r_sq: float
    y_sq: float

    @property
    def d(self) -> int:
        return int(self.u.size)

    @property
    def proposal_log_odds(self) -> np.ndarray:
        """Per-coordinate log factor of the product proposal."""
        return self.log_odds + _LOG_HALF_SQRT_2PI + self.log_v


def laplace_state(instance: Instance, hint=None, eps: float = 0.0) -> LaplaceState:
    """Compute ``u = X'(y - X theta_hat)/sigma^2`` and the slab weights ``v_i``."""
    sigma = instance.sigma
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    theta_hat = _hint_vector(hint, instance.d)
    q = instance.prior.q
    theta_hat[q == 0] = 0.0
    X, y = instance.X, instance.y
    r = y - X @ theta_hat
    u = X.T @ r / sigma ** 2
    forced = tuple(int(i) for i in np.flatnonzero(q == 1))
    T = tuple(sorted(set(int(i) for i in np.flatnonzero(theta_hat)) | set(forced)))
    lo = instance.prior.log_odds().copy()
    lo[q == 1] = 0.0
    log_v = log_laplace_slab_weight(u, sigma, eps)
    log_v = np.atleast_1d(log_v)
    for arr in (u, theta_hat, lo, log_v):
        arr.setflags(write=False)
    return LaplaceState(u, theta_hat, T, sigma, X, y, float(eps), lo, forced, log_v,
                        float(r @ r), float(y @ y))


def log_Q_laplace(state: LaplaceState, S) -> float:
    """``-|theta_hat|_1 + sum_{i in S} (log odds_i + log(sqrt(2 pi)/2) + log v_i)``."""
    S = list(S)
    if state.forced and not set(state.forced) <= set(S):
        return -math.inf
    base = -float(np.sum(np.abs(state.theta_hat)))
    if not S:
        return base
    return base + float(np.sum(state.proposal_log_odds[S]))


def _ground(state) -> np.ndarray:
    mask = np.isfinite(state.log_odds)
    mask[list(state.T)] = False
    return np.flatnonzero(mask)


def product_sample_laplace(state: LaplaceState, k_star: int, rng, size: int | None = None):
    """``T`` plus a conditional Poisson draw with odds ``q v/(1-q)``, at most ``k_star`` in total."""
    from .subset_sampling import DpTable, conditional_poisson_sample

    r = k_star - len(state.T)
    if r < 0:
        raise DomainError("hint support exceeds the cap")
    ground = _ground(state)
    table = DpTable.from_log_odds(state.proposal_log_odds[ground], min(r, ground.size))
    member = conditional_poisson_sample(table, rng, size=1 if size is None else size)
    out = [tuple(sorted(state.T + tuple(int(i) for i in ground[row]))) for row in member]
    return out[0] if size is None else out


# --- quadratic plus l1 densities ------------------------------------------------

def _check_spd(A, b):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if A.shape != (b.size, b.size):
        raise DimensionError("A must be k x k with k = len(b)")
    return A, b


def l1_quadratic_mode(A, b, tol: float = 1e-12, max_sweeps: int = 10_000) -> np.ndarray:
    """Minimiser of ``theta'A theta/2 - b'theta + |theta|_1`` by coordinate descent."""
    A, b = _check_spd(A, b)
    k = b.size
    theta = np.zeros(k)
    diag = np.diag(A).copy()
    if np.any(diag <= 0):
        raise DomainError("A must be positive definite")
    grad = -b.copy()  # A theta - b
    scale = max(1.0, float(np.max(np.abs(b))))
    for _ in range(max_sweeps):
        biggest = 0.0
        for i in range(k):
            c = diag[i] * theta[i] - grad[i]
            new = np.sign(c) * max(abs(c) - 1.0, 0.0) / diag[i]
            step = new - theta[i]
            if step != 0.0:
                grad += step * A[:, i]
                theta[i] = new
                biggest = max(biggest, abs(step) * diag[i])
        if biggest <= tol * scale:
            return theta
    raise ConvergenceError("coordinate descent for the l1 mode did not converge")


def truncated_normal_positive(mu, s, rng) -> np.ndarray:
    """Exact draws from ``N(mu, s^2)`` restricted to ``(0, inf)``, elementwise.

    Inverse CDF when the standardised bound ``alpha = -mu/s`` is at most 6,
    exponential rejection beyond.
    """
    mu = np.asarray(mu, dtype=float)
    s = np.broadcast_to(np.asarray(s, dtype=float), mu.shape)
    alpha = -mu / s
    out = np.empty(mu.shape)
    body = alpha <= 6.0
    if np.any(body):
        a = alpha[body]
        u = rng.random(a.shape)
        # upper-tail inversion keeps precision when the bound sits far left
        z = -ndtri(u * ndtr(-a))
        out[body] = s[body] * (z - a)
    tail = np.flatnonzero(~body)
    if tail.size:
        a = alpha[~body]
        lam = 0.5 * (a + np.sqrt(a * a + 4.0))
        res = np.empty(a.size)
        todo = np.arange(a.size)
        while todo.size:
            z = a[todo] + rng.exponential(1.0 / lam[todo])
            ok = np.log(rng.random(todo.size)) <= -0.5 * (z - lam[todo]) ** 2
            res[todo[ok]] = z[ok]
            todo = todo[~ok]
        out.flat[tail] = s.flat[tail] * (res - a)
    return np.maximum(out, np.finfo(float).tiny)


def _gibbs_sweeps(theta, A, b, sweeps, rng, lam=0.0, center=None):
    """In-place systematic-scan Gibbs on ``exp(-x'(A+lam)x/2 + (b+lam c)'x - |x|_1)``.

    ``theta`` has shape ``(chains, k)``.
    """
    k = A.shape[0]
    h = b if center is None or lam == 0.0 else b + lam * center
    diag = np.diag(A) + lam
    sd = 1.0 / np.sqrt(diag)
    for _ in range(sweeps):
        for i in range(k):
            c = h[i] - theta @ A[:, i] + A[i, i] * theta[:, i]
            a = diag[i]
            sa = sd[i]
            lp = 0.5 * (c - 1.0) ** 2 / a + log_ndtr((c - 1.0) * sa)
            ln = 0.5 * (c + 1.0) ** 2 / a + log_ndtr(-(c + 1.0) * sa)
            pos = np.log(rng.random(c.shape)) < lp - np.logaddexp(lp, ln)
            mu = np.where(pos, (c - 1.0) / a, -(c + 1.0) / a)
            x = truncated_normal_positive(mu, sa, rng)
            theta[:, i] = np.where(pos, x, -x)
    return theta


def gibbs_quadratic_l1(A, b, sweeps: int, rng, init=None, chains: int | None = None) -> np.ndarray:
    """Gibbs sampling of ``exp(-theta'A theta/2 + b'theta - |theta|_1)``.

    Starts from ``init`` (default: the mode) and returns the state after
    ``sweeps`` full scans; shape ``(k,)`` or ``(chains, k)``.
    """
    A, b = _check_spd(A, b)
    m = 1 if chains is None else int(chains)
    start = l1_quadratic_mode(A, b) if init is None else np.asarray(init, dtype=float)
    theta = np.array(np.broadcast_to(start, (m, b.size)), dtype=float)
    _gibbs_sweeps(theta, A, b, sweeps, rng)
    return theta[0] if chains is None else theta


# --- annealed normaliser estimation ---------------------------------------------

@dataclass(frozen=True)
class AnnealConfig:
    """Annealing parameters; ``None`` fields are derived per problem.

    ``lam`` is the initial regulariser, ``M`` the number of stages and ``N``
    the number of chains (one sample per chain and stage). ``N`` defaults to
    ``ceil(n_scale * M^2 / Delta^2)``.
    """

    Delta: float = 0.1
    delta: float = 0.25
    lam: float | None = None
    M: int | None = None
    N: int | None = None
    n_scale: float = 0.25
    gibbs_sweeps: int = 2
    burn_in: int = 4
    max_rel_var: float = 1e3
    repeats: int | None = None
    max_chains: int = 400_000

    def __post_init__(self):
        if not (0.0 < self.Delta < 1.0):
            raise DomainError("Delta must lie in (0, 1)")
        if not (0.0 < self.delta < 1.0):
            raise DomainError("delta must lie in (0, 1)")
        if self.gibbs_sweeps < 1 or self.burn_in < 0:
            raise DomainError("sweep counts must be positive")
        if self.n_scale <= 0:
            raise DomainError("n_scale must be positive")

    def initial_lambda(self, k: int, R: float) -> float:
        D = self.Delta
        return 8.0 * R * math.sqrt(k) / D + 192.0 * k / D ** 2 * (k + math.log(4.0 / D))

    def schedule(self, k: int, R: float, mu: float) -> np.ndarray:
        """Regularisers ``lam_0 > lam_1 > ... > lam_M = 0``.

        Consecutive ratios are ``1 + 1/sqrt(max(k, 2))``. At ``k = 1`` the
        plain ``1 + 1/sqrt(k)`` halves the regulariser per stage, and the
        second moment of the stage weights then diverges.
        """
        lam0 = self.lam if self.lam is not None else self.initial_lambda(k, R)
        rate = 1.0 + 1.0 / math.sqrt(max(k, 2))
        if self.M is not None:
            M = max(1, int(self.M))
            lams = lam0 / rate ** np.arange(M)
        else:
            floor = mu / k
            steps = max(0, math.ceil(math.log(lam0 / floor) / math.log(rate))) if lam0 > floor else 0
            lams = lam0 / rate ** np.arange(steps + 1)
        return np.append(lams, 0.0)

    def n_repeats(self) -> int:
        if self.repeats is not None:
            return max(1, int(self.repeats))
        return 1 if self.delta >= 0.25 else 2 * math.ceil(math.log(1.0 / self.delta)) + 1


def _log_Z_reference(A, b, m, lam, rng, n):
    """Exact stage-0 normaliser by Gaussian integration times an IS correction.

    Returns the log normaliser and ``n`` draws from the Gaussian part.
    """
    k = b.size
    A0 = A + lam * np.eye(k)
    L = np.linalg.cholesky(A0)
    g = b - A @ m
    dlt = np.linalg.solve(A0, g)
    mu0 = m + dlt
    quad = float(b @ m - 0.5 * m @ A @ m + 0.5 * g @ dlt)
    log_gauss = 0.5 * k * math.log(2 * math.pi) - float(np.sum(np.log(np.diag(L)))) + quad
    from scipy.linalg import solve_triangular

    draws = mu0 + solve_triangular(L.T, rng.standard_normal((k, n)), lower=False).T
    lw = -np.sum(np.abs(draws), axis=1)
    return log_gauss + float(logsumexp(lw) - math.log(n)), draws


def _estimate_once(A, b, cfg: AnnealConfig, rng, m, lams, N):
    log_z, theta = _log_Z_reference(A, b, m, lams[0], rng, N)
    _gibbs_sweeps(theta, A, b, cfg.burn_in, rng, lams[0], m)
    for i in range(len(lams) - 1):
        if i > 0:
            _gibbs_sweeps(theta, A, b, cfg.gibbs_sweeps, rng, lams[i], m)
        lw = 0.5 * (lams[i] - lams[i + 1]) * np.sum((theta - m) ** 2, axis=1)
        top = float(np.max(lw))
        w = np.exp(lw - top)
        mean = float(np.mean(w))
        rel_var = float(np.var(w)) / (mean * mean) if mean > 0 else math.inf
        if not rel_var <= cfg.max_rel_var:
            raise AnnealingError(f"stage {i} ratio estimate has relative variance {rel_var:.3g}", stage=i)
        log_z += top + math.log(mean)
    return log_z


def estimate_log_Z(A, b, config: AnnealConfig | None = None, rng=None) -> float:
    """Estimate ``log int exp(-theta'A theta/2 + b'theta - |theta|_1) d theta``.

    The chains move through ``f + lam_i |theta - m|^2 / 2`` with ``m`` the
    mode and ``lam_i`` decreasing geometrically to zero; each stage
    contributes the ratio ``E[exp((lam_i - lam_{i+1}) |theta - m|^2 / 2)]``.
    Independent repeats are combined by their median.
    """
    if rng is None:
        raise DomainError("an RNG stream is required")
    cfg = config or AnnealConfig()
    A, b = _check_spd(A, b)
    k = b.size
    if k == 0:
        return 0.0
    try:
        mu = float(np.linalg.eigvalsh(A)[0])
    except np.linalg.LinAlgError:
        raise DomainError("A must be symmetric positive definite") from None
    if mu <= 0:
        raise DomainError("A must be positive definite")
    m = l1_quadratic_mode(A, b)
    lams = cfg.schedule(k, float(np.linalg.norm(b)), mu)
    M = len(lams) - 1
    N = cfg.N if cfg.N is not None else math.ceil(cfg.n_scale * M * M / cfg.Delta ** 2)
    N = int(min(max(N, 64), cfg.max_chains))
    vals = [_estimate_once(A, b, cfg, rng, m, lams, N) for _ in range(cfg.n_repeats())]
    return float(np.median(vals))


# --- support weights -------------------------------------------------------------

class LaplaceWeightCache:
    """Memo of ``log P~(S)``; each support gets its own RNG stream derived from ``seed``.

    Because the stream of a support depends only on ``(seed, S)``, estimates
    do not depend on the order in which supports are first requested.
    """

    def __init__(self, seed=0):
        self.seed = seed
        self.values: dict[tuple, float] = {}
        self.hits = 0
        self.computed = 0
        self.stage_failures = 0

    def stream(self, S: tuple) -> np.random.Generator:
        key = [len(S)] + [int(i) for i in S]
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(key))
        return np.random.Generator(np.random.Philox(ss))


def log_P_tilde_laplace(state: LaplaceState, S, config: AnnealConfig | None = None, rng=None,
                        cache: LaplaceWeightCache | None = None) -> float:
    """Estimated log weight of ``S`` relative to the common factor ``exp(-|r|^2/(2 sigma^2))``.

    ``log P~(S) = sum log odds + |S| log(1/2) + log Z(A_S, b_S) + (|r|^2 - |y|^2)/(2 sigma^2)``
    with ``A_S = X_S'X_S/sigma^2`` and ``b_S = X_S'y/sigma^2``. The empty
    support evaluates to 0 when there is no hint.
    """
    S = tuple(int(i) for i in S)
    if cache is not None and S in cache.values:
        cache.hits += 1
        return cache.values[S]
    if state.forced and not set(state.forced) <= set(S):
        val = -math.inf
    else:
        if rng is None:
            if cache is None:
                raise DomainError("need an RNG stream or a cache")
            rng = cache.stream(S)
        cfg = config or AnnealConfig()
        s2 = state.sigma ** 2
        const = 0.5 * (state.r_sq - state.y_sq) / s2
        if S:
            XS = state.X[:, list(S)]
            A = XS.T @ XS / s2
            b = XS.T @ state.y / s2
            try:
                log_z = estimate_log_Z(A, b, cfg, rng)
            except AnnealingError:
                if cache is not None:
                    cache.stage_failures += 1
                log_z = estimate_log_Z(A, b, replace(cfg, n_scale=4 * cfg.n_scale,
                                                     gibbs_sweeps=2 * cfg.gibbs_sweeps), rng)
        else:
            log_z = 0.0
        val = float(np.sum(state.log_odds[list(S)])) + len(S) * math.log(0.5) + log_z + const
    if cache is not None:
        cache.values[S] = val
        cache.computed += 1
    return val


# --- sampler ---------------------------------------------------------------------

@dataclass(frozen=True)
class LaplaceSamplerConfig:
    """Laplace sampler parameters.

    ``anneal.Delta`` defaults to ``delta/12`` when left at ``None`` via
    ``Delta=None``. ``ratio_cap`` accepts a number (default 4),
    ``"envelope"`` or ``"exact"`` as for the Gaussian sampler.
    """

    k_star: int
    eps: float = 0.0
    delta: float = 0.05
    ratio_cap: float | str = 4.0
    Delta: float | None = None
    anneal: AnnealConfig = field(default_factory=AnnealConfig)
    exact_limit: int = 5_000
    seed: int = 0

    def __post_init__(self):
        if self.k_star < 1:
            raise DomainError("k_star must be >= 1")
        if not (0.0 <= self.eps < 1.0):
            raise DomainError("eps must lie in [0, 1)")
        if not (0.0 < self.delta < 1.0):
            raise DomainError("delta must lie in (0, 1)")
        if isinstance(self.ratio_cap, str):
            if self.ratio_cap not in ("envelope", "exact"):
                raise DomainError("ratio_cap must be a number >= 1, 'envelope' or 'exact'")
        elif not (self.ratio_cap >= 1.0 and math.isfinite(self.ratio_cap)):
            raise DomainError("ratio_cap must be >= 1")

    @property
    def proposal_cap(self) -> int:
        return (3 * self.k_star) // 4

    def anneal_config(self) -> AnnealConfig:
        D = self.Delta if self.Delta is not None else self.delta / 12.0
        return replace(self.anneal, Delta=D)


@dataclass
class LaplaceSamplerReport(SamplerReport):
    z_estimates_computed: int = 0
    cache_hits: int = 0
    anneal_stage_failures: int = 0


class LaplacePosteriorSampler(SupportRejectionSampler):
    """Rejection sampler with estimated target weights, memoised per support."""

    rejection_share = 1.0 / 8.0

    def __init__(self, instance: Instance, hint, config: LaplaceSamplerConfig,
                 cache: LaplaceWeightCache | None = None):
        cap = config.proposal_cap
        if instance.sigma > 1.0 / (6.0 * config.k_star):
            warnings.warn(f"sigma={instance.sigma:.4g} exceeds 1/(6 k*)={1 / (6 * config.k_star):.4g}; "
                          "the ratio guarantee may not hold", RuntimeWarning, stacklevel=2)
        self.instance = instance
        self.state = laplace_state(instance, hint, config.eps)
        self.cache = cache if cache is not None else LaplaceWeightCache(config.seed)
        self.anneal = config.anneal_config()
        ground = _ground(self.state)
        self._setup(self.state.T, ground, self.state.proposal_log_odds[ground], cap, config,
                    LaplaceSamplerReport)

    def log_P(self, S: tuple) -> float:
        return log_P_tilde_laplace(self.state, S, self.anneal, cache=self.cache)

    def log_Q(self, S: tuple) -> float:
        return log_Q_laplace(self.state, S)

    def log_ratio_envelope(self) -> tuple[float, float]:
        """Range of ``log P~ - log Q`` implied by RIP at ``eps`` plus estimator slack."""
        st = self.state
        eps = st.eps
        gap = _log_upper_slab_weight(st.u, st.sigma, eps) - st.log_v
        free = self.ground
        r = self.cap - len(self.T)
        T = list(self.T)
        hi = float(np.sum(gap[T]) + np.sum(np.sort(gap[free])[::-1][:r]))
        hi += 2.0 * float(np.sum(np.abs(st.theta_hat)))
        slack = math.log((1.0 + self.anneal.Delta) / (1.0 - self.anneal.Delta))
        return -slack, hi + slack

    def _report_extra(self) -> dict:
        return {"z_estimates_computed": self.cache.computed,
                "cache_hits": self.cache.hits,
                "anneal_stage_failures": self.cache.stage_failures}


def posterior_sample_laplace(instance: Instance, hint, config: LaplaceSamplerConfig, rng,
                             size: int | None = None):
    """Sample the posterior support law under a Laplace slab."""
    return LaplacePosteriorSampler(instance, hint, config).sample(rng, size=size)


def draw_theta_given_support_laplace(instance: Instance, S, sweeps: int, rng,
                                     size: int | None = None, burn_in: int = 50) -> np.ndarray:
    """Draw ``theta`` given support ``S`` by Gibbs from the mode (``burn_in + sweeps`` scans)."""
    S = list(S)
    m = 1 if size is None else int(size)
    out = np.zeros((m, instance.d))
    if S:
        s2 = instance.sigma ** 2
        XS = instance.X[:, S]
        A = XS.T @ XS / s2
        b = XS.T @ instance.y / s2
        out[:, S] = gibbs_quadratic_l1(A, b, burn_in + sweeps, rng, chains=m)
    return out[0] if size is None else out
