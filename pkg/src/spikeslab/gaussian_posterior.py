"""Posterior support sampling under a Gaussian slab.

Given a hint ``theta_hat`` with support ``T``, every support ``S`` that
contains ``T`` has posterior weight proportional to

    P(S) = prod_{i in S} q_i/(1-q_i) * exp(0.5 z_S' A_S^{-1} z_S) / sqrt(det A_S)

with ``A = X'X/sigma^2 + I`` and ``z = X'(y - X theta_hat)/sigma^2 - theta_hat``.
The proposal replaces ``A_S`` by its isotropic idealisation, which makes
it a product law over coordinates and hence exactly sampleable by the
conditional Poisson routine. Rejection sampling corrects the difference.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import DimensionError, DomainError, NumericalError
from .model import Instance
from .sparse_recovery import HintEstimate
from ._support_sampler import SupportRejectionSampler
from .subset_sampling import DpTable, conditional_poisson_sample

__all__ = [
    "SamplerConfig",
    "SamplerReport",
    "RecenteredState",
    "default_k_star",
    "recenter",
    "log_Q_gaussian",
    "log_P_gaussian",
    "ratio_bounds_gaussian",
    "log_ratio_envelope_gaussian",
    "product_sample_gaussian",
    "proposal_pmf_gaussian",
    "GaussianPosteriorSampler",
    "posterior_sample_gaussian",
    "draw_theta_given_support",
]


def default_k_star(k: float, delta: float) -> int:
    """Smallest working cap with ``k* >= 16 (k + ln(40/delta))``."""
    return math.ceil(16.0 * (k + math.log(40.0 / delta)))


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler parameters.

    ``ratio_cap`` is either a number ``C >= 1`` or one of

    * ``"envelope"``: the tightest ``C`` implied by the RIP constant ``eps``
      on every support the proposal can produce;
    * ``"exact"``: the largest observed ``max(P/Q, Q/P)`` over the proposal
      domain, found by enumeration (refused above ``exact_limit`` subsets).
    """

    k_star: int
    eps: float = 0.1
    delta: float = 0.05
    ratio_cap: float | str = 3.0
    exact_limit: int = 200_000

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


@dataclass
class SamplerReport:
    attempts: int = 0
    accepted: int = 0
    ratio_min: float = math.inf
    ratio_max: float = 0.0
    budget_exceeded: bool = False
    wall_ms: float = 0.0

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("ratio_min", "ratio_max"):
            if not math.isfinite(out[key]):
                out[key] = None
        return out


@dataclass(frozen=True)
class RecenteredState:
    """Quantities shared by the P and Q weights of one instance and hint."""

    z: np.ndarray
    theta_hat: np.ndarray
    T: tuple
    sigma: float
    X: np.ndarray
    y: np.ndarray
    log_odds: np.ndarray
    forced: tuple
    gram: np.ndarray | None = None

    @property
    def d(self) -> int:
        return int(self.z.size)

    def gram_block(self, S) -> np.ndarray:
        idx = np.asarray(S, dtype=np.intp)
        if self.gram is not None:
            return self.gram[np.ix_(idx, idx)]
        XS = self.X[:, idx]
        return XS.T @ XS

    @property
    def q_coef(self) -> tuple[float, float]:
        """``(c0, c1)`` with per-coordinate log Q factor ``lo + c0 + c1 z^2``."""
        s2 = self.sigma ** 2
        return 0.5 * math.log(s2 / (1.0 + s2)), s2 / (2.0 * (1.0 + s2))


def _hint_vector(hint, d: int) -> np.ndarray:
    if hint is None:
        return np.zeros(d)
    if isinstance(hint, HintEstimate):
        return np.array(hint.theta_hat, dtype=float)
    v = np.array(hint, dtype=float)
    if v.shape != (d,):
        raise DimensionError("hint must have length d")
    return v


def recenter(instance: Instance, hint=None, gram_cache: bool = False) -> RecenteredState:
    """Compute ``z = X'(y - X theta_hat)/sigma^2 - theta_hat``.

    Coordinates with ``q_i = 1`` join ``T`` (they are in every support) and
    hint entries with ``q_i = 0`` are dropped (they are in none).
    """
    sigma = instance.sigma
    if not sigma > 0:
        raise DomainError("sigma must be positive; the posterior is degenerate at sigma = 0")
    theta_hat = _hint_vector(hint, instance.d)
    q = instance.prior.q
    theta_hat[q == 0] = 0.0
    X, y = instance.X, instance.y
    z = X.T @ (y - X @ theta_hat) / sigma ** 2 - theta_hat
    forced = tuple(int(i) for i in np.flatnonzero(q == 1))
    T = tuple(sorted(set(int(i) for i in np.flatnonzero(theta_hat)) | set(forced)))
    lo = instance.prior.log_odds().copy()
    lo[q == 1] = 0.0  # common factor of every admissible support
    gram = X.T @ X if gram_cache else None
    for arr in (z, theta_hat, lo):
        arr.setflags(write=False)
    return RecenteredState(z, theta_hat, T, sigma, X, y, lo, forced, gram)


def _missing_forced(state: RecenteredState, S) -> bool:
    return bool(state.forced) and not set(state.forced) <= set(S)


def log_Q_gaussian(state: RecenteredState, S) -> float:
    """Log of the isotropic proposal weight of ``S``."""
    S = list(S)
    if not S:
        return 0.0 if not state.forced else -math.inf
    if _missing_forced(state, S):
        return -math.inf
    c0, c1 = state.q_coef
    z = state.z[S]
    return float(np.sum(state.log_odds[S]) + c0 * len(S) + c1 * float(z @ z))


def log_P_gaussian(state: RecenteredState, S) -> float:
    """Log of the exact posterior weight of ``S`` (valid for ``S`` containing ``T``)."""
    S = list(S)
    if not S:
        return 0.0 if not state.forced else -math.inf
    if _missing_forced(state, S):
        return -math.inf
    A = state.gram_block(S) / state.sigma ** 2 + np.eye(len(S))
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise NumericalError(f"A_S not positive definite for S={tuple(S)}") from None
    w = solve_triangular(L, state.z[S], lower=True)
    return float(np.sum(state.log_odds[S]) + 0.5 * float(w @ w) - np.sum(np.log(np.diag(L))))


def _log_P_batch(state: RecenteredState, subsets: list[tuple]) -> np.ndarray:
    """Vectorised :func:`log_P_gaussian` over many subsets (grouped by size)."""
    out = np.empty(len(subsets))
    by_size: dict[int, list[int]] = {}
    for j, S in enumerate(subsets):
        by_size.setdefault(len(S), []).append(j)
    G = state.gram if state.gram is not None else state.X.T @ state.X
    s2 = state.sigma ** 2
    for size, rows in by_size.items():
        if size == 0:
            out[rows] = [log_P_gaussian(state, ())] * len(rows)
            continue
        idx = np.asarray([subsets[j] for j in rows], dtype=np.intp)
        A = G[idx[:, :, None], idx[:, None, :]] / s2 + np.eye(size)
        L = np.linalg.cholesky(A)
        zs = state.z[idx]
        w = np.linalg.solve(L, zs[:, :, None])[:, :, 0]
        logdet = np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        vals = np.sum(state.log_odds[idx], axis=1) + 0.5 * np.sum(w * w, axis=1) - logdet
        for j, v, S in zip(rows, vals, idx):
            out[j] = v if not _missing_forced(state, S) else -math.inf
    return out


def ratio_bounds_gaussian(eps: float, k_star: int, sigma: float, z_S_sqnorm: float) -> tuple[float, float]:
    """Simplified envelope ``lo <= P(S)/Q(S) <= hi`` for ``|S| <= k*`` under RIP."""
    if not (0.0 <= eps < 0.5):
        raise DomainError("the simplified envelope needs eps in [0, 1/2)")
    s2 = sigma * sigma
    expo = s2 * eps / (1.0 + s2) ** 2 * z_S_sqnorm
    lo = (1.0 / (1.0 + eps)) ** (k_star / 2.0) * math.exp(-expo)
    hi = (1.0 / (1.0 - eps)) ** (k_star / 2.0) * math.exp(expo)
    return lo, hi


def _coordinate_envelope(state: RecenteredState, eps: float):
    s2 = state.sigma ** 2
    a = 1.0 + s2
    z2 = state.z ** 2
    hi = 0.5 * math.log(a / (a - eps)) + s2 * eps / (2.0 * a * (a - eps)) * z2
    lo = -0.5 * math.log((a + eps) / a) - s2 * eps / (2.0 * a * (a + eps)) * z2
    return lo, hi


def log_ratio_envelope_gaussian(state: RecenteredState, eps: float, cap: int) -> tuple[float, float]:
    """Bounds on ``log P(S) - log Q(S)`` over all ``S`` with ``T <= S``, ``|S| <= cap``.

    Uses only that every ``cap``-column Gram block has spectrum in
    ``[1-eps, 1+eps]``; valid for any ``eps < 1``.
    """
    if not (0.0 <= eps < 1.0):
        raise DomainError("eps must lie in [0, 1)")
    lo, hi = _coordinate_envelope(state, eps)
    T = list(state.T)
    free = _ground(state)
    r = cap - len(T)
    if r < 0:
        raise DomainError("hint support exceeds the cap")
    top_hi = np.sort(hi[free])[::-1][:r]
    top_lo = np.sort(lo[free])[:r]
    return float(np.sum(lo[T]) + np.sum(top_lo)), float(np.sum(hi[T]) + np.sum(top_hi))


def _ground(state: RecenteredState) -> np.ndarray:
    """Coordinates that a proposal may add to ``T``."""
    mask = np.isfinite(state.log_odds)
    mask[list(state.T)] = False
    return np.flatnonzero(mask)


def _proposal_table(state: RecenteredState, cap: int) -> tuple[np.ndarray, DpTable]:
    r = cap - len(state.T)
    if r < 0:
        raise DomainError(f"hint support of size {len(state.T)} exceeds the proposal cap {cap}")
    ground = _ground(state)
    c0, c1 = state.q_coef
    lo = state.log_odds[ground] + c0 + c1 * state.z[ground] ** 2
    return ground, DpTable.from_log_odds(lo, min(r, ground.size))


def product_sample_gaussian(state: RecenteredState, config: SamplerConfig, rng,
                            cap: int | None = None, size: int | None = None):
    """``T`` plus a conditional Poisson draw with weights ``r_i/(1-q_i)``.

    ``cap`` defaults to ``config.k_star``. Returns one sorted tuple, or a
    list of ``size`` tuples.
    """
    cap = config.k_star if cap is None else cap
    ground, table = _proposal_table(state, cap)
    member = conditional_poisson_sample(table, rng, size=1 if size is None else size)
    T = state.T
    out = [tuple(sorted(T + tuple(int(i) for i in ground[row]))) for row in member]
    return out[0] if size is None else out


def proposal_pmf_gaussian(state: RecenteredState, cap: int) -> dict:
    """Exact law of :func:`product_sample_gaussian` at the given cap."""
    ground, table = _proposal_table(state, cap)
    out = {}
    lt = table.log_total
    for r in range(table.k + 1):
        for R in itertools.combinations(range(ground.size), r):
            S = tuple(sorted(state.T + tuple(int(ground[i]) for i in R)))
            out[S] = float(np.exp(np.sum(table.log_odds[list(R)]) - lt))
    return out


class GaussianPosteriorSampler(SupportRejectionSampler):
    """Rejection sampler for the posterior support law.

    Proposals are encoded as bitmasks over the free coordinates and their
    log ratios are memoised. When the proposal domain was enumerated
    (``ratio_cap="exact"``) the lookup is a dense array and whole chunks
    are decided without Python loops.
    """

    def __init__(self, instance: Instance, hint, config: SamplerConfig, gram_cache: bool | None = None):
        if gram_cache is None:
            gram_cache = instance.d <= 2000
        self.instance = instance
        self.state = recenter(instance, hint, gram_cache=gram_cache)
        self._log_p: dict[tuple, float] = {}
        self._log_q: dict[tuple, float] = {}
        cap = config.proposal_cap
        if cap < len(self.state.T):
            raise DomainError(f"hint support of size {len(self.state.T)} exceeds the proposal cap {cap}")
        ground = _ground(self.state)
        c0, c1 = self.state.q_coef
        lo = self.state.log_odds[ground] + c0 + c1 * self.state.z[ground] ** 2
        self._setup(self.state.T, ground, lo, cap, config, SamplerReport)

    def log_P(self, S: tuple) -> float:
        v = self._log_p.get(S)
        if v is None:
            v = self._log_p[S] = log_P_gaussian(self.state, S)
        return v

    def log_Q(self, S: tuple) -> float:
        v = self._log_q.get(S)
        if v is None:
            v = self._log_q[S] = log_Q_gaussian(self.state, S)
        return v

    def _log_P_many(self, subsets):
        lp = _log_P_batch(self.state, subsets)
        for S, v in zip(subsets, lp):
            self._log_p[S] = float(v)
        return lp

    def log_ratio_envelope(self):
        return log_ratio_envelope_gaussian(self.state, self.config.eps, self.cap)


def posterior_sample_gaussian(instance: Instance, hint, config: SamplerConfig, rng,
                              size: int | None = None):
    """Sample the posterior support law; see :class:`GaussianPosteriorSampler`."""
    return GaussianPosteriorSampler(instance, hint, config).sample(rng, size=size)


def draw_theta_given_support(instance: Instance, S, rng, size: int | None = None) -> np.ndarray:
    """Exact draw of ``theta`` from the Gaussian posterior restricted to support ``S``."""
    S = list(S)
    d = instance.d
    m = 1 if size is None else int(size)
    out = np.zeros((m, d))
    if S:
        s2 = instance.sigma ** 2
        XS = instance.X[:, S]
        A = XS.T @ XS / s2 + np.eye(len(S))
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            raise NumericalError(f"A_S not positive definite for S={tuple(S)}") from None
        mu = cho_solve((L, True), XS.T @ instance.y / s2)
        noise = rng.standard_normal((len(S), m))
        out[:, S] = (mu[:, None] + solve_triangular(L.T, noise, lower=False)).T
    return out[0] if size is None else out
