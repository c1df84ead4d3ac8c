"""Sparse recovery: Lasso, iterative hard thresholding and clipped hints.

The hint produced by :func:`build_hint` is a sparse vector whose support
the posterior almost surely contains; the samplers recenter around it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DimensionError, DomainError
from .model import Instance, noise_colip_bound, rip_to_mi_bound, verify_rip

__all__ = [
    "LassoProblem",
    "LassoResult",
    "EstimatorKind",
    "RecoveryConfig",
    "HintEstimate",
    "solve_lasso",
    "lasso_lambda",
    "linf_error_multiplier",
    "estimate_linf",
    "estimate_l2_iht",
    "hard_threshold",
    "clip",
    "hint_radius",
    "build_hint",
]


@dataclass(frozen=True)
class LassoProblem:
    """``min 0.5 |X theta - y|^2 + lam |theta|_1`` solved to ``tol_l2``."""

    X: np.ndarray
    y: np.ndarray
    lam: float
    tol_l2: float

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError("lambda must be positive")
        if not self.tol_l2 > 0:
            raise DomainError("tol_l2 must be positive")
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise DimensionError("X must be n x d and y length n")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class LassoResult:
    theta: np.ndarray
    gap: float
    iterations: int
    polished: bool


def _soft(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def _gap(X, y, lam, theta):
    r = y - X @ theta
    g = X.T @ r
    gmax = float(np.max(np.abs(g))) if g.size else 0.0
    scale = 1.0 if gmax <= lam else lam / gmax
    nu = scale * r
    primal = 0.5 * float(r @ r) + lam * float(np.sum(np.abs(theta)))
    dual = 0.5 * float(y @ y) - 0.5 * float((y - nu) @ (y - nu))
    return max(primal - dual, 0.0), g


def _polish(X, y, lam, theta, slack=1e-9):
    """Exact solution on the current support if it passes the KKT test."""
    S = np.flatnonzero(theta)
    if S.size == 0 or S.size > X.shape[0]:
        return None
    XS = X[:, S]
    sgn = np.sign(theta[S])
    try:
        sol = np.linalg.solve(XS.T @ XS, XS.T @ y - lam * sgn)
    except np.linalg.LinAlgError:
        return None
    if np.any(np.sign(sol) != sgn):
        return None
    cand = np.zeros_like(theta)
    cand[S] = sol
    g = X.T @ (y - X @ cand)
    off = np.ones(theta.size, dtype=bool)
    off[S] = False
    if off.any() and np.max(np.abs(g[off])) > lam * (1 + slack):
        return None
    return cand


def _smin(X, theta, g, lam):
    """Smallest singular value of the columns that can be active at the optimum."""
    E = np.flatnonzero((theta != 0) | (np.abs(g) >= lam * (1 - 1e-6)))
    if E.size == 0:
        return math.inf
    if E.size > X.shape[0]:
        return 0.0
    return float(np.linalg.svd(X[:, E], compute_uv=False)[-1])


def solve_lasso(problem: LassoProblem, max_iter: int = 200_000, check_every: int = 20,
                theta0=None, return_result: bool = False):
    """Accelerated proximal gradient with a duality-gap stopping rule.

    Near the optimum the objective grows at least like
    ``0.5 |X (theta - theta_hat)|^2``, so a gap ``g`` certifies
    ``|theta - theta_hat|_2 <= sqrt(2 g) / s_min`` where ``s_min`` is the
    smallest singular value over the columns that can be active. Every
    check also tries an exact least-squares solve on the current support
    and accepts it when the KKT conditions hold. A gap at the rounding
    floor of the objective also stops the iteration, since no further
    progress is measurable.
    """
    X, y, lam, tol = problem.X, problem.y, problem.lam, problem.tol_l2
    d = X.shape[1]
    theta = np.zeros(d) if theta0 is None else np.array(theta0, dtype=float)
    L = float(np.linalg.norm(X, 2)) ** 2
    if L == 0.0:
        res = LassoResult(np.zeros(d), 0.0, 0, False)
        return res if return_result else res.theta
    step = 1.0 / L
    Xty = X.T @ y
    if np.max(np.abs(Xty)) <= lam:
        res = LassoResult(np.zeros(d), 0.0, 0, False)
        return res if return_result else res.theta
    z, t = theta.copy(), 1.0
    gap = math.inf
    gap_floor = 64.0 * np.finfo(float).eps * max(1.0, 0.5 * float(y @ y))
    for it in range(1, max_iter + 1):
        grad = X.T @ (X @ z) - Xty
        new = _soft(z - step * grad, step * lam)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        # gradient-based adaptive restart
        if float((z - new) @ (new - theta)) > 0:
            t_new, z = 1.0, new.copy()
        else:
            z = new + ((t - 1.0) / t_new) * (new - theta)
        theta, t = new, t_new
        if it % check_every:
            continue
        gap, g = _gap(X, y, lam, theta)
        cand = _polish(X, y, lam, theta)
        if cand is not None:
            cgap, _ = _gap(X, y, lam, cand)
            if cgap <= gap:
                res = LassoResult(cand, cgap, it, True)
                return res if return_result else res.theta
        smin = _smin(X, theta, g, lam)
        if (smin > 0 and math.sqrt(2.0 * gap) / smin <= tol) or gap <= gap_floor:
            res = LassoResult(theta, gap, it, False)
            return res if return_result else res.theta
    raise ConvergenceError(f"Lasso did not converge in {max_iter} iterations; duality gap {gap:.3e}")


# --- estimators ----------------------------------------------------------

class EstimatorKind(str, enum.Enum):
    LINF = "linf"
    L2_IHT = "l2"


@dataclass(frozen=True)
class RecoveryConfig:
    """Tunables of the recovery estimators and the hint.

    Parameters
    ----------
    c_inf : float or None
        Multiplier of the l-inf error radius. ``None`` uses the worst-case
        constant of the RIP-based Lasso error bound at the working RIP level.
    c2 : float
        IHT support multiplier and l2 radius multiplier.
    m : int or None
        Row-prefix length for IHT; ``None`` uses all rows.
    delta : float
        Failure probability used by the estimators when called directly.
    estimator : EstimatorKind
        Which estimator :func:`build_hint` runs.
    eps_lambda : float or None
        RIP constant plugged into the Lasso regularisation rule. ``None``
        measures it when the subset count is small, else uses ``eps_fallback``.
    eps_fallback : float
        RIP constant assumed when exhaustive measurement is infeasible.
    exhaustive_limit : int
        Largest subset count that :func:`verify_rip` may enumerate here.
    refit : bool
        Replace hint values by the conditional posterior mean on the hint
        support, then re-clip until the support is stable.
    lambda_scale : float
        Multiplier applied to the RIP-calibrated Lasso regularisation. Values
        below 1 trade worst-case guarantees for less shrinkage; with ``refit``
        the Lasso only selects candidates, so a small value is harmless.
    """

    c_inf: float | None = None
    c2: float = 3.0
    m: int | None = None
    delta: float = 0.05
    estimator: EstimatorKind = EstimatorKind.LINF
    eps_lambda: float | None = None
    eps_fallback: float = 0.02
    exhaustive_limit: int = 20_000
    refit: bool = False
    max_iht_iter: int = 1000
    lambda_scale: float = 1.0

    def __post_init__(self):
        if self.c2 < 1:
            raise DomainError("c2 must be >= 1")
        if self.m is not None and self.m < 1:
            raise DomainError("m must be >= 1")
        if self.c_inf is not None and self.c_inf <= 0:
            raise DomainError("c_inf must be positive")
        if not (0 < self.delta < 1):
            raise DomainError("delta must lie in (0, 1)")
        if not (0 <= self.eps_fallback < 1):
            raise DomainError("eps_fallback must lie in [0, 1)")
        if not self.lambda_scale > 0:
            raise DomainError("lambda_scale must be positive")
        object.__setattr__(self, "estimator", EstimatorKind(self.estimator))


@dataclass(frozen=True)
class HintEstimate:
    theta_hat: np.ndarray
    support: tuple
    clip_level: float
    estimator_kind: EstimatorKind

    def __post_init__(self):
        nz = np.flatnonzero(self.theta_hat)
        if tuple(int(i) for i in nz) != tuple(self.support):
            raise DomainError("support must list the nonzeros of theta_hat")
        if nz.size and np.min(np.abs(self.theta_hat[nz])) <= self.clip_level:
            raise DomainError("every hint coordinate must exceed the clip level")


def _lambda_eps(X, k, eps, config: RecoveryConfig) -> float:
    if eps is not None:
        return float(eps)
    if config.eps_lambda is not None:
        return float(config.eps_lambda)
    d = X.shape[1]
    s = min(k + 1, d)
    if math.comb(d, s) <= config.exhaustive_limit:
        return verify_rip(X, s, config.exhaustive_limit).eps_hat
    return config.eps_fallback


def lasso_lambda(sigma: float, eps: float, d: int, delta: float, k: int) -> tuple[float, float]:
    """Regularisation ``2(1+a)/(1-a) r_inf`` and the noise radius ``r_inf``."""
    alpha = rip_to_mi_bound(eps, k)
    if alpha >= 1:
        raise DomainError(f"RIP constant {eps:.4g} at sparsity {k} gives incoherence "
                          f"{alpha:.4g} >= 1; the Lasso rule has no guarantee")
    r_inf = noise_colip_bound(sigma, eps, d, delta)
    return 2.0 * (1.0 + alpha) / (1.0 - alpha) * r_inf, r_inf


def linf_error_multiplier(eps: float, k: int) -> float:
    """Worst-case ``|theta' - theta*|_inf / r_inf`` under RIP with the rule above."""
    alpha = rip_to_mi_bound(eps, k)
    if alpha >= 1:
        raise DomainError("incoherence >= 1")
    op = 1.0 / (1.0 - eps) + 2.0 * math.sqrt(k * eps) / (1.0 - eps * eps)
    return op * (1.0 + 2.0 * (1.0 + alpha) / (1.0 - alpha))


def estimate_linf(X, y, sigma: float, delta: float, config: RecoveryConfig | None = None,
                  k: int = 1, eps: float | None = None) -> np.ndarray:
    """Lasso estimate with the RIP-calibrated regularisation."""
    config = config or RecoveryConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    eps_l = _lambda_eps(X, k, eps, config)
    lam, r_inf = lasso_lambda(sigma, eps_l, X.shape[1], delta, k)
    lam *= config.lambda_scale
    scale = max(float(np.max(np.abs(X.T @ y))), 1.0)
    lam = max(lam, 1e-12 * scale)
    tol = max(r_inf / 10.0, 1e-10 * scale)
    return solve_lasso(LassoProblem(X, y, lam, tol))


def hard_threshold(v, s: int) -> np.ndarray:
    """Keep the ``s`` largest-magnitude entries (ties broken by index)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    if s <= 0:
        return out
    if s >= v.size:
        return v.copy()
    keep = np.argsort(-np.abs(v), kind="stable")[:s]
    out[keep] = v[keep]
    return out


def estimate_l2_iht(X, y, s: int, config: RecoveryConfig | None = None,
                    sigma: float | None = None, n_iter: int | None = None) -> np.ndarray:
    """Iterative hard thresholding on the first ``m`` rows.

    The iteration count is ``ceil(log2(R2 / r2))`` with ``R2 / r2 = 1 + d/sigma``.
    """
    config = config or RecoveryConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if s > d or s < 0:
        raise DimensionError(f"target support size s={s} must lie in [0, d={d}]")
    m = n if config.m is None else min(config.m, n)
    Xm, ym = X[:m], y[:m]
    if n_iter is None:
        if sigma is None or sigma <= 0:
            n_iter = config.max_iht_iter
        else:
            n_iter = max(1, math.ceil(math.log2(1.0 + d / sigma)))
        n_iter = min(n_iter, config.max_iht_iter)
    theta = np.zeros(d)
    if s == 0:
        return theta
    scale = n / m
    for _ in range(n_iter):
        theta = hard_threshold(theta + scale * (Xm.T @ (ym - Xm @ theta)), s)
    return theta


def clip(v, alpha: float) -> np.ndarray:
    """Zero every entry with ``|v_i| <= alpha``."""
    if alpha < 0:
        raise DomainError("clip threshold must be non-negative")
    v = np.asarray(v, dtype=float)
    return np.where(np.abs(v) > alpha, v, 0.0)


def hint_radius(kind: EstimatorKind, d: int, delta: float, eps: float,
                c_inf: float = 1.0, c2: float = 3.0, m: int = 1) -> float:
    """Error radius of the estimator in units of sigma, used for clipping.

    l-inf path: ``c_inf (1+eps) sqrt(2 ln(d/delta))``.
    l2 path: ``c2 (sqrt(m) + sqrt(2 ln(1/delta)))``.
    """
    if kind is EstimatorKind.LINF:
        return c_inf * (1.0 + eps) * math.sqrt(2.0 * math.log(d / delta))
    return c2 * (math.sqrt(m) + math.sqrt(2.0 * math.log(1.0 / delta)))


def _refit(inst: Instance, theta: np.ndarray, level: float) -> np.ndarray:
    """Posterior mean given the support, re-clipped until the support is stable."""
    sig2 = inst.sigma ** 2
    prior_prec = 1.0 if inst.prior.diffuse.value == "gaussian" else 0.0
    for _ in range(inst.d + 1):
        T = np.flatnonzero(theta)
        if T.size == 0:
            return theta
        XT = inst.X[:, T]
        A = XT.T @ XT / sig2 + prior_prec * np.eye(T.size)
        mean = np.linalg.solve(A, XT.T @ inst.y / sig2)
        new = np.zeros_like(theta)
        new[T] = mean
        new = clip(new, level)
        if np.array_equal(new != 0, theta != 0):
            return new
        theta = new
    return theta


def build_hint(instance: Instance, k_star: int, eps: float, delta: float,
               config: RecoveryConfig | None = None) -> HintEstimate:
    """Run the configured estimator and clip at ``3 sigma R(k*, eps, delta^2/5)``.

    ``eps`` is the RIP constant assumed at level ``k_star``; it scales the
    clip radius. The Lasso regularisation uses ``config.eps_lambda`` when
    set and ``eps`` otherwise.
    """
    config = config or RecoveryConfig()
    if not (0 < delta < 1):
        raise DomainError("delta must lie in (0, 1)")
    X, y, sigma = instance.X, instance.y, instance.sigma
    d = instance.d
    k0 = max(1, math.ceil(instance.prior.k - 1e-9))
    dprime = delta * delta / 5.0
    kind = config.estimator
    if kind is EstimatorKind.LINF:
        eps_l = config.eps_lambda if config.eps_lambda is not None else eps
        theta = estimate_linf(X, y, sigma, dprime, config, k=k0, eps=eps_l)
        c_inf = config.c_inf
        if c_inf is None:
            c_inf = linf_error_multiplier(eps_l, k0)
        radius = hint_radius(kind, d, dprime, eps, c_inf=c_inf)
    else:
        s = min(d, max(1, math.ceil(config.c2 * k0)))
        theta = estimate_l2_iht(X, y, s, config, sigma=sigma)
        m = instance.n if config.m is None else min(config.m, instance.n)
        radius = hint_radius(kind, d, dprime, eps, c2=config.c2, m=m)
    level = 3.0 * sigma * radius
    theta_hat = clip(theta, level)
    # coordinates with zero prior mass can never be in a posterior support
    theta_hat[instance.prior.q == 0] = 0.0
    if config.refit and sigma > 0:
        theta_hat = _refit(instance, theta_hat, level)
        theta_hat[instance.prior.q == 0] = 0.0
    support = tuple(int(i) for i in np.flatnonzero(theta_hat))
    return HintEstimate(theta_hat, support, level, kind)

