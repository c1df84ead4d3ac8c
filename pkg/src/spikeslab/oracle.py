"""Brute-force posterior support laws and distribution comparisons."""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import logsumexp

from .errors import DimensionError, DomainError, OracleError
from .model import Instance, support_law_log_prob

__all__ = [
    "SupportPmf",
    "enumerate_posterior_gaussian",
    "enumerate_posterior_laplace",
    "log_evidence_gaussian",
    "log_Z_quadrature",
    "log_Z_importance",
    "tv_distance",
    "tv_of_weights",
    "empirical_support_pmf",
    "pmf_from_log_weights",
]

GAUSSIAN_MAX_D = 24
LAPLACE_MAX_D = 12


@dataclass(frozen=True)
class SupportPmf:
    """A probability mass function over supports (sorted 0-based tuples)."""

    entries: dict
    domain_d: int
    stderr: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(p < 0 for p in self.entries.values()):
            raise DomainError("probabilities must be non-negative")
        total = math.fsum(self.entries.values())
        if abs(total - 1.0) > 1e-9:
            raise DomainError(f"probabilities sum to {total!r}, not 1")

    def __getitem__(self, S) -> float:
        return self.entries.get(tuple(S), 0.0)

    def __len__(self) -> int:
        return len(self.entries)

    def marginals(self) -> np.ndarray:
        out = np.zeros(self.domain_d)
        for S, p in self.entries.items():
            out[list(S)] += p
        return out

    def size_law(self) -> dict:
        out: dict[int, float] = {}
        for S, p in self.entries.items():
            out[len(S)] = out.get(len(S), 0.0) + p
        return out

    def conditioned(self, keep) -> "SupportPmf":
        """The law conditioned on ``keep(S)``."""
        sub = {S: p for S, p in self.entries.items() if keep(S)}
        z = math.fsum(sub.values())
        if z <= 0:
            raise DomainError("conditioning event has probability zero")
        return SupportPmf({S: p / z for S, p in sub.items()}, self.domain_d)

    def sample(self, rng, size: int) -> list[tuple]:
        keys = list(self.entries)
        p = np.array([self.entries[k] for k in keys])
        idx = rng.choice(len(keys), size=size, p=p / p.sum())
        return [keys[i] for i in idx]

    # serialisation: comma-joined 1-based indices, "" for the empty set
    def to_json_dict(self) -> dict:
        return {",".join(str(i + 1) for i in S): p for S, p in sorted(self.entries.items())}

    @classmethod
    def from_json_dict(cls, data: dict, domain_d: int | None = None) -> "SupportPmf":
        entries = {}
        for key, p in data.items():
            S = tuple(sorted(int(t) - 1 for t in key.split(",") if t != ""))
            if any(i < 0 for i in S):
                raise DomainError(f"index in {key!r} is not 1-based")
            entries[S] = float(p)
        if domain_d is None:
            domain_d = 1 + max((max(S) for S in entries if S), default=0)
        return cls(entries, domain_d)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)

    @classmethod
    def load(cls, path, domain_d: int | None = None) -> "SupportPmf":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh), domain_d)


def pmf_from_log_weights(subsets, log_w, d: int, log_se=None) -> SupportPmf:
    """Normalise log weights once, globally; optional relative errors become pmf errors."""
    log_w = np.asarray(log_w, dtype=float)
    p = np.exp(log_w - logsumexp(log_w))
    p /= p.sum()
    entries = {tuple(S): float(v) for S, v in zip(subsets, p)}
    stderr = {}
    if log_se is not None:
        r = np.asarray(log_se, dtype=float)
        cross = float(np.sum((p * r) ** 2))
        se = p * np.sqrt(np.maximum(((1 - p) * r) ** 2 + cross - (p * r) ** 2, 0.0))
        stderr = {tuple(S): float(v) for S, v in zip(subsets, se)}
    return SupportPmf(entries, d, stderr)


def _free_and_forced(instance: Instance):
    q = instance.prior.q
    forced = tuple(int(i) for i in np.flatnonzero(q == 1))
    free = [int(i) for i in np.flatnonzero((q > 0) & (q < 1))]
    return free, forced


def _all_supports(instance: Instance):
    free, forced = _free_and_forced(instance)
    for r in range(len(free) + 1):
        for R in itertools.combinations(free, r):
            yield tuple(sorted(forced + R))


def _log_odds_sum(instance: Instance, S) -> float:
    lo = instance.prior.log_odds()
    q = instance.prior.q
    return float(sum(lo[i] for i in S if q[i] < 1))


# --- Gaussian slab --------------------------------------------------------------

def enumerate_posterior_gaussian(instance: Instance, max_d: int = GAUSSIAN_MAX_D) -> SupportPmf:
    """Exact posterior support law by enumeration.

    ``log w(S) = sum_{i in S} log(q_i/(1-q_i)) + b_S'A_S^{-1}b_S/2 - log det(A_S)/2`` with
    ``A = X'X/sigma^2 + I`` and ``b = X'y/sigma^2``; subsets of equal size
    share one batched Cholesky factorisation.
    """
    d = instance.d
    if d > max_d:
        raise OracleError(f"enumeration over 2^{d} supports refused (limit d <= {max_d})")
    if not instance.sigma > 0:
        raise DomainError("sigma must be positive")
    s2 = instance.sigma ** 2
    G = instance.X.T @ instance.X / s2
    b = instance.X.T @ instance.y / s2
    lo = instance.prior.log_odds().copy()
    lo[instance.prior.q == 1] = 0.0
    free, forced = _free_and_forced(instance)
    subsets, logs = [], []
    for r in range(len(free) + 1):
        combos = list(itertools.combinations(free, r))
        for start in range(0, len(combos), 50_000):
            chunk = [tuple(sorted(forced + R)) for R in combos[start:start + 50_000]]
            size = len(chunk[0])
            if size == 0:
                subsets.append(())
                logs.append(0.0)
                continue
            idx = np.asarray(chunk, dtype=np.intp)
            A = G[idx[:, :, None], idx[:, None, :]] + np.eye(size)
            L = np.linalg.cholesky(A)
            w = np.linalg.solve(L, b[idx][:, :, None])[:, :, 0]
            val = (np.sum(lo[idx], axis=1) + 0.5 * np.sum(w * w, axis=1)
                   - np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1))
            subsets.extend(chunk)
            logs.extend(val.tolist())
    return pmf_from_log_weights(subsets, logs, d)


def log_evidence_gaussian(instance: Instance, S) -> float:
    """``log pi_supp(S) + log N(y; 0, sigma^2 I + X_S X_S')`` (an independent route)."""
    S = list(S)
    n = instance.n
    XS = instance.X[:, S]
    cov = instance.sigma ** 2 * np.eye(n) + XS @ XS.T
    L = np.linalg.cholesky(cov)
    w = np.linalg.solve(L, instance.y)
    ll = -0.5 * n * math.log(2 * math.pi) - float(np.sum(np.log(np.diag(L)))) - 0.5 * float(w @ w)
    return support_law_log_prob(instance.prior, S) + ll


# --- quadratic plus l1 normalisers ------------------------------------------------

def _mode(A, b):
    from .laplace_posterior import l1_quadratic_mode

    return l1_quadratic_mode(A, b)


def _axis_nodes(center: float, scale: float, width: float, piece: float, order: int):
    lo, hi = center - width * scale, center + width * scale
    cuts = [lo, hi]
    if lo < 0.0 < hi:
        cuts.insert(1, 0.0)
    xs, ws = [], []
    gx, gw = leggauss(order)
    for a, c in zip(cuts[:-1], cuts[1:]):
        m = max(1, math.ceil((c - a) / (piece * scale)))
        edges = np.linspace(a, c, m + 1)
        for e0, e1 in zip(edges[:-1], edges[1:]):
            h = 0.5 * (e1 - e0)
            xs.append(e0 + h * (gx + 1.0))
            ws.append(h * gw)
    return np.concatenate(xs), np.concatenate(ws)


def log_Z_quadrature(A, b, width: float = 12.0) -> float:
    """``log int exp(-x'Ax/2 + b'x - |x|_1) dx`` by tensor Gauss-Legendre, ``k <= 3``.

    The grid spans ``width`` marginal standard deviations around the mode,
    with panels split at zero where the integrand has a kink.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    k = b.size
    if k == 0:
        return 0.0
    if k > 3:
        raise DomainError("tensor quadrature is limited to k <= 3")
    m = _mode(A, b)
    sd = np.sqrt(np.diag(np.linalg.inv(A)))
    piece, order = {1: (1.0, 16), 2: (2.0, 12), 3: (3.0, 8)}[k]
    axes = [_axis_nodes(m[i], sd[i], width, piece, order) for i in range(k)]
    grids = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    wgrids = np.meshgrid(*[np.log(a[1]) for a in axes], indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    logw = sum(w.ravel() for w in wgrids)
    f = -0.5 * np.einsum("ij,jk,ik->i", pts, A, pts) + pts @ b - np.sum(np.abs(pts), axis=1)
    return float(logsumexp(f + logw))


def log_Z_importance(A, b, n: int, rng, batch: int = 250_000):
    """Importance-sampling estimate with proposal ``N(mode, A^{-1})``.

    Returns ``(log Z, relative standard error, effective sample size)``.
    At the mode the log weights are ``s'x - |x|_1`` for a subgradient ``s``,
    so they are bounded above.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    k = b.size
    if k == 0:
        return 0.0, 0.0, float(n)
    m = _mode(A, b)
    L = np.linalg.cholesky(A)
    g = b - A @ m
    const = 0.5 * float(m @ A @ m) + 0.5 * k * math.log(2 * math.pi) - float(np.sum(np.log(np.diag(L))))
    from scipy.linalg import solve_triangular

    parts = []
    done = 0
    while done < n:
        m_ = min(batch, n - done)
        x = m + solve_triangular(L.T, rng.standard_normal((k, m_)), lower=False).T
        parts.append(x @ g - np.sum(np.abs(x), axis=1))
        done += m_
    lw = np.concatenate(parts)
    top = float(lw.max())
    w = np.exp(lw - top)
    mean = float(w.mean())
    rel = float(w.std(ddof=1)) / (mean * math.sqrt(n)) if n > 1 else math.inf
    ess = float(w.sum() ** 2 / np.sum(w * w))
    return const + top + math.log(mean), rel, ess


def enumerate_posterior_laplace(instance: Instance, mc_samples: int = 1_000_000, rng=None,
                                method: str = "auto", max_d: int = LAPLACE_MAX_D,
                                min_ess: float = 1e3) -> SupportPmf:
    """Posterior support law under a Laplace slab.

    ``log w(S) = sum log odds + |S| log(1/2) + log Z(X_S'X_S/sigma^2, X_S'y/sigma^2)``.
    ``method`` is ``"auto"`` (quadrature for ``|S| <= 3``, importance
    sampling beyond), ``"quadrature"`` or ``"importance"``. Per-entry
    standard errors are attached.
    """
    d = instance.d
    if d > max_d:
        raise OracleError(f"Laplace enumeration refused for d={d} (limit {max_d})")
    if method not in ("auto", "quadrature", "importance"):
        raise DomainError("method must be 'auto', 'quadrature' or 'importance'")
    if rng is None and method != "quadrature":
        raise DomainError("an RNG stream is required for importance sampling")
    s2 = instance.sigma ** 2
    subsets, logs, ses = [], [], []
    for S in _all_supports(instance):
        XS = instance.X[:, list(S)]
        A = XS.T @ XS / s2
        b = XS.T @ instance.y / s2
        quad = method == "quadrature" or (method == "auto" and len(S) <= 3)
        if quad:
            lz, rel = log_Z_quadrature(A, b), 0.0
        else:
            lz, rel, ess = log_Z_importance(A, b, mc_samples, rng)
            if ess < min_ess:
                raise OracleError(f"effective sample size {ess:.0f} below {min_ess:.0f}", subset=S)
        subsets.append(S)
        logs.append(_log_odds_sum(instance, S) + len(S) * math.log(0.5) + lz)
        ses.append(rel)
    return pmf_from_log_weights(subsets, logs, d, log_se=ses)


# --- comparisons ------------------------------------------------------------------

def tv_distance(p: SupportPmf, q: SupportPmf) -> float:
    if p.domain_d != q.domain_d:
        raise DimensionError(f"domains differ: d={p.domain_d} vs d={q.domain_d}")
    keys = set(p.entries) | set(q.entries)
    return 0.5 * math.fsum(abs(p[k] - q[k]) for k in keys)


def tv_of_weights(w1, w2) -> float:
    """TV between the normalisations of two non-negative weight vectors."""
    a = np.asarray(w1, dtype=float)
    b = np.asarray(w2, dtype=float)
    if a.shape != b.shape:
        raise DimensionError("weight vectors differ in shape")
    if np.any(a < 0) or np.any(b < 0) or a.sum() <= 0 or b.sum() <= 0:
        raise DomainError("weights must be non-negative with positive total")
    return 0.5 * math.fsum(np.abs(a / a.sum() - b / b.sum()))


def empirical_support_pmf(samples, d: int) -> SupportPmf:
    samples = list(samples)
    if not samples:
        raise DomainError("need at least one sample")
    counts = Counter(tuple(sorted(int(i) for i in S)) for S in samples)
    n = len(samples)
    return SupportPmf({S: c / n for S, c in counts.items()}, d)
