"""Conditional Poisson subsets and log-space rejection sampling.

The conditional Poisson law over ``{1..d}`` with Bernoulli vector ``p``
and cap ``k`` gives each set ``S`` with ``|S| <= k`` weight
``prod_{i in S} p_i / (1 - p_i)``. The table ``F(i, j)`` holds the total
weight of size-``j`` subsets of ``{i..d}``. It is kept in log space so
odds ratios of any magnitude are safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ContractViolation, DomainError

__all__ = [
    "DpTable",
    "build_dp_table",
    "conditional_poisson_sample",
    "conditional_poisson_pmf",
    "RejectionSpec",
    "RejectionOutcome",
    "rejection_sample",
    "default_max_attempts",
    "rejection_output_pmf",
]


@dataclass(frozen=True)
class DpTable:
    """Log-space table ``log_F[i, j]`` (0-based rows, row ``d`` is the base case).

    ``log_odds[i] = log(p_i/(1-p_i))``; ``-inf`` encodes ``p_i = 0``.
    """

    log_F: np.ndarray
    log_odds: np.ndarray
    k: int

    @property
    def d(self) -> int:
        return int(self.log_odds.size)

    @property
    def F(self) -> np.ndarray:
        """Linear-space table (may overflow for extreme odds)."""
        with np.errstate(over="ignore"):
            return np.exp(self.log_F)

    @property
    def p(self) -> np.ndarray:
        return np.exp(self.log_odds - np.logaddexp(0.0, self.log_odds))

    @property
    def log_total(self) -> float:
        """``log sum_j F(1, j)``, the normaliser of the conditioned law."""
        return float(logsumexp(self.log_F[0]))

    @classmethod
    def from_log_odds(cls, log_odds, k: int) -> "DpTable":
        lo = np.asarray(log_odds, dtype=float).copy()
        if lo.ndim != 1:
            raise DomainError("log_odds must be one-dimensional")
        if np.any(np.isnan(lo)) or np.any(lo == np.inf):
            raise DomainError("log odds must be finite or -inf")
        d = lo.size
        if k < 0:
            raise DomainError("cap k must be non-negative")
        k = min(int(k), d)
        log_F = np.full((d + 1, k + 1), -np.inf)
        log_F[:, 0] = 0.0
        for i in range(d - 1, -1, -1):
            if k > 0:
                log_F[i, 1:] = np.logaddexp(log_F[i + 1, 1:], lo[i] + log_F[i + 1, :-1])
        lo.setflags(write=False)
        log_F.setflags(write=False)
        return cls(log_F, lo, k)


def build_dp_table(p, k: int) -> DpTable:
    """Build the table for Bernoulli vector ``p`` (entries in ``[0, 1)``) and cap ``k``."""
    p = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p < 0):
        raise DomainError("p_i < 0 is not a probability")
    if np.any(p >= 1):
        raise DomainError("p_i >= 1 must be handled as a forced inclusion upstream")
    if k > p.size:
        raise DomainError(f"cap k={k} exceeds d={p.size}")
    with np.errstate(divide="ignore"):
        lo = np.log(p) - np.log1p(-p)
    return DpTable.from_log_odds(lo, k)


def conditional_poisson_sample(table: DpTable, rng: np.random.Generator, size: int | None = None):
    """Exact draw(s) from the Bernoulli product law conditioned on ``|S| <= k``.

    Returns a sorted tuple of 0-based indices when ``size`` is None, else a
    boolean membership matrix of shape ``(size, d)``.
    """
    m = 1 if size is None else int(size)
    d, lF = table.d, table.log_F
    w = np.exp(lF[0] - np.max(lF[0]))
    remaining = rng.choice(w.size, size=m, p=w / w.sum())
    member = np.zeros((m, d), dtype=bool)
    u = rng.random((m, d))
    for i in range(d):
        active = remaining > 0
        if not active.any():
            break
        r = remaining[active]
        with np.errstate(invalid="ignore"):
            logprob = table.log_odds[i] + lF[i + 1, r - 1] - lF[i, r]
        take = np.log(u[active, i]) < logprob
        idx = np.flatnonzero(active)[take]
        member[idx, i] = True
        remaining[idx] -= 1
    if size is None:
        return tuple(int(i) for i in np.flatnonzero(member[0]))
    return member


def conditional_poisson_pmf(table: DpTable, S: Sequence[int]) -> float:
    """Probability that the conditioned law outputs exactly ``S``."""
    S = list(S)
    if len(S) > table.k:
        return 0.0
    return float(np.exp(np.sum(table.log_odds[S]) - table.log_total))


# --- rejection sampling --------------------------------------------------

def default_max_attempts(C: float, delta: float) -> int:
    """Attempts after which the rejection probability is at most ``delta``.

    Each attempt accepts with probability at least ``1/C**2``; after
    ``C**2 ln(1/delta)`` attempts the chance of never accepting is below
    ``delta``.
    """
    return max(1, math.ceil(C * C * math.log(1.0 / delta)))


def rejection_output_pmf(log_P, log_Q, C: float, max_attempts: int) -> np.ndarray:
    """Exact output law of :func:`rejection_sample` on a finite domain.

    ``log_Q`` is a normalised proposal, ``log_P`` an unnormalised target
    with ``|log P - log Q| <= ln C``. One attempt accepts ``w`` with
    probability ``P(w)/C`` and accepts something with probability
    ``alpha = sum P / C``; after ``m`` straight rejections the ``m``-th
    proposal is emitted as is.
    """
    lp = np.asarray(log_P, dtype=float)
    lq = np.asarray(log_Q, dtype=float)
    q = np.exp(lq - logsumexp(lq))
    acc = np.exp(lp - math.log(C))
    alpha = float(np.sum(acc))
    if not (0.0 < alpha <= 1.0 + 1e-12) or np.any(acc > q * (1.0 + 1e-9)):
        raise DomainError("ratio bound C does not dominate P/Q on this domain")
    m = int(max_attempts)
    miss = (1.0 - alpha) ** (m - 1)
    accepted = acc * (1.0 - miss * (1.0 - alpha)) / alpha
    forced = miss * np.clip(q - acc, 0.0, None)
    return accepted + forced


@dataclass(frozen=True)
class RejectionSpec:
    """Target/proposal pair on a finite domain with a two-sided ratio bound ``C``."""

    log_P: Callable[[Hashable], float]
    log_Q: Callable[[Hashable], float]
    C: float
    delta: float
    max_attempts: int = field(default=0)
    log_ratio_batch: Callable[[Sequence], np.ndarray] | None = None

    def __post_init__(self):
        if not (self.C >= 1.0 and math.isfinite(self.C)):
            raise DomainError("ratio bound C must be a finite number >= 1")
        if not (0.0 < self.delta < 1.0):
            raise DomainError("delta must lie in (0, 1)")
        if self.max_attempts <= 0:
            object.__setattr__(self, "max_attempts", default_max_attempts(self.C, self.delta))


@dataclass
class RejectionOutcome:
    samples: list
    attempts: int = 0
    accepted: int = 0
    budget_exceeded: int = 0
    log_ratio_min: float = math.inf
    log_ratio_max: float = -math.inf


def rejection_sample(spec: RejectionSpec, base_sampler: Callable[[np.random.Generator, int], list],
                     rng: np.random.Generator, size: int | None = None,
                     tolerance: float = 1e-9):
    """Rejection sampling with proposal ``Q/C`` and target bound ``C**2``.

    A proposal ``w`` is accepted with probability ``P(w) / (C Q(w))``. The
    caller guarantees ``|log P - log Q| <= ln C`` on every reachable point;
    a violation raises :class:`ContractViolation`. When ``max_attempts``
    consecutive proposals are rejected the last one is emitted and counted
    in ``budget_exceeded``.

    ``base_sampler(rng, m)`` must return a sequence of ``m`` i.i.d.
    proposals. When ``spec.log_ratio_batch`` is set it maps such a sequence
    to the array of ``log P - log Q`` values, and whole chunks are decided
    at once with the same output law. With ``size=None`` the single sample
    and the outcome are returned; otherwise the outcome's ``samples`` holds
    ``size`` outputs.
    """
    want = 1 if size is None else int(size)
    log_c = math.log(spec.C)
    out = RejectionOutcome(samples=[])
    # expected attempts per output is at most C^2; draw proposals in chunks
    chunk = max(16, min(1 << 16, int(want * min(spec.C * spec.C, 64.0)) + 16))
    if spec.log_ratio_batch is not None:
        _rejection_batched(spec, base_sampler, rng, want, chunk, log_c, tolerance, out)
        return (out.samples[0], out) if size is None else out
    buf, logu, pos = [], np.empty(0), 0
    streak = 0
    while len(out.samples) < want:
        if pos >= len(buf):
            buf = base_sampler(rng, chunk)
            logu = np.log(rng.random(chunk))
            pos = 0
        w = buf[pos]
        lr = spec.log_P(w) - spec.log_Q(w)
        if not (abs(lr) <= log_c + tolerance):
            raise ContractViolation(
                f"log P/Q = {lr:.6g} outside [-ln C, ln C] with C={spec.C:.6g} at {w!r}",
                subset=w, log_ratio=lr)
        out.log_ratio_min = min(out.log_ratio_min, lr)
        out.log_ratio_max = max(out.log_ratio_max, lr)
        out.attempts += 1
        streak += 1
        if logu[pos] < lr - log_c:
            out.samples.append(w)
            out.accepted += 1
            streak = 0
        elif streak >= spec.max_attempts:
            out.samples.append(w)
            out.budget_exceeded += 1
            streak = 0
        pos += 1
    if size is None:
        return out.samples[0], out
    return out


def _rejection_batched(spec, base_sampler, rng, want, chunk, log_c, tolerance, out):
    streak = 0
    cap = spec.max_attempts
    while len(out.samples) < want:
        buf = base_sampler(rng, chunk)
        lr = np.asarray(spec.log_ratio_batch(buf), dtype=float)
        logu = np.log(rng.random(len(buf)))
        acc = np.flatnonzero(logu < lr - log_c)
        # replay the sequential rule: acceptances and forced emissions reset the streak
        start, used = 0, len(buf)
        emitted: list[tuple[int, bool]] = []
        done = False
        for a in list(acc) + [len(buf)]:
            while not done and a - start >= cap - streak:
                f = start + (cap - streak) - 1
                emitted.append((f, False))
                streak, start = 0, f + 1
                done = len(out.samples) + len(emitted) >= want
            if done:
                break
            streak += a - start
            if a == len(buf):
                break
            emitted.append((int(a), True))
            streak, start = 0, int(a) + 1
            done = len(out.samples) + len(emitted) >= want
            if done:
                break
        if done:
            used = emitted[-1][0] + 1
        seen = lr[:used]
        bad = np.flatnonzero(~(np.abs(seen) <= log_c + tolerance))
        if bad.size:
            j = int(bad[0])
            raise ContractViolation(
                f"log P/Q = {lr[j]:.6g} outside [-ln C, ln C] with C={spec.C:.6g} at {buf[j]!r}",
                subset=buf[j], log_ratio=float(lr[j]))
        if used:
            out.log_ratio_min = min(out.log_ratio_min, float(seen.min()))
            out.log_ratio_max = max(out.log_ratio_max, float(seen.max()))
        out.attempts += used
        for j, ok in emitted:
            out.samples.append(buf[j])
            if ok:
                out.accepted += 1
            else:
                out.budget_exceeded += 1
