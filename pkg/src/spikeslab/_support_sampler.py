"""Rejection sampling over supersets of a hint support.

Shared by the Gaussian and Laplace posterior samplers. A subclass supplies
the forced set ``T``, the free coordinates with their proposal log-odds,
and the two weight functions; this base handles proposal encoding,
memoisation, ratio-cap resolution and the rejection loop.
"""

from __future__ import annotations

import itertools
import math
import time

import numpy as np

from .errors import ContractViolation, DomainError
from .subset_sampling import DpTable, RejectionSpec, conditional_poisson_sample, rejection_sample


class SupportRejectionSampler:
    _DENSE_BITS = 22

    #: fraction of the TV budget spent on the rejection step
    rejection_share = 0.5

    def _setup(self, T: tuple, ground: np.ndarray, proposal_log_odds: np.ndarray, cap: int,
               config, report_cls):
        r = cap - len(T)
        if r < 0:
            raise DomainError(f"hint support of size {len(T)} exceeds the proposal cap {cap}")
        self.T = tuple(T)
        self.cap = cap
        self.ground = np.asarray(ground, dtype=np.intp)
        self.table = DpTable.from_log_odds(proposal_log_odds, min(r, self.ground.size))
        self.config = config
        self.report_cls = report_cls
        self._keys: dict[int, tuple] = {}
        self._lr_mask: dict = {}
        self._lr_dense: np.ndarray | None = None
        g = self.ground.size
        self._bits = (np.int64(1) << np.arange(g, dtype=np.int64)) if g < 63 else None
        self.log_shift = 0.0
        self.C = self._resolve_cap(config.ratio_cap)

    # to be provided by subclasses -----------------------------------------
    def log_P(self, S: tuple) -> float:  # pragma: no cover - abstract
        raise NotImplementedError

    def log_Q(self, S: tuple) -> float:  # pragma: no cover - abstract
        raise NotImplementedError

    def log_ratio_envelope(self) -> tuple[float, float]:  # pragma: no cover - abstract
        raise NotImplementedError

    def _log_P_many(self, subsets: list[tuple]) -> np.ndarray:
        return np.array([self.log_P(S) for S in subsets])

    # domain ---------------------------------------------------------------
    def domain(self) -> list[tuple]:
        """All supports the proposal can produce."""
        out = []
        for r in range(self.table.k + 1):
            for R in itertools.combinations(self.ground.tolist(), r):
                out.append(tuple(sorted(self.T + R)))
        return out

    def domain_size(self) -> int:
        return sum(math.comb(self.ground.size, r) for r in range(self.table.k + 1))

    def proposal_pmf(self) -> dict:
        """Exact law of one proposal."""
        lt = self.table.log_total
        pos = {int(c): j for j, c in enumerate(self.ground)}
        out = {}
        for S in self.domain():
            free = [pos[i] for i in S if i in pos]
            out[S] = float(np.exp(np.sum(self.table.log_odds[free]) - lt))
        return out

    def exact_log_ratios(self) -> tuple[list[tuple], np.ndarray]:
        """Every support of the proposal domain with its ``log P - log Q``."""
        size = self.domain_size()
        if size > self.config.exact_limit:
            raise DomainError(f"proposal domain has {size} supports, "
                              f"above exact_limit={self.config.exact_limit}")
        dom = self.domain()
        lp = self._log_P_many(dom)
        lr = np.array([lp[j] - self.log_Q(S) for j, S in enumerate(dom)])
        return dom, lr

    def _resolve_cap(self, cap) -> float:
        # With a known range [lo, hi] for log P/Q, rescaling Q by the midpoint
        # gives the smallest admissible two-sided bound.
        if cap == "envelope":
            lo, hi = self.log_ratio_envelope()
        elif cap == "exact":
            dom, lr = self.exact_log_ratios()
            lo, hi = float(np.min(lr)), float(np.max(lr))
            if self.ground.size <= self._DENSE_BITS:
                pos = {int(c): j for j, c in enumerate(self.ground)}
                dense = np.full(1 << self.ground.size, np.nan)
                for S, v in zip(dom, lr):
                    dense[sum(1 << pos[i] for i in S if i in pos)] = v
                self._lr_dense = dense
        else:
            return float(cap)
        self.log_shift = 0.5 * (hi + lo)
        return math.exp(0.5 * (hi - lo)) * (1.0 + 1e-9)

    # proposals ------------------------------------------------------------
    def key_to_support(self, key) -> tuple:
        if self._bits is None:
            return key
        key = int(key)
        S = self._keys.get(key)
        if S is None:
            free = tuple(int(self.ground[j]) for j in range(self.ground.size) if key >> j & 1)
            S = self._keys[key] = tuple(sorted(self.T + free))
        return S

    def propose(self, rng, m: int):
        member = conditional_poisson_sample(self.table, rng, size=m)
        if self._bits is None:
            return [tuple(sorted(self.T + tuple(int(i) for i in self.ground[row]))) for row in member]
        return member.astype(np.int64) @ self._bits

    def log_ratios(self, keys) -> np.ndarray:
        """Shifted ``log P - log Q`` for a batch of proposal keys."""
        if self._lr_dense is not None:
            return self._lr_dense[keys] - self.log_shift
        out = np.empty(len(keys))
        cache = self._lr_mask
        for j, key in enumerate(keys):
            h = key if self._bits is None else int(key)
            v = cache.get(h)
            if v is None:
                S = self.key_to_support(key)
                v = cache[h] = self.log_P(S) - self.log_Q(S)
            out[j] = v
        return out - self.log_shift

    def _report_extra(self) -> dict:
        return {}

    def sample(self, rng, size: int | None = None):
        """Draw one support (``size=None``) or a list of supports, plus a report."""
        t0 = time.perf_counter()
        spec = RejectionSpec(self.log_P, self.log_Q, self.C,
                             self.config.delta * self.rejection_share,
                             log_ratio_batch=self.log_ratios)
        try:
            outcome = rejection_sample(spec, self.propose, rng, size=1 if size is None else size)
        except ContractViolation as exc:
            S = self.key_to_support(exc.subset)
            raise ContractViolation(
                f"P/Q = exp({exc.log_ratio:.6g}) outside [1/C, C] with C={self.C:.6g} at S={S}",
                subset=S, log_ratio=exc.log_ratio) from None
        samples = [self.key_to_support(k) for k in outcome.samples]
        report = self.report_cls(
            attempts=outcome.attempts,
            accepted=outcome.accepted,
            ratio_min=math.exp(outcome.log_ratio_min),
            ratio_max=math.exp(outcome.log_ratio_max),
            budget_exceeded=outcome.budget_exceeded > 0,
            wall_ms=1000.0 * (time.perf_counter() - t0),
            **self._report_extra(),
        )
        if size is None:
            return samples[0], report
        return samples, report
