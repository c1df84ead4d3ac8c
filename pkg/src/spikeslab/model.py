"""Spike-and-slab linear model: priors, instances, ensembles and RIP checks.

Random streams
--------------
Every generator here takes either an integer seed or a ready
``numpy.random.Generator``. Integer seeds are turned into a Philox
(counter-based) generator by :func:`make_rng`. Independent child streams
come from :func:`split_rng`, which uses ``SeedSequence`` spawning, so
parallel work stays reproducible as long as each worker gets its own
child.

Index convention
----------------
Inside Python every support set is a sorted tuple of 0-based column
indices. Files written by the CLI use 1-based indices.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, DomainError

__all__ = [
    "Diffuse",
    "PriorSpec",
    "Instance",
    "RipReport",
    "make_rng",
    "split_rng",
    "gen_gaussian_matrix",
    "gen_rademacher_matrix",
    "draw_instance",
    "verify_rip",
    "rip_to_mi_bound",
    "noise_colip_bound",
    "instance_to_dict",
    "instance_from_dict",
    "save_instance",
    "load_instance",
    "support_law_log_prob",
]


def make_rng(seed) -> np.random.Generator:
    """Return a Philox-backed generator; generators pass through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def split_rng(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Spawn ``n`` independent child generators from ``rng``."""
    return list(rng.spawn(n))


class Diffuse(str, enum.Enum):
    """Slab density of the prior."""

    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be one-dimensional, got shape {arr.shape}")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PriorSpec:
    """Product spike-and-slab prior ``prod_i (1-q_i) delta_0 + q_i mu``.

    Parameters
    ----------
    q : array_like
        Inclusion probabilities, one per coordinate, each in ``[0, 1]``.
    diffuse : Diffuse or str
        ``"gaussian"`` for N(0, 1) slabs, ``"laplace"`` for the density
        ``exp(-|x|) / 2``.
    """

    q: np.ndarray
    diffuse: Diffuse = Diffuse.GAUSSIAN
    k: float = field(init=False)

    def __post_init__(self):
        q = _as_vector(self.q, "q")
        if q.size < 1:
            raise DimensionError("prior needs d >= 1")
        if not np.all(np.isfinite(q)) or np.any(q < 0) or np.any(q > 1):
            raise DomainError("q: every inclusion probability must lie in [0, 1]")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "diffuse", Diffuse(self.diffuse))
        object.__setattr__(self, "k", float(math.fsum(q)))

    @property
    def d(self) -> int:
        return int(self.q.size)

    @classmethod
    def uniform(cls, d: int, q: float, diffuse="gaussian") -> "PriorSpec":
        return cls(np.full(d, float(q)), diffuse)

    def log_odds(self) -> np.ndarray:
        """``log(q/(1-q))`` with ``-inf`` at q=0 and ``+inf`` at q=1."""
        with np.errstate(divide="ignore"):
            return np.log(self.q) - np.log1p(-self.q)


@dataclass(frozen=True)
class Instance:
    """One draw of the regression model ``y = X theta* + xi``."""

    X: np.ndarray
    y: np.ndarray
    sigma: float
    prior: PriorSpec
    theta_star: np.ndarray | None = None
    xi: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DimensionError(f"X must be a non-empty matrix, got shape {X.shape}")
        X.setflags(write=False)
        y = _as_vector(self.y, "y")
        n, d = X.shape
        if y.size != n:
            raise DimensionError(f"y has length {y.size}, expected n={n}")
        if self.prior.d != d:
            raise DimensionError(f"prior has d={self.prior.d}, X has {d} columns")
        sigma = float(self.sigma)
        if not math.isfinite(sigma) or sigma < 0:
            raise DomainError("sigma must be a finite non-negative number")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma", sigma)
        if self.theta_star is not None:
            ts = _as_vector(self.theta_star, "theta_star")
            if ts.size != d:
                raise DimensionError("theta_star length must equal d")
            object.__setattr__(self, "theta_star", ts)
        if self.xi is not None:
            xi = _as_vector(self.xi, "xi")
            if xi.size != n:
                raise DimensionError("xi length must equal n")
            object.__setattr__(self, "xi", xi)
        if self.theta_star is not None and self.xi is not None:
            resid = y - (X @ self.theta_star + self.xi)
            scale = max(1.0, float(np.linalg.norm(y)))
            if np.linalg.norm(resid) > 1e-10 * scale:
                raise DomainError("y must equal X @ theta_star + xi")

    @property
    def n(self) -> int:
        return int(self.X.shape[0])

    @property
    def d(self) -> int:
        return int(self.X.shape[1])

    def with_sigma(self, sigma: float) -> "Instance":
        """Same data, different assumed noise level (ground truth dropped)."""
        return Instance(self.X, self.y, sigma, self.prior, seed=self.seed)

    def with_prior(self, prior: PriorSpec) -> "Instance":
        return Instance(self.X, self.y, self.sigma, prior, self.theta_star, self.xi, self.seed)


@dataclass(frozen=True)
class RipReport:
    """Measured restricted-isometry constant at one sparsity level."""

    s: int
    eps_hat: float
    subsets_tested: int
    exhaustive: bool


def gen_gaussian_matrix(n: int, d: int, seed) -> np.ndarray:
    """i.i.d. N(0, 1/n) entries."""
    if n < 1 or d < 1:
        raise DimensionError("n and d must be positive")
    rng = make_rng(seed)
    return rng.standard_normal((n, d)) / math.sqrt(n)


def gen_rademacher_matrix(n: int, d: int, seed) -> np.ndarray:
    """i.i.d. +-1/sqrt(n) entries."""
    if n < 1 or d < 1:
        raise DimensionError("n and d must be positive")
    rng = make_rng(seed)
    signs = rng.integers(0, 2, size=(n, d)) * 2 - 1
    return signs / math.sqrt(n)


def draw_instance(prior: PriorSpec, X, sigma: float, seed) -> Instance:
    """Sample support, slab values and noise, then assemble ``y``."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != prior.d:
        raise DimensionError("X must have one column per prior coordinate")
    if sigma < 0:
        raise DomainError("sigma must be non-negative")
    rng = make_rng(seed)
    n, d = X.shape
    included = rng.random(d) < prior.q
    if prior.diffuse is Diffuse.GAUSSIAN:
        slab = rng.standard_normal(d)
    else:
        slab = rng.laplace(0.0, 1.0, d)
    theta = np.where(included, slab, 0.0)
    xi = sigma * rng.standard_normal(n)
    y = X @ theta + xi
    int_seed = seed if isinstance(seed, (int, np.integer)) else None
    return Instance(X, y, sigma, prior, theta, xi, None if int_seed is None else int(int_seed))


def support_law_log_prob(prior: PriorSpec, S) -> float:
    """Log prior probability that the support equals ``S`` exactly."""
    mask = np.zeros(prior.d, dtype=bool)
    mask[list(S)] = True
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(prior.q[mask])) + np.sum(np.log1p(-prior.q[~mask])))


def _subset_eps(G: np.ndarray, subsets: np.ndarray) -> float:
    sub = G[subsets[:, :, None], subsets[:, None, :]]
    eig = np.linalg.eigvalsh(sub)
    return float(max(np.max(eig[:, -1] - 1.0), np.max(1.0 - eig[:, 0])))


def verify_rip(X, s: int, exhaustive_limit: int = 200_000, seed=0,
               batch: int = 20_000) -> RipReport:
    """Measure the RIP constant of ``X`` at sparsity ``s``.

    Enumerates all ``C(d, s)`` column subsets when that count is at most
    ``exhaustive_limit``; otherwise samples ``exhaustive_limit`` random
    subsets and the result is only a lower bound.
    """
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    if s < 0 or s > d:
        raise DimensionError(f"sparsity level s={s} must lie in [0, d={d}]")
    if s == 0:
        return RipReport(0, 0.0, 1, True)
    G = X.T @ X
    total = math.comb(d, s)
    eps = 0.0
    if total <= exhaustive_limit:
        combos = itertools.combinations(range(d), s)
        tested = 0
        while True:
            chunk = list(itertools.islice(combos, batch))
            if not chunk:
                break
            eps = max(eps, _subset_eps(G, np.asarray(chunk, dtype=np.intp)))
            tested += len(chunk)
        return RipReport(s, eps, tested, True)
    rng = make_rng(seed)
    remaining = exhaustive_limit
    while remaining > 0:
        m = min(batch, remaining)
        keys = rng.random((m, d))
        chunk = np.sort(np.argpartition(keys, s - 1, axis=1)[:, :s], axis=1)
        eps = max(eps, _subset_eps(G, chunk))
        remaining -= m
    return RipReport(s, eps, exhaustive_limit, False)


def rip_to_mi_bound(eps: float, s: int) -> float:
    """Mutual-incoherence level ``sqrt(2 s eps / (1 - eps))`` implied by RIP."""
    if not (0.0 <= eps < 1.0):
        raise DomainError(f"eps={eps} must lie in [0, 1)")
    if s < 0:
        raise DomainError("s must be non-negative")
    return math.sqrt(2.0 * s * eps / (1.0 - eps))


def noise_colip_bound(sigma: float, eps: float, d: int, delta: float) -> float:
    """High-probability bound ``sigma (1+eps) sqrt(2 ln(d/delta))`` on ``|X^T xi|_inf``."""
    if not (0.0 < delta < 1.0):
        raise DomainError(f"delta={delta} must lie in (0, 1)")
    if sigma < 0:
        raise DomainError("sigma must be non-negative")
    return sigma * (1.0 + eps) * math.sqrt(2.0 * math.log(d / delta))


# --- serialization -------------------------------------------------------

def instance_to_dict(inst: Instance) -> dict:
    out = {
        "n": inst.n,
        "d": inst.d,
        "sigma": inst.sigma,
        "prior": {"q": inst.prior.q.tolist(), "diffuse": inst.prior.diffuse.value},
        "X": inst.X.tolist(),
        "y": inst.y.tolist(),
    }
    if inst.theta_star is not None:
        out["theta_star"] = inst.theta_star.tolist()
    if inst.xi is not None:
        out["xi"] = inst.xi.tolist()
    if inst.seed is not None:
        out["seed"] = int(inst.seed)
    return out


def instance_from_dict(data: dict) -> Instance:
    try:
        prior = PriorSpec(np.asarray(data["prior"]["q"], dtype=float), data["prior"]["diffuse"])
        X = np.asarray(data["X"], dtype=float)
        inst = Instance(
            X=X,
            y=np.asarray(data["y"], dtype=float),
            sigma=float(data["sigma"]),
            prior=prior,
            theta_star=None if data.get("theta_star") is None else np.asarray(data["theta_star"]),
            xi=None if data.get("xi") is None else np.asarray(data["xi"]),
            seed=data.get("seed"),
        )
    except KeyError as exc:
        raise DomainError(f"instance file is missing key {exc}") from None
    if inst.n != int(data["n"]) or inst.d != int(data["d"]):
        raise DimensionError("declared n/d do not match the stored matrix")
    return inst


def save_instance(inst: Instance, path) -> None:
    # json writes floats with the shortest repr that round-trips exactly
    Path(path).write_text(json.dumps(instance_to_dict(inst)) + "\n")


def load_instance(path) -> Instance:
    return instance_from_dict(json.loads(Path(path).read_text()))
