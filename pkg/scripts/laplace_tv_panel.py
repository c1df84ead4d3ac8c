"""TV between the Laplace-slab sampler and the importance-sampling oracle.

Also prints the oracle mass outside the sampler's domain (supersets of the
hint of size at most k*), which the sampler cannot reach.

    python3 scripts/laplace_tv_panel.py 8 10 2
"""

import argparse
import math
import time
import warnings

import numpy as np

from spikeslab import PriorSpec, draw_instance, make_rng, verify_rip
from spikeslab.laplace_posterior import LaplacePosteriorSampler, LaplaceSamplerConfig
from spikeslab.model import gen_gaussian_matrix
from spikeslab.oracle import empirical_support_pmf, enumerate_posterior_laplace, tv_distance
from spikeslab.sparse_recovery import RecoveryConfig, build_hint

HINT = RecoveryConfig(c_inf=0.12, refit=True, eps_lambda=0.02, lambda_scale=0.1)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("seeds", type=int, nargs="+")
    ap.add_argument("--d", type=int, default=8)
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--sigma", type=float, default=0.05)
    ap.add_argument("--k-star", type=int, default=3)
    ap.add_argument("--delta", type=float, default=0.05)
    ap.add_argument("--anneal-delta", type=float, default=0.02)
    ap.add_argument("--draws", type=int, default=20_000)
    ap.add_argument("--mc-samples", type=int, default=1_000_000)
    args = ap.parse_args()
    print("seed,nonzeros,hint,tv,tolerance,mass_outside,C,oracle_s,sampler_s")
    for seed in args.seeds:
        X = gen_gaussian_matrix(args.n, args.d, 5000 + seed)
        inst = draw_instance(PriorSpec.uniform(args.d, 0.15, "laplace"), X, args.sigma, 6000 + seed)
        t0 = time.perf_counter()
        oracle = enumerate_posterior_laplace(inst, args.mc_samples, make_rng(seed))
        t1 = time.perf_counter()
        eps = verify_rip(X, 2).eps_hat
        hint = build_hint(inst, args.k_star, eps, args.delta, HINT)
        cfg = LaplaceSamplerConfig(k_star=args.k_star, eps=min(eps, 0.99), delta=args.delta,
                                   ratio_cap="exact", Delta=args.anneal_delta)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sampler = LaplacePosteriorSampler(inst, hint, cfg)
            samples, _ = sampler.sample(make_rng(seed), size=args.draws)
        t2 = time.perf_counter()
        tv = tv_distance(empirical_support_pmf(samples, args.d), oracle)
        tol = 0.1 + 3 * math.fsum(oracle.stderr.values())
        T = set(hint.support)
        outside = sum(p for S, p in oracle.entries.items() if not (T <= set(S) and len(S) <= args.k_star))
        hint_str = ";".join(str(i + 1) for i in hint.support)
        print(f"{seed},{np.count_nonzero(inst.theta_star)},{hint_str},{tv:.4f},{tol:.4f},{outside:.4f},"
              f"{sampler.C:.3f},{t1 - t0:.1f},{t2 - t1:.1f}", flush=True)


if __name__ == "__main__":
    main()
