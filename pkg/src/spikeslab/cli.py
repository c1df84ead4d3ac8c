"""Command-line interface: ``spikeslab {gen,hint,sample,verify,bench}``.

Exit codes: 0 success, 1 verification failure, 2 usage error,
3 sampler contract violation (the report is still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ContractViolation, SpikeSlabError
from .model import (
    Diffuse,
    Instance,
    PriorSpec,
    draw_instance,
    gen_gaussian_matrix,
    gen_rademacher_matrix,
    load_instance,
    make_rng,
    save_instance,
    verify_rip,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CONTRACT = 0, 1, 2, 3


class UsageError(Exception):
    """Bad flag value; the message names the offending field."""


# --- helpers -----------------------------------------------------------------------

def _stream(seed: int, tag: int) -> list[int]:
    """Entropy for an independent stream derived from the run seed."""
    return [int(seed), int(tag)]


def _ratio_cap(text):
    if text in ("auto", "envelope", "exact"):
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("ratio-cap must be a number >= 1, 'auto', 'envelope' or 'exact'")
    return value


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _one_based(S) -> str:
    return ";".join(str(i + 1) for i in S)


def _write_json(path, payload) -> None:
    text = json.dumps(payload, indent=1, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _load(args) -> Instance:
    if not args.instance:
        raise UsageError("--instance: an instance file is required")
    try:
        return load_instance(args.instance)
    except FileNotFoundError:
        raise UsageError(f"--instance: file {args.instance!r} not found") from None


def _measured_eps(inst: Instance, level: int) -> float:
    s = max(1, min(level, inst.d))
    return min(verify_rip(inst.X, s, exhaustive_limit=20_000).eps_hat, 0.99)


def _k0(inst: Instance) -> int:
    return max(1, math.ceil(inst.prior.k - 1e-9))


def _recovery_config(args):
    from .sparse_recovery import RecoveryConfig

    return RecoveryConfig(c_inf=args.c_inf or None, estimator=args.estimator, refit=args.refit,
                          lambda_scale=args.lambda_scale,
                          eps_lambda=None if args.eps_lambda < 0 else args.eps_lambda)


def _k_star(args, inst: Instance) -> int:
    from .gaussian_posterior import default_k_star

    if args.k_star:
        return args.k_star
    k_star = default_k_star(inst.prior.k, args.delta)
    if inst.prior.diffuse is Diffuse.LAPLACE and inst.sigma > 0:
        # largest cap inside the sigma <= 1/(6 k*) regime of the Laplace sampler
        k_star = min(k_star, max(_k0(inst) + 1, math.floor(1.0 / (6.0 * inst.sigma))))
    return k_star


def _hint(args, inst: Instance, k_star: int, eps: float):
    from .sparse_recovery import build_hint

    return build_hint(inst, k_star, eps, args.delta, _recovery_config(args))


def _resolve_cap(args, kind: str, domain_size: int, exact_limit: int):
    if args.ratio_cap != "auto":
        return args.ratio_cap
    if domain_size <= exact_limit:
        return "exact"
    return 3.0 if kind == "gaussian" else 4.0


def _build_sampler(args, inst: Instance, rng_seed: int):
    """Hint plus posterior sampler configured from flags."""
    k_star = _k_star(args, inst)
    eps = args.eps if args.eps is not None else _measured_eps(inst, _k0(inst) + 1)
    hint = _hint(args, inst, k_star, eps)
    cap_probe = (3 * k_star) // 4
    free = int(np.sum((inst.prior.q > 0) & (inst.prior.q < 1))) - len(hint.support)
    domain = sum(math.comb(max(free, 0), r) for r in range(max(0, min(cap_probe - len(hint.support), free)) + 1))
    if inst.prior.diffuse is Diffuse.GAUSSIAN:
        from .gaussian_posterior import GaussianPosteriorSampler, SamplerConfig

        cap = _resolve_cap(args, "gaussian", domain, 200_000)
        cfg = SamplerConfig(k_star=k_star, eps=eps, delta=args.delta, ratio_cap=cap)
        return GaussianPosteriorSampler(inst, hint, cfg), hint, cfg
    from .laplace_posterior import AnnealConfig, LaplacePosteriorSampler, LaplaceSamplerConfig

    cap = _resolve_cap(args, "laplace", domain, 5_000)
    anneal = AnnealConfig(gibbs_sweeps=args.sweeps)
    cfg = LaplaceSamplerConfig(k_star=k_star, eps=eps, delta=args.delta, ratio_cap=cap,
                               Delta=args.anneal_delta, anneal=anneal, seed=rng_seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return LaplacePosteriorSampler(inst, hint, cfg), hint, cfg


def _config_summary(cfg) -> dict:
    out = {}
    for key in ("k_star", "eps", "delta", "ratio_cap", "Delta"):
        if hasattr(cfg, key):
            out[key] = getattr(cfg, key)
    return out


# --- subcommands ------------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.n is None or args.n < 1:
        raise UsageError("--n: must be a positive integer")
    if args.d is None or args.d < 1:
        raise UsageError("--d: must be a positive integer")
    if not (0.0 <= args.q <= 1.0):
        raise UsageError(f"--q: inclusion probability {args.q} is outside [0, 1]")
    if not (args.sigma >= 0.0 and math.isfinite(args.sigma)):
        raise UsageError(f"--sigma: {args.sigma} must be a finite non-negative number")
    gen = gen_gaussian_matrix if args.ensemble == "gaussian" else gen_rademacher_matrix
    X = gen(args.n, args.d, _stream(args.seed, 1))
    prior = PriorSpec.uniform(args.d, args.q, args.prior)
    inst = replace(draw_instance(prior, X, args.sigma, _stream(args.seed, 2)), seed=int(args.seed))
    summary = {"n": inst.n, "d": inst.d, "k": inst.prior.k,
               "support_size": int(np.count_nonzero(inst.theta_star)), "sigma": inst.sigma}
    if args.out:
        save_instance(inst, args.out)
    else:
        from .model import instance_to_dict

        _write_json(None, instance_to_dict(inst))
    print(json.dumps(summary, sort_keys=True), file=sys.stderr if not args.out else sys.stdout)
    return EXIT_OK


def cmd_hint(args) -> int:
    inst = _load(args)
    k_star = _k_star(args, inst)
    eps = args.eps if args.eps is not None else _measured_eps(inst, _k0(inst) + 1)
    h = _hint(args, inst, k_star, eps)
    payload = {
        "support": [i + 1 for i in h.support],
        "theta_hat": {str(i + 1): float(h.theta_hat[i]) for i in h.support},
        "clip_level": h.clip_level,
        "estimator": h.estimator_kind.value,
        "k_star": k_star,
        "eps": eps,
    }
    _write_json(args.out, payload)
    return EXIT_OK


def _theta_draws(inst: Instance, supports, rng, sweeps: int):
    from .gaussian_posterior import draw_theta_given_support
    from .laplace_posterior import draw_theta_given_support_laplace

    groups: dict[tuple, list[int]] = {}
    for j, S in enumerate(supports):
        groups.setdefault(S, []).append(j)
    out = [None] * len(supports)
    for S in sorted(groups, key=lambda s: (len(s), s)):
        rows = groups[S]
        if inst.prior.diffuse is Diffuse.GAUSSIAN:
            th = draw_theta_given_support(inst, S, rng, size=len(rows))
        else:
            th = draw_theta_given_support_laplace(inst, S, sweeps, rng, size=len(rows))
        for r, t in zip(rows, th):
            out[r] = t
    return out


def cmd_sample(args) -> int:
    inst = _load(args)
    if args.n_samples < 1:
        raise UsageError("--n-samples: must be positive")
    report_path = args.report or (str(args.out) + ".report.json" if args.out else None)
    payload = {"n_samples": args.n_samples, "seed": args.seed, "status": "ok"}
    code = EXIT_OK
    try:
        sampler, hint, cfg = _build_sampler(args, inst, args.seed)
        payload.update({"hint_support": [i + 1 for i in hint.support], "C": sampler.C,
                        "config": _config_summary(cfg)})
        supports, report = sampler.sample(make_rng(_stream(args.seed, 3)), size=args.n_samples)
        payload["report"] = report.to_dict()
    except ContractViolation as exc:
        payload.update({"status": "contract_violation", "error": str(exc),
                        "subset": [i + 1 for i in exc.subset] if exc.subset is not None else None,
                        "log_ratio": exc.log_ratio})
        _write_json(report_path, payload)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    thetas = None
    if not args.no_theta:
        thetas = _theta_draws(inst, supports, make_rng(_stream(args.seed, 4)), args.sweeps)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["sample_index", "support", "theta"])
        for j, S in enumerate(supports):
            theta = "" if thetas is None else ";".join(f"{i + 1}:{float(thetas[j][i])!r}" for i in S)
            w.writerow([j, _one_based(S), theta])
    finally:
        if args.out:
            fh.close()
    if report_path:
        _write_json(report_path, payload)
    return code


def _verify_oracle_tv(args, inst: Instance) -> dict:
    from .oracle import (
        empirical_support_pmf,
        enumerate_posterior_gaussian,
        enumerate_posterior_laplace,
        tv_distance,
    )

    sampler, hint, cfg = _build_sampler(args, inst, args.seed)
    supports, report = sampler.sample(make_rng(_stream(args.seed, 3)), size=args.n_samples)
    emp = empirical_support_pmf(supports, inst.d)
    if inst.prior.diffuse is Diffuse.GAUSSIAN:
        truth = enumerate_posterior_gaussian(inst)
        slack = 0.0
    else:
        truth = enumerate_posterior_laplace(inst, args.mc_samples, make_rng(_stream(args.seed, 5)))
        slack = math.fsum(truth.stderr.values())
    tv = tv_distance(emp, truth)
    tol = args.tol if args.tol is not None else (0.05 if slack == 0.0 else 0.1)
    return {"mode": "oracle-tv", "tv": tv, "tolerance": tol + slack, "oracle_stderr": slack,
            "pass": tv <= tol + slack, "report": report.to_dict(), "C": sampler.C,
            "hint_support": [i + 1 for i in hint.support]}


def _verify_ratio_audit(args, inst: Instance) -> dict:
    sampler, hint, cfg = _build_sampler(args, inst, args.seed)
    rng = make_rng(_stream(args.seed, 6))
    keys = sampler.propose(rng, args.n_samples)
    supports = sorted({sampler.key_to_support(k) for k in keys})
    lr = np.array([sampler.log_P(S) - sampler.log_Q(S) for S in supports])
    out = {"mode": "ratio-audit", "subsets": len(supports),
           "ratio_min": float(np.exp(lr.min())), "ratio_max": float(np.exp(lr.max())),
           "eps": cfg.eps}
    if inst.prior.diffuse is Diffuse.GAUSSIAN:
        from .gaussian_posterior import ratio_bounds_gaussian

        if cfg.eps < 0.5:
            ok = True
            for S, v in zip(supports, lr):
                z2 = float(np.sum(sampler.state.z[list(S)] ** 2))
                lo, hi = ratio_bounds_gaussian(cfg.eps, cfg.k_star, inst.sigma, z2)
                ok &= math.log(lo) - 1e-9 <= v <= math.log(hi) + 1e-9
            out["envelope"] = "simplified"
        else:
            lo, hi = sampler.log_ratio_envelope()
            ok = bool(np.all(lr >= lo - 1e-9) and np.all(lr <= hi + 1e-9))
            out["envelope"] = "per-coordinate"
    else:
        slack = math.log(1.0 - sampler.anneal.Delta)
        ok = bool(np.all(lr >= slack - 1e-9))
        out["envelope"] = "lower"
    out["pass"] = bool(ok)
    return out


def cmd_verify(args) -> int:
    if args.mode == "invariants":
        from .invariants import run_invariants

        payload = run_invariants(args.seed)
    else:
        inst = _load(args)
        if args.mode == "oracle-tv":
            payload = _verify_oracle_tv(args, inst)
        else:
            payload = _verify_ratio_audit(args, inst)
    _write_json(args.out, payload)
    return EXIT_OK if payload["pass"] else EXIT_FAIL


def _bench_cell(args, d: int, k_star: int, index: int) -> dict:
    from .gaussian_posterior import GaussianPosteriorSampler, SamplerConfig
    from .sparse_recovery import build_hint

    n = args.n
    row = {"d": d, "n": n, "k_star": k_star, "estimator": args.estimator, "samples": args.n_samples}
    try:
        X = gen_gaussian_matrix(n, d, _stream(args.seed, 100 + index))
        prior = PriorSpec.uniform(d, min(args.k / d, 1.0))
        inst = draw_instance(prior, X, args.sigma, _stream(args.seed, 200 + index))
        t0 = time.perf_counter()
        hint = build_hint(inst, k_star, args.eps, args.delta, _recovery_config(args))
        cap = args.ratio_cap if args.ratio_cap != "auto" else 3.0
        sampler = GaussianPosteriorSampler(inst, hint, SamplerConfig(k_star=k_star, eps=args.eps,
                                                                     delta=args.delta, ratio_cap=cap))
        _, rep = sampler.sample(make_rng(_stream(args.seed, 300 + index)), size=args.n_samples)
        wall = 1000.0 * (time.perf_counter() - t0)
        row.update({"wall_ms": wall, "per_sample_ms": wall / args.n_samples,
                    "attempts": rep.attempts, "acceptance_rate": rep.accepted / rep.attempts,
                    "C": sampler.C, "status": "ok"})
    except SpikeSlabError as exc:
        row.update({"wall_ms": "", "per_sample_ms": "", "attempts": "", "acceptance_rate": "",
                    "C": "", "status": f"{type(exc).__name__}: {exc}"})
    return row


def cmd_bench(args) -> int:
    cells = [(d, k) for d in args.d for k in args.k_star]
    if not cells:
        raise UsageError("--d/--k-star: the sweep grid is empty")
    threads = int(os.environ.get("SSS_THREADS", "1") or 1)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(lambda a: _bench_cell(args, a[1][0], a[1][1], a[0]), enumerate(cells)))
    fields = ["d", "n", "k_star", "estimator", "samples", "wall_ms", "per_sample_ms",
              "attempts", "acceptance_rate", "C", "status"]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


# --- parser -------------------------------------------------------------------------

def _add_shared(p):
    p.add_argument("--seed", type=int, default=0, help="run seed (default: 0)")
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.add_argument("--config", default=None, help="JSON file whose keys override flags")


def _add_hint_flags(p):
    p.add_argument("--k-star", type=int, default=None,
                   help="working sparsity cap (default: ceil(16 (k + ln(40/delta))); for a "
                        "Laplace slab capped at max(ceil(k)+1, floor(1/(6 sigma))))")
    p.add_argument("--eps", type=float, default=None,
                   help="RIP constant (default: measured at level ceil(k)+1)")
    p.add_argument("--delta", type=float, default=0.05, help="failure budget (default: 0.05)")
    p.add_argument("--estimator", choices=["linf", "l2"], default="linf", help="(default: linf)")
    # desk-scale defaults; worst-case constants zero every hint at n ~ 64
    p.add_argument("--c-inf", type=float, default=0.12,
                   help="l-inf radius multiplier; pass 0 for the worst-case RIP constant (default: 0.12)")
    p.add_argument("--lambda-scale", type=float, default=0.1, help="Lasso weight multiplier (default: 0.1)")
    p.add_argument("--eps-lambda", type=float, default=0.02,
                   help="RIP constant in the Lasso rule; negative means measured (default: 0.02)")
    p.add_argument("--refit", action=argparse.BooleanOptionalAction, default=True,
                   help="refit hint values on the hint support")


def _add_sampler_flags(p):
    p.add_argument("--ratio-cap", type=_ratio_cap, default="auto",
                   help="C, 'envelope', 'exact' or 'auto' = exact when enumerable, "
                        "else 3 (gaussian) / 4 (laplace) (default: auto)")
    p.add_argument("--anneal-delta", type=float, default=0.05,
                   help="relative tolerance of each Laplace weight (default: 0.05)")
    p.add_argument("--sweeps", type=int, default=2, help="Gibbs sweeps per draw (default: 2)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikeslab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic instance")
    _add_shared(p)
    p.add_argument("--n", type=int, default=None, help="rows (required)")
    p.add_argument("--d", type=int, default=None, help="columns (required)")
    p.add_argument("--q", type=float, default=0.1, help="inclusion probability (default: 0.1)")
    p.add_argument("--sigma", type=float, default=0.5, help="noise level (default: 0.5)")
    p.add_argument("--prior", choices=["gaussian", "laplace"], default="gaussian", help="(default: gaussian)")
    p.add_argument("--ensemble", choices=["gaussian", "rademacher"], default="gaussian",
                   help="(default: gaussian)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("hint", help="compute the clipped recovery hint")
    _add_shared(p)
    p.add_argument("--instance", default=None, help="instance JSON (required)")
    _add_hint_flags(p)
    p.set_defaults(func=cmd_hint)

    p = sub.add_parser("sample", help="sample supports and coefficients")
    _add_shared(p)
    p.add_argument("--instance", default=None, help="instance JSON (required)")
    p.add_argument("--n-samples", type=int, default=1000, help="(default: 1000)")
    p.add_argument("--report", default=None, help="report JSON (default: <out>.report.json)")
    p.add_argument("--no-theta", action="store_true", help="skip coefficient draws")
    _add_hint_flags(p)
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("verify", help="compare against oracles and check invariants")
    _add_shared(p)
    p.add_argument("--mode", choices=["oracle-tv", "invariants", "ratio-audit"], default="oracle-tv",
                   help="(default: oracle-tv)")
    p.add_argument("--instance", default=None, help="instance JSON (oracle-tv, ratio-audit)")
    p.add_argument("--n-samples", type=int, default=50_000, help="(default: 50000)")
    p.add_argument("--mc-samples", type=int, default=1_000_000,
                   help="importance samples per support for the Laplace oracle (default: 1e6)")
    p.add_argument("--tol", type=float, default=None,
                   help="TV tolerance (default: 0.05 gaussian, 0.1 laplace)")
    _add_hint_flags(p)
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="time the Gaussian sampler over a grid")
    _add_shared(p)
    p.add_argument("--d", type=_int_list, default=[512, 1024, 2048], help="(default: 512,1024,2048)")
    p.add_argument("--k-star", type=_int_list, default=[40], help="(default: 40)")
    p.add_argument("--k", type=int, default=3, help="expected sparsity (default: 3)")
    p.add_argument("--n", type=int, default=200, help="rows (default: 200)")
    p.add_argument("--sigma", type=float, default=1.0, help="(default: 1.0)")
    p.add_argument("--eps", type=float, default=0.25, help="assumed RIP constant (default: 0.25)")
    p.add_argument("--delta", type=float, default=0.05, help="(default: 0.05)")
    p.add_argument("--estimator", choices=["linf", "l2"], default="l2", help="(default: l2)")
    p.add_argument("--c-inf", type=float, default=0.12, help="(default: 0.12)")
    p.add_argument("--lambda-scale", type=float, default=0.1, help="(default: 0.1)")
    p.add_argument("--eps-lambda", type=float, default=0.02, help="(default: 0.02)")
    p.add_argument("--refit", action=argparse.BooleanOptionalAction, default=True, help="refit hint values")
    p.add_argument("--n-samples", type=int, default=200, help="(default: 200)")
    p.add_argument("--ratio-cap", type=_ratio_cap, default="auto",
                   help="C, 'envelope' or 'exact'; auto means 3 (default: auto)")
    p.set_defaults(func=cmd_bench)
    return parser


def _apply_config(parser, args) -> None:
    if not args.config:
        return
    try:
        data = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"--config: cannot read {args.config!r}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("--config: top level must be a JSON object")
    for key, value in data.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest) or dest in ("func", "command", "config"):
            raise UsageError(f"--config: unknown field {key!r}")
        if dest == "ratio_cap":
            value = _ratio_cap(str(value))
        elif dest in ("d", "k_star") and args.command == "bench" and not isinstance(value, list):
            value = _int_list(str(value))
        setattr(args, dest, value)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        _apply_config(parser, args)
        return args.func(args)
    except UsageError as exc:
        print(f"spikeslab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ContractViolation as exc:
        print(f"spikeslab {args.command}: contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except SpikeSlabError as exc:
        print(f"spikeslab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
