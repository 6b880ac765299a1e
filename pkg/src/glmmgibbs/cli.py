"""Command line: ``glmmgibbs {certify, sample, verify, drift-scan}``.

Exit codes: 0 ok, 1 input error, 2 not certified / refused, 3 numerical abort.
"""

import argparse
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .certify import SOutOfRange, certify, check_s
from .diagnostics import EmptyAfterBurnin, SeriesTooShort, summarize
from .drift import DriftParams, boundedness_scan, contraction_profile, random_lambdas, verify_suite
from .gibbs import SamplerConfig, run_chains
from .io import InputError, load_model, write_json, write_samples_csv
from .linalg import LinalgError
from .model import ModelError

EXIT_OK, EXIT_INPUT, EXIT_REFUSED, EXIT_NUMERIC = 0, 1, 2, 3


def _fail(code, msg):
    print(f"error: {msg}", file=sys.stderr)
    return code


def _workers():
    try:
        return max(1, int(os.environ.get("THREADS", os.cpu_count() or 1)))
    except ValueError:
        return 1


def _outdir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_certify(args):
    model = load_model(args.manifest)
    cert = certify(model)
    write_json(_outdir(args.out) / "certificate.json", cert.to_dict())
    print(json.dumps({"route": cert.route, "certified": cert.certified,
                      "witness_s": cert.witness_s}))
    return EXIT_OK if cert.certified else EXIT_REFUSED


def cmd_sample(args):
    model = load_model(args.manifest)
    out = _outdir(args.out)
    cert = certify(model)
    write_json(out / "certificate.json", cert.to_dict())
    if not model.prior.is_proper and not cert.certified and not args.force_uncertified:
        return _fail(EXIT_REFUSED, "improper prior and no geometric-ergodicity certificate; "
                                   "rerun with --force-uncertified to sample anyway")
    try:
        config = SamplerConfig(n_iter=args.iters, burn_in=args.burnin, seed=args.seed,
                               n_chains=args.chains)
    except ValueError as exc:
        return _fail(EXIT_INPUT, str(exc))
    t0 = time.perf_counter()
    store = run_chains(model, config, cert, force_uncertified=args.force_uncertified,
                       workers=_workers())
    elapsed = time.perf_counter() - t0
    for i in range(len(store.chains)):
        write_samples_csv(out / f"chain_{i}.csv", store, i)
    try:
        diag = summarize(store)
    except (EmptyAfterBurnin, SeriesTooShort) as exc:
        diag = {"skipped": str(exc), "burn_in": store.burn_in}
    write_json(out / "diagnostics.json", diag)
    write_json(out / "run_meta.json", {
        "seed": args.seed, "n_chains": args.chains, "n_iter": args.iters,
        "burn_in": args.burnin, "columns": ["iter"] + store.columns,
        "certificate_route": cert.route, "forced_uncertified": bool(args.force_uncertified),
        "chain_errors": [{"chain": i, "error": e} for i, e in store.errors],
        "versions": {"glmmgibbs": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "timings": {"sampling_seconds": elapsed},
    })
    if store.errors:
        for i, err in store.errors:
            print(f"error: chain {i} aborted at {err}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_verify(args):
    model = load_model(args.manifest)
    rng = np.random.default_rng(args.seed)
    report = verify_suite(model, random_lambdas(model, args.trials, rng))
    write_json(_outdir(args.out) / "lemma_report.json", report.to_dict())
    for lemma, res in sorted(report.worst.items()):
        print(f"{lemma:14s} worst normalized slack {res.normalized_slack:+.3e} at lambda={res.lambda_point}")
    return EXIT_OK if report.ok else EXIT_NUMERIC


def cmd_drift_scan(args):
    model = load_model(args.manifest)
    cert = certify(model)
    s = args.s if args.s is not None else cert.witness_s
    alpha = args.alpha if args.alpha is not None else cert.alpha
    c = args.c if args.c is not None else (cert.witness_c or 0.25)
    if s is None or alpha is None:
        return _fail(EXIT_INPUT, "no certificate witnesses available; pass --s and --alpha")
    try:
        check_s(model, s)
        params = DriftParams(s, c, alpha)
    except (SOutOfRange, ValueError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    rng = np.random.default_rng(args.seed)
    profile = contraction_profile(model, params, n_mc=args.mc, rng=rng)
    scan = boundedness_scan(model, n_points=args.grid_points)
    report = {"params": {"s": s, "c": c, "alpha": alpha}, "certificate_route": cert.route,
              "contraction": profile.to_dict(), "boundedness": scan.to_dict()}
    write_json(_outdir(args.out) / "drift_report.json", report)
    for est in profile.tail_estimates:
        print(f"{est.ray:18s} v={est.v_value:.3e} ratio={est.ratio:.4f} +- {est.mc_std_error / est.v_value:.1e}")
    ok = profile.tail_contracts and scan.all_finite
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser():
    parser = argparse.ArgumentParser(prog="glmmgibbs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="check the geometric-ergodicity conditions")
    p.add_argument("manifest")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("sample", help="run the block Gibbs sampler")
    p.add_argument("manifest")
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--burnin", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--out", default="run")
    p.add_argument("--force-uncertified", action="store_true")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("verify", help="check the matrix lemmas at random precisions")
    p.add_argument("manifest")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("drift-scan", help="estimate drift contraction along tail rays")
    p.add_argument("manifest")
    p.add_argument("--s", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--mc", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-points", type=int, default=2000)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_drift_scan)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ModelError, OSError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    except (LinalgError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, str(exc))


if __name__ == "__main__":
    sys.exit(main())
