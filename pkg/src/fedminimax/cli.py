"""Command-line entry point ``fedminimax``.

Exit codes: 0 success, 1 usage or configuration error, 2 failed verification
or acceptance check.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .core import ConfigError
from .harness import (METRICS, REDUCERS, ExperimentConfig, RunManifest, acceptance_suite,
                      fit_axis, list_suites, run_sweep)
from .oracles import brute_force_inner_max, finite_diff_grad
from .problems import CLASS_TAGS, HeterogeneityProfile, load_problem, make_quadratic, \
    validate_assumptions

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2

logger = logging.getLogger("fedminimax")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting with status 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedminimax", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    g = sub.add_parser("gen-problem", help="write a generated problem instance as JSON")
    g.add_argument("--class-tag", choices=CLASS_TAGS, default="NC_SC")
    g.add_argument("--n", type=_positive, default=4)
    g.add_argument("--d1", type=_positive, default=10)
    g.add_argument("--d2", type=_positive, default=10)
    g.add_argument("--sigma", type=float, default=0.0)
    g.add_argument("--varsigma-x", type=float, default=0.0)
    g.add_argument("--varsigma-y", type=float, default=0.0)
    g.add_argument("--mode", choices=("offset", "rotation"), default="offset")
    g.add_argument("--mu", type=float, default=0.25)
    g.add_argument("--kappa", type=float, default=4.0)
    g.add_argument("--y-constraint", choices=("none", "ball", "simplex"), default=None)
    g.add_argument("--radius", type=float, default=1.0)
    g.add_argument("--seed", type=_u64, default=0)
    g.add_argument("--out", required=True, help="output JSON path")

    for name, text in (("run", "run a single-cell config"), ("sweep", "run every sweep cell")):
        r = sub.add_parser(name, help=text)
        r.add_argument("--config", required=True)
        r.add_argument("--out", help="output directory (overrides output_dir)")
        r.add_argument("--seed", type=_u64, help="run this single seed instead of the config's")
        r.add_argument("--threads", type=_positive, default=1)
        r.add_argument("--metric-stride", type=_positive)

    v = sub.add_parser("verify", help="assumption report and oracle cross-checks")
    v.add_argument("problem", help="problem JSON path")
    v.add_argument("--samples", type=_positive, default=100)
    v.add_argument("--seed", type=_u64, default=0)

    f = sub.add_parser("fit", help="log-log rate fit over a manifest axis")
    f.add_argument("manifest", help="manifest JSON or run directory")
    f.add_argument("--axis", required=True, choices=("T", "n", "tau", "tau-1", "sigma"))
    f.add_argument("--metric", default="grad_phi_sq", choices=METRICS)
    f.add_argument("--reducer", default="mean", choices=REDUCERS)
    f.add_argument("--burn-in", type=float, default=None)

    a = sub.add_parser("accept", help="run named acceptance suites")
    a.add_argument("suites", nargs="*", help="suite ids, or 'all'")
    a.add_argument("--list", action="store_true", help="list registered suites")
    a.add_argument("--out", help="keep sweep outputs under this directory")
    a.add_argument("--threads", type=_positive, default=1)
    return p


def _cmd_gen(args) -> int:
    het = HeterogeneityProfile(args.varsigma_x, args.varsigma_y, args.mode)
    prob = make_quadratic(args.n, args.d1, args.d2, args.class_tag, het, args.sigma,
                          seed=args.seed, mu=args.mu, kappa=args.kappa,
                          y_constraint=args.y_constraint, radius=args.radius)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    prob.save(args.out)
    print(f"wrote {args.out} ({prob.class_tag}, n={prob.n}, d1={prob.d1}, d2={prob.d2}, "
          f"L_f={prob.lipschitz:.6g})")
    return EXIT_OK


def _cmd_run(args, single: bool) -> int:
    config = ExperimentConfig.from_json(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seeds"] = [args.seed]
        config.seeds = [args.seed]
    if args.metric_stride is not None:
        overrides["metric_stride"] = args.metric_stride
        config.metric_stride = args.metric_stride
    if args.out is not None:
        overrides["output_dir"] = args.out
        config.output_dir = args.out
    for k, val in overrides.items():
        print(f"override: {k} = {val!r}", file=sys.stderr)
    if single and len(config.cells()) != 1:
        raise ConfigError("'run' takes a single-cell config; use 'sweep' for sweep axes")
    # threads is a scheduling choice and never enters the results
    manifest = run_sweep(config, threads=args.threads, overrides=overrides)
    for c in manifest.cells:
        if c["status"] == "skipped":
            print(f"cell {c['index']}: skipped ({c['reason']})")
        else:
            print(f"cell {c['index']}: {c['path']} tau={c['tau']} T={c['T']} "
                  f"rounds={c['comm_rounds']}")
    print(f"manifest: {Path(manifest.output_dir) / 'manifest.json'}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    prob = load_problem(args.problem)
    rep = validate_assumptions(prob, sample_count=args.samples, seed=args.seed)
    checks = dict(rep.checks)
    out = {"class_tag": rep.class_tag, "L_f": rep.L_f, "mu": rep.mu, "kappa": rep.kappa,
           "varsigma_x": rep.varsigma_x, "varsigma_y": rep.varsigma_y}
    if getattr(prob, "envelope_kind", None) is not None:
        rng = np.random.default_rng(args.seed)
        worst_grad, worst_val = 0.0, 0.0
        for _ in range(3):
            x = rng.standard_normal(prob.d1)
            phi, g, _ = prob.envelope(x)
            fd = finite_diff_grad(lambda z: prob.envelope(z)[0], x)
            worst_grad = max(worst_grad, float(np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-12)))
            bf = brute_force_inner_max(prob, x, seed=args.seed)
            worst_val = max(worst_val, abs(bf.value - phi) / max(1.0, abs(phi)))
        out["envelope_grad_rel_err"] = worst_grad
        out["inner_max_rel_err"] = worst_val
        checks["envelope_grad"] = worst_grad <= 1e-5
        checks["inner_max"] = worst_val <= 1e-6
    out["checks"] = checks
    out["notes"] = rep.notes
    print(json.dumps(out, indent=1, default=float))
    return EXIT_OK if all(checks.values()) else EXIT_FAIL


def _cmd_fit(args) -> int:
    manifest = RunManifest.load(args.manifest)
    fit = fit_axis(manifest, args.axis, args.metric, args.reducer, args.burn_in)
    print(f"slope {fit.slope:.6f}")
    print(f"intercept {fit.intercept:.6f}")
    print(f"r_squared {fit.r_squared:.6f}")
    print(f"ci95 [{fit.ci_low:.6f}, {fit.ci_high:.6f}]")
    print(f"points {len(fit.points)} (burn_in {fit.burn_in})")
    return EXIT_OK


def _cmd_accept(args) -> int:
    if args.list:
        for sid in list_suites():
            print(sid)
        return EXIT_OK
    ids = list_suites() if args.suites in ([], ["all"]) else args.suites
    unknown = [s for s in ids if s not in list_suites()]
    if unknown:
        raise UsageError(f"unknown suite(s): {', '.join(unknown)}")
    ok = True
    for sid in ids:
        rep = acceptance_suite(sid, out_dir=args.out, threads=args.threads)
        print(rep.line() + (f" {rep.details}" if rep.details else ""), flush=True)
        ok &= rep.passed
    return EXIT_OK if ok else EXIT_FAIL


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen-problem":
            return _cmd_gen(args)
        if args.command in ("run", "sweep"):
            return _cmd_run(args, single=args.command == "run")
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "fit":
            return _cmd_fit(args)
        return _cmd_accept(args)
    except UsageError as exc:
        print(f"fedminimax: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"fedminimax: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
