"""Command-line entry point: ``spectral-sde <command> ...``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
failures while running.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adaptive import LepskiConfig, lepski_select
from .estimators import EstimatorConfig, estimate_pipeline, observation_moments
from .harness import PRESETS, ConfigError, load_config, preset, run_benchmark
from .sde_sim import ObservationSet, SamplingScheme, draw_gaps, observe_at_gaps, simulate_path
from .spectral_core import residual_bounds, solve_gsep, weyl_bound

log = logging.getLogger("spectral_sde")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _dims_arg(text: str):
    lo, sep, hi = text.partition("..")
    if sep:
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(t) for t in text.split(","))


def _experiment(args):
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = preset(args.preset)
    return cfg


def _estimator_cfg(args) -> EstimatorConfig:
    return EstimatorConfig(D=args.D, interval=tuple(args.interval), derivative_floor=args.derivative_floor)


def cmd_simulate(args) -> int:
    cfg = _experiment(args)
    scheme = SamplingScheme(args.scheme, args.delta)
    path_ss, gap_ss = np.random.SeedSequence(args.seed).spawn(2)
    gaps = draw_gaps(scheme, args.N, gap_ss)
    path = simulate_path(cfg.model, float(gaps.sum()), args.step, path_ss, x0=cfg.initial)
    obs = observe_at_gaps(path, gaps)
    obs.to_csv(args.out)
    if args.path_out:
        path.to_binary(args.path_out)
    print(f"wrote {obs.N + 1} observations spanning t = {obs.times[-1]:.4g} to {args.out}")
    return EXIT_OK


def _dump_matrices(directory, obs, m):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    mom = observation_moments(obs, m)
    np.savetxt(d / "gram.csv", mom.gram, delimiter=",", fmt="%.17g")
    np.savetxt(d / "transition.csv", mom.transition, delimiter=",", fmt="%.17g")


def cmd_estimate(args) -> int:
    obs = ObservationSet.from_csv(args.input)
    level = args.level if args.level is not None else args.dim - 1
    triple, vol, drift = estimate_pipeline(obs, level, _estimator_cfg(args))
    vol.to_csv(args.out)
    if args.drift_out:
        drift.to_csv(args.drift_out)
    if args.dump_matrices:
        _dump_matrices(args.dump_matrices, obs, level + 1)
    print(f"dim={level + 1} kappa={triple.pair.kappa:.6g} v1={triple.v1:.6g} valid={triple.pair.valid} "
          f"degenerate={vol.degenerate} drift_thresholded={drift.thresholded}")
    return EXIT_OK


def cmd_adapt(args) -> int:
    obs = ObservationSet.from_csv(args.input)
    est = _estimator_cfg(args)
    cfg = LepskiConfig(Lambda=args.Lambda, dims=args.dims, interval=est.interval, complexity=args.complexity)
    res = lepski_select(obs, cfg, est)
    res.curve.to_csv(args.out)
    text = res.report()
    if args.report:
        Path(args.report).write_text(text)
    if args.csv:
        res.to_csv(args.csv)
    print(text, end="")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = _experiment(args)
    over = {}
    if args.full:
        over["mc_iterations"] = 1000
    elif args.iters is not None:
        over["mc_iterations"] = args.iters
    if args.seed is not None:
        over["seed"] = args.seed
    if args.sample_sizes:
        over["sample_sizes"] = tuple(args.sample_sizes)
    if args.schemes:
        over["schemes"] = tuple(SamplingScheme(k, cfg.schemes[0].delta) for k in args.schemes)
    if args.no_adaptive:
        over["adaptive"] = False
    cfg = replace(cfg, **over)
    start = time.time()
    reports = run_benchmark(cfg, baseline=args.baseline, workers=args.workers, emit_curves=args.emit_curves)
    first = True
    for report in reports.values():
        report.to_csv(args.out, append=not first)
        first = False
        print(report.summary(), end="")
    print(f"{cfg.mc_iterations} iterations per cell in {time.time() - start:.1f}s; report written to {args.out}")
    return EXIT_OK


def gsep_trials(trials: int, size: int, seed: int = 0, min_size: int = 2):
    """Random perturbation trials of the residual and Weyl bounds.

    Returns the number of violations of each bound and of the exact-input check.
    """
    rng = np.random.default_rng(seed)
    counts = {"residual": 0, "eigenvector": 0, "weyl_perturbed": 0, "weyl_exact": 0, "exact_input": 0}
    for _ in range(trials):
        n = int(rng.integers(min_size, size + 1))
        M = rng.standard_normal((n, n))
        A = 0.5 * (M + M.T)
        K = rng.standard_normal((n, n))
        B = K @ K.T + n * rng.uniform(0.05, 1.0) * np.eye(n)
        eps = 10.0 ** rng.uniform(-6, -1)
        E = rng.standard_normal((n, n))
        F = rng.standard_normal((n, n))
        At = A + 0.5 * eps * (E + E.T)
        Bt = B + 0.05 * eps * (F + F.T)
        exact, approx = solve_gsep(A, B), solve_gsep(At, Bt)
        k = int(rng.integers(n))
        lt, xt = approx.eigenvalues[k], approx.eigenvectors[:, k]
        rb = residual_bounds(A, B, At, Bt, (lt, xt), exact=exact)
        dist = np.abs(exact.eigenvalues - lt)
        i = int(np.argmin(dist))
        slack = 1e-12 * (1 + np.abs(exact.eigenvalues).max())
        if dist[i] > rb.eigenvalue_bound + slack:
            counts["residual"] += 1
        xi = exact.eigenvectors[:, i]
        if min(np.linalg.norm(xi - xt), np.linalg.norm(xi + xt)) > rb.eigenvector_bound + 1e-10:
            counts["eigenvector"] += 1
        wb = weyl_bound(A, B, At, Bt)
        gap = np.abs(wb.eigenvalues - wb.eigenvalues_tilde)
        counts["weyl_perturbed"] += int(np.any(gap > wb.perturbed_bound + slack))
        counts["weyl_exact"] += int(np.any(gap > wb.exact_bound + slack))
        same = residual_bounds(A, B, A, B, (exact.eigenvalues[k], exact.eigenvectors[:, k]), exact=exact)
        ws = weyl_bound(A, B, A, B)
        if max(same) > 1e-10 or ws.perturbed_bound.max() > 1e-10 or ws.exact_bound.max() > 1e-10:
            counts["exact_input"] += 1
    return counts


def cmd_gsep_check(args) -> int:
    counts = gsep_trials(args.trials, args.size, args.seed)
    for name, c in counts.items():
        print(f"{name:<16} {'PASS' if c == 0 else 'FAIL'}  violations={c}/{args.trials}")
    return EXIT_OK if not any(counts.values()) else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spectral-sde", description="Spectral estimation of reflected diffusions from randomly timed data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def experiment_opts(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--preset", choices=PRESETS, default="paper-sec6")
        g.add_argument("--config", help="YAML experiment description")

    def estimator_opts(sp):
        sp.add_argument("--D", type=float, default=1.0, help="volatility cap; drift threshold is 2 D")
        sp.add_argument("--interval", type=float, nargs=2, default=(0.1, 0.9), metavar=("A", "B"))
        sp.add_argument("--derivative-floor", type=float, default=0.0)

    s = sub.add_parser("simulate", help="simulate a path and write observations as CSV")
    experiment_opts(s)
    s.add_argument("--scheme", choices=SamplingScheme.KINDS, default="deterministic")
    s.add_argument("--delta", type=float, default=0.25)
    s.add_argument("--N", type=int, default=20000)
    s.add_argument("--step", type=float, default=0.001)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--path-out", help="also write the fine path in binary form")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="volatility and drift at a fixed dimension")
    e.add_argument("--input", required=True)
    g = e.add_mutually_exclusive_group(required=True)
    g.add_argument("--dim", type=int, help="basis dimension m")
    g.add_argument("--level", type=int, help="projection level J = m - 1")
    e.add_argument("--out", required=True)
    e.add_argument("--drift-out")
    e.add_argument("--dump-matrices", metavar="DIR", help="write the Gram and transition matrices as CSV")
    estimator_opts(e)
    e.set_defaults(func=cmd_estimate)

    a = sub.add_parser("adapt", help="adaptive choice of the dimension")
    a.add_argument("--input", required=True)
    a.add_argument("--Lambda", type=float, default=0.01)
    a.add_argument("--dims", type=_dims_arg, default=tuple(range(2, 17)), help="e.g. 2..16 or 2,3,5")
    a.add_argument("--complexity", choices=("level", "dim-cubed"), default="level",
                   help="threshold growth: 2^(3J) with J = m - 1, or m^3")
    a.add_argument("--out", required=True)
    a.add_argument("--report")
    a.add_argument("--csv")
    estimator_opts(a)
    a.set_defaults(func=cmd_adapt)

    b = sub.add_parser("benchmark", help="Monte Carlo RMISE table")
    experiment_opts(b)
    b.add_argument("--iters", type=int)
    b.add_argument("--full", action="store_true", help="1000 iterations per cell")
    b.add_argument("--seed", type=int)
    b.add_argument("--sample-sizes", type=int, nargs="+")
    b.add_argument("--schemes", nargs="+", choices=SamplingScheme.KINDS)
    b.add_argument("--no-adaptive", action="store_true")
    b.add_argument("--baseline", action="store_true", help="also run the misspecified equidistant estimator")
    b.add_argument("--workers", type=int, help="worker processes (default: $SPECTRAL_SDE_WORKERS or 1)")
    b.add_argument("--emit-curves", metavar="DIR")
    b.add_argument("--out", default="benchmark_report.csv")
    b.set_defaults(func=cmd_benchmark)

    c = sub.add_parser("gsep-check", help="randomised check of the eigenvalue perturbation bounds")
    c.add_argument("--trials", type=int, default=1000)
    c.add_argument("--size", type=int, default=8)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gsep_check)
    return p


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
