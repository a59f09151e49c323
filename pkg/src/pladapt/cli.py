"""Command-line front end.

Subcommands::

    pladapt run <config> [--seed S] [--output-dir D] [--stop-multiplier C]
    pladapt verify <trace> <config> [--method M] [--delta D] [--instance I]
    pladapt tables [--output-dir D]
    pladapt problem dump <config> [--instance I] [-o FILE]

Exit status is 0 on success, 1 for usage and validation errors and 2 for
runtime failures (diverged runs, failed guarantee audits).
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

from . import bench
from .exceptions import ConfigError, EstimationError
from .guarantees import guarantee_inputs, verify_run
from .problems import to_text
from .solvers import Method, RunResult, StopReason, trace_from_csv

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

_TRACE_NAME = re.compile(r"trace_(?P<method>[A-Za-z_]+?)_(?P<delta>[^_]+)_(?P<seed>\d+)\.csv$")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; we reserve 2 for runtime failures
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _add_overrides(p):
    p.add_argument("--seed", type=int, help="run a single noise seed")
    p.add_argument("--output-dir", help="override output_dir")
    p.add_argument("--stop-multiplier", type=float, help="override solver.stop_multiplier")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pladapt", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run an experiment grid and write tables")
    p.add_argument("config")
    _add_overrides(p)

    p = sub.add_parser("verify", help="audit a stored trace against the guarantees")
    p.add_argument("trace")
    p.add_argument("config")
    p.add_argument("--method", choices=[m.value for m in Method])
    p.add_argument("--delta", type=float)
    p.add_argument("--instance", type=int, default=None,
                   help="index of the problem instance (default: from the trace path)")
    _add_overrides(p)

    p = sub.add_parser("tables", help="rebuild tables from a finished run")
    p.add_argument("--output-dir", default=None)
    p.add_argument("config", nargs="?", help="config whose output_dir to use")

    p = sub.add_parser("problem", help="problem utilities")
    psub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    d = psub.add_parser("dump", help="serialize a problem instance")
    d.add_argument("config")
    d.add_argument("--instance", type=int, default=0)
    d.add_argument("-o", "--output")
    return parser


def _overrides(args) -> dict:
    return {"seed": getattr(args, "seed", None), "output_dir": getattr(args, "output_dir", None),
            "stop_multiplier": getattr(args, "stop_multiplier", None)}


def _load(path, args) -> bench.ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return bench.parse_config(text, **_overrides(args))


def cmd_run(args) -> int:
    config = _load(args.config, args)
    out = bench.run_experiment(config)
    n_bad = len(out.failures)
    print(f"{len(out.rows)} runs, {n_bad} failed; results in {out.output_dir}")
    for f in out.files:
        print(f"  {f}")
    return EXIT_RUNTIME if n_bad else EXIT_OK


def _pick_instance(config, args, trace_path: Path) -> int:
    if args.instance is not None:
        if not 0 <= args.instance < len(config.instances()):
            raise ConfigError(f"--instance must be in [0, {len(config.instances())})")
        return args.instance
    labels = [bench.instance_label(config, p) for p in config.instances()]
    if len(labels) == 1:
        return 0
    if trace_path.parent.name in labels:
        return labels.index(trace_path.parent.name)
    raise ConfigError("config has several problem instances; pass --instance")


def cmd_verify(args) -> int:
    config = _load(args.config, args)
    path = Path(args.trace)
    match = _TRACE_NAME.search(path.name)
    method = args.method or (match and match["method"])
    delta = args.delta if args.delta is not None else (match and float(match["delta"]))
    if not method or delta is None:
        raise ConfigError("cannot infer method and delta from the file name; "
                          "pass --method and --delta")
    method = Method(method)
    try:
        trace = trace_from_csv(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"malformed trace {path}: {exc}") from exc

    params = config.instances()[_pick_instance(config, args, path)]
    problem = bench.make_problem(config.family, config.problem_seed, **params)
    solver = config.solver_config(problem)
    last = trace[-1]
    result = RunResult(
        method=method, trace=trace, x_hat=None, stop_reason=StopReason.GRADIENT_CRITERION,
        wall_time=0.0, delta_max_observed=max(r.Delta_k for r in trace), config=solver,
        n_func_calls=last.n_func_calls_cum, n_grad_calls=last.n_grad_calls_cum,
        delta_known=delta if method is Method.ADAPTIVE_L else None)
    report = verify_run(result, problem, guarantee_inputs(problem, solver, delta))
    for check in report.checks:
        status = "ok  " if check.passed else "FAIL"
        extra = f" rows={list(check.rows)}" if check.rows else ""
        if check.note:
            extra += f" ({check.note})"
        print(f"{status} {check.name}: observed={check.observed:.6g} "
              f"bound={check.bound:.6g}{extra}")
    if report.passed:
        return EXIT_OK
    for check in report.failures:
        for k in check.rows:
            print(f"failing row {k} ({check.name})", file=sys.stderr)
    return EXIT_RUNTIME


def cmd_tables(args) -> int:
    if args.output_dir is not None:
        out = Path(args.output_dir)
    elif args.config is not None:
        out = _load(args.config, argparse.Namespace()).output_dir
    else:
        out = Path("results")
    if not (out / "rows.csv").exists():
        raise ConfigError(f"no rows.csv in {out}")
    for f in bench.rebuild_tables(out):
        print(f)
    return EXIT_OK


def cmd_problem_dump(args) -> int:
    config = _load(args.config, argparse.Namespace())
    instances = config.instances()
    if not 0 <= args.instance < len(instances):
        raise ConfigError(f"--instance must be in [0, {len(instances)})")
    problem = bench.make_problem(config.family, config.problem_seed, **instances[args.instance])
    text = to_text(problem)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return EXIT_USAGE
    handler = {"run": cmd_run, "verify": cmd_verify, "tables": cmd_tables,
               "problem": cmd_problem_dump}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"pladapt: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EstimationError, ArithmeticError, RuntimeError, OSError) as exc:
        print(f"pladapt: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
