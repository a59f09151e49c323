"""Experiment grids: configuration, execution and table output.

A configuration is a flat key-value file (TOML with dotted keys)::

    problem.family = "quadratic"      # quadratic | logistic | trig_system
    problem.n = 100
    problem.mu = [0.01, 0.1]          # quadratic only; scalar or list
    problem.L = 1.0                   # quadratic only
    problem.zero_count = 10           # quadratic only
    problem.m = [8, 32]               # logistic / trig_system; scalar or list
    problem.seed = 0                  # seed of the problem instance
    deltas = [1e-7, 1e-4, 1e-1]
    methods = ["constant", "adaptive_L", "adaptive_L_delta"]
    seeds = [0, 1, 2]                 # noise seeds, one run per seed
    output_dir = "results"
    solver.stop_multiplier = 2.449489742783178
    solver.L_min = 0.0025             # default: mu / 4 of each instance

The grid is the product of problem instances (one per ``mu`` or ``m``
value), noise levels, methods and seeds. Every cell builds its own oracle,
so cells are independent and may run in any order; rows are sorted before
they are written.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _toml
from .exceptions import ConfigError, NumericalDivergenceError
from .noise_oracle import InexactOracle, NoiseSpec
from .problems import ProblemInstance, make_problem
from .solvers import SQRT6, Method, SolverConfig, StopReason, run_method, trace_to_csv

FAMILIES = ("quadratic", "logistic", "trig_system")
ROWS_HEADER = ["method", "delta", "mu", "seed", "iterations", "wall_time_ms",
               "grad_ratio", "distance", "func_calls", "grad_calls"]
METHOD_LABELS = {Method.CONSTANT_STEP: "Constant step",
                 Method.ADAPTIVE_L: "Adaptive L",
                 Method.ADAPTIVE_L_DELTA: "Adaptive L, Delta"}
_METHOD_ORDER = {m: i for i, m in enumerate(Method)}

_SOLVER_DEFAULTS = {
    "L_min": None, "L_0": None, "Delta_0": None, "Delta_min": 1e-12, "delta_f": 0.0,
    "stop_multiplier": SQRT6, "max_iterations": 10**6, "max_inner_backtracks": 200,
    "abs_tol": 0.0,
}
_PROBLEM_KEYS = {
    "quadratic": {"family", "n", "mu", "L", "zero_count", "seed"},
    "logistic": {"family", "n", "m", "seed"},
    "trig_system": {"family", "n", "m", "seed"},
}
_TOP_KEYS = {"problem", "deltas", "methods", "seeds", "solver", "output_dir"}


def _g17(v: float) -> str:
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment grid.

    ``mu`` (quadratic) and ``m`` (logistic, trig_system) are tuples; each
    value defines one problem instance. ``solver`` holds every solver
    setting; ``None`` for ``L_min`` means a quarter of each instance's
    nominal PL constant, and ``None`` for ``L_0`` / ``Delta_0`` means the
    solver default.
    """

    family: str
    n: int
    deltas: tuple
    methods: tuple
    seeds: tuple
    solver: dict
    output_dir: Path = Path("results")
    mu: tuple = ()
    L: float = 1.0
    zero_count: int = 0
    m: tuple = ()
    problem_seed: int = 0

    def instances(self) -> list[dict]:
        """Keyword arguments for :func:`make_problem`, one dict per instance."""
        if self.family == "quadratic":
            return [{"n": self.n, "mu": mu, "L": self.L, "zero_count": self.zero_count}
                    for mu in self.mu]
        return [{"n": self.n, "m": m} for m in self.m]

    def solver_config(self, problem: ProblemInstance) -> SolverConfig:
        kw = dict(self.solver)
        if kw["L_min"] is None:
            kw["L_min"] = problem.pl_mu / 4.0
        try:
            return SolverConfig(store_iterates=False, **kw)
        except ValueError as exc:
            raise ConfigError(str(exc), field="solver") from exc

    def to_dict(self) -> dict:
        problem = {"family": self.family, "n": self.n}
        if self.family == "quadratic":
            problem.update(mu=list(self.mu), L=self.L, zero_count=self.zero_count)
        else:
            problem["m"] = list(self.m)
        problem["seed"] = self.problem_seed
        return {
            "problem": problem,
            "deltas": list(self.deltas),
            "methods": [m.value for m in self.methods],
            "seeds": list(self.seeds),
            "output_dir": str(self.output_dir),
            "solver": {k: v for k, v in self.solver.items() if v is not None},
        }


def _fail(field_name, message):
    raise ConfigError(f"{field_name}: {message}", field=field_name)


def _as_list(value, field_name):
    if isinstance(value, list):
        if not value:
            _fail(field_name, "must not be empty")
        return value
    return [value]


def _number(value, field_name, *, positive=False, nonneg=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(field_name, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        _fail(field_name, f"must be finite, got {value!r}")
    if positive and not value > 0:
        _fail(field_name, f"must be positive, got {value!r}")
    if nonneg and not value >= 0:
        _fail(field_name, f"must be >= 0, got {value!r}")
    return value


def _integer(value, field_name, *, lo=None, hi=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(field_name, f"expected an integer, got {value!r}")
    if lo is not None and value < lo:
        _fail(field_name, f"must be >= {lo}, got {value}")
    if hi is not None and value >= hi:
        _fail(field_name, f"must be < {hi}, got {value}")
    return value


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse and validate a configuration.

    Parameters
    ----------
    text : str
        Configuration text.
    **overrides
        ``seed`` (replaces ``seeds`` by a single seed), ``output_dir`` and
        ``stop_multiplier``; ``None`` values are ignored.

    Raises
    ------
    ConfigError
        With ``line``/``column`` on syntax errors and ``field`` on
        validation errors. Unknown keys are errors.
    """
    doc = _toml.loads(text)
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        _fail(sorted(unknown)[0], "unknown key")

    problem = doc.get("problem")
    if not isinstance(problem, dict):
        _fail("problem", "missing problem section")
    family = problem.get("family")
    if family not in FAMILIES:
        _fail("problem.family", f"expected one of {FAMILIES}, got {family!r}")
    unknown = set(problem) - _PROBLEM_KEYS[family]
    if unknown:
        _fail(f"problem.{sorted(unknown)[0]}", f"unknown key for family {family!r}")
    if "n" not in problem:
        _fail("problem.n", "required")
    kw = {"family": family, "n": _integer(problem["n"], "problem.n", lo=1),
          "problem_seed": _integer(problem.get("seed", 0), "problem.seed", lo=0, hi=2**64)}
    if family == "quadratic":
        if "mu" not in problem:
            _fail("problem.mu", "required")
        L = _number(problem.get("L", 1.0), "problem.L", positive=True)
        mus = tuple(_number(v, "problem.mu", positive=True)
                    for v in _as_list(problem["mu"], "problem.mu"))
        for mu in mus:
            if mu > L:
                _fail("problem.mu", f"mu={mu} exceeds L={L}")
        zc = _integer(problem.get("zero_count", 0), "problem.zero_count", lo=0)
        if zc >= kw["n"]:
            _fail("problem.zero_count", f"must be < n={kw['n']}, got {zc}")
        kw.update(mu=mus, L=L, zero_count=zc)
    else:
        if "m" not in problem:
            _fail("problem.m", "required")
        lo = 2 if family == "logistic" else 1
        kw["m"] = tuple(_integer(v, "problem.m", lo=lo)
                        for v in _as_list(problem["m"], "problem.m"))

    if "deltas" not in doc:
        _fail("deltas", "required")
    kw["deltas"] = tuple(_number(v, "deltas", positive=True)
                         for v in _as_list(doc["deltas"], "deltas"))
    methods = _as_list(doc.get("methods", [m.value for m in Method]), "methods")
    try:
        kw["methods"] = tuple(Method(v) for v in methods)
    except ValueError:
        _fail("methods", f"expected a subset of {[m.value for m in Method]}, got {methods!r}")
    seeds = _as_list(doc.get("seeds", [0]), "seeds")
    kw["seeds"] = tuple(_integer(v, "seeds", lo=0, hi=2**64) for v in seeds)
    out = doc.get("output_dir", "results")
    if not isinstance(out, str) or not out:
        _fail("output_dir", f"expected a path string, got {out!r}")
    kw["output_dir"] = Path(out)

    solver_doc = doc.get("solver", {})
    if not isinstance(solver_doc, dict):
        _fail("solver", "expected a section")
    unknown = set(solver_doc) - set(_SOLVER_DEFAULTS)
    if unknown:
        _fail(f"solver.{sorted(unknown)[0]}", "unknown key")
    solver = dict(_SOLVER_DEFAULTS)
    for key, value in solver_doc.items():
        name = f"solver.{key}"
        if key in ("max_iterations", "max_inner_backtracks"):
            solver[key] = _integer(value, name, lo=1)
        elif key in ("delta_f", "abs_tol"):
            solver[key] = _number(value, name, nonneg=True)
        else:
            solver[key] = _number(value, name, positive=True)

    if overrides.get("seed") is not None:
        kw["seeds"] = (_integer(overrides["seed"], "--seed", lo=0, hi=2**64),)
    if overrides.get("output_dir") is not None:
        kw["output_dir"] = Path(overrides["output_dir"])
    if overrides.get("stop_multiplier") is not None:
        solver["stop_multiplier"] = _number(overrides["stop_multiplier"],
                                            "--stop-multiplier", positive=True)

    # check solver invariants that do not depend on the instance
    probe = dict(solver)
    if probe["L_min"] is None:
        probe["L_min"] = probe["L_0"] if probe["L_0"] is not None else 1.0
    try:
        SolverConfig(**probe)
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}", field="solver") from exc
    return ExperimentConfig(solver=solver, **kw)


def dump_config(config: ExperimentConfig) -> str:
    """Canonical text of a configuration; ``parse_config`` inverts it."""
    return _toml.dumps(config.to_dict())


def load_config(path, **overrides) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), **overrides)


# ---------------------------------------------------------------------------
# grid execution

@dataclass(frozen=True)
class ResultRow:
    """Summary of one (instance, method, delta, seed) run.

    ``grad_ratio`` uses the exact gradient at the output point. Failed runs
    (non-finite iterates) keep ``failed=True`` and are not written to
    ``rows.csv``.
    """

    method: Method
    delta: float
    mu: float
    seed: int
    iterations: int
    wall_time_ms: float
    grad_ratio: float
    distance: float
    func_calls: int
    grad_calls: int
    family: str = ""
    status: str = StopReason.GRADIENT_CRITERION.value
    failed: bool = False

    def sort_key(self):
        return (self.mu, self.delta, _METHOD_ORDER[self.method], self.seed)

    def csv_fields(self) -> list[str]:
        return [self.method.value, _g17(self.delta), _g17(self.mu), str(self.seed),
                str(self.iterations), _g17(self.wall_time_ms), _g17(self.grad_ratio),
                _g17(self.distance), str(self.func_calls), str(self.grad_calls)]


def trace_filename(method: Method, delta: float, seed: int) -> str:
    return f"trace_{Method(method).value}_{delta!r}_{seed}.csv"


def instance_label(config: ExperimentConfig, params: dict) -> str:
    if config.family == "quadratic":
        return f"mu_{params['mu']!r}"
    return f"m_{params['m']}"


def run_cell(problem: ProblemInstance, method: Method, delta: float, seed: int,
             solver: SolverConfig):
    """Run one grid cell; returns ``(row, result)``.

    A divergence is recorded as a failed row; ``result`` then holds the
    partial run (possibly ``None``).
    """
    oracle = InexactOracle(problem, NoiseSpec(delta=delta, delta_f=solver.delta_f, seed=seed))
    common = dict(method=method, delta=delta, mu=problem.pl_mu, seed=seed,
                  family=problem.family)
    try:
        result = run_method(method, oracle, solver)
    except NumericalDivergenceError as exc:
        partial = exc.result
        n = partial.n_iterations if partial is not None else 0
        row = ResultRow(iterations=n, wall_time_ms=math.nan, grad_ratio=math.nan,
                        distance=math.nan, func_calls=oracle.n_func_calls,
                        grad_calls=oracle.n_grad_calls, status="diverged", failed=True,
                        **common)
        return row, partial
    x_hat = np.asarray(result.x_hat)
    row = ResultRow(
        iterations=result.n_iterations, wall_time_ms=1e3 * result.wall_time,
        grad_ratio=float(np.linalg.norm(problem.grad(x_hat))) / delta,
        distance=float(np.linalg.norm(x_hat - problem.x0)),
        func_calls=result.n_func_calls, grad_calls=result.n_grad_calls,
        status=result.stop_reason.value, **common)
    return row, result


def build_instances(config: ExperimentConfig) -> list[tuple[str, ProblemInstance]]:
    return [(instance_label(config, params),
             make_problem(config.family, config.problem_seed, **params))
            for params in config.instances()]


def run_grid(config: ExperimentConfig, write: bool = True) -> list[ResultRow]:
    """Run every cell of the grid; returns rows sorted by (mu, delta, method, seed).

    With ``write=True`` each run's trace goes to ``output_dir`` (in one
    subdirectory per instance when the grid has several instances).
    """
    instances = build_instances(config)
    out = Path(config.output_dir)
    rows = []
    for label, problem in instances:
        solver = config.solver_config(problem)
        trace_dir = out if len(instances) == 1 else out / label
        if write:
            trace_dir.mkdir(parents=True, exist_ok=True)
        for delta in config.deltas:
            for method in config.methods:
                for seed in config.seeds:
                    row, result = run_cell(problem, method, delta, seed, solver)
                    rows.append(row)
                    if write and result is not None:
                        (trace_dir / trace_filename(method, delta, seed)).write_text(
                            trace_to_csv(result))
    rows.sort(key=ResultRow.sort_key)
    return rows


def rows_to_csv(rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(ROWS_HEADER)
    for r in sorted(rows, key=ResultRow.sort_key):
        if not r.failed:
            w.writerow(r.csv_fields())
    return out.getvalue()


def rows_from_csv(text: str, family: str = "") -> list[ResultRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ROWS_HEADER:
        raise ValueError(f"unexpected rows header {header!r}")
    rows = []
    for rec in reader:
        if not rec:
            continue
        rows.append(ResultRow(
            method=Method(rec[0]), delta=float(rec[1]), mu=float(rec[2]), seed=int(rec[3]),
            iterations=int(rec[4]), wall_time_ms=float(rec[5]), grad_ratio=float(rec[6]),
            distance=float(rec[7]), func_calls=int(rec[8]), grad_calls=int(rec[9]),
            family=family))
    return rows


def failures_to_csv(rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["method", "delta", "mu", "seed", "status"])
    for r in sorted(rows, key=ResultRow.sort_key):
        if r.failed or r.status != StopReason.GRADIENT_CRITERION.value:
            w.writerow([r.method.value, _g17(r.delta), _g17(r.mu), r.seed, r.status])
    return out.getvalue()


# ---------------------------------------------------------------------------
# tables

class TableLayout(enum.Enum):
    ITER_TIME = "itertime"
    DIST_GRAD = "distgrad"


_LAYOUT_METRICS = {
    TableLayout.ITER_TIME: (("iterations", "Iters"), ("wall_time_ms", "Time, ms")),
    TableLayout.DIST_GRAD: (("grad_ratio", "||grad f(x_N)||/Delta"),
                            ("distance", "||x_N - x_0||")),
}


def _aggregate(rows, layout):
    """``{(mu, delta): {method: {metric: (median, min, max, count)}}}``."""
    if not rows:
        raise ValueError("no rows to tabulate")
    families = {r.family for r in rows}
    if len(families) > 1:
        raise ValueError(f"rows mix problem families {sorted(families)}")
    layout = TableLayout(layout)
    groups: dict = {}
    for r in rows:
        if r.failed:
            continue
        groups.setdefault((r.mu, r.delta), {}).setdefault(r.method, []).append(r)
    agg = {}
    for key in sorted(groups):
        agg[key] = {}
        for method in sorted(groups[key], key=_METHOD_ORDER.get):
            cell = {}
            for metric, _ in _LAYOUT_METRICS[layout]:
                v = np.array([getattr(r, metric) for r in groups[key][method]], dtype=float)
                cell[metric] = (float(np.median(v)), float(v.min()), float(v.max()), v.size)
            agg[key][method] = cell
    return agg


def _fmt(v: float, metric: str) -> str:
    if metric == "iterations":
        return f"{v:g}" if v != int(v) else str(int(v))
    if metric == "wall_time_ms":
        return f"{v:.3g}"
    return f"{v:.4g}"


def _cell(stats, metric) -> str:
    med, lo, hi, count = stats
    if count == 1:
        return _fmt(med, metric)
    return f"{_fmt(med, metric)} ({_fmt(lo, metric)}..{_fmt(hi, metric)})"


def emit_table(rows, layout, csv_path=None) -> str:
    """Markdown table of seed medians with (min..max) ranges.

    Rows are grouped by ``mu`` with one sub-row per noise level; each
    method contributes two columns. When ``csv_path`` is given the same
    statistics are also written there with 17 significant digits.

    Raises
    ------
    ValueError
        If ``rows`` is empty or mixes problem families.
    """
    layout = TableLayout(layout)
    agg = _aggregate(rows, layout)
    methods = sorted({m for cells in agg.values() for m in cells}, key=_METHOD_ORDER.get)
    metrics = _LAYOUT_METRICS[layout]
    header = ["mu", "Delta"] + [f"{METHOD_LABELS[m]}: {label}"
                                for m in methods for _, label in metrics]
    lines = ["| " + " | ".join(header) + " |",
             "|" + "|".join(["---"] * len(header)) + "|"]
    prev_mu = None
    for (mu, delta), cells in agg.items():
        first = f"{mu:.4g}" if mu != prev_mu else ""
        prev_mu = mu
        out = [first, f"{delta:.0e}" if delta == float(f"{delta:.0e}") else f"{delta:.4g}"]
        for m in methods:
            for metric, _ in metrics:
                out.append(_cell(cells[m][metric], metric) if m in cells else "")
        lines.append("| " + " | ".join(out) + " |")
    text = "\n".join(lines) + "\n"
    if csv_path is not None:
        Path(csv_path).write_text(table_csv(rows, layout))
    return text


def table_csv(rows, layout) -> str:
    layout = TableLayout(layout)
    agg = _aggregate(rows, layout)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["mu", "delta", "method", "metric", "median", "min", "max", "count"])
    for (mu, delta), cells in agg.items():
        for method, cell in cells.items():
            for metric, _ in _LAYOUT_METRICS[layout]:
                med, lo, hi, count = cell[metric]
                w.writerow([_g17(mu), _g17(delta), method.value, metric,
                            _g17(med), _g17(lo), _g17(hi), count])
    return out.getvalue()


@dataclass
class GridOutput:
    rows: list
    output_dir: Path
    files: list = field(default_factory=list)

    @property
    def failures(self) -> list:
        return [r for r in self.rows if r.failed]


def write_tables(rows, output_dir) -> list[Path]:
    output_dir = Path(output_dir)
    files = []
    for layout in TableLayout:
        md = output_dir / f"table_{layout.value}.md"
        csv_path = output_dir / f"table_{layout.value}.csv"
        md.write_text(emit_table(rows, layout, csv_path=csv_path))
        files += [md, csv_path]
    return files


def run_experiment(config: ExperimentConfig) -> GridOutput:
    """Run the grid and write ``config.toml``, ``rows.csv``, traces and tables."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dump_config(config))
    rows = run_grid(config)
    (out / "rows.csv").write_text(rows_to_csv(rows))
    files = [out / "config.toml", out / "rows.csv"]
    flagged = failures_to_csv(rows)
    fail_path = out / "failures.csv"
    if flagged.count("\n") > 1:
        fail_path.write_text(flagged)
        files.append(fail_path)
    elif fail_path.exists():
        os.remove(fail_path)
    if any(not r.failed for r in rows):
        files += write_tables(rows, out)
    return GridOutput(rows=rows, output_dir=out, files=files)


def rebuild_tables(output_dir) -> list[Path]:
    """Recreate the tables from a finished run's ``rows.csv`` and ``config.toml``."""
    output_dir = Path(output_dir)
    config = load_config(output_dir / "config.toml")
    rows = rows_from_csv((output_dir / "rows.csv").read_text(), family=config.family)
    return write_tables(rows, output_dir)
