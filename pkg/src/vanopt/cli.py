"""Command-line harness: ``vanopt run``, ``vanopt compare`` and ``vanopt plot``.

Every run option can also be given in a config file of ``key = value``
lines (``#`` starts a comment).  Precedence, lowest first: built-in
defaults, per-problem defaults, config file, command-line flags.  The seed
falls back to the ``VAN_SEED`` environment variable when neither the file
nor the flags set it.

Exit codes: 0 converged, 1 usage or I/O error, 2 iteration budget
exhausted, 3 some compare runs failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .active import active_loop
from .data import Task, make_synthetic_blobs, make_synthetic_regression, read_libsvm, standardize
from .errors import ConfigError, VanError
from .gaussian import rng_stream
from .objectives import make_lasso, make_logistic, make_quadratic, make_sinc, make_vi_objective, test_log_loss
from .optim import OptimizerConfig, OptMethod, RunResult, StepSchedule, default_step, run
from .plot import plot_traces

TRACE_HEADER = "iter,epoch,f_at_mean,L_estimate,grad_norm,step_norm,trace_sigma,samples_used,wallclock_ns"
SUMMARY_HEADER = ["spec", "method", "final_f_at_mean", "final_test_loss", "iters", "wallclock_ns", "status", "error"]
PROBLEMS = ("sinc", "quadratic", "lasso", "logistic", "vi-logistic", "active-logistic")

EXIT_OK, EXIT_ERROR, EXIT_MAX_ITERS, EXIT_PARTIAL = 0, 1, 2, 3

_QUADRATIC_STREAM = 30


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(kind: Callable) -> Callable:
    def parse(text):
        if text is None or str(text).strip().lower() in ("", "none"):
            return None
        return kind(text)
    return parse


def _floats(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).replace(",", " ").split())


def _choice(*allowed):
    def parse(text):
        text = str(text).strip()
        if text not in allowed:
            raise ValueError(f"{text!r} is not one of {', '.join(allowed)}")
        return text
    return parse


@dataclass(frozen=True)
class Option:
    key: str
    parse: Callable[[str], Any]
    default: Any
    help: str


METHODS = tuple(m.value for m in OptMethod)

OPTIONS = (
    Option("problem", _choice(*PROBLEMS), "quadratic", "benchmark problem"),
    Option("method", _choice(*METHODS), "van", "optimizer"),
    Option("beta", _optional(float), None, "base step size (method default when unset)"),
    Option("power", float, 0.0, "step decay exponent: beta / (1 + t) ** power"),
    Option("mc_samples", int, 10, "Monte-Carlo samples per iteration"),
    Option("estimator", _optional(_choice("exact", "quadrature", "mc")), None, "expectation engine (auto when unset)"),
    Option("max_iters", int, 10_000, "iteration budget"),
    Option("tol_grad", float, 1e-6, "stop when the averaged gradient norm drops below this"),
    Option("tol_step", float, 1e-10, "stop when the mean moves less than this"),
    Option("seed", int, 0, "random seed (falls back to VAN_SEED)"),
    Option("minibatch_size", _optional(int), None, "examples per step (full batch when unset)"),
    Option("safeguard", _choice("backtrack", "eigen-floor"), "backtrack", "precision safeguard"),
    Option("eigen_floor", float, 1e-8, "eigenvalue floor for safeguards"),
    Option("sigma0", float, 1.0, "initial standard deviation"),
    Option("mu0", _optional(_floats), None, "initial mean: one value or a comma list (zeros when unset)"),
    Option("quadrature_order", int, 20, "Gauss-Hermite order"),
    Option("reparam_hess_diag", _bool, True, "use the reparameterized Hessian diagonal for van-d with MC"),
    Option("record_time", _bool, False, "record wallclock_ns (makes traces non-reproducible)"),
    Option("dataset", _optional(str), None, "LIBSVM file (synthetic data when unset)"),
    Option("standardize", _bool, False, "standardize features with training statistics"),
    Option("n", int, 400, "synthetic examples"),
    Option("dim", int, 10, "problem dimension"),
    Option("sparsity", float, 0.3, "fraction of nonzero regression coefficients"),
    Option("noise_sd", float, 0.1, "regression noise standard deviation"),
    Option("separation", float, 2.0, "distance between the two blob centers"),
    Option("data_seed", int, 0, "seed for synthetic data and splits"),
    Option("reg", float, 1.0, "regularization strength"),
    Option("acquire", int, 5, "points acquired per active-learning round"),
    Option("rounds", int, 40, "active-learning rounds"),
    Option("replace", _bool, False, "keep acquired points in the pool"),
    Option("strategy", _choice("entropy", "random"), "entropy", "acquisition strategy"),
    Option("predictive_samples", int, 100, "samples for predictive probabilities"),
    Option("output", str, "trace.csv", "trace CSV path"),
)
OPTION_BY_KEY = {o.key: o for o in OPTIONS}

PROBLEM_DEFAULTS = {
    "sinc": {"mu0": (-3.2,), "sigma0": 1.5, "mc_samples": 50, "dim": 1},
    "quadratic": {"dim": 2},
    "lasso": {"n": 500, "dim": 20},
    "logistic": {"n": 400, "dim": 10},
    "vi-logistic": {"n": 400, "dim": 10},
    "active-logistic": {"n": 400, "dim": 10, "beta": 0.5},
}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; keys may use ``-`` or ``_``."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in OPTION_BY_KEY:
            raise ConfigError(f"{path}:{lineno}: expected a known 'key = value', got {line!r}")
        out[key] = _parse_value(key, value.strip(), f"{path}:{lineno}")
    return out


def _parse_value(key: str, value, where: str):
    try:
        return OPTION_BY_KEY[key].parse(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: bad value for {key}: {exc}") from None


def resolve(file_values: dict, flag_values: dict, env=None) -> dict:
    """Merge defaults, problem defaults, file and flags into one configuration."""
    env = os.environ if env is None else env
    cfg = {o.key: o.default for o in OPTIONS}
    if "VAN_SEED" in env and "seed" not in file_values and "seed" not in flag_values:
        cfg["seed"] = _parse_value("seed", env["VAN_SEED"], "VAN_SEED")
    problem = flag_values.get("problem", file_values.get("problem", cfg["problem"]))
    cfg.update(PROBLEM_DEFAULTS.get(problem, {}))
    cfg.update(file_values)
    cfg.update(flag_values)
    return cfg


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(repr(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg: dict) -> str:
    return "".join(f"{o.key} = {_format_value(cfg[o.key])}\n" for o in OPTIONS)


# -- problem construction -----------------------------------------------------


@dataclass
class Problem:
    objective: Any
    data: Any = None


def optimizer_config(cfg: dict) -> OptimizerConfig:
    method = OptMethod(cfg["method"])
    base = cfg["beta"] if cfg["beta"] is not None else default_step(method)
    return OptimizerConfig(
        method=method,
        schedule=StepSchedule(base, cfg["power"]),
        mc_samples=cfg["mc_samples"],
        estimator=cfg["estimator"],
        max_iters=cfg["max_iters"],
        tol_grad=cfg["tol_grad"],
        tol_step=cfg["tol_step"],
        seed=cfg["seed"],
        minibatch_size=cfg["minibatch_size"],
        safeguard=cfg["safeguard"],
        eigen_floor=cfg["eigen_floor"],
        sigma0=cfg["sigma0"],
        quadrature_order=cfg["quadrature_order"],
        reparam_hess_diag=cfg["reparam_hess_diag"],
        record_time=cfg["record_time"],
    )


def quadratic_instance(dim: int, seed: int):
    """Well-conditioned SPD ``A = B B^T / dim + I`` and target ``a`` from a seed."""
    rng = rng_stream(seed, _QUADRATIC_STREAM)
    B = rng.standard_normal((dim, dim))
    return B @ B.T / dim + np.eye(dim), rng.standard_normal(dim)


def load_data(cfg: dict, task: Task):
    if cfg["dataset"] is not None:
        path = Path(cfg["dataset"])
        if not path.is_file():
            raise ConfigError(f"dataset {path} does not exist")
        data = read_libsvm(path, task, cfg["data_seed"])
    elif task is Task.REGRESSION:
        data, _ = make_synthetic_regression(cfg["n"], cfg["dim"], cfg["sparsity"], cfg["noise_sd"], cfg["data_seed"])
    else:
        data = make_synthetic_blobs(cfg["n"], cfg["dim"], cfg["separation"], cfg["data_seed"])
    if cfg["standardize"]:
        data, _ = standardize(data)
    return data


def build_problem(cfg: dict) -> Problem:
    p = cfg["problem"]
    if p == "sinc":
        return Problem(make_sinc())
    if p == "quadratic":
        return Problem(make_quadratic(*quadratic_instance(cfg["dim"], cfg["data_seed"])))
    if p == "lasso":
        data = load_data(cfg, Task.REGRESSION)
        return Problem(make_lasso(data, cfg["reg"]), data)
    data = load_data(cfg, Task.CLASSIFICATION)
    obj = make_logistic(data, cfg["reg"])
    if p == "vi-logistic":
        obj = make_vi_objective(obj)
    return Problem(obj, data)


def _init(cfg: dict, dim: int):
    if cfg["mu0"] is None:
        return None
    mu0 = np.asarray(cfg["mu0"], dtype=float)
    if mu0.size == 1:
        return np.full(dim, mu0[0])
    if mu0.size != dim:
        raise ConfigError(f"mu0 has {mu0.size} entries but the problem has dimension {dim}")
    return mu0


# -- traces -------------------------------------------------------------------


def _num(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % v


def trace_rows(result: RunResult):
    for r in result.trace:
        yield (r.iter, r.epoch_fraction, r.f_at_mean, r.L_estimate, r.grad_norm, r.step_norm,
               r.trace_Sigma, r.samples_used, r.wallclock_ns)


def format_trace(rows) -> str:
    buf = io.StringIO()
    buf.write(TRACE_HEADER + "\n")
    for row in rows:
        buf.write(",".join(_num(v) for v in row) + "\n")
    return buf.getvalue()


@dataclass
class Outcome:
    status: str
    iters: int
    final_f: float
    final_mean: np.ndarray
    test_loss: float
    csv_text: str


def execute(cfg: dict) -> Outcome:
    """Run one fully resolved configuration; returns the outcome and trace text."""
    problem = build_problem({**cfg, "problem": "logistic"} if cfg["problem"] == "active-logistic" else cfg)
    opt = optimizer_config(cfg)
    if cfg["problem"] == "active-logistic":
        return _execute_active(cfg, opt, problem)
    result = run(problem.objective, opt, _init(cfg, problem.objective.dim))
    final_f = result.trace[-1].f_at_mean if result.trace else float(problem.objective.value(result.mean))
    loss = math.nan
    if cfg["problem"] in ("logistic", "vi-logistic"):
        loss = test_log_loss(result.mean, problem.data)
    return Outcome(result.status, len(result.trace), final_f, result.mean, loss, format_trace(trace_rows(result)))


def _execute_active(cfg, opt, problem) -> Outcome:
    """Active learning trace: one row per round, ``f_at_mean`` holds the test log-loss."""
    data = problem.data
    init = _init(cfg, data.dim)
    trace = active_loop(data, data, opt, cfg["acquire"], cfg["rounds"], cfg["reg"], cfg["replace"],
                        cfg["strategy"], cfg["predictive_samples"], init=init)
    n_pool = data.splits["train"].size
    rows = [(r.round, r.examples_seen / n_pool, r.test_loss, math.nan, math.nan, math.nan, r.trace_sigma,
             r.examples_seen, 0) for r in trace.records]
    last = trace.records[-1]
    return Outcome("converged", last.round, last.test_loss, trace.state.mean, last.test_loss, format_trace(rows))


def _status_code(status: str) -> int:
    return EXIT_OK if status in ("converged", "stopped") else EXIT_MAX_ITERS


# -- argument parsing ---------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _add_run_options(p: argparse.ArgumentParser, skip=()):
    p.add_argument("--config", help="config file of key = value lines")
    p.add_argument("--dump-config", action="store_true", help="print the resolved configuration and exit")
    for o in OPTIONS:
        if o.key in skip:
            continue
        flag = "--" + o.key.replace("_", "-")
        if o.parse is _bool:
            p.add_argument(flag, dest=o.key, action=argparse.BooleanOptionalAction, default=None, help=o.help)
        else:
            p.add_argument(flag, dest=o.key, default=None, metavar=o.key.upper(), help=o.help)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vanopt", description="Variational Adaptive-Newton optimizers and benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_run_options(sub.add_parser("run", help="run one optimizer and write a trace CSV"))
    cmp_ = sub.add_parser("compare", help="run several methods on one problem")
    _add_run_options(cmp_, skip=("output",))
    cmp_.add_argument("--methods", help="comma-separated methods, one run each")
    cmp_.add_argument("--spec", action="append", default=[], help="per-run config file (repeatable)")
    cmp_.add_argument("--out-dir", default="compare_out", help="directory for traces and summary.csv")
    cmp_.add_argument("--workers", type=int, default=4, help="concurrent runs")
    plot = sub.add_parser("plot", help="plot trace CSVs as SVG")
    plot.add_argument("traces", nargs="+", help="trace CSV files")
    plot.add_argument("--columns", default="f_at_mean", help="comma-separated columns to plot")
    plot.add_argument("--x", default="iter", help="x-axis column")
    plot.add_argument("--log-y", action="store_true", help="logarithmic y axis")
    plot.add_argument("--out", default="plot.svg", help="output SVG path")
    return parser


def _flag_values(args, skip=()) -> dict:
    out = {}
    for o in OPTIONS:
        if o.key in skip:
            continue
        v = getattr(args, o.key, None)
        if v is not None:
            out[o.key] = _parse_value(o.key, v, "--" + o.key.replace("_", "-"))
    return out


def _resolved(args, skip=()) -> dict:
    file_values = read_config_file(args.config) if args.config else {}
    return resolve(file_values, _flag_values(args, skip))


def cmd_run(args, out=None) -> int:
    out = out or sys.stdout
    cfg = _resolved(args)
    if args.dump_config:
        out.write(dump_config(cfg))
        return EXIT_OK
    outcome = execute(cfg)
    Path(cfg["output"]).write_text(outcome.csv_text, encoding="utf-8")
    mean = " ".join("%.17g" % v for v in np.atleast_1d(outcome.final_mean))
    line = f"status={outcome.status} iters={outcome.iters} f_at_mean={outcome.final_f:.17g} mean={mean}"
    if not math.isnan(outcome.test_loss):
        line += f" test_loss={outcome.test_loss:.17g}"
    out.write(line + "\n")
    return _status_code(outcome.status)


def cmd_compare(args, out=None) -> int:
    out = out or sys.stdout
    base = _resolved(args, skip=("output",))
    specs = []
    if args.methods:
        specs += [{**base, "method": _parse_value("method", m.strip(), "--methods")} for m in args.methods.split(",")]
    for path in args.spec:
        specs.append(resolve({**read_config_file(path)}, _flag_values(args, skip=("output", "method"))))
    if len(specs) < 2:
        raise ConfigError("compare needs at least two runs (--methods and/or --spec)")
    if len({s["problem"] for s in specs}) != 1:
        raise ConfigError("all compared runs must share one problem")
    if args.dump_config:
        out.write("\n".join(dump_config(s) for s in specs))
        return EXIT_OK
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def job(k_spec):
        k, spec = k_spec
        start = time.perf_counter_ns()
        try:
            outcome = execute(spec)
        except Exception as exc:  # a failed run is reported, not propagated
            return k, None, f"{type(exc).__name__}: {exc}", time.perf_counter_ns() - start
        (out_dir / f"trace_{k}_{spec['method']}.csv").write_text(outcome.csv_text, encoding="utf-8")
        return k, outcome, "", time.perf_counter_ns() - start

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        results = sorted(pool.map(job, enumerate(specs)), key=lambda r: r[0])

    failed = False
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for k, outcome, err, elapsed in results:
            spec = specs[k]
            if outcome is None:
                failed = True
                w.writerow([k, spec["method"], "nan", "nan", 0, elapsed, "error", err])
                out.write(f"[{k}] {spec['method']}: error: {err}\n")
                continue
            w.writerow([k, spec["method"], _num(outcome.final_f), _num(outcome.test_loss), outcome.iters, elapsed,
                        outcome.status, ""])
            out.write(f"[{k}] {spec['method']}: status={outcome.status} iters={outcome.iters} "
                      f"f_at_mean={outcome.final_f:.17g}\n")
    if failed:
        return EXIT_PARTIAL
    return EXIT_OK if all(_status_code(r[1].status) == EXIT_OK for r in results) else EXIT_MAX_ITERS


def cmd_plot(args, out=None) -> int:
    out = out or sys.stdout
    columns = [c.strip() for c in args.columns.split(",") if c.strip()]
    plot_traces(args.traces, columns, args.out, x_column=args.x, log_y=args.log_y)
    out.write(f"wrote {args.out}\n")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"run": cmd_run, "compare": cmd_compare, "plot": cmd_plot}[args.command]
    try:
        return handler(args)
    except (VanError, OSError, ValueError) as exc:
        print(f"vanopt: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
