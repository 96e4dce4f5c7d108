"""Command line tool: lambda-max, fit, cv, simulate, bench-screen.

Every option can come from three places, later winning: built-in default,
a ``--config`` file of flat ``key=value`` lines, then the command line
flag of the same name.  Unknown config keys are rejected.  Output is the
record-per-line format from ``dataio``; ``--output -`` writes to stdout.

Exit codes: 0 success, 2 validation error (bad options, malformed input
files), 1 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, replace

import numpy as np

from .blocks import PenaltySpec
from .dataio import (
    load_dataset,
    write_cv_file,
    write_fit_file,
    write_record,
    write_sim_file,
)
from .losses import MultinomialLoss
from .model_selection import cross_validate
from .penalty import lambda_max
from .preprocess import ColumnStandardizer, normalize_rows
from .simulate import preset, run_study
from .solver import SolverConfig, fit_path

__all__ = ["main"]


class NumericFailure(Exception):
    """Raised for failures of computation rather than configuration."""


# ---------------------------------------------------------------------------
# option tables


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError("expected true or false, got %r" % text)


def _parse_floats(text):
    parts = [tok for tok in text.split(",") if tok.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of numbers")
    return tuple(float(tok) for tok in parts)


def _parse_gamma(text):
    if text.strip() == "sqrt_dim":
        return "sqrt_dim"
    return float(text)


@dataclass(frozen=True)
class Opt:
    name: str
    parse: object
    default: object
    help: str
    required: bool = False


DATA_OPTS = (
    Opt("matrix", str, None, "design matrix file", required=True),
    Opt("labels", str, None, "labels file, one class label per line", required=True),
    Opt("format", str, "csv", "matrix format: csv (dense) or coo (sparse triplets)"),
    Opt("normalize_rows", _parse_bool, False, "center and scale every sample row"),
    Opt("standardize", _parse_bool, False, "scale feature columns before fitting"),
)

PENALTY_OPTS = (
    Opt("alpha", float, 0.5, "mixing weight: 0 pure group penalty, 1 pure l1"),
    Opt("gamma", _parse_gamma, "sqrt_dim", "block weight policy: sqrt_dim or a number"),
    Opt("xi", float, 1.0, "elementwise l1 weight"),
    Opt("intercept", _parse_bool, True, "add an unpenalized per-class intercept"),
)

SOLVER_OPTS = (
    Opt("n_lambda", int, 100, "grid size when no explicit grid is given"),
    Opt("lambda_min_ratio", float, 1e-4, "grid floor as a fraction of lambda_max"),
    Opt("tol_outer", float, 1e-5, "outer stop on the scaled KKT residual"),
    Opt("tol_middle", float, 1e-7, "middle stop on the max block change"),
    Opt("tol_inner", float, 1e-9, "inner stop on the max coordinate change"),
    Opt("max_outer", int, 100, "outer iteration cap"),
    Opt("max_middle", int, 15, "middle sweep cap per outer step"),
    Opt("max_inner", int, 40, "inner sweep cap per block solve"),
)

SCREEN_OPT = Opt("screen", _parse_bool, True, "use the Hessian-bound block screen")
LAMBDAS_OPT = Opt("lambdas", _parse_floats, None, "explicit penalty grid, comma-separated")
OUTPUT_OPT = Opt("output", str, "-", "output file, - for stdout")
SEED_OPT = Opt("seed", int, 0, "random seed")
WORKERS_OPT = Opt("workers", int, 1, "process pool size for independent tasks")

SIM_SOLVER_OPTS = (
    Opt("n_lambda", int, 50, "grid size per path"),
    Opt("lambda_min_ratio", float, 1e-3, "grid floor as a fraction of lambda_max"),
    Opt("tol_outer", float, 1e-5, "outer stop on the scaled KKT residual"),
    Opt("tol_middle", float, 1e-7, "middle stop on the max block change"),
    Opt("tol_inner", float, 1e-9, "inner stop on the max coordinate change"),
    Opt("max_outer", int, 100, "outer iteration cap"),
    Opt("max_middle", int, 15, "middle sweep cap per outer step"),
    Opt("max_inner", int, 40, "inner sweep cap per block solve"),
)

SIM_OPTS = (
    Opt("kind", str, None, "design preset: thin, sparse, or dense", required=True),
    Opt("replicates", int, None, "number of replicates"),
    Opt("classes", int, None, "number of classes"),
    Opt("per_class", int, None, "training samples per class"),
    Opt("test_per_class", int, None, "test samples per class"),
    Opt("active_features", int, None, "features that may carry signal"),
    Opt("extra_features", int, None, "pure-noise features appended to the design"),
    Opt("zero_prob", float, None, "zero probability per mean entry (thin/sparse)"),
    Opt("laplace_scale", float, None, "Laplace scale for dense means"),
    Opt("delta", float, None, "identity mixing weight of the covariance"),
    Opt("bayes_draws", int, None, "Monte Carlo draws for the reference error rate"),
    Opt("folds", int, None, "cross-validation folds for selecting the penalty"),
    Opt("alphas", _parse_floats, None, "mixing weights to compare"),
)

CV_ALPHAS_OPT = Opt(
    "alphas", _parse_floats, (0.0, 0.25, 0.5, 0.75, 1.0), "mixing weights to compare"
)
FOLDS_OPT = Opt("folds", int, 10, "number of stratified folds")

COMMAND_TABLES = {
    "lambda-max": DATA_OPTS + PENALTY_OPTS + (OUTPUT_OPT,),
    "fit": DATA_OPTS + PENALTY_OPTS + SOLVER_OPTS + (SCREEN_OPT, LAMBDAS_OPT, OUTPUT_OPT),
    "cv": DATA_OPTS
    + (CV_ALPHAS_OPT,)
    + PENALTY_OPTS[1:]
    + SOLVER_OPTS
    + (SCREEN_OPT, FOLDS_OPT, SEED_OPT, WORKERS_OPT, OUTPUT_OPT),
    "simulate": SIM_OPTS + SIM_SOLVER_OPTS + (SEED_OPT, WORKERS_OPT, OUTPUT_OPT),
    "bench-screen": DATA_OPTS + PENALTY_OPTS + SOLVER_OPTS + (LAMBDAS_OPT, OUTPUT_OPT),
}


def read_config_file(path):
    """Flat key=value lines; blank lines and # comments allowed."""
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, sep, value = stripped.partition("=")
            if not sep:
                raise ValueError("%s, line %d: expected key=value" % (path, lineno))
            out[key.strip()] = value.strip()
    return out


def resolve(opts, args, file_cfg):
    """Merge defaults, config file, and flags; reject unknown config keys.

    Returns the value map plus the set of names given explicitly.
    """
    remaining = dict(file_cfg)
    values = {}
    explicit = set()
    for opt in opts:
        raw = getattr(args, opt.name)
        from_file = remaining.pop(opt.name, None)
        if raw is None:
            raw = from_file
        if raw is None:
            if opt.required:
                raise ValueError("missing required option --%s" % opt.name.replace("_", "-"))
            values[opt.name] = opt.default
            continue
        try:
            values[opt.name] = opt.parse(raw)
        except ValueError as exc:
            raise ValueError("invalid value for %s: %r (%s)" % (opt.name, raw, exc)) from None
        explicit.add(opt.name)
    if remaining:
        raise ValueError(
            "unknown config key(s): %s; valid keys: %s"
            % (
                ", ".join(sorted(remaining)),
                ", ".join(opt.name for opt in opts),
            )
        )
    return values, explicit


@contextmanager
def open_output(target):
    if target == "-":
        yield sys.stdout
    else:
        with open(target, "w", encoding="utf-8") as f:
            yield f


def _echo_items(command, values, skip=("output",)):
    items = [("command", command)]
    for name, value in values.items():
        if name in skip or value is None:
            continue
        if isinstance(value, tuple):
            value = ",".join(repr(float(x)) for x in value)
        items.append((name, value))
    return items


# ---------------------------------------------------------------------------
# shared assembly


def _prepare_dataset(values):
    X, codes, names = load_dataset(values["matrix"], values["labels"], values["format"])
    transformer = None
    if values["normalize_rows"]:
        try:
            X = normalize_rows(X)
        except TypeError as exc:
            raise ValueError(str(exc)) from None
    if values["standardize"]:
        transformer = ColumnStandardizer().fit(X)
        X = transformer.transform(X)
    return X, codes, names, transformer


def _build_problem(X, codes, values):
    loss = MultinomialLoss(X, codes, intercept=values["intercept"])
    unpen = (0,) if values["intercept"] else ()
    penalty = PenaltySpec.build(
        loss.structure,
        values["alpha"],
        gamma=values["gamma"],
        xi=values["xi"],
        unpenalized_blocks=unpen,
    )
    return loss, penalty


def _solver_config(values, screen=None):
    if screen is None:
        screen = values.get("screen", True)
    return SolverConfig(
        tol_outer=values["tol_outer"],
        tol_middle=values["tol_middle"],
        tol_inner=values["tol_inner"],
        max_outer=values["max_outer"],
        max_middle=values["max_middle"],
        max_inner=values["max_inner"],
        use_hessian_bound=screen,
        n_lambda=values["n_lambda"],
        lambda_min_ratio=values["lambda_min_ratio"],
    )


def _start_gradient(loss):
    beta = np.zeros(loss.structure.n)
    if loss.intercept_block is not None:
        b0 = loss.optimize_intercept()
        if b0 is not None:
            beta[loss.structure.slice(loss.intercept_block)] = b0
    return loss.gradient(beta)


def _rescale_path_inplace(path, transformer):
    """Rewrite path coefficients on the original feature scale."""
    centers, scales = transformer.centers_, transformer.scales_
    sl0 = None
    if path.intercept_block is not None:
        sl0 = path.structure.slice(path.intercept_block)
    for i in range(path.n_lambda):
        beta = path.betas[i]
        shift = 0.0
        for pos, J in enumerate(path.feature_blocks):
            sl = path.structure.slice(J)
            beta[sl] /= scales[pos]
            shift = shift + beta[sl] * centers[pos]
        if sl0 is not None:
            beta[sl0] -= shift


# ---------------------------------------------------------------------------
# commands


def cmd_lambda_max(values, explicit):
    X, codes, names, _ = _prepare_dataset(values)
    loss, penalty = _build_problem(X, codes, values)
    lam = lambda_max(penalty, _start_gradient(loss))
    with open_output(values["output"]) as f:
        write_record(f, "header", [("format", "sparsegroup-lambda-max"), ("version", 1)])
        write_record(f, "config", _echo_items("lambda-max", values))
        write_record(f, "lambda_max", [("value", float(lam))])
    return 0


def cmd_fit(values, explicit):
    X, codes, names, transformer = _prepare_dataset(values)
    if (
        transformer is not None
        and np.any(transformer.centers_ != 0.0)
        and not values["intercept"]
    ):
        raise ValueError(
            "standardize centers dense features; fitting without an intercept "
            "cannot express that shift on the original scale"
        )
    loss, penalty = _build_problem(X, codes, values)
    config = _solver_config(values)
    grid = values["lambdas"]
    path = fit_path(loss, penalty, config, lambdas=grid)
    if transformer is not None:
        _rescale_path_inplace(path, transformer)
    with open_output(values["output"]) as f:
        write_fit_file(f, path, names, _echo_items("fit", values))
    return 0


def cmd_cv(values, explicit):
    X, codes, names, _ = _prepare_dataset(values)
    config = _solver_config(values)
    result = cross_validate(
        X,
        codes,
        list(values["alphas"]),
        k=values["folds"],
        seed=values["seed"],
        config=config,
        intercept=values["intercept"],
        gamma=values["gamma"],
        xi=values["xi"],
        workers=values["workers"],
    )
    majority_error = 1.0 - np.bincount(codes).max() / codes.size
    with open_output(values["output"]) as f:
        write_cv_file(f, result, names, majority_error, _echo_items("cv", values))
    return 0


def cmd_simulate(values, explicit):
    override_names = (
        "replicates",
        "test_per_class",
        "active_features",
        "extra_features",
        "zero_prob",
        "laplace_scale",
        "delta",
        "bayes_draws",
        "alphas",
        "seed",
    )
    overrides = {
        name: values[name] for name in override_names if name in explicit
    }
    if "classes" in explicit:
        overrides["n_classes"] = values["classes"]
    if "per_class" in explicit:
        overrides["n_per_class"] = values["per_class"]
    if "folds" in explicit:
        overrides["cv_folds"] = values["folds"]
    sim = preset(values["kind"], **overrides)
    config = _solver_config(values, screen=True)
    result = run_study(sim, config=config, workers=values["workers"])
    echo = [("command", "simulate")]
    for name, value in asdict(sim).items():
        if value is None:
            continue
        if isinstance(value, tuple):
            value = ",".join(repr(float(x)) for x in value)
        echo.append((name, value))
    for opt in SIM_SOLVER_OPTS:
        echo.append((opt.name, values[opt.name]))
    echo.append(("workers", values["workers"]))
    with open_output(values["output"]) as f:
        write_sim_file(f, result, echo)
    return 0


def cmd_bench_screen(values, explicit):
    X, codes, names, _ = _prepare_dataset(values)
    loss, penalty = _build_problem(X, codes, values)
    config_on = _solver_config(values, screen=True)
    config_off = replace(config_on, use_hessian_bound=False)
    grid = values["lambdas"]

    start = time.perf_counter()
    path_on = fit_path(loss, penalty, config_on, lambdas=grid)
    time_on = time.perf_counter() - start
    start = time.perf_counter()
    path_off = fit_path(loss, penalty, config_off, lambdas=grid)
    time_off = time.perf_counter() - start

    gap = float(np.max(np.abs(path_on.betas - path_off.betas), initial=0.0))
    equal = gap <= 1e-8
    screened = int(path_on.screened.sum())
    sweeps = int(path_on.middle_sweeps.sum())
    tests = int(path_on.full_tests.sum())
    with open_output(values["output"]) as f:
        write_record(f, "header", [("format", "sparsegroup-bench"), ("version", 1)])
        write_record(f, "config", _echo_items("bench-screen", values))
        write_record(
            f,
            "bench",
            [
                ("time_screen_on", time_on),
                ("time_screen_off", time_off),
                ("speedup_ratio", time_off / time_on if time_on > 0 else float("inf")),
                ("screened_blocks", screened),
                ("screened_blocks_off", int(path_off.screened.sum())),
                ("middle_sweeps", sweeps),
                ("screened_per_sweep", screened / sweeps if sweeps else 0.0),
                ("screened_fraction", screened / (screened + tests) if screened + tests else 0.0),
                ("max_difference", gap),
                ("tolerance", 1e-8),
                ("solutions_equal", equal),
            ],
        )
    if not equal:
        raise NumericFailure(
            "screening changed the solution: max difference %r exceeds 1e-8" % gap
        )
    return 0


HANDLERS = {
    "lambda-max": cmd_lambda_max,
    "fit": cmd_fit,
    "cv": cmd_cv,
    "simulate": cmd_simulate,
    "bench-screen": cmd_bench_screen,
}

DESCRIPTIONS = {
    "lambda-max": "smallest penalty level at which every penalized block is zero",
    "fit": "fit the penalty path and write per-level records",
    "cv": "stratified cross-validation over mixing weights",
    "simulate": "Gaussian mean-recovery study at a named design preset",
    "bench-screen": "same fit with screening on and off, with timings",
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sparsegroup",
        description="Sparse group penalized multinomial fitting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, table in COMMAND_TABLES.items():
        cp = sub.add_parser(command, help=DESCRIPTIONS[command])
        cp.add_argument("--config", default=None, help="key=value option file")
        for opt in table:
            cp.add_argument(
                "--" + opt.name.replace("_", "-"),
                dest=opt.name,
                default=None,
                metavar="V",
                help=opt.help + (
                    "" if opt.default is None else " (default %s)" % (opt.default,)
                ),
            )
        cp.set_defaults(_table=table, _handler=HANDLERS[command])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        file_cfg = read_config_file(args.config) if args.config else {}
        values, explicit = resolve(args._table, args, file_cfg)
        return args._handler(values, explicit)
    except NumericFailure as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return 1
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
