"""Command-line interface: estimate, curve, simulate, balance-check.

Single-run reports are JSON with a fixed field order; tables and curves
are CSV.  Commands that write CSV also render a PNG figure next to the
output unless ``--no-figure`` is given.  Flag values override config-file
values, which override defaults.

Exit codes: 0 success, 2 usage problem, 3 data problem, 4 numeric or
convergence failure.  Errors print one ``CODE: message`` line to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .balance import balance_residual, solve_weights
from .doseresponse import curve_grid, fit_curve
from .errors import (
    BalanceInfeasibleError,
    DataError,
    NotConvergedError,
    RankDeficientError,
)
from .inference import confidence_interval, sandwich_variance_smooth, variance
from .mestimate import fit
from .model import (
    Dataset,
    LinkSpec,
    LossSpec,
    asymmetric_squared,
    check,
    indicator_link,
    polynomial_link,
    squared_error,
)
from .sieve import build_basis, covariate_poly, treatment_poly
from .simulate import DgpSpec, monte_carlo, report_rows, standard_configs


class UsageError(Exception):
    """Bad flag or config-file value; maps to exit code 2."""


# ---------------------------------------------------------------------------
# Input parsing


def load_csv(path: str, outcome: str, treatment: str, covariates) -> Dataset:
    """Read a UTF-8 header CSV into a Dataset by column role.

    Raises DataError for an empty file, a duplicated header name, a
    missing column, or a non-numeric cell (naming its row and column).
    """
    covariates = list(covariates)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [name.strip() for name in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        duplicated = sorted({name for name in header if header.count(name) > 1})
        if duplicated:
            raise DataError(f"{path}: duplicated header name(s): {', '.join(duplicated)}")
        wanted = [outcome, treatment, *covariates]
        missing = [name for name in wanted if name not in header]
        if missing:
            raise DataError(f"{path}: missing column(s): {', '.join(missing)}")
        index = {name: header.index(name) for name in wanted}

        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            values = []
            for name in wanted:
                if index[name] >= len(row):
                    raise DataError(f"{path}: row {lineno} has no value for column {name!r}")
                cell = row[index[name]].strip()
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at row {lineno}, column {name!r}"
                    ) from None
                if not np.isfinite(value):
                    raise DataError(
                        f"{path}: non-finite value {cell!r} at row {lineno}, column {name!r}"
                    )
                values.append(value)
            rows.append(values)
        if not rows:
            raise DataError(f"{path}: no data rows")

    block = np.array(rows, dtype=float)
    return Dataset(y=block[:, 0], t=block[:, 1], x=block[:, 2:])


def parse_loss(text: str) -> LossSpec:
    """"mean", "quantile:TAU", or "expectile:TAU"."""
    if text == "mean":
        return squared_error()
    kind, _, arg = text.partition(":")
    if kind in ("quantile", "expectile") and arg:
        try:
            tau = float(arg)
        except ValueError:
            raise UsageError(f"loss {text!r}: {arg!r} is not a number") from None
        if not 0.0 < tau < 1.0:
            raise UsageError(f"loss {text!r}: tau must lie in (0, 1)")
        return check(tau) if kind == "quantile" else asymmetric_squared(tau)
    raise UsageError(f"unknown loss {text!r}; use mean, quantile:TAU, or expectile:TAU")


def parse_link(text: str) -> LinkSpec:
    """"poly:DEGREE" or "levels:A,B,..."."""
    kind, _, arg = text.partition(":")
    if kind == "poly" and arg:
        try:
            degree = int(arg)
        except ValueError:
            raise UsageError(f"link {text!r}: {arg!r} is not an integer") from None
        if degree < 0:
            raise UsageError(f"link {text!r}: degree must be nonnegative")
        return polynomial_link(degree)
    if kind == "levels" and arg:
        try:
            levels = [float(part) for part in arg.split(",")]
        except ValueError:
            raise UsageError(f"link {text!r}: levels must be numbers") from None
        return indicator_link(levels)
    raise UsageError(f"unknown link {text!r}; use poly:DEGREE or levels:A,B,...")


# ---------------------------------------------------------------------------
# Run configuration (flags > config file > defaults)


@dataclass(frozen=True)
class RunConfig:
    """Effective settings for one data-driven command."""

    data: str
    outcome: str
    treatment: str
    covariates: tuple[str, ...]
    loss: str = "mean"
    link: str = "poly:1"
    k1: int = 3
    k2_degree: int = 2
    interactions: bool = False
    variance: str = "auto"
    level: float = 0.95
    points: int = 101
    balance_tol: float = 1e-9
    fit_tol: float = 1e-7
    max_iter: int = 200
    output: str = ""

    def echo(self, command: str, fields: tuple[str, ...]) -> dict:
        """Reproducibility block: the settings that determine the output."""
        block = {"command": command}
        for name in fields:
            value = getattr(self, name)
            block[name] = list(value) if isinstance(value, tuple) else value
        return block


# Fields each command consumes; also the set of legal config-file keys.
_COMMAND_FIELDS = {
    "estimate": (
        "data", "outcome", "treatment", "covariates", "loss", "link",
        "k1", "k2_degree", "interactions", "variance", "level",
        "balance_tol", "fit_tol", "max_iter", "output",
    ),
    "curve": (
        "data", "outcome", "treatment", "covariates",
        "k1", "k2_degree", "interactions", "points", "level",
        "balance_tol", "max_iter", "output",
    ),
    "balance-check": (
        "data", "outcome", "treatment", "covariates",
        "k1", "k2_degree", "interactions", "balance_tol", "max_iter", "output",
    ),
}

_DEFAULT_OUTPUT = {
    "estimate": "estimate.json",
    "curve": "curve.csv",
    "balance-check": "balance.csv",
}


def _read_config_file(path: str, allowed) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise UsageError(
            f"config file {path}: unknown key(s) {', '.join(unknown)}; "
            f"allowed: {', '.join(allowed)}"
        )
    return raw


def _split_names(value) -> tuple[str, ...]:
    if isinstance(value, str):
        parts = [part.strip() for part in value.split(",")]
    elif isinstance(value, (list, tuple)):
        parts = [str(part).strip() for part in value]
    else:
        raise UsageError("covariates must be a comma-separated string or a list of names")
    parts = [part for part in parts if part]
    if not parts:
        raise UsageError("covariates must name at least one column")
    return tuple(parts)


def _coerce(name: str, value):
    """Config-file values arrive as JSON; check the type per field."""
    kind = RunConfig.__dataclass_fields__[name].type
    if name == "covariates":
        return _split_names(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise UsageError(f"config key {name!r} must be true or false")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise UsageError(f"config key {name!r} must be an integer")
        return value
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise UsageError(f"config key {name!r} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise UsageError(f"config key {name!r} must be a string")
    return value


def _resolve_config(args: argparse.Namespace, command: str) -> RunConfig:
    fields = _COMMAND_FIELDS[command]
    file_values = {}
    if getattr(args, "config", None):
        file_values = _read_config_file(args.config, fields)

    values = {}
    for name in fields:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = _split_names(flag) if name == "covariates" else flag
        elif name in file_values:
            values[name] = _coerce(name, file_values[name])
    missing = [name for name in ("data", "outcome", "treatment", "covariates")
               if name not in values]
    if missing:
        raise UsageError(f"missing required setting(s): {', '.join(missing)}")
    values.setdefault("output", _DEFAULT_OUTPUT[command])

    config = RunConfig(**values)
    if config.k1 < 1:
        raise UsageError("k1 must be at least 1")
    if config.k2_degree < 1:
        raise UsageError("k2-degree must be at least 1")
    if config.points < 2:
        raise UsageError("points must be at least 2")
    if not 0.0 < config.level < 1.0:
        raise UsageError("level must lie in (0, 1)")
    if config.variance not in ("auto", "sandwich", "kernel"):
        raise UsageError("variance must be auto, sandwich, or kernel")
    return config


# ---------------------------------------------------------------------------
# Shared pipeline pieces


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _figure_path(output: str) -> str:
    return str(Path(output).with_suffix(".png"))


def _solve_balance(dataset: Dataset, config: RunConfig):
    ubasis = build_basis(treatment_poly(config.k1), dataset.t)
    vbasis = build_basis(covariate_poly(config.k2_degree, config.interactions), dataset.x)
    solution = solve_weights(
        ubasis.matrix, vbasis.matrix,
        tol=config.balance_tol, max_iter=config.max_iter,
    )
    if not solution.converged:
        raise NotConvergedError(
            f"balance solve stopped after {solution.iterations} iterations "
            f"with gradient norm {solution.gradient_norm:.2e}"
        )
    return ubasis, vbasis, solution


# ---------------------------------------------------------------------------
# Commands


def _cmd_estimate(args: argparse.Namespace) -> int:
    config = _resolve_config(args, "estimate")
    dataset = load_csv(config.data, config.outcome, config.treatment, config.covariates)
    loss = parse_loss(config.loss)
    link = parse_link(config.link)

    ubasis, vbasis, solution = _solve_balance(dataset, config)
    result = fit(dataset, solution.weights, loss, link,
                 tol=config.fit_tol, max_iter=config.max_iter)
    if not result.converged:
        raise NotConvergedError(
            f"M-fit stopped after {result.iterations} iterations "
            f"with first-order norm {result.foc_norm:.2e}"
        )

    method = config.variance
    if method == "auto":
        method = "sandwich" if loss.smooth else "kernel"
    if method == "sandwich":
        var = sandwich_variance_smooth(dataset, ubasis.matrix, vbasis.matrix,
                                       solution, result)
    else:
        var = variance(dataset, solution.weights, result)
    lower, upper = confidence_interval(result.beta, var.v, dataset.n, config.level)

    residual = balance_residual(solution.weights, ubasis.matrix, vbasis.matrix)
    report = {
        "beta": [float(b) for b in result.beta],
        "se": [float(s) for s in var.se(dataset.n)],
        "ci_lower": [float(b) for b in lower],
        "ci_upper": [float(b) for b in upper],
        "weights": {
            "min": float(solution.weights.min()),
            "max": float(solution.weights.max()),
            "mean": float(solution.weights.mean()),
            "balance_residual_max": float(np.abs(residual).max()),
            "dual_iterations": int(solution.iterations),
        },
        "variance": {"method": var.method},
        "reproducibility": {
            "config": config.echo("estimate", _COMMAND_FIELDS["estimate"]),
            "version": __version__,
        },
    }
    text = json.dumps(report, indent=2) + "\n"
    _write_text(config.output, text)
    sys.stdout.write(text)
    return 0


def _cmd_curve(args: argparse.Namespace) -> int:
    config = _resolve_config(args, "curve")
    dataset = load_csv(config.data, config.outcome, config.treatment, config.covariates)

    ubasis, _, solution = _solve_balance(dataset, config)
    curve = fit_curve(dataset, solution.weights, ubasis)
    grid = curve_grid(dataset, curve, n_points=config.points, level=config.level)

    lines = ["t,theta_hat,se,lower,upper"]
    for j in range(config.points):
        lines.append(",".join(
            f"{grid[key][j]:.10g}" for key in ("t", "theta", "se", "lower", "upper")
        ))
    _write_text(config.output, "\n".join(lines) + "\n")

    written = [config.output]
    if not args.no_figure:
        from . import figures

        written.append(figures.curve_band(grid, _figure_path(config.output), config.level))
    sys.stdout.write(f"wrote {', '.join(written)}\n")
    return 0


def _cmd_balance_check(args: argparse.Namespace) -> int:
    config = _resolve_config(args, "balance-check")
    dataset = load_csv(config.data, config.outcome, config.treatment, config.covariates)

    ubasis, vbasis, solution = _solve_balance(dataset, config)
    residual = balance_residual(solution.weights, ubasis.matrix, vbasis.matrix)

    lines = ["treatment_term,covariate_term,residual"]
    for i, row_label in enumerate(ubasis.labels):
        for j, col_label in enumerate(vbasis.labels):
            lines.append(f"{row_label},{col_label},{residual[i, j]:.6e}")
    _write_text(config.output, "\n".join(lines) + "\n")

    summary = {
        "max_abs_residual": float(np.abs(residual).max()),
        "weight_min": float(solution.weights.min()),
        "weight_max": float(solution.weights.max()),
        "weight_mean": float(solution.weights.mean()),
        "effective_sample_size": float(solution.ess),
        "dual_iterations": int(solution.iterations),
    }
    if not args.no_figure:
        from . import figures

        figures.weight_histogram(solution.weights, _figure_path(config.output))
    sys.stdout.write(json.dumps(summary, indent=2) + "\n")
    return 0


_DGP_ALIASES = {"1": "dgp1", "2": "dgp2", "dgp1": "dgp1", "dgp2": "dgp2",
                "nlt": "nlt", "nly": "nly"}


def _cmd_simulate(args: argparse.Namespace) -> int:
    preset = _DGP_ALIASES.get(args.dgp)
    if preset is None:
        raise UsageError(f"unknown dgp {args.dgp!r}; use 1, 2, nlt, or nly")
    if args.reps < 2:
        raise UsageError("reps must be at least 2")
    spec = DgpSpec(preset, args.n, args.rho)
    configs = standard_configs(_split_names(args.estimators))

    reports = monte_carlo(spec, configs, reps=args.reps, base_seed=args.seed,
                          jobs=args.jobs)
    _write_text(args.output, "\n".join(report_rows(reports)) + "\n")

    written = [args.output]
    if not args.no_figure:
        from . import figures

        written.append(figures.simulation_bars(reports, _figure_path(args.output)))
    sys.stdout.write(f"wrote {', '.join(written)}\n")
    return 0


# ---------------------------------------------------------------------------
# Parser and entry point


def _add_data_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", help="input CSV path (UTF-8, header row)")
    parser.add_argument("--outcome", help="outcome column name")
    parser.add_argument("--treatment", help="treatment column name")
    parser.add_argument("--covariates", help="comma-separated covariate columns")
    parser.add_argument("--k1", type=int, help="treatment basis terms (default 3)")
    parser.add_argument("--k2-degree", type=int, dest="k2_degree",
                        help="covariate polynomial degree (default 2)")
    parser.add_argument("--interactions", action=argparse.BooleanOptionalAction,
                        default=None, help="include covariate cross terms")
    parser.add_argument("--level", type=float, help="confidence level (default 0.95)")
    parser.add_argument("--balance-tol", type=float, dest="balance_tol",
                        help="dual gradient tolerance (default 1e-9)")
    parser.add_argument("--max-iter", type=int, dest="max_iter",
                        help="iteration cap for the solvers (default 200)")
    parser.add_argument("--output", "-o", help="output file path")
    parser.add_argument("--config", help="JSON config file; flags override its values")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swbal",
        description="Stabilized-weight estimation of causal effects of general treatments.",
    )
    parser.add_argument("--version", action="version", version=f"swbal {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    est = commands.add_parser(
        "estimate", help="fit weighted effect coefficients and write a JSON report")
    _add_data_flags(est)
    est.add_argument("--loss", help="mean, quantile:TAU, or expectile:TAU (default mean)")
    est.add_argument("--link", help="poly:DEGREE or levels:A,B,... (default poly:1)")
    est.add_argument("--variance", choices=("auto", "sandwich", "kernel"),
                     help="variance route (default auto: sandwich when smooth)")
    est.add_argument("--fit-tol", type=float, dest="fit_tol",
                     help="M-fit first-order tolerance (default 1e-7)")
    est.set_defaults(func=_cmd_estimate)

    crv = commands.add_parser(
        "curve", help="fit a dose-response curve and write a CSV grid")
    _add_data_flags(crv)
    crv.add_argument("--points", type=int, help="grid size (default 101)")
    crv.add_argument("--no-figure", action="store_true",
                     help="skip the PNG next to the CSV")
    crv.set_defaults(func=_cmd_curve)

    sim = commands.add_parser(
        "simulate", help="run the Monte Carlo harness and write a CSV table")
    sim.add_argument("--dgp", required=True, help="1, 2, nlt, or nly")
    sim.add_argument("--n", type=int, required=True, help="sample size per replication")
    sim.add_argument("--rho", type=float, default=0.0, help="covariate correlation")
    sim.add_argument("--reps", type=int, required=True, help="number of replications")
    sim.add_argument("--seed", type=int, required=True, help="base RNG seed")
    sim.add_argument("--estimators", default="sw9",
                     help="comma list of presets: sw9, sw15, oracle")
    sim.add_argument("--jobs", type=int, default=1,
                     help="worker processes (capped by SWBAL_THREADS)")
    sim.add_argument("--output", "-o", default="simulation.csv", help="output CSV path")
    sim.add_argument("--no-figure", action="store_true",
                     help="skip the PNG next to the CSV")
    sim.set_defaults(func=_cmd_simulate)

    bal = commands.add_parser(
        "balance-check", help="solve weights and report the balance residual matrix")
    _add_data_flags(bal)
    bal.add_argument("--no-figure", action="store_true",
                     help="skip the PNG next to the CSV")
    bal.set_defaults(func=_cmd_balance_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        return args.func(args)
    except UsageError as exc:
        print(f"E_USAGE: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"E_USAGE: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"E_DATA: {exc}", file=sys.stderr)
        return 3
    except BalanceInfeasibleError as exc:
        print(f"E_BALANCE_INFEASIBLE: {exc}", file=sys.stderr)
        return 4
    except RankDeficientError as exc:
        print(f"E_RANK_DEFICIENT: {exc}", file=sys.stderr)
        return 4
    except NotConvergedError as exc:
        print(f"E_NOT_CONVERGED: {exc}", file=sys.stderr)
        return 4
    except np.linalg.LinAlgError as exc:
        print(f"E_NUMERIC: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
