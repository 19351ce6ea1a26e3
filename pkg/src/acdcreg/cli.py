"""Command line front end.

Two groups of subcommands share one executable.  The model commands
(``fit``, ``screen``, ``diagnose``) work directly on a CSV dataset given
through flags.  The study commands (``simulate``, ``recover``, ``path``,
``cv``) read a TOML or JSON configuration file and write delimited
tables next to a metadata record; report-style commands also render a
PNG figure beside their primary output.

Exit codes: 0 on success, 2 for configuration problems (bad flags,
unreadable config or data, invalid parameter combinations), 3 for
numeric failures inside the solvers.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .data import load_csv
from .experiments import (
    SimConfig,
    cross_validate,
    recovery_curve,
    regularization_path,
    simulate,
)
from .population import (
    CANONICAL_EXAMPLES,
    additive_projection_grid,
    canonical_example,
)
from .qp import QpError
from .screening import (
    AcSolver,
    ZERO_COMPONENT_TOL,
    check_deterministic_condition,
    default_lambda,
    residual,
)
from .serialize import (
    condition_record,
    model_record,
    report_record,
    run_metadata,
    write_csv,
    write_dataset_csv,
    write_json,
)
from .univariate import FORM_CURVATURE, FORM_SLOPES, FitError
from . import plots


class ConfigError(Exception):
    """User-facing setup problem: bad config file, flags, or data."""


# ---- shared plumbing -------------------------------------------------------


def _sibling(path, new_ext):
    stem, _ = os.path.splitext(path)
    return stem + new_ext


def _load_dataset(path, response):
    try:
        return load_csv(path, response)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load dataset: {exc}") from None


def _read_config(path):
    try:
        if path.endswith(".toml"):
            with open(path, "rb") as fh:
                return tomllib.load(fh)
        if path.endswith(".json"):
            with open(path, "r", encoding="utf-8") as fh:
                return json.load(fh)
    except (OSError, ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    raise ConfigError(f"config {path}: expected a .toml or .json file")


def _sim_config(raw):
    """Build a SimConfig from the [sim] table; coordinates are 1-based."""
    try:
        table = dict(raw["sim"])
    except (KeyError, TypeError):
        raise ConfigError("config needs a [sim] table") from None
    try:
        relevant = tuple(int(k) - 1 for k in table.pop("relevant"))
        q = table.pop("q", None)
        if q is None:
            q = np.eye(len(relevant))
        return SimConfig(relevant=relevant, Q=np.asarray(q, dtype=float),
                         **table)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad [sim] table: {exc}") from None


def _config_dataset(raw):
    """Dataset from a config: an input CSV if named, else a simulation."""
    if "input" in raw:
        return _load_dataset(raw["input"], raw.get("response", "y"))
    return simulate(_sim_config(raw))


def _need(raw, key):
    if key not in raw:
        raise ConfigError(f"config is missing {key!r}")
    return raw[key]


def _one_based(selected):
    return " ".join(str(k + 1) for k in selected)


# ---- model commands --------------------------------------------------------


def cmd_fit(args):
    ds = _load_dataset(args.input, args.response)
    lam = default_lambda(ds.n, ds.p) if args.lam is None else args.lam
    solver = AcSolver(ds, formulation=args.formulation)
    try:
        model = solver.fit(lam, tol=args.tol, max_cycles=args.max_cycles)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_json(model_record(model), args.output)
    plots.components_figure(model, ds.names, _sibling(args.output, ".png"))
    kept = sum(c.sup_norm > ZERO_COMPONENT_TOL for c in model.components)
    print(f"fit: penalty {lam:g}, {kept} of {ds.p} components nonzero, "
          f"{model.cycles} sweeps -> {args.output}")
    return 0


def cmd_screen(args):
    ds = _load_dataset(args.input, args.response)
    solver = AcSolver(ds, formulation=args.formulation)
    try:
        report = solver.screen(lam=args.lam, threshold=args.threshold,
                               tol=args.tol, max_cycles=args.max_cycles)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_json(report_record(report), args.output)
    plots.screen_figure(report, ds.names, _sibling(args.output, ".png"))
    names = [ds.names[k] for k in report.selected]
    print(f"screen: penalty {report.lam:g}, selected "
          f"{', '.join(names) if names else 'nothing'} -> {args.output}")
    return 0


def cmd_diagnose(args):
    ds = _load_dataset(args.input, args.response)
    try:
        candidates = sorted(int(tok) - 1 for tok in
                            args.candidates.split(",") if tok.strip())
    except ValueError:
        raise ConfigError("--candidates must be a comma-separated list of "
                          "1-based column numbers") from None
    if any(not 0 <= k < ds.p for k in candidates):
        raise ConfigError("--candidates out of range")
    lam = default_lambda(ds.n, ds.p) if args.lam is None else args.lam
    solver = AcSolver(ds)
    try:
        model = solver.fit(lam, coords=candidates, tol=args.tol,
                           max_cycles=args.max_cycles)
        rest = [k for k in range(ds.p) if k not in set(candidates)]
        cond = check_deterministic_condition(
            ds, residual(ds, model), lam, candidate_set=rest)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.variant == "appendix":
        cond = dataclasses.replace(cond, variant="appendix")
    write_json(condition_record(cond), args.output)
    verdict = "holds" if cond.holds() else "fails"
    print(f"diagnose: {args.variant} condition {verdict} at penalty "
          f"{lam:g} for the complement of "
          f"{{{_one_based(candidates)}}} -> {args.output}")
    return 0


# ---- faithfulness lab ------------------------------------------------------


def _example_kwargs(args, name):
    kwargs = {}
    if args.resolution is not None:
        kwargs["resolution"] = args.resolution
    if name in ("gaussian-quadratic", "boundary-flat-mixture"):
        kwargs["alpha"] = args.alpha
        kwargs["b"] = args.b
    if name == "boundary-flat-mixture":
        kwargs["eps"] = args.eps
        kwargs["weight"] = args.weight
    return kwargs


def cmd_faithfulness(args):
    names = list(CANONICAL_EXAMPLES) if args.example == "all" \
        else [args.example]
    rows = []
    results = {}
    meta = {}
    for name in names:
        try:
            f, dens = canonical_example(name, **_example_kwargs(args, name))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        res = additive_projection_grid(f, dens)
        results[name] = res
        meta[name] = {
            "mu_star": float(res.mu_star),
            "iterations": int(res.iterations),
            "residual_norm": float(res.residual_norm),
            "converged": bool(res.converged),
        }
        for k, comp in enumerate(res.components):
            for x, v in zip(comp.axes[0], comp.values):
                rows.append([name, k + 1, float(x), float(v)])
    write_csv(args.output, ["example", "coordinate", "x", "component"], rows)
    write_json(run_metadata(config=meta), _sibling(args.output, ".meta.json"))
    plots.projection_figure(results, _sibling(args.output, ".png"))
    print(f"faithfulness: {len(names)} example(s), "
          f"{len(rows)} table rows -> {args.output}")
    return 0


# ---- study commands --------------------------------------------------------


def cmd_simulate(args):
    raw = _read_config(args.config)
    cfg = _sim_config(raw)
    ds = simulate(cfg)
    write_dataset_csv(ds, args.output)
    config = raw | {"command": "simulate"}
    write_json(run_metadata(config=config, seed=cfg.seed),
               _sibling(args.output, ".meta.json"))
    print(f"simulate: n={ds.n}, p={ds.p} -> {args.output}")
    return 0


def cmd_recover(args):
    raw = _read_config(args.config)
    base = _sim_config(raw)
    n_grid = [int(n) for n in _need(raw, "n_grid")]
    trials = int(_need(raw, "trials"))
    threshold = float(raw.get("threshold", ZERO_COMPONENT_TOL))
    try:
        table = recovery_curve(base, n_grid, trials, threshold=threshold)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_csv(args.output, ["n", "p", "trials", "rate"],
              [[row.n, row.p, row.trials, float(row.rate)]
               for row in table.rows])
    config = raw | {"command": "recover"}
    write_json(run_metadata(config=config, seed=base.seed),
               _sibling(args.output, ".meta.json"))
    plots.recovery_figure(table, _sibling(args.output, ".png"))
    rates = ", ".join(f"{row.n}: {row.rate:.2f}" for row in table.rows)
    print(f"recover: {rates} -> {args.output}")
    return 0


def cmd_path(args):
    raw = _read_config(args.config)
    ds = _config_dataset(raw)
    lambdas = [float(v) for v in _need(raw, "lambdas")]
    threshold = float(raw.get("threshold", ZERO_COMPONENT_TOL))
    try:
        result = regularization_path(ds, lambdas, threshold=threshold)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    header = ["lambda", "norm_fraction", "selected_size", "selected"] \
        + [f"norm_{name}" for name in ds.names]
    rows = []
    for i in range(result.lambdas.shape[0]):
        rows.append([float(result.lambdas[i]),
                     float(result.norm_fractions[i]),
                     len(result.selected[i]),
                     _one_based(result.selected[i])]
                    + [float(v) for v in result.ac_norms[i]])
    write_csv(args.output, header, rows)
    config = raw | {"command": "path"}
    meta = run_metadata(config=config)
    meta["size_violations"] = [int(i) for i in result.size_violations]
    write_json(meta, _sibling(args.output, ".meta.json"))
    plots.path_figure(result, ds.names, _sibling(args.output, ".png"))
    print(f"path: {len(lambdas)} penalties, "
          f"{len(result.size_violations)} size violations -> {args.output}")
    return 0


def cmd_cv(args):
    raw = _read_config(args.config)
    ds = _config_dataset(raw)
    lambdas = [float(v) for v in _need(raw, "lambdas")]
    folds = int(_need(raw, "folds"))
    repeats = int(raw.get("repeats", 1))
    seed = int(raw.get("seed", 0))
    threshold = float(raw.get("threshold", ZERO_COMPONENT_TOL))
    try:
        result = cross_validate(ds, folds, lambdas, repeats=repeats,
                                seed=seed, threshold=threshold)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_csv(args.output, ["lambda", "mse_mean", "mse_sd"],
              [[float(result.lambdas[i]), float(result.mse_mean[i]),
                float(result.mse_sd[i])]
               for i in range(result.lambdas.shape[0])])
    config = raw | {"command": "cv"}
    meta = run_metadata(config=config, seed=seed)
    meta["evaluations"] = result.evaluations
    meta["best_lambda"] = result.best_lambda
    write_json(meta, _sibling(args.output, ".meta.json"))
    plots.cv_figure(result, _sibling(args.output, ".png"))
    print(f"cv: best penalty {result.best_lambda:g} "
          f"(mean MSE {result.mse_mean.min():.6g}) -> {args.output}")
    return 0


# ---- argument plumbing -----------------------------------------------------


def _add_dataset_flags(sub):
    sub.add_argument("--input", required=True, help="dataset CSV path")
    sub.add_argument("--response", default="y",
                     help="response column name (default y)")


def _add_fit_flags(sub):
    sub.add_argument("--lambda", dest="lam", type=float, default=None,
                     help="penalty level (default: size-matched)")
    sub.add_argument("--tol", type=float, default=1e-7,
                     help="sweep movement tolerance")
    sub.add_argument("--max-cycles", type=int, default=200,
                     help="cap on descent sweeps")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="acdcreg",
        description="Variable screening with shape-constrained additive "
                    "models.")
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("fit", help="fit the additive convex model")
    _add_dataset_flags(sub)
    _add_fit_flags(sub)
    sub.add_argument("--formulation", choices=[FORM_CURVATURE, FORM_SLOPES],
                     default=FORM_CURVATURE)
    sub.add_argument("--output", required=True, help="model JSON path")
    sub.set_defaults(func=cmd_fit)

    sub = subs.add_parser("screen", help="two-stage variable screen")
    _add_dataset_flags(sub)
    _add_fit_flags(sub)
    sub.add_argument("--threshold", type=float, default=ZERO_COMPONENT_TOL,
                     help="selection threshold on component sup-norms")
    sub.add_argument("--formulation", choices=[FORM_CURVATURE, FORM_SLOPES],
                     default=FORM_CURVATURE)
    sub.add_argument("--output", required=True, help="report JSON path")
    sub.set_defaults(func=cmd_screen)

    sub = subs.add_parser("diagnose",
                          help="residual suffix-sum screening certificate")
    _add_dataset_flags(sub)
    _add_fit_flags(sub)
    sub.add_argument("--candidates", required=True,
                     help="1-based column numbers of the candidate support, "
                          "comma separated")
    sub.add_argument("--variant", choices=["main", "appendix"],
                     default="main")
    sub.add_argument("--output", required=True, help="diagnostic JSON path")
    sub.set_defaults(func=cmd_diagnose)

    sub = subs.add_parser("faithfulness",
                          help="population projections of the example "
                               "catalog")
    sub.add_argument("--example", default="all",
                     choices=list(CANONICAL_EXAMPLES) + ["all"])
    sub.add_argument("--resolution", type=int, default=None)
    sub.add_argument("--alpha", type=float, default=-0.5)
    sub.add_argument("--b", type=float, default=5.0)
    sub.add_argument("--eps", type=float, default=0.3)
    sub.add_argument("--weight", type=float, default=1e-4)
    sub.add_argument("--output", required=True, help="component table CSV")
    sub.set_defaults(func=cmd_faithfulness)

    for name, func, helptext in [
            ("simulate", cmd_simulate, "draw one dataset from a config"),
            ("recover", cmd_recover, "recovery rates over a size grid"),
            ("path", cmd_path, "selection along a penalty grid"),
            ("cv", cmd_cv, "cross-validated error per penalty")]:
        sub = subs.add_parser(name, help=helptext)
        sub.add_argument("--config", required=True,
                         help="TOML or JSON configuration file")
        sub.add_argument("--output", required=True,
                         help="primary output path (CSV)")
        sub.set_defaults(func=func)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FitError, QpError, RuntimeError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
