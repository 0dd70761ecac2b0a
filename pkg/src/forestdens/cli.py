"""Command-line front end: fit on user data, or run the Monte Carlo suite.

Both commands read a single JSON configuration document (unknown keys are
rejected), write fixed-schema CSV outputs plus a JSON provenance block with
every resolved setting, and exit with 0 on success, 1 on input errors, and
2 on estimation failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, estimator, simbench
from .errors import EstimationError
from .forest import Box, Dataset, ForestConfig

__all__ = ["main", "cmd_fit", "cmd_mc", "UsageError"]

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_ESTIMATION = 2

_FOREST_DEFAULTS = {
    "subsample_size": 200,
    "n_trees": 2240,
    "basis_order": 8,
    "min_child": 10,
    "min_fraction": 0.05,
    "scheme": "theta",
    "n_grid": 32,
    "initial_parent": None,
}

_FIT_DEFAULTS = {
    "input": None,
    "query_x": None,
    "y_grid": {"start": 0.05, "stop": 0.95, "num": 19},
    "ci_level": 0.95,
    "se": "auto",
    "seed": 0,
    "workers": 1,
    "forest": _FOREST_DEFAULTS,
}

_MC_DEFAULTS = {
    "design": None,
    "n": 1000,
    "reps": 100,
    "design_points": list(simbench.DEFAULT_DESIGN_POINTS),
    "ci_level": 0.95,
    "mise_grid_points": 141,
    "se": "auto",
    "seed": 0,
    "workers": 1,
    "forest": dict(_FOREST_DEFAULTS, initial_parent=[[0.25] * 4, [0.75] * 4]),
}


class UsageError(Exception):
    """Invalid flags, config, or input data; maps to exit code 1."""


def _merge_config(defaults: dict, user: dict, context: str = "") -> dict:
    out = dict(defaults)
    for key, value in user.items():
        if key not in defaults:
            raise UsageError(f"unknown config key {context + key!r}")
        if isinstance(defaults[key], dict) and isinstance(value, dict) and key != "y_grid":
            out[key] = _merge_config(defaults[key], value, context=f"{key}.")
        else:
            out[key] = value
    return out


def _load_config(path: str, defaults: dict) -> dict:
    try:
        with open(path) as fh:
            user = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return _merge_config(defaults, user)


def _read_input_csv(path: str) -> Dataset:
    """Read the fit input: header row, outcome in the first column."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise UsageError(f"cannot read input {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise UsageError(f"input {path} is empty") from None
        if len(header) < 2:
            raise UsageError(f"input {path} needs an outcome and at least one covariate column")
        width = len(header)
        ys, xs = [], []
        for rownum, row in enumerate(reader, start=2):
            if len(row) != width:
                raise UsageError(f"input {path} row {rownum}: expected {width} fields")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise UsageError(f"input {path} row {rownum}: non-numeric value") from None
            if not 0.0 <= vals[0] <= 1.0:
                raise UsageError(
                    f"input {path} row {rownum}: outcome {vals[0]} outside [0, 1]")
            ys.append(vals[0])
            xs.append(vals[1:])
    if not ys:
        raise UsageError(f"input {path} has no data rows")
    return Dataset(np.array(ys), np.array(xs))


def _build_forest_config(fcfg: dict, seed: int, data: Dataset = None) -> ForestConfig:
    parent = fcfg["initial_parent"]
    if parent is None:
        if data is None:
            raise UsageError("initial_parent must be given when no data bounds exist")
        lo = data.x.min(axis=0)
        hi = data.x.max(axis=0)
        pad = 0.01 * (hi - lo)
        parent = Box(lo + pad, hi - pad)
    else:
        parent = np.asarray(parent, dtype=float)
    try:
        return ForestConfig(
            subsample_size=int(fcfg["subsample_size"]),
            n_trees=int(fcfg["n_trees"]),
            basis_order=int(fcfg["basis_order"]),
            initial_parent=parent,
            min_child=int(fcfg["min_child"]),
            min_fraction=float(fcfg["min_fraction"]),
            scheme=str(fcfg["scheme"]),
            n_grid=int(fcfg["n_grid"]),
            seed=seed,
        )
    except ValueError as exc:
        raise UsageError(f"invalid forest config: {exc}") from exc


def _resolved_forest_dict(cfg: ForestConfig) -> dict:
    return {
        "subsample_size": cfg.subsample_size,
        "n_trees": cfg.n_trees,
        "basis_order": cfg.basis_order,
        "min_child": cfg.min_child,
        "min_fraction": cfg.min_fraction,
        "scheme": cfg.scheme,
        "n_grid": cfg.n_grid,
        "initial_parent": [cfg.initial_parent.lower.tolist(),
                           cfg.initial_parent.upper.tolist()],
        "split_dim_law": "poisson5",
    }


def _provenance(command: str, resolved: dict) -> dict:
    return {
        "command": command,
        "config": resolved,
        "versions": {
            "forestdens": __version__,
            "numpy": np.__version__,
            "python": ".".join(map(str, sys.version_info[:3])),
        },
    }


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _se_arg(se):
    if se is None or se == "auto":
        return se
    if isinstance(se, dict):
        extra = set(se) - {"n_sigma", "d_sigma"}
        if extra:
            raise UsageError(f"unknown se keys {sorted(extra)}")
        return int(se["n_sigma"]), int(se["d_sigma"])
    raise UsageError("se must be null, \"auto\", or {n_sigma, d_sigma}")


def _y_grid(spec) -> np.ndarray:
    if isinstance(spec, dict):
        extra = set(spec) - {"start", "stop", "num"}
        if extra:
            raise UsageError(f"unknown y_grid keys {sorted(extra)}")
        grid = np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
    else:
        grid = np.asarray(spec, dtype=float)
    if grid.size == 0 or np.any(grid < 0.0) or np.any(grid > 1.0):
        raise UsageError("y_grid must be a nonempty grid inside [0, 1]")
    return grid


def cmd_fit(config_path: str, seed=None, workers=None, out_dir: str = ".") -> int:
    """Fit on a user CSV and write density, SE, and CI columns over a y grid."""
    cfg = _load_config(config_path, _FIT_DEFAULTS)
    if seed is not None:
        cfg["seed"] = seed
    if workers is not None:
        cfg["workers"] = workers
    if cfg["input"] is None:
        raise UsageError("config key 'input' is required for fit")
    if cfg["query_x"] is None:
        raise UsageError("config key 'query_x' is required for fit")
    data = _read_input_csv(cfg["input"])
    query_x = np.asarray(cfg["query_x"], dtype=float)
    if query_x.size != data.dim:
        raise UsageError(
            f"query_x has {query_x.size} coordinates but the input has {data.dim}")
    fcfg = _build_forest_config(cfg["forest"], int(cfg["seed"]), data)
    grid = _y_grid(cfg["y_grid"])
    se_params = estimator.resolve_se_params(_se_arg(cfg["se"]), fcfg, data.n)
    level = float(cfg["ci_level"])

    try:
        fitted = estimator.fit(data, query_x, fcfg, se_params=se_params,
                               workers=int(cfg["workers"]))
        rows = []
        for y in grid:
            dens = estimator.pdf(fitted, float(y))
            if se_params is not None:
                se = estimator.std_error(fitted, float(y))
                lo_ci, hi_ci = estimator.confidence_interval(fitted, float(y), level)
                rows.append([repr(float(y)), repr(dens), repr(se),
                             repr(lo_ci), repr(hi_ci)])
            else:
                rows.append([repr(float(y)), repr(dens), "", "", ""])
    except EstimationError as exc:
        print(f"estimation failed during fit: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_ESTIMATION
    except ValueError as exc:
        raise UsageError(f"invalid fit configuration: {exc}") from exc

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "fit.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "pdf", "se", "ci_lo", "ci_hi"])
        writer.writerows(rows)
    resolved = dict(cfg, forest=_resolved_forest_dict(fcfg),
                    y_grid=grid.tolist(), se=_se_repr(se_params))
    _write_json(out / "fit_provenance.json", _provenance("fit", resolved))
    return EXIT_OK


def _se_repr(se_params):
    if se_params is None:
        return None
    if se_params == "auto":
        return "auto"
    return {"n_sigma": se_params[0], "d_sigma": se_params[1]}


def cmd_mc(config_path: str, seed=None, workers=None, out_dir: str = ".") -> int:
    """Run the Monte Carlo benchmark and write the report CSV and JSON summary."""
    cfg = _load_config(config_path, _MC_DEFAULTS)
    if seed is not None:
        cfg["seed"] = seed
    if workers is not None:
        cfg["workers"] = workers
    design = cfg["design"]
    if design not in simbench.DESIGNS:
        raise UsageError(f"config key 'design' must be one of {simbench.DESIGNS}")
    fcfg = _build_forest_config(cfg["forest"], int(cfg["seed"]))
    se_params = estimator.resolve_se_params(_se_arg(cfg["se"]), fcfg, int(cfg["n"]))

    try:
        report = simbench.run_mc(
            design, int(cfg["n"]), int(cfg["reps"]), fcfg, se_params,
            design_points=np.asarray(cfg["design_points"], dtype=float),
            workers=int(cfg["workers"]),
            mise_grid_points=int(cfg["mise_grid_points"]),
            ci_level=float(cfg["ci_level"]),
        )
    except EstimationError as exc:
        print(f"estimation failed during mc: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_ESTIMATION
    except ValueError as exc:
        raise UsageError(f"invalid mc configuration: {exc}") from exc

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    simbench.write_report_csv(report, out / "mc_report.csv")
    resolved = dict(cfg, forest=_resolved_forest_dict(fcfg), se=_se_repr(se_params))
    payload = _provenance("mc", resolved)
    payload["report"] = simbench.report_to_dict(report)
    _write_json(out / "mc_report.json", payload)
    print(f"mc completed: {report.completed}/{report.reps} replications in "
          f"{report.runtime_seconds:.1f}s", file=sys.stderr)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="forestdens",
                     description="Conditional density estimation with forest weights")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("fit", "fit a conditional density on a CSV sample"),
                           ("mc", "run a Monte Carlo benchmark design")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workers", type=int, default=None, help="worker threads")
        p.add_argument("--out", default=".", help="output directory")
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        if args.command == "fit":
            return cmd_fit(args.config, args.seed, args.workers, args.out)
        return cmd_mc(args.config, args.seed, args.workers, args.out)
    except UsageError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
