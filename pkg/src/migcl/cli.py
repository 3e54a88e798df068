"""Command-line interface.

Subcommands: ``simulate``, ``matrices``, ``estimate``, ``battery`` and
``risk``. Options may also come from an INI-style ``key = value`` file given
with ``--config``; its ``[DEFAULT]`` section applies to every subcommand and
a section named after the subcommand overrides it. Explicit flags override
the file. Keys are the long option names with dashes or underscores.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .designs import DesignConfig, design_params
from .estimator import OptimizerConfig, fit
from .experiments import RISK_SEED, risk_measures, run_battery
from .hac import HacConfig, hac_covariance
from .kernel import (GaussHermite, expected_matrix, format_value, horizon2_matrix,
                     horizon_matrices, stationary_distribution, write_matrix_csv)
from .likelihood import build_counts, write_counts_csv
from .params import ModelParams
from .simulate import read_panel_csv, simulate_panel, write_factor_csv, write_panel_csv

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INPUT = 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _int_list(text: str) -> list[int]:
    return [int(x) for x in str(text).replace(";", ",").split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in str(text).replace(";", ",").split(",") if x.strip()]


# option name -> (type, default, help)
_DESIGN_OPTS = {
    "design": (int, 1, "design id 1, 2 or 3"),
    "rho": (float, 0.0, "factor autocorrelation"),
    "growth": (float, 0.05, "per-notch growth rate of volatilities"),
    "thresholds": (_float_list, None, "comma-separated thresholds c_2..c_K"),
    "intercepts": (_float_list, None, "comma-separated intercepts"),
    "rebirth": (_float_list, None, "comma-separated re-entry distribution"),
    "params": (str, None, "JSON parameter file (overrides the design)"),
    "beta_zero": ("flag", False, "set every factor loading to zero"),
}

_COMMANDS = {
    "simulate": dict(_DESIGN_OPTS, **{
        "n": (int, 500, "number of firms"),
        "t": (int, 120, "number of dates"),
        "seed": (int, 0, "base seed"),
        "init": (str, "stationary", "'stationary', a rating, or comma-separated law"),
        "scores": ("flag", False, "write latent scores"),
    }),
    "matrices": dict(_DESIGN_OPTS, **{
        "horizon": (int, 2, "largest horizon to export"),
        "nodes": (int, 64, "quadrature nodes for horizon 2"),
        "paths": (int, 5000, "factor paths for horizons above 2"),
        "seed": (int, RISK_SEED, "seed for factor paths"),
        "unadjusted": ("flag", False, "keep default absorbing"),
    }),
    "estimate": {
        "panel": (str, None, "panel CSV (firm,t,rating)"),
        "k": (int, 8, "number of rating categories"),
        "mode": (str, "cl1", "cl1, cl2, cl12 or two_step"),
        "two_step_counts": (str, "direct", "direct or smoothed"),
        "nodes": (int, 40, "quadrature nodes"),
        "max_iter": (int, 500, "iterations per optimizer run"),
        "gtol": (float, 1e-6, "gradient tolerance"),
        "restarts": (int, 0, "perturbed restarts"),
        "seed": (int, 0, "seed for restarts"),
        "no_hac": ("flag", False, "skip standard errors"),
        "counts": ("flag", False, "also write the transition counts"),
    },
    "battery": dict(_DESIGN_OPTS, **{
        "n": (int, 500, "number of firms"),
        "t": (int, 120, "number of dates"),
        "reps": (int, 25, "replications"),
        "seed": (int, 0, "base seed"),
        "mode": (str, "cl1", "cl1, cl2, cl12 or two_step"),
        "two_step_counts": (str, "direct", "direct or smoothed"),
        "nodes": (int, 40, "quadrature nodes"),
        "risk_paths": (int, 5000, "factor paths for default probabilities (0 skips)"),
        "workers": (int, 1, "worker processes"),
        "save_estimates": ("flag", False, "write per-replication estimates"),
    }),
    "risk": dict(_DESIGN_OPTS, **{
        "horizons": (_int_list, [1, 12, 24, 36], "default-probability horizons"),
        "paths": (int, 5000, "factor paths"),
        "seed": (int, RISK_SEED, "seed for factor paths"),
        "origin": (int, 3, "current rating"),
        "nodes": (int, 64, "quadrature nodes for horizon 2"),
    }),
}
for _opts in _COMMANDS.values():
    _opts["out"] = (str, "results", "output directory")
    _opts["paper_format"] = ("flag", False, "percent with 2 decimals")
for _name in ("params", "beta_zero"):
    _COMMANDS["battery"].pop(_name)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="migcl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in _COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI configuration file ([DEFAULT] and per-command sections)")
        for opt, (typ, _default, help_) in opts.items():
            flag = "--" + opt.replace("_", "-")
            if typ == "flag":
                p.add_argument(flag, dest=opt, action="store_const", const=True, default=None,
                               help=help_)
            else:
                p.add_argument(flag, dest=opt, type=str, default=None, help=help_)
    return parser


def _read_config(path: str | None, command: str) -> dict:
    if not path:
        return {}
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise CliError(f"cannot read config file {path}: {exc.strerror}", EXIT_IO) from None
    except configparser.Error as exc:
        raise CliError(f"malformed config file {path}: {exc}") from None
    values = dict(cp.defaults())
    if cp.has_section(command):
        values.update(cp.items(command))
    return {k.replace("-", "_"): v for k, v in values.items()}


def resolve_options(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags, then convert types."""
    opts = _COMMANDS[args.command]
    file_vals = _read_config(args.config, args.command)
    unknown = set(file_vals) - set(opts)
    if unknown:
        raise CliError(f"unknown option(s) in config file: {', '.join(sorted(unknown))}")
    out = {}
    for opt, (typ, default, _help) in opts.items():
        raw = getattr(args, opt)
        if raw is None:
            raw = file_vals.get(opt)
        if raw is None:
            out[opt] = default
            continue
        try:
            if typ == "flag":
                out[opt] = raw if isinstance(raw, bool) else str(raw).strip().lower() in (
                    "1", "true", "yes", "on")
            else:
                out[opt] = typ(raw)
        except ValueError:
            raise CliError(f"invalid value for --{opt.replace('_', '-')}: {raw!r}") from None
    return out


def _theta_from_options(o: dict) -> ModelParams:
    if o.get("params"):
        try:
            with open(o["params"]) as fh:
                theta = ModelParams.from_dict(json.load(fh))
        except OSError as exc:
            raise CliError(f"cannot read parameter file {o['params']}: {exc.strerror}", EXIT_IO) from None
        except (KeyError, json.JSONDecodeError) as exc:
            raise CliError(f"parameter file does not match the schema: {exc}") from None
    else:
        theta = design_params(_design_config(o))
    if o.get("beta_zero"):
        theta = theta.replace(beta=np.zeros_like(theta.beta))
    return theta


def _design_config(o: dict, **extra) -> DesignConfig:
    kwargs = dict(design=o["design"], rho=o["rho"], growth=o["growth"])
    if o.get("thresholds"):
        kwargs["thresholds"] = tuple(o["thresholds"])
    if o.get("intercepts"):
        kwargs["intercepts"] = tuple(o["intercepts"])
    elif o.get("thresholds"):
        raise CliError("--intercepts must accompany --thresholds")
    if o.get("rebirth"):
        kwargs["rebirth_row"] = tuple(o["rebirth"])
    kwargs.update(extra)
    return DesignConfig(**kwargs)


def _outdir(o: dict) -> Path:
    out = Path(o["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc.strerror}", EXIT_IO) from None
    return out


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_simulate(o: dict) -> None:
    theta = _theta_from_options(o)
    init = o["init"]
    if init != "stationary":
        init = int(init) if "," not in init else _float_list(init)
    panel = simulate_panel(theta, o["n"], o["t"], init=init, seed=o["seed"],
                           keep_scores=o["scores"])
    out = _outdir(o)
    write_panel_csv(panel, out / "panel.csv", include_scores=o["scores"])
    write_factor_csv(panel.factor, out / "factor.csv")
    (out / "params.json").write_text(theta.to_json() + "\n")


def cmd_matrices(o: dict) -> None:
    theta = _theta_from_options(o)
    adjusted = not o["unadjusted"]
    out = _outdir(o)
    pf = o["paper_format"]
    p1 = expected_matrix(theta, adjusted)
    write_matrix_csv(out / "matrices_p1.csv", p1, pf)
    if adjusted:
        pi = stationary_distribution(p1).pi
        with open(out / "matrices_stationary.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["state", "probability"])
            for k, v in enumerate(pi, start=1):
                w.writerow([k, format_value(v, pf)])
    if o["horizon"] >= 2:
        write_matrix_csv(out / "matrices_p2.csv",
                         horizon2_matrix(theta, GaussHermite(o["nodes"]), adjusted), pf)
        write_matrix_csv(out / "matrices_p1_squared.csv", p1 @ p1, pf)
    if o["horizon"] >= 3:
        mats = horizon_matrices(theta, [o["horizon"]], o["paths"], o["seed"], adjusted)
        write_matrix_csv(out / f"matrices_h{o['horizon']}.csv", mats[o["horizon"]], pf)


def cmd_estimate(o: dict) -> None:
    if not o["panel"]:
        raise CliError("--panel is required")
    try:
        panel = read_panel_csv(o["panel"], o["k"])
    except OSError as exc:
        raise CliError(f"cannot read panel file {o['panel']}: {exc.strerror}", EXIT_IO) from None
    counts = build_counts(panel, o["two_step_counts"])
    cfg = OptimizerConfig(max_iter=o["max_iter"], gtol=o["gtol"], restarts=o["restarts"],
                          seed=o["seed"], n_nodes=o["nodes"])
    res = fit(counts, o["mode"], cfg)
    out = _outdir(o)
    if not o["no_hac"]:
        res.covariance = hac_covariance(counts, res, HacConfig(n_nodes=o["nodes"]))
        with open(out / "covariance.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["parameter"] + res.covariance.names)
            for name, row in zip(res.covariance.names, res.covariance.sigma):
                w.writerow([name] + [repr(float(v)) for v in row])
    if o["counts"]:
        write_counts_csv(counts, out / "counts.csv")
    (out / "estimates.json").write_text(res.to_json() + "\n")


def cmd_battery(o: dict) -> None:
    cfg = _design_config(o, n_firms=o["n"], t_len=o["t"], n_replications=o["reps"],
                         seed=o["seed"], mode=o["mode"], two_step_counts=o["two_step_counts"],
                         n_nodes=o["nodes"], risk_paths=o["risk_paths"], workers=o["workers"])
    summary = run_battery(cfg)
    out = _outdir(o)
    summary.write_summary_csv(out / "summary.csv")
    summary.write_tstats_csv(out / "tstats.csv")
    summary.write_risk_csv(out / "risk.csv", o["paper_format"])
    _write_json(out / "battery.json", summary.to_dict())
    if o["save_estimates"]:
        _write_json(out / "estimates.json", {
            "names": summary.names,
            "estimates": summary.estimates.tolist(),
            "se": summary.se.tolist(),
        })


def cmd_risk(o: dict) -> None:
    theta = _theta_from_options(o)
    rm = risk_measures(theta, o["horizons"], o["paths"], o["seed"], o["origin"], o["nodes"])
    out = _outdir(o)
    with open(out / "risk.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["measure", "value"])
        for name, val in rm.as_rows():
            w.writerow([name, format_value(val, o["paper_format"])])


_HANDLERS = {"simulate": cmd_simulate, "matrices": cmd_matrices, "estimate": cmd_estimate,
             "battery": cmd_battery, "risk": cmd_risk}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        opts = resolve_options(args)
        _HANDLERS[args.command](opts)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
