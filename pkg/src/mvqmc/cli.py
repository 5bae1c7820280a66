"""Command-line front end.

Every subcommand reads its settings from, in increasing priority: built-in
defaults, a JSON ``--config`` document, ``MVQMC_<KEY>`` environment
variables, and explicit flags. Exit codes: 0 success, 2 configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import harness
from .problem import DomainError, get_model, model_names
from .schemes import NumericalError, SCHEMES, get_scheme, estimate_weak_order
from .solvers import (EmulatedRunParams, _gamma_field, check_perturbation_bound, experiment_params,
                      run_emulated, run_particle, theoretical_params)

log = logging.getLogger("mvqmc")

ENV_PREFIX = "MVQMC_"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class ConfigError(ValueError):
    pass


RUN_DEFAULTS = {
    "model": "shimizu_yamada",
    "method": "emulated",
    "eps_aux": 1 / 16,
    "N": 100_000,
    "n_shot": 30,
    "seed": 0,
    "scheme": "sri1w1",
    "qmci_mode": "mle",
    "T": 2.0,
    "x0": 1.0,
    "h_I": None,
    "h_II": None,
    "M_G": None,
    "clip_center_decay": -1.0,
    "clip_width_sigmas": 5.0,
    "h": 0.01,
    "workers": 1,
    "out": "out",
}

SWEEP_DEFAULTS = {**asdict(harness.SweepConfig()), "out": "sweep_out"}
del SWEEP_DEFAULTS["out_dir"]

WEAK_DEFAULTS = {
    "model": "ornstein_uhlenbeck",
    "scheme": "sri1w1",
    "f": "x2",
    "h_list": [0.2, 0.1, 0.05],
    "n_paths": 1_000_000,
    "seed": 0,
    "T": 1.0,
    "x0": 1.0,
    "method": "coupled",
    "out": "out",
}

LEMMA_DEFAULTS = {
    "model": "shimizu_yamada",
    "scheme": "sri1w1",
    "delta": [0.01, 0.05],
    "t": [0.25, 0.5],
    "L": 1.0,
    "n_paths": 1_000_000,
    "h": 0.01,
    "seed": 0,
    "T": 2.0,
    "x0": 1.0,
    "out": "out",
}

PARAMS_DEFAULTS = {
    "epsilon": 0.06,
    "eta": 0.05,
    "U": 2.0,
    "kappa_prime": 1.0,
    "T": 1.0,
    "p": 2.0,
    "K": 1,
    "m": 1,
    "d": 1,
    "model": None,
    "seed": None,
    "scheme": None,
    "out": None,
}


# ---------------------------------------------------------------------------
# configuration


def _coerce(raw: str, default):
    """Parse an environment string in the type of ``default``."""
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot read {raw!r} as a boolean")
    if isinstance(default, str):
        return raw
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        raise ConfigError(f"cannot parse {raw!r}") from None


def load_config(defaults: dict, path=None, env=None, overrides=None) -> dict:
    cfg = dict(defaults)
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(doc)
    env = os.environ if env is None else env
    for key in defaults:
        name = ENV_PREFIX + key.upper()
        if name in env:
            cfg[key] = _coerce(env[name], defaults[key])
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    return cfg


def _overrides(args) -> dict:
    keys = ("seed", "scheme", "model", "out", "workers", "N", "eps_aux", "method", "jobs", "repetitions")
    return {k: getattr(args, k, None) for k in keys}


def _check_common(cfg: dict) -> None:
    if cfg.get("model") is not None and cfg["model"] not in model_names():
        raise ConfigError(f"unknown model {cfg['model']!r}; available: {list(model_names())}")
    if cfg.get("scheme") is not None and cfg["scheme"] not in SCHEMES:
        raise ConfigError(f"unknown scheme {cfg['scheme']!r}; available: {sorted(SCHEMES)}")


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def build_run_params(cfg: dict) -> EmulatedRunParams:
    base = experiment_params(cfg["eps_aux"], T=cfg["T"], x0=cfg["x0"], N=cfg["N"], n_shot=cfg["n_shot"],
                             seed=cfg["seed"], scheme=cfg["scheme"],
                             clip_center_decay=cfg["clip_center_decay"],
                             clip_width_sigmas=cfg["clip_width_sigmas"], qmci_mode=cfg["qmci_mode"])
    changes = {k: cfg[k] for k in ("h_I", "h_II", "M_G") if cfg.get(k) is not None}
    if not changes:
        return base
    return EmulatedRunParams(**{**asdict(base), **changes})


def cmd_run(cfg: dict) -> dict:
    """One run, persisted as ``run.json`` in the output directory."""
    _check_common(cfg)
    problem = get_model(cfg["model"], x0=cfg["x0"], T=cfg["T"])
    if cfg["method"] == "emulated":
        params = build_run_params(cfg)
        record = run_emulated(problem, params, workers=cfg["workers"]).to_json()
    elif cfg["method"] == "particle":
        get_scheme(cfg["scheme"])
        start = time.perf_counter()
        estimate = run_particle(problem, cfg["N"], cfg["h"], cfg["seed"], workers=cfg["workers"])
        record = {
            "model": problem.name,
            "method": "particle",
            "params": {"N": cfg["N"], "h": cfg["h"], "seed": cfg["seed"], "scheme": "euler"},
            "seed": cfg["seed"],
            "scheme": "euler",
            "estimate": estimate,
            "exact": problem.exact_terminal,
            "wall_ms": (time.perf_counter() - start) * 1e3,
        }
    else:
        raise ConfigError(f"unknown method {cfg['method']!r}; use 'emulated' or 'particle'")
    path = _out_dir(cfg) / "run.json"
    _write_json(path, record)
    err = "" if record["exact"] is None else f" (exact {record['exact']:.6g})"
    print(f"estimate {record['estimate']:.6g}{err} -> {path}")
    return record


def cmd_sweep(cfg: dict) -> list:
    _check_common(cfg)
    out = _out_dir(cfg)
    fields = {k: v for k, v in cfg.items() if k != "out"}
    try:
        sweep = harness.SweepConfig(out_dir=str(out), **fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    rows, records = harness.run_sweep(sweep)
    harness.write_sweep_csv(rows, out / "sweep.csv")
    summary = harness.sweep_summary(rows)
    _write_json(out / "summary.json", summary)
    for kind in ("rmse_vs_eps", "queries_vs_error"):
        try:
            harness.emit_plot_data(rows, kind, out)
        except ValueError as exc:
            log.warning("no %s plot data: %s", kind, exc)
    first = next((r for recs in records for r in recs if r is not None), None)
    problem = get_model(sweep.model, x0=sweep.x0, T=sweep.T)
    if first is not None:
        # moment trajectory from the smallest eps that produced a run
        last = next(r for recs in reversed(records) for r in recs if r is not None)
        harness.emit_plot_data(last, "gamma_vs_t", out, reference=problem.exact_gamma)
    if sweep.save_runs:
        for q, recs in enumerate(records):
            for r, rec in enumerate(recs):
                if rec is not None:
                    (out / f"run_q{q}_r{r}.json").write_text(rec.dumps() + "\n")
    for row in rows:
        flag = "  FLAGGED" if row.flagged else ""
        print(f"eps={row.eps:<10.6g} rmse={row.rmse:.4g} queries={row.mean_queries:.4g} "
              f"runs={row.n_runs}{flag}")
    if "rmse_vs_eps" in summary:
        print(f"slope rmse~eps: {summary['rmse_vs_eps']['slope']:.3f}; "
              f"slope queries~rmse: {summary['queries_vs_error']['slope']:.3f}")
    return rows


_FUNCTIONALS = {
    "x": lambda x: x[:, 0],
    "x2": lambda x: x[:, 0] ** 2,
}


def _ou_moment(name: str, x0: float, T: float) -> float:
    mean = x0 * math.exp(-T)
    if name == "x":
        return mean
    return mean**2 + 0.5 * (1 - math.exp(-2 * T))


def cmd_weak_order(cfg: dict) -> dict:
    _check_common(cfg)
    if cfg["model"] != "ornstein_uhlenbeck":
        raise ConfigError("weak-order needs analytic moments; only 'ornstein_uhlenbeck' is supported")
    if cfg["f"] not in _FUNCTIONALS:
        raise ConfigError(f"f must be one of {sorted(_FUNCTIONALS)}")
    problem = get_model(cfg["model"], x0=cfg["x0"], T=cfg["T"])
    fld = _gamma_field(problem, problem.exact_gamma)
    exact = _ou_moment(cfg["f"], cfg["x0"], cfg["T"])
    try:
        res = estimate_weak_order(get_scheme(cfg["scheme"]), fld, _FUNCTIONALS[cfg["f"]], exact, cfg["h_list"],
                                  cfg["n_paths"], cfg["seed"], x0=problem.x0, T=cfg["T"], method=cfg["method"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = asdict(res)
    _write_json(_out_dir(cfg) / "weak_order.json", out)
    print(f"{cfg['scheme']}: slope {res.slope:.3f} (errors {[f'{e:.3g}' for e in res.errors]})")
    return out


def cmd_check_lemma1(cfg: dict) -> list:
    _check_common(cfg)
    problem = get_model(cfg["model"], x0=cfg["x0"], T=cfg["T"])
    deltas = np.atleast_1d(cfg["delta"]).tolist()
    times = np.atleast_1d(cfg["t"]).tolist()
    results = []
    for delta in deltas:
        for t in times:
            try:
                chk = check_perturbation_bound(problem, delta, None, _FUNCTIONALS["x"], cfg["L"], t,
                                               cfg["n_paths"], cfg["h"], cfg["seed"], scheme=cfg["scheme"])
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            results.append({"delta": delta, "t": t, **asdict(chk)})
            print(f"delta={delta:g} t={t:g}: |diff|={chk.lhs:.4g} bound={chk.rhs:.4g} holds={chk.holds}")
    _write_json(_out_dir(cfg) / "lemma1.json", results)
    return results


def cmd_params(cfg: dict) -> dict:
    keys = ("epsilon", "eta", "U", "kappa_prime", "T", "p", "K", "m", "d")
    try:
        res = asdict(theoretical_params(**{k: cfg[k] for k in keys}))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(json.dumps(res, indent=1))
    if cfg.get("out"):
        _write_json(_out_dir(cfg) / "params.json", res)
    return res


COMMANDS = {
    "run": (cmd_run, RUN_DEFAULTS),
    "sweep": (cmd_sweep, SWEEP_DEFAULTS),
    "weak-order": (cmd_weak_order, WEAK_DEFAULTS),
    "check-lemma1": (cmd_check_lemma1, LEMMA_DEFAULTS),
    "params": (cmd_params, PARAMS_DEFAULTS),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON document with settings")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--scheme", help=f"one of {sorted(SCHEMES)}")
    common.add_argument("--model", help=f"one of {list(model_names())}")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mvqmc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="one emulated or particle run")
    run.add_argument("--method", choices=["emulated", "particle"])
    run.add_argument("--eps", dest="eps_aux", type=float)
    run.add_argument("--N", type=int)
    run.add_argument("--workers", type=int)
    sweep = sub.add_parser("sweep", parents=[common], help="RMSE and queries over a list of eps values")
    sweep.add_argument("--repetitions", type=int)
    sweep.add_argument("--N", type=int)
    sweep.add_argument("--jobs", type=int)
    sub.add_parser("weak-order", parents=[common], help="fit the weak order of a scheme")
    sub.add_parser("check-lemma1", parents=[common], help="perturbation bound check")
    sub.add_parser("params", parents=[common], help="print the theoretical parameter set")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func, defaults = COMMANDS[args.command]
    try:
        overrides = {k: v for k, v in _overrides(args).items() if k in defaults}
        cfg = load_config(defaults, args.config, overrides=overrides)
        func(cfg)
    except (NumericalError, ArithmeticError) as exc:
        step = getattr(exc, "step", None)
        where = f" at step {step}" if step is not None else ""
        print(f"error: numerical failure{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, DomainError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
