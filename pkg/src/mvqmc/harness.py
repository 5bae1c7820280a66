"""Sweeps over eps_aux, log-log fits, CSV and plot-data files."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .problem import get_model
from .rng import derive_seed
from .solvers import RunRecord, experiment_params, run_emulated

log = logging.getLogger(__name__)

CSV_DIGITS = 12


def round_sig(x: float, digits: int = CSV_DIGITS) -> float:
    return float(f"{x:.{digits}g}")


@dataclass
class SweepConfig:
    model: str = "shimizu_yamada"
    eps_list: list = field(default_factory=lambda: [1 / 2, 1 / 4, 1 / 8, 1 / 16, 1 / 32])
    repetitions: int = 10
    N: int = 100_000
    seed_base: int = 2024
    scheme: str = "sri1w1"
    out_dir: str = "sweep_out"
    T: float = 2.0
    x0: float = 1.0
    n_shot: int = 30
    clip_center_decay: float = -1.0
    clip_width_sigmas: float = 5.0
    qmci_mode: str = "mle"
    jobs: int = 1
    save_runs: bool = False

    def __post_init__(self):
        if not self.eps_list:
            raise ValueError("eps_list must be non-empty")
        if any(not 0 < e <= 1 for e in self.eps_list):
            raise ValueError(f"eps values must lie in (0, 1], got {self.eps_list}")
        if self.repetitions < 2:
            raise ValueError("repetitions must be >= 2 for an RMSE")
        if self.N < 1:
            raise ValueError("N must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown sweep config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class SweepRow:
    eps: float
    rmse: float
    mean_queries: float
    mean_wall_ms: float
    n_runs: int
    n_failed: int = 0

    @property
    def flagged(self) -> bool:
        return self.n_failed > 0


def _cell(args):
    cfg, q, r, eps = args
    seed = derive_seed(cfg.seed_base, q, r)
    problem = get_model(cfg.model, x0=cfg.x0, T=cfg.T)
    params = experiment_params(eps, T=cfg.T, x0=cfg.x0, N=cfg.N, n_shot=cfg.n_shot, seed=seed,
                               scheme=cfg.scheme, clip_center_decay=cfg.clip_center_decay,
                               clip_width_sigmas=cfg.clip_width_sigmas, qmci_mode=cfg.qmci_mode)
    try:
        return q, r, run_emulated(problem, params), None
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        return q, r, None, f"{type(exc).__name__}: {exc}"


def run_sweep(cfg: SweepConfig) -> tuple:
    """All (eps, repetition) cells; returns (rows, records) with eps descending.

    ``records[q][r]`` is the RunRecord of cell (q, r) or None when it failed.
    """
    eps_sorted = sorted(cfg.eps_list, reverse=True)
    cells = [(cfg, q, r, eps) for q, eps in enumerate(eps_sorted) for r in range(cfg.repetitions)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_cell, cells))
    else:
        results = [_cell(c) for c in cells]
    exact = get_model(cfg.model, x0=cfg.x0, T=cfg.T).exact_terminal
    if exact is None:
        raise ValueError(f"model {cfg.model!r} has no closed-form terminal value")
    records = [[None] * cfg.repetitions for _ in eps_sorted]
    for q, r, rec, err in results:
        if err is not None:
            log.warning("eps=%g run %d failed: %s", eps_sorted[q], r, err)
        records[q][r] = rec
    rows = [_row(eps, recs, exact) for eps, recs in zip(eps_sorted, records)]
    return rows, records


def _row(eps: float, recs: Sequence[Optional[RunRecord]], exact: float) -> SweepRow:
    ok = [r for r in recs if r is not None]
    failed = len(recs) - len(ok)
    if len(ok) < 2:
        return SweepRow(eps, math.nan, math.nan, math.nan, len(ok), failed)
    est = np.array([r.terminal_estimate for r in ok])
    rmse = math.sqrt(float(np.mean((est - exact) ** 2)))
    return SweepRow(
        eps=round_sig(eps),
        rmse=round_sig(rmse),
        mean_queries=round_sig(float(np.mean([r.total_oracle_queries for r in ok]))),
        mean_wall_ms=round_sig(float(np.mean([r.wall_ms for r in ok]))),
        n_runs=len(ok),
        n_failed=failed,
    )


def write_sweep_csv(rows: Sequence[SweepRow], path) -> None:
    names = [f.name for f in fields(SweepRow)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in rows:
            w.writerow([_fmt(getattr(row, n)) for n in names])


def read_sweep_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [SweepRow(eps=float(d["eps"]), rmse=float(d["rmse"]), mean_queries=float(d["mean_queries"]),
                         mean_wall_ms=float(d["mean_wall_ms"]), n_runs=int(d["n_runs"]),
                         n_failed=int(d["n_failed"])) for d in reader]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.{CSV_DIGITS}g}"


# ---------------------------------------------------------------------------
# fitting


def fit_loglog_slope(points, model: str = "power") -> dict:
    """Least squares of log y on log x.

    ``model="power"`` fits slope and intercept. ``"inverse-square"`` and
    ``"unit-slope"`` fix the slope at -2 and 1 and fit the intercept only;
    ``a`` is exp(intercept), the prefactor in y = a x^slope.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise ValueError("need at least two (x, y) points")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("all coordinates must be positive and finite")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    if model == "power":
        slope, intercept = np.polyfit(lx, ly, 1)
    elif model in ("inverse-square", "unit-slope"):
        slope = -2.0 if model == "inverse-square" else 1.0
        intercept = float(np.mean(ly - slope * lx))
    else:
        raise ValueError(f"unknown model {model!r}")
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(slope), "intercept": float(intercept), "a": math.exp(intercept), "r2": r2}


# ---------------------------------------------------------------------------
# plot data


def _write_series(path: Path, xy) -> None:
    with open(path, "w") as fh:
        for x, y in xy:
            fh.write(f"{x:.{CSV_DIGITS}g} {y:.{CSV_DIGITS}g}\n")


def emit_plot_data(rows, kind: str, out_dir, reference=None, component: int = 1) -> list:
    """Write a two-column data series and its companion line; returns the paths.

    ``rows`` is a list of SweepRow for "rmse_vs_eps" / "queries_vs_error" and
    a RunRecord for "gamma_vs_t" (``reference(t)`` supplies the exact gamma
    vector for the companion series).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if kind == "gamma_vs_t":
        rec = rows
        if rec is None:
            raise ValueError("no run record to plot")
        grid = rec.schedule.grid
        est = rec.gamma_trajectory.estimates
        if len(est) == 0:
            raise ValueError("empty gamma trajectory")
        data = [(float(grid[i]), float(est[i, component])) for i in range(len(est))]
        main, comp = out / "gamma_vs_t.dat", out / "gamma_vs_t_exact.dat"
        _write_series(main, data)
        if reference is None:
            return [main]
        _write_series(comp, [(t, float(reference(t)[component])) for t, _ in data])
        return [main, comp]

    rows = [r for r in rows if np.isfinite(r.rmse) and r.rmse > 0]
    if not rows:
        raise ValueError("no rows to plot")
    if kind == "rmse_vs_eps":
        data = [(r.eps, r.rmse) for r in rows]
        model = "unit-slope"
    elif kind == "queries_vs_error":
        data = [(r.rmse, r.mean_queries) for r in rows]
        model = "inverse-square"
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    main, comp = out / f"{kind}.dat", out / f"{kind}_fit.dat"
    _write_series(main, data)
    if len(data) >= 2:
        fit = fit_loglog_slope(data, model)
        xs = [min(x for x, _ in data), max(x for x, _ in data)]
        _write_series(comp, [(x, fit["a"] * x ** fit["slope"]) for x in xs])
        return [main, comp]
    return [main]


def sweep_summary(rows: Sequence[SweepRow]) -> dict:
    good = [r for r in rows if np.isfinite(r.rmse) and r.rmse > 0]
    out = {"rows": [asdict(r) for r in rows]}
    if len(good) >= 2:
        out["rmse_vs_eps"] = fit_loglog_slope([(r.eps, r.rmse) for r in good])
        out["queries_vs_error"] = fit_loglog_slope([(r.rmse, r.mean_queries) for r in good])
        out["queries_vs_error_inverse_square"] = fit_loglog_slope(
            [(r.rmse, r.mean_queries) for r in good], "inverse-square")
    return out
