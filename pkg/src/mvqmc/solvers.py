"""End-to-end solvers: particle method, emulated QMCI solver, parameter selection."""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from . import rng
from .gamma import GammaHistory, StepSchedule, build_schedule, ceil_tol, repair_steps
from .problem import MvsdeProblem, eval_basis, eval_diffusion, eval_drift, eval_terminal
from .qmci import GroverSchedule, grover_query_count, qmciml
from .schemes import DriftDiffusionField, NumericalError, SchemeSpec, get_scheme

log = logging.getLogger(__name__)

QMCI_MODES = ("mle", "exact")


# ---------------------------------------------------------------------------
# shared particle machinery


def _draw_noise(scheme: SchemeSpec, seed, step, start, size, m, h):
    if "i10" in scheme.noise_requirements:
        return rng.sample_noise_block(seed, step, start, size, m, h)
    dw = rng.gaussian_block(seed, step, rng.PARTICLE_NOISE, start, size, m, variance=h)
    return rng.NoiseDraw(dw, np.zeros_like(dw))


def _advance(scheme: SchemeSpec, fld, t, h, x, seed, step, m, workers):
    """Advance every particle one step. Row results do not depend on ``workers``."""
    n = x.shape[0]
    out = np.empty_like(x)

    def run(bounds):
        a, b = bounds
        noise = _draw_noise(scheme, seed, step, a, b - a, m, h)
        out[a:b] = scheme(fld, t, h, x[a:b], noise, step_index=step)

    if workers <= 1 or n < 2 * workers:
        run((0, n))
        return out
    edges = np.linspace(0, n, workers + 1).astype(int)
    chunks = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(run, chunks))
    return out


def _gamma_field(problem: MvsdeProblem, gamma_of_t) -> DriftDiffusionField:
    """a(t, x), b(t, x) with the coupled expectations supplied as a function of t."""
    return DriftDiffusionField(lambda t, x: eval_drift(problem, gamma_of_t(t), x),
                               lambda t, x: eval_diffusion(problem, gamma_of_t(t), x))


def _steps_for(T: float, h: float) -> int:
    n = round(T / h)
    if n < 1 or abs(n * h - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not an integer multiple of h={h}")
    return n


def run_particle(problem: MvsdeProblem, N: int, h: float, seed: int, workers: int = 1) -> float:
    """Euler particle method with plug-in means; returns the terminal sample mean of phi."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    n_t = _steps_for(problem.horizon_T, h)
    scheme = get_scheme("euler")
    x = np.tile(problem.x0, (N, 1))
    for i in range(n_t):
        gamma_hat = eval_basis(problem, x).mean(axis=0)
        x = _advance(scheme, _gamma_field(problem, lambda t: gamma_hat), i * h, h, x, seed, i, problem.m, workers)
    return float(eval_terminal(problem, x).mean())


# ---------------------------------------------------------------------------
# emulated quantum solver


@dataclass(frozen=True)
class EmulatedRunParams:
    h_I: float
    h_II: float
    N: int
    M_G: int
    n_shot: int
    clip_center_decay: float = -1.0
    clip_width_sigmas: float = 5.0
    seed: int = 0
    scheme: str = "sri1w1"
    qmci_mode: str = "mle"
    # center of the clip window at t=0; None means phi_terminal(x0)
    clip_center0: Optional[float] = None
    eps_aux: Optional[float] = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.qmci_mode not in QMCI_MODES:
            raise ValueError(f"qmci_mode must be one of {QMCI_MODES}, got {self.qmci_mode!r}")
        if self.clip_width_sigmas <= 0:
            raise ValueError("clip_width_sigmas must be positive")
        get_scheme(self.scheme)
        GroverSchedule(self.M_G, self.n_shot)


def clip_bounds(params: EmulatedRunParams, center0: float, t: float) -> tuple:
    """(l, u) = center0 e^{decay t} -/+ width sqrt(t); only defined for t > 0."""
    if not t > 0:
        raise ValueError(f"clip bounds are only used at t > 0, got t={t}")
    c = center0 * math.exp(params.clip_center_decay * t)
    w = params.clip_width_sigmas * math.sqrt(t)
    return c - w, c + w


def experiment_params(eps_aux: float, T: float = 2.0, x0: float = 1.0, *, N: int = 100_000,
                      n_shot: int = 30, seed: int = 0, scheme: str = "sri1w1",
                      clip_center_decay: float = -1.0, clip_width_sigmas: float = 5.0,
                      qmci_mode: str = "mle") -> EmulatedRunParams:
    """The benchmark parameter set driven by one accuracy knob ``eps_aux``.

    h_I = T eps / 16, h_II = T sqrt(eps) / 4, M_G = round(log2(128 / eps)),
    with the step sizes repaired to satisfy the grid divisibility rules.
    """
    if not 0 < eps_aux <= 1:
        raise ValueError(f"eps_aux must lie in (0, 1], got {eps_aux}")
    h_I, h_II = T * eps_aux / 16.0, T * math.sqrt(eps_aux) / 4.0
    h_I_ok, h_II_ok = repair_steps(T, h_I, h_II)
    if not (math.isclose(h_I_ok, h_I, rel_tol=1e-9) and math.isclose(h_II_ok, h_II, rel_tol=1e-9)):
        log.info("eps=%g: repaired h_I %.6g -> %.6g, h_II %.6g -> %.6g", eps_aux, h_I, h_I_ok, h_II, h_II_ok)
    M_G = math.floor(math.log2(128.0 / eps_aux) + 0.5)
    return EmulatedRunParams(h_I=h_I_ok, h_II=h_II_ok, N=N, M_G=M_G, n_shot=n_shot,
                             clip_center_decay=clip_center_decay, clip_width_sigmas=clip_width_sigmas,
                             seed=seed, scheme=scheme, qmci_mode=qmci_mode, clip_center0=x0,
                             eps_aux=eps_aux)


@dataclass
class RunRecord:
    params: dict
    model: str
    schedule: StepSchedule
    gamma_trajectory: GammaHistory
    terminal_estimate: float
    total_oracle_queries: int
    outcomes: list
    wall_ms: float
    exact_terminal: Optional[float] = None
    method: str = "emulated"

    def to_json(self) -> dict:
        grid = self.schedule.grid
        est = self.gamma_trajectory.estimates
        return {
            "model": self.model,
            "method": self.method,
            "params": self.params,
            "seed": self.params.get("seed"),
            "scheme": self.params.get("scheme"),
            "n_t": self.schedule.n_t,
            "n_t_I": self.schedule.n_t_I,
            "n_t_II": self.schedule.n_t_II,
            "gamma": [[float(grid[i])] + [float(v) for v in est[i]] for i in range(len(est))],
            "estimate": self.terminal_estimate,
            "exact": self.exact_terminal,
            "queries": self.total_oracle_queries,
            "qmci": self.outcomes,
            "wall_ms": self.wall_ms,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=1)


def _qmci_estimate(values, l, u, grover, key, mode, step):
    """Clip-average, rescale onto [0, 1], run the emulated QMCI and map back."""
    if not u > l:
        raise NumericalError(f"clip bounds collapse (l={l}, u={u})", step)
    bar = float(np.mean(np.clip(values, l, u)))
    mu = (bar - l) / (u - l)
    if not -1e-12 <= mu <= 1 + 1e-12:
        raise NumericalError(f"QMCI input {mu} outside [0, 1] for bounds [{l}, {u}]", step)
    mu = min(max(mu, 0.0), 1.0)
    if mode == "exact":
        scaled, info = mu, {"estimate": mu}
    else:
        out = qmciml(mu, grover, key)
        scaled, info = out.estimate, out.to_json()
    info.update({"mu": mu, "lower": l, "upper": u})
    return scaled * (u - l) + l, info


def run_emulated(problem: MvsdeProblem, params: EmulatedRunParams, workers: int = 1) -> RunRecord:
    """Particle emulation of the two-stage extrapolated QMCI solver.

    Particles advance with the extrapolated fields; each coupled expectation
    is a clipped particle mean perturbed by sampled MLE amplitude-estimation
    noise (``qmci_mode="exact"`` skips the noise).
    """
    start = time.perf_counter()
    T, K, m = problem.horizon_T, problem.K, problem.m
    schedule = build_schedule(T, params.h_I, params.h_II)
    history = GammaHistory(K, schedule)
    history.append(problem.gamma0())
    scheme = get_scheme(params.scheme)
    grover = GroverSchedule(params.M_G, params.n_shot)
    center0 = params.clip_center0
    if center0 is None:
        center0 = float(eval_terminal(problem, problem.x0))
    n_t, grid, steps = schedule.n_t, schedule.grid, schedule.steps

    x = np.tile(problem.x0, (params.N, 1))
    outcomes, queries, estimate = [], 0, math.nan
    for i in range(n_t):
        fld = _gamma_field(problem, lambda t, i=i: history.tilde(i, t))
        x = _advance(scheme, fld, float(grid[i]), float(steps[i]), x, params.seed, i, m, workers)
        l, u = clip_bounds(params, center0, float(grid[i + 1]))
        depth = i + 1
        if i <= n_t - 2:
            basis = eval_basis(problem, x)
            row = np.empty(K)
            for k in range(K):
                key = rng.StreamKey(params.seed, k, i + 1, rng.QMCI_SHOTS)
                row[k], info = _qmci_estimate(basis[:, k], l, u, grover, key, params.qmci_mode, i + 1)
                outcomes.append({"step": i + 1, "k": k, "depth": depth, **info})
                queries += grover_query_count(grover, depth)
            history.append(row)
        else:
            key = rng.StreamKey(params.seed, K, n_t, rng.QMCI_SHOTS)
            estimate, info = _qmci_estimate(eval_terminal(problem, x), l, u, grover, key,
                                            params.qmci_mode, n_t)
            outcomes.append({"step": n_t, "k": "terminal", "depth": depth, **info})
            queries += grover_query_count(grover, depth)
    wall_ms = (time.perf_counter() - start) * 1e3
    return RunRecord(asdict(params), problem.name, schedule, history, float(estimate), queries,
                     outcomes, wall_ms, problem.exact_terminal)


# ---------------------------------------------------------------------------
# theoretical parameter selection


@dataclass(frozen=True)
class TheoreticalParams:
    epsilon: float
    eta: float
    eps_qmci: float
    h_I: float
    h_II: float
    h_I_max: float
    h_II_max: float
    kappa_prime: float
    p: float
    n_t_I: int
    n_t_II: int
    n_t: int
    n_qmci_calls: int
    eta_prime: float
    short_horizon_lhs: float
    short_horizon_ok: bool


def short_horizon_lhs(T: float, m: int, d: int, K: int, U: float) -> float:
    """2 sqrt(T + m) d K U^2 exp(2 (T + m) T d^2 K^2 U^4); the guarantee wants <= 1/12."""
    expo = 2.0 * (T + m) * T * d**2 * K**2 * U**4
    try:
        e = math.exp(expo)
    except OverflowError:
        return math.inf
    return 2.0 * math.sqrt(T + m) * d * K * U**2 * e


def theoretical_params(epsilon: float, eta: float, U: float, kappa_prime: float = 1.0, T: float = 1.0,
                       p: float = 2.0, K: int = 1, m: int = 1, d: int = 1) -> TheoreticalParams:
    """Step sizes, QMCI accuracy and per-call failure budget for a target accuracy ``epsilon``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    if not U > 1:
        raise ValueError("U must exceed 1")
    if not 1 < p <= 2:
        raise ValueError("p must lie in (1, 2]")
    eps_qmci = epsilon / 12.0
    h_I_max = 3.0 * epsilon / (4.0 * U)
    h_II_max = (epsilon / max(4.0 * U, 24.0 * kappa_prime * T)) ** (1.0 / p)
    n_II_total = max(ceil_tol(T / h_II_max), 2)
    h_II = T / n_II_total
    n_t_I = ceil_tol(h_II / h_I_max)
    h_I = h_II / n_t_I
    n_t_II = n_II_total - 1
    n_t = n_t_I + n_t_II
    n_calls = K * (n_t - 1) + 1
    lhs = short_horizon_lhs(T, m, d, K, U)
    return TheoreticalParams(epsilon, eta, eps_qmci, h_I, h_II, h_I_max, h_II_max, kappa_prime, p,
                             n_t_I, n_t_II, n_t, n_calls, eta / n_calls, lhs, lhs <= 1.0 / 12.0)


# ---------------------------------------------------------------------------
# perturbation bound check


@dataclass(frozen=True)
class PerturbationCheck:
    lhs: float
    rhs: float
    std_error: float
    holds: bool
    sup_perturbation: float


def perturbation_bound(t: float, delta: float, L: float, U: float, d: int, m: int, K: int) -> float:
    """2 sqrt((t + m) d) K L U delta exp(2 (t + m) t d^2 K^2 U^4)."""
    if delta == 0:
        return 0.0
    try:
        e = math.exp(2.0 * (t + m) * t * d**2 * K**2 * U**4)
    except OverflowError:
        return math.inf
    return 2.0 * math.sqrt((t + m) * d) * K * L * U * delta * e


def check_perturbation_bound(problem: MvsdeProblem, delta: float,
                             perturbation: Optional[Callable[[float], np.ndarray]], f: Callable,
                             L: float, t: float, n_paths: int, h: float, seed: int,
                             scheme: str = "sri1w1", chunk: int = 100_000,
                             grid_points: int = 10_001) -> PerturbationCheck:
    """Coupled simulation of the exact-gamma SDE and its perturbed twin.

    ``perturbation(t)`` returns the K offsets gamma_tilde - gamma; by default
    every offset equals ``delta``. Both SDEs share every noise draw.
    """
    if problem.exact_gamma is None:
        raise ValueError(f"model {problem.name!r} has no closed-form gamma")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if perturbation is None:
        perturbation = lambda s: np.full(problem.K, delta)  # noqa: E731
    ts = np.linspace(0.0, problem.horizon_T, grid_points)
    sup = float(max(np.max(np.abs(perturbation(s))) for s in ts))
    if sup > delta * (1 + 1e-12) + 1e-300:
        raise ValueError(f"perturbation sup-norm {sup} exceeds delta={delta}")
    n_steps = _steps_for(t, h)
    spec = get_scheme(scheme)
    exact = _gamma_field(problem, problem.exact_gamma)
    pert = _gamma_field(problem, lambda s: problem.exact_gamma(s) + perturbation(s))
    total = total_sq = 0.0
    for start in range(0, n_paths, chunk):
        size = min(chunk, n_paths - start)
        x = np.tile(problem.x0, (size, 1))
        y = x.copy()
        for i in range(n_steps):
            noise = _draw_noise(spec, seed, i, start, size, problem.m, h)
            x = spec(exact, i * h, h, x, noise, step_index=i)
            y = spec(pert, i * h, h, y, noise, step_index=i)
        diff = np.asarray(f(y), dtype=float) - np.asarray(f(x), dtype=float)
        total += diff.sum()
        total_sq += (diff * diff).sum()
    mean = total / n_paths
    se = math.sqrt(max(total_sq / n_paths - mean * mean, 0.0) / n_paths)
    lhs = abs(mean)
    rhs = perturbation_bound(t, delta, L, problem.bound_U, problem.d, problem.m, problem.K)
    return PerturbationCheck(lhs, rhs, se, bool(lhs <= rhs + 3.0 * se), sup)

