"""One-step maps ``x_{i+1} = F(t_i, h_i, x_i, noise)`` and weak-order estimation.

Steps operate on a single state ``(d,)`` or a batch ``(n, d)``; noise arrays
follow the same leading shape with ``m`` trailing columns.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng
from .rng import NoiseDraw

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """A step produced non-finite values."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class DriftDiffusionField:
    """Batched coefficients: drift(t, (n, d)) -> (n, d), diffusion(t, (n, d)) -> (n, d, m)."""

    drift: Callable[[float, np.ndarray], np.ndarray]
    diffusion: Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SchemeSpec:
    name: str
    weak_order_p: float
    noise_requirements: tuple
    step: Callable = field(repr=False, compare=False)

    def __post_init__(self):
        if not 0 < self.weak_order_p <= 2:
            raise ValueError(f"weak order must lie in (0, 2], got {self.weak_order_p}")

    def __call__(self, fld, t, h, x, noise, step_index=None):
        return self.step(fld, t, h, x, noise, step_index=step_index)


def _prepare(x, noise: NoiseDraw):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    dw = np.asarray(noise.dw, dtype=float)
    dw = dw.reshape(xb.shape[0], -1)
    return xb, dw, single


def _finish(out, single, step_index):
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite state after step", step_index)
    return out[0] if single else out


def euler_step(fld: DriftDiffusionField, t: float, h: float, x, noise: NoiseDraw, step_index=None):
    """x + a(t, x) h + b(t, x) dw."""
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    xb, dw, single = _prepare(x, noise)
    out = xb + fld.drift(t, xb) * h + np.einsum("ndm,nm->nd", fld.diffusion(t, xb), dw)
    return _finish(out, single, step_index)


# SRI1W1 tableau (Roessler 2010), Ito form, weak order 2.
_C0 = (0.0, 0.75)
_C1 = (0.0, 0.25, 1.0, 0.25)
_ALPHA = (1.0 / 3.0, 2.0 / 3.0)
_BETA1 = (-1.0, 4.0 / 3.0, 2.0 / 3.0, 0.0)
_BETA2 = (-1.0, 4.0 / 3.0, -1.0 / 3.0, 0.0)
_BETA3 = (2.0, -4.0 / 3.0, -2.0 / 3.0, 0.0)
_BETA4 = (-2.0, 5.0 / 3.0, -2.0 / 3.0, 1.0)
# rows: multipliers of dW, I_(j,j)/sqrt(h), I_(j,0)/h, I_(j,j,j)/h; columns: stages 1..4
_BETA = np.array([_BETA1, _BETA2, _BETA3, _BETA4])


def sri1w1_step(fld: DriftDiffusionField, t: float, h: float, x, noise: NoiseDraw, step_index=None):
    """One SRI1W1 step.

    Noise channels are handled one at a time, which is exact for scalar,
    diagonal and additive noise. Stage values:

        H0_2 = x + 3/4 h a0 + 3/2 sum_j b0_j I10_j / h
        H1_2 = x + 1/4 h a0 + 1/2 sqrt(h) b0_j
        H1_3 = x + h a0 - sqrt(h) b0_j
        H1_4 = x + 1/4 h a0 + sqrt(h) (-5 b0_j + 3 b1_2 + 1/2 b1_3)
    """
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    xb, dw, single = _prepare(x, noise)
    i10 = np.asarray(noise.i10, dtype=float).reshape(dw.shape)
    sqh = math.sqrt(h)
    m = dw.shape[1]

    a1 = fld.drift(t + _C0[0] * h, xb)
    g1 = fld.diffusion(t + _C1[0] * h, xb)  # (n, d, m)
    dw2 = dw * dw
    chi = np.empty(dw.shape + (4,))
    chi[..., 0] = dw
    chi[..., 1] = (dw2 - h) / (2.0 * sqh)            # I_(j,j) / sqrt(h)
    chi[..., 2] = i10 / h                            # I_(j,0) / h
    # I_(j,j,j) / h; written without ** 3, which goes through the slow libm pow
    chi[..., 3] = dw * (dw2 - 3.0 * h) / (6.0 * h)
    weights = (chi.reshape(-1, 4) @ _BETA).reshape(chi.shape)  # (n, m, stage)

    h0_2 = xb + 0.75 * h * a1 + 1.5 * np.einsum("ndm,nm->nd", g1, chi[..., 2])
    a2 = fld.drift(t + _C0[1] * h, h0_2)
    out = xb + h * (_ALPHA[0] * a1 + _ALPHA[1] * a2)

    for j in range(m):
        b1 = g1[:, :, j]
        h1_2 = xb + 0.25 * h * a1 + 0.5 * sqh * b1
        b2 = fld.diffusion(t + _C1[1] * h, h1_2)[:, :, j]
        h1_3 = xb + h * a1 - sqh * b1
        b3 = fld.diffusion(t + _C1[2] * h, h1_3)[:, :, j]
        h1_4 = xb + 0.25 * h * a1 + sqh * (-5.0 * b1 + 3.0 * b2 + 0.5 * b3)
        b4 = fld.diffusion(t + _C1[3] * h, h1_4)[:, :, j]
        for s, b in enumerate((b1, b2, b3, b4)):
            out += b * weights[:, j, s, None]
    return _finish(out, single, step_index)


EULER = SchemeSpec("euler", 1.0, ("dw",), euler_step)
SRI1W1 = SchemeSpec("sri1w1", 2.0, ("dw", "i10"), sri1w1_step)
SCHEMES = {s.name: s for s in (EULER, SRI1W1)}


def get_scheme(name: str) -> SchemeSpec:
    try:
        return SCHEMES[name.lower()]
    except KeyError:
        raise KeyError(f"unknown scheme {name!r}; available: {sorted(SCHEMES)}") from None


# ---------------------------------------------------------------------------
# weak order estimation


@dataclass
class WeakOrderResult:
    slope: float
    intercept: float
    h: list
    errors: list
    std_errors: list
    used: list
    excluded: list
    indeterminate: bool
    reference_check: Optional[tuple] = None  # (mean f at reference - exact, std error)


def _steps_for(T: float, h: float) -> int:
    n = round(T / h)
    if n < 1 or abs(n * h - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not an integer multiple of h={h}")
    return n


def _simulate_plain(scheme, fld, f, x0, T, h, n_paths, seed, chunk, m):
    n_steps = _steps_for(T, h)
    total = 0.0
    total_sq = 0.0
    for start in range(0, n_paths, chunk):
        size = min(chunk, n_paths - start)
        x = np.tile(np.asarray(x0, dtype=float), (size, 1))
        for i in range(n_steps):
            noise = rng.sample_noise_block(seed, i, start, size, m, h)
            x = scheme(fld, i * h, h, x, noise, step_index=i)
        v = np.asarray(f(x), dtype=float)
        total += v.sum()
        total_sq += (v * v).sum()
    mean = total / n_paths
    var = max(total_sq / n_paths - mean * mean, 0.0)
    return mean, math.sqrt(var / n_paths)


def _simulate_coupled(scheme, reference, fld, f, x0, T, h_list, h_ref, n_paths, seed, chunk, m):
    """E[f(Y_h) - f(Y_ref)] for every h, with Y_ref a fine reference path on the same Brownian path.

    Coarse increments are aggregated from the fine ones:
    dW = sum dw_f and I10 = sum ((W_f - W_start) h_f + i10_f).
    """
    n_fine = _steps_for(T, h_ref)
    ratios = [_steps_for(h, h_ref) for h in h_list]
    sums = np.zeros(len(h_list))
    sums_sq = np.zeros(len(h_list))
    ref_sum = ref_sq = 0.0
    for start in range(0, n_paths, chunk):
        size = min(chunk, n_paths - start)
        base = np.tile(np.asarray(x0, dtype=float), (size, 1))
        y_ref = base.copy()
        coarse = [base.copy() for _ in h_list]
        acc_dw = [np.zeros((size, m)) for _ in h_list]
        acc_i10 = [np.zeros((size, m)) for _ in h_list]
        for i in range(n_fine):
            noise = rng.sample_noise_block(seed, i, start, size, m, h_ref)
            y_ref = reference(fld, i * h_ref, h_ref, y_ref, noise, step_index=i)
            for c, r in enumerate(ratios):
                acc_i10[c] += acc_dw[c] * h_ref + noise.i10
                acc_dw[c] += noise.dw
                if (i + 1) % r == 0:
                    k = (i + 1) // r - 1
                    hc = h_list[c]
                    coarse[c] = scheme(fld, k * hc, hc, coarse[c], NoiseDraw(acc_dw[c], acc_i10[c]), step_index=k)
                    acc_dw[c] = np.zeros((size, m))
                    acc_i10[c] = np.zeros((size, m))
        f_ref = np.asarray(f(y_ref), dtype=float)
        ref_sum += f_ref.sum()
        ref_sq += (f_ref * f_ref).sum()
        for c in range(len(h_list)):
            diff = np.asarray(f(coarse[c]), dtype=float) - f_ref
            sums[c] += diff.sum()
            sums_sq[c] += (diff * diff).sum()
    means = sums / n_paths
    ses = np.sqrt(np.maximum(sums_sq / n_paths - means**2, 0.0) / n_paths)
    ref_mean = ref_sum / n_paths
    ref_se = math.sqrt(max(ref_sq / n_paths - ref_mean**2, 0.0) / n_paths)
    return means, ses, ref_mean, ref_se


def estimate_weak_order(scheme: SchemeSpec, fld: DriftDiffusionField, f, exact_expectation: float,
                        h_list: Sequence[float], n_paths: int, seed: int, *, x0, T: float, m: int = 1,
                        method: str = "coupled", reference: Optional[SchemeSpec] = None,
                        ref_substeps: int = 8, noise_sigmas: float = 3.0,
                        chunk: int = 100_000) -> WeakOrderResult:
    """Fit the weak convergence exponent of ``scheme`` from errors at several step sizes.

    ``method="plain"`` compares independent Monte Carlo means with
    ``exact_expectation`` directly. ``method="coupled"`` (default) measures
    ``E[f(Y_h)] - E[f(Y_ref)]`` with a reference path on the same Brownian
    path at step ``min(h_list) / ref_substeps``; that difference has far
    smaller variance, and ``exact_expectation`` then only validates the
    reference (``reference_check``).

    Points with ``|error| < noise_sigmas * std_error`` are excluded. With
    fewer than two usable points the slope is NaN and ``indeterminate`` is set.
    """
    h_list = [float(h) for h in h_list]
    if len(h_list) < 3:
        raise ValueError("need at least three step sizes")
    if n_paths < 2:
        raise ValueError("need at least two paths")
    if method == "plain":
        errors, ses = [], []
        for h in h_list:
            mean, se = _simulate_plain(scheme, fld, f, x0, T, h, n_paths, seed, chunk, m)
            errors.append(mean - exact_expectation)
            ses.append(se)
        ref_check = None
    elif method == "coupled":
        reference = reference or SRI1W1
        h_ref = min(h_list) / ref_substeps
        errors, ses, ref_mean, ref_se = _simulate_coupled(
            scheme, reference, fld, f, x0, T, h_list, h_ref, n_paths, seed, chunk, m)
        errors, ses = list(errors), list(ses)
        ref_check = (ref_mean - exact_expectation, ref_se)
        if abs(ref_check[0]) > noise_sigmas * ref_se + 1e-12:
            log.warning("reference path mean deviates from exact value by %.3g (se %.3g)", *ref_check)
    else:
        raise ValueError(f"unknown method {method!r}")

    used, excluded = [], []
    for h, e, se in zip(h_list, errors, ses):
        (used if abs(e) > noise_sigmas * se and e != 0.0 else excluded).append(h)
    if excluded:
        log.info("excluded step sizes at the noise floor: %s", excluded)
    if len(used) < 2:
        slope = intercept = float("nan")
        indeterminate = True
    else:
        idx = [h_list.index(h) for h in used]
        lx = np.log(np.asarray(used))
        ly = np.log(np.abs(np.asarray([errors[i] for i in idx])))
        slope, intercept = np.polyfit(lx, ly, 1)
        slope, intercept = float(slope), float(intercept)
        indeterminate = False
    return WeakOrderResult(slope, intercept, h_list, [float(e) for e in errors], [float(s) for s in ses],
                           used, excluded, indeterminate, ref_check)
