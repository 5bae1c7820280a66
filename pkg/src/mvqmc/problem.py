"""Expectation-coupled McKean-Vlasov SDEs.

The drift and diffusion of

    dX_t = a(t, X_t) dt + b(t, X_t) dW_t

are linear combinations of fixed basis coefficients, weighted by the
expectations gamma_k(t) = E[phi_k(X_t)]:

    a(t, x) = sum_k gamma_k(t) alpha_k(x),   b(t, x) = sum_k gamma_k(t) beta_k(x).

All coefficient callables are batched: they receive an ``(n, d)`` array and
return ``(n, d)`` (alpha), ``(n, d, m)`` (beta) or ``(n,)`` (phi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Array = np.ndarray
BatchFn = Callable[[Array], Array]


class DomainError(ValueError):
    """Raised for non-finite or ill-shaped inputs to coefficient evaluation."""


@dataclass(frozen=True)
class MvsdeProblem:
    d: int
    m: int
    K: int
    alpha: tuple
    beta: tuple
    phi_basis: tuple
    phi_terminal: BatchFn
    x0: Array
    horizon_T: float
    bound_U: float
    name: str = "custom"
    # t -> length-K array of exact gamma values, when known in closed form
    exact_gamma: Optional[Callable[[float], Array]] = field(default=None, compare=False)
    # exact E[phi_terminal(X_T)], when known
    exact_terminal: Optional[float] = None

    def __post_init__(self):
        if min(self.d, self.m, self.K) < 1:
            raise ValueError(f"d, m, K must be >= 1, got {(self.d, self.m, self.K)}")
        if not self.horizon_T > 0:
            raise ValueError(f"horizon_T must be positive, got {self.horizon_T}")
        if not self.bound_U > 1:
            raise ValueError(f"bound_U must exceed 1, got {self.bound_U}")
        for label, fns in (("alpha", self.alpha), ("beta", self.beta), ("phi_basis", self.phi_basis)):
            if len(fns) != self.K:
                raise ValueError(f"{label} needs {self.K} callables, got {len(fns)}")
        x0 = np.asarray(self.x0, dtype=float).reshape(self.d)
        if not np.all(np.isfinite(x0)):
            raise DomainError("x0 must be finite")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "alpha", tuple(self.alpha))
        object.__setattr__(self, "beta", tuple(self.beta))
        object.__setattr__(self, "phi_basis", tuple(self.phi_basis))
        self.spot_check()

    def spot_check(self, points: Optional[Array] = None) -> None:
        """Check shapes, finiteness and |alpha_k|, |beta_k| <= U at sample points.

        Only magnitudes are checked; derivative bounds are the caller's
        responsibility.
        """
        if points is None:
            offsets = np.linspace(-2.0, 2.0, 5)[:, None] * np.ones((1, self.d))
            points = self.x0[None, :] + offsets
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = pts.shape[0]
        for k in range(self.K):
            a = np.asarray(self.alpha[k](pts), dtype=float)
            b = np.asarray(self.beta[k](pts), dtype=float)
            p = np.asarray(self.phi_basis[k](pts), dtype=float)
            if a.shape != (n, self.d) or b.shape != (n, self.d, self.m) or p.shape != (n,):
                raise DomainError(
                    f"basis {k}: shapes alpha {a.shape}, beta {b.shape}, phi {p.shape} do not "
                    f"match (n, d)=({n}, {self.d}), (n, d, m)=({n}, {self.d}, {self.m}), (n,)"
                )
            if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(p))):
                raise DomainError(f"basis {k} returned non-finite values")
            if np.max(np.abs(a), initial=0.0) > self.bound_U or np.max(np.abs(b), initial=0.0) > self.bound_U:
                raise DomainError(f"basis {k}: |alpha| or |beta| exceeds bound_U={self.bound_U}")

    def gamma0(self) -> Array:
        """gamma at t=0, i.e. phi_k(X_0)."""
        return eval_basis(self, self.x0)


def as_gamma(problem: MvsdeProblem, gamma) -> Array:
    g = np.asarray(gamma, dtype=float)
    if g.shape != (problem.K,):
        raise DomainError(f"gamma must have length K={problem.K}, got shape {g.shape}")
    if not np.all(np.isfinite(g)):
        raise DomainError("gamma must be finite")
    return g


def _as_batch(problem: MvsdeProblem, x):
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1
    batch = arr.reshape(1, problem.d) if single else arr
    if batch.ndim != 2 or batch.shape[1] != problem.d:
        raise DomainError(f"x must have trailing dimension d={problem.d}, got shape {arr.shape}")
    if not np.all(np.isfinite(batch)):
        raise DomainError("x must be finite")
    return batch, single


def eval_drift(problem: MvsdeProblem, gamma, x) -> Array:
    """sum_k gamma_k alpha_k(x) for a single point ``(d,)`` or a batch ``(n, d)``."""
    g = as_gamma(problem, gamma)
    batch, single = _as_batch(problem, x)
    out = np.zeros_like(batch)
    for k in range(problem.K):
        if g[k] != 0.0:
            out += g[k] * problem.alpha[k](batch)
    return out[0] if single else out


def eval_diffusion(problem: MvsdeProblem, gamma, x) -> Array:
    """sum_k gamma_k beta_k(x); shape ``(d, m)`` or ``(n, d, m)``."""
    g = as_gamma(problem, gamma)
    batch, single = _as_batch(problem, x)
    out = np.zeros((batch.shape[0], problem.d, problem.m))
    for k in range(problem.K):
        if g[k] != 0.0:
            out += g[k] * problem.beta[k](batch)
    return out[0] if single else out


def eval_basis(problem: MvsdeProblem, x) -> Array:
    """(phi_1(x), ..., phi_K(x)); shape ``(K,)`` or ``(n, K)``."""
    batch, single = _as_batch(problem, x)
    out = np.stack([np.asarray(phi(batch), dtype=float) for phi in problem.phi_basis], axis=-1)
    return out[0] if single else out


def eval_terminal(problem: MvsdeProblem, x) -> Array:
    batch, single = _as_batch(problem, x)
    out = np.asarray(problem.phi_terminal(batch), dtype=float)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# built-in models


def _const_vec(c, d=1):
    return lambda x: np.full((x.shape[0], d), float(c))


def _const_mat(c, d=1, m=1):
    return lambda x: np.full((x.shape[0], d, m), float(c))


def _one(x):
    return np.ones(x.shape[0])


def _first(x):
    return x[:, 0].copy()


def shimizu_yamada_exact_mean(t: float, x0: float) -> float:
    """E[X_t] = x0 * exp(-t) for the Shimizu-Yamada model."""
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    return x0 * math.exp(-t)


def shimizu_yamada(x0: float = 1.0, T: float = 2.0, literal_pairing: bool = False) -> MvsdeProblem:
    """Shimizu-Yamada model dX = -E[X_t] dt + dW, with X_t = x0 e^{-t} + W_t.

    phi_1 = 1 and phi_2 = phi = x. The default coefficient pairing
    alpha = (0, -1), beta = (1, 0) reproduces the closed-form solution.
    ``literal_pairing=True`` builds alpha = (-1, 0), beta = (0, 1) instead,
    which gives drift -1 and diffusion E[X_t]; it has no closed form here.
    """
    if literal_pairing:
        alpha = (_const_vec(-1.0), _const_vec(0.0))
        beta = (_const_mat(0.0), _const_mat(1.0))
        exact_gamma = None
        exact_terminal = None
    else:
        alpha = (_const_vec(0.0), _const_vec(-1.0))
        beta = (_const_mat(1.0), _const_mat(0.0))

        def exact_gamma(t):
            return np.array([1.0, shimizu_yamada_exact_mean(t, x0)])

        exact_terminal = shimizu_yamada_exact_mean(T, x0)
    return MvsdeProblem(
        d=1, m=1, K=2,
        alpha=alpha, beta=beta,
        phi_basis=(_one, _first),
        phi_terminal=_first,
        x0=np.array([x0]),
        horizon_T=T,
        bound_U=max(1.0, abs(x0)) + 1.0,
        name="shimizu_yamada",
        exact_gamma=exact_gamma,
        exact_terminal=exact_terminal,
    )


def ornstein_uhlenbeck(x0: float = 1.0, T: float = 1.0) -> MvsdeProblem:
    """dX = -X dt + dW written with a single constant moment phi_1 = 1.

    The terminal functional is x**2 so the analytic second moment serves as
    the reference value.
    """

    def exact_gamma(t):
        return np.array([1.0])

    second_moment = x0**2 * math.exp(-2 * T) + 0.5 * (1 - math.exp(-2 * T))
    return MvsdeProblem(
        d=1, m=1, K=1,
        alpha=(lambda x: -x,),
        beta=(_const_mat(1.0),),
        phi_basis=(_one,),
        phi_terminal=lambda x: x[:, 0] ** 2,
        x0=np.array([x0]),
        horizon_T=T,
        # alpha_1(x) = -x is unbounded; U covers the sampled region only
        bound_U=abs(x0) + 3.0,
        name="ornstein_uhlenbeck",
        exact_gamma=exact_gamma,
        exact_terminal=second_moment,
    )


def linear_drift(x0: float = 1.0, T: float = 2.0, c: float = -0.25) -> MvsdeProblem:
    """dX = c * E[1] dt + E[1] dW, so gamma_2(t) = E[X_t] = x0 + c t is linear."""

    def exact_gamma(t):
        return np.array([1.0, x0 + c * t])

    return MvsdeProblem(
        d=1, m=1, K=2,
        alpha=(_const_vec(c), _const_vec(0.0)),
        beta=(_const_mat(1.0), _const_mat(0.0)),
        phi_basis=(_one, _first),
        phi_terminal=_first,
        x0=np.array([x0]),
        horizon_T=T,
        bound_U=max(1.0, abs(x0) + abs(c) * T) + 1.0,
        name="linear_drift",
        exact_gamma=exact_gamma,
        exact_terminal=x0 + c * T,
    )


MODELS = {
    "shimizu_yamada": shimizu_yamada,
    "ornstein_uhlenbeck": ornstein_uhlenbeck,
    "linear_drift": linear_drift,
}


def get_model(name: str, **kwargs) -> MvsdeProblem:
    try:
        factory = MODELS[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; available: {sorted(MODELS)}") from None
    return factory(**kwargs)


def model_names() -> Sequence[str]:
    return sorted(MODELS)
