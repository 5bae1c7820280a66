"""Particle and emulated-QMCI solvers for expectation-coupled McKean-Vlasov SDEs."""

from .gamma import GammaHistory, StepSchedule, build_schedule, extrapolate, repair_steps, slope_at
from .problem import MvsdeProblem, get_model, model_names, shimizu_yamada
from .qmci import GroverSchedule, QmciOutcome, grover_query_count, mle_argmax, qmciml
from .rng import StreamKey, derive_seed, sample_noise
from .schemes import EULER, SRI1W1, NumericalError, estimate_weak_order, get_scheme
from .solvers import (EmulatedRunParams, RunRecord, check_perturbation_bound, experiment_params,
                      run_emulated, run_particle, theoretical_params)

__version__ = "0.1.0"

__all__ = [
    "EULER", "SRI1W1", "EmulatedRunParams", "GammaHistory", "GroverSchedule", "MvsdeProblem",
    "NumericalError", "QmciOutcome", "RunRecord", "StepSchedule", "StreamKey", "build_schedule",
    "check_perturbation_bound", "derive_seed", "estimate_weak_order", "experiment_params",
    "extrapolate", "get_model", "get_scheme", "grover_query_count", "mle_argmax", "model_names",
    "qmciml", "repair_steps", "run_emulated", "run_particle", "sample_noise", "shimizu_yamada",
    "slope_at", "theoretical_params",
]
