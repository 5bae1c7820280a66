import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvqmc import rng
from mvqmc.problem import MvsdeProblem, linear_drift, shimizu_yamada
from mvqmc.qmci import GroverSchedule, grover_query_count
from mvqmc.solvers import (EmulatedRunParams, check_perturbation_bound, clip_bounds, experiment_params,
                           perturbation_bound, run_emulated, run_particle, short_horizon_lhs,
                           theoretical_params)


def frozen_problem():
    return MvsdeProblem(
        d=1, m=1, K=1,
        alpha=(lambda x: np.zeros_like(x),),
        beta=(lambda x: np.zeros((x.shape[0], 1, 1)),),
        phi_basis=(lambda x: np.ones(x.shape[0]),),
        phi_terminal=lambda x: x[:, 0] ** 3,
        x0=[0.7], horizon_T=1.0, bound_U=2.0,
    )


class TestParticle:
    def test_shimizu_yamada_terminal_mean(self):
        est = run_particle(shimizu_yamada(), 100_000, 0.01, seed=1)
        assert abs(est - math.exp(-2)) < 0.02

    def test_frozen_dynamics(self):
        assert run_particle(frozen_problem(), 50, 0.1, seed=3) == 0.7**3

    def test_single_particle_is_one_euler_path(self):
        h, x = 0.1, 1.0
        for i in range(20):
            dw = rng.gaussian_block(9, i, rng.PARTICLE_NOISE, 0, 1, 1, variance=h)[0, 0]
            x = x - x * h + dw  # plug-in mean of one particle is the particle itself
        assert run_particle(shimizu_yamada(), 1, h, seed=9) == pytest.approx(x, abs=1e-12)

    def test_workers_do_not_change_result(self):
        a = run_particle(shimizu_yamada(), 5000, 0.05, seed=4, workers=1)
        b = run_particle(shimizu_yamada(), 5000, 0.05, seed=4, workers=3)
        assert a == b

    def test_invalid(self):
        with pytest.raises(ValueError):
            run_particle(shimizu_yamada(), 0, 0.1, 0)
        with pytest.raises(ValueError):
            run_particle(shimizu_yamada(), 10, 0.3, 0)


class TestExperimentParams:
    def test_eps_sixteenth(self):
        p = experiment_params(1 / 16, T=2.0)
        assert (p.h_I, p.h_II, p.M_G) == (1 / 128, 1 / 8, 11)

    def test_eps_one(self):
        p = experiment_params(1.0, T=2.0)
        assert (p.h_I, p.h_II, p.M_G) == (2 / 16, 2 / 4, 7)

    @pytest.mark.parametrize("eps", [0.0, -0.1, 1.5])
    def test_out_of_range(self, eps):
        with pytest.raises(ValueError):
            experiment_params(eps)

    @settings(max_examples=40)
    @given(st.floats(0.01, 1.0))
    def test_always_admissible(self, eps):
        from mvqmc.gamma import build_schedule
        p = experiment_params(eps, T=2.0)
        build_schedule(2.0, p.h_I, p.h_II)

    def test_clip_bounds(self):
        p = experiment_params(1 / 16)
        with pytest.raises(ValueError):
            clip_bounds(p, 1.0, 0.0)
        lo, hi = clip_bounds(p, 1.0, 0.25)
        assert hi - lo == pytest.approx(2 * 5 * 0.5)
        assert (lo + hi) / 2 == pytest.approx(math.exp(-0.25))

    def test_params_validation(self):
        with pytest.raises(ValueError):
            EmulatedRunParams(0.1, 0.2, N=10, M_G=2, n_shot=1, qmci_mode="bogus")
        with pytest.raises(KeyError):
            EmulatedRunParams(0.1, 0.2, N=10, M_G=2, n_shot=1, scheme="bogus")
        with pytest.raises(ValueError):
            EmulatedRunParams(0.1, 0.2, N=0, M_G=2, n_shot=1)


@pytest.fixture(scope="module")
def sixteenth_run():
    params = experiment_params(1 / 16, N=100_000, seed=rng.derive_seed(77, 0))
    return run_emulated(shimizu_yamada(), params)


class TestEmulated:
    def test_trajectory_tracks_exact_mean(self, sixteenth_run):
        rec = sixteenth_run
        grid = rec.schedule.grid
        est = rec.gamma_trajectory.estimates
        exact = np.exp(-grid[: len(est)])
        assert np.max(np.abs(est[:, 1] - exact)) <= 0.05
        assert np.all(est[:, 0] == pytest.approx(1.0, abs=0.05))

    def test_schedule(self, sixteenth_run):
        assert sixteenth_run.schedule.n_t == 31
        assert len(sixteenth_run.gamma_trajectory) == 31

    def test_queries_rederivable(self, sixteenth_run):
        rec = sixteenth_run
        grover = GroverSchedule(rec.params["M_G"], rec.params["n_shot"])
        assert rec.total_oracle_queries == sum(grover_query_count(grover, o["depth"]) for o in rec.outcomes)
        K, n_t = 2, rec.schedule.n_t
        assert len(rec.outcomes) == K * (n_t - 1) + 1

    def test_qmci_inputs_in_unit_interval_and_estimates_inside_bounds(self, sixteenth_run):
        for o in sixteenth_run.outcomes:
            assert 0.0 <= o["mu"] <= 1.0
            assert o["lower"] - 1e-12 <= o["estimate"] * (o["upper"] - o["lower"]) + o["lower"] <= o["upper"] + 1e-12
        est = sixteenth_run.gamma_trajectory.estimates
        for o in sixteenth_run.outcomes:
            if o["k"] != "terminal":
                assert o["lower"] - 1e-12 <= est[o["step"], o["k"]] <= o["upper"] + 1e-12

    def test_json(self, sixteenth_run):
        doc = json.loads(sixteenth_run.dumps())
        for key in ("model", "params", "seed", "scheme", "n_t", "gamma", "estimate", "queries", "qmci", "wall_ms"):
            assert key in doc
        assert doc["scheme"] == "sri1w1"
        assert len(doc["gamma"]) == 31 and len(doc["gamma"][0]) == 3

    def test_exact_mode_skips_amplitude_noise(self):
        params = experiment_params(1 / 4, N=20_000, seed=5, qmci_mode="exact")
        rec = run_emulated(shimizu_yamada(), params)
        for o in rec.outcomes:
            assert o["estimate"] == o["mu"]
        assert abs(rec.terminal_estimate - math.exp(-2)) < 0.05

    def test_exact_mode_with_linear_gamma(self):
        problem = linear_drift(x0=1.0, T=2.0, c=-0.25)
        params = experiment_params(1 / 4, N=100_000, seed=6, qmci_mode="exact")
        params = EmulatedRunParams(**{**params.__dict__, "clip_center_decay": 0.0})
        rec = run_emulated(problem, params)
        est = rec.gamma_trajectory.estimates
        assert np.all(est[:, 0] == 1.0)
        grid = rec.schedule.grid[: len(est)]
        assert np.max(np.abs(est[:, 1] - (1.0 - 0.25 * grid))) < 0.02
        assert abs(rec.terminal_estimate - 0.5) < 0.02

    def test_deterministic_and_worker_independent(self):
        params = experiment_params(1 / 2, N=4000, seed=12)
        a = run_emulated(shimizu_yamada(), params, workers=1).to_json()
        b = run_emulated(shimizu_yamada(), params, workers=4).to_json()
        a.pop("wall_ms")
        b.pop("wall_ms")
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_euler_scheme(self):
        params = experiment_params(1 / 2, N=2000, seed=1, scheme="euler")
        assert run_emulated(shimizu_yamada(), params).to_json()["scheme"] == "euler"


class TestTheoreticalParams:
    def test_qmci_accuracy(self):
        assert theoretical_params(0.12, 0.05, 2.0).eps_qmci == pytest.approx(0.01, rel=1e-15)

    def test_first_stage_step(self):
        assert theoretical_params(0.06, 0.05, 2.0).h_I_max == pytest.approx(0.0225, rel=1e-15)

    def test_second_stage_step_with_repair(self):
        tp = theoretical_params(0.08, 0.05, 2.0, kappa_prime=1 / 6, T=2.0, p=2.0)
        assert tp.h_II_max == pytest.approx(0.1, rel=1e-12)
        assert tp.h_II == pytest.approx(2 / 20, rel=1e-15)
        assert tp.h_I == pytest.approx(tp.h_II / math.ceil(tp.h_II / tp.h_I_max))
        assert tp.n_t_I * tp.h_I == pytest.approx(tp.h_II)
        assert (tp.n_t_II + 1) * tp.h_II == pytest.approx(2.0)

    @pytest.mark.parametrize("eps,eta,K", [(0.12, 0.05, 1), (0.06, 0.05, 1), (0.08, 0.1, 2), (0.01, 0.3, 3)])
    def test_failure_budget_splits_exactly(self, eps, eta, K):
        tp = theoretical_params(eps, eta, 2.0, T=2.0, K=K)
        assert tp.n_qmci_calls == K * (tp.n_t - 1) + 1
        # eta / n is rarely representable; the product is eta to within one unit in the last place
        assert abs(tp.eta_prime * tp.n_qmci_calls - eta) <= math.ulp(eta)

    def test_short_horizon_reported_not_enforced(self):
        tp = theoretical_params(0.1, 0.05, 2.0, T=2.0)
        assert tp.short_horizon_ok is False
        assert tp.short_horizon_lhs == short_horizon_lhs(2.0, 1, 1, 1, 2.0)
        # at T -> 0 the left side tends to 2 sqrt(m) d K U^2, which already exceeds 1/12 for U > 1
        assert short_horizon_lhs(0.0, 1, 1, 1, 1.5) == pytest.approx(2 * 1.5**2)

    @pytest.mark.parametrize("kw", [{"epsilon": 0}, {"eta": 1.0}, {"U": 1.0}, {"p": 2.5}])
    def test_invalid(self, kw):
        args = dict(epsilon=0.1, eta=0.05, U=2.0)
        args.update(kw)
        with pytest.raises(ValueError):
            theoretical_params(**args)


class TestPerturbation:
    def test_zero_delta(self):
        chk = check_perturbation_bound(shimizu_yamada(), 0.0, None, lambda x: x[:, 0], 1.0, 0.5, 2000, 0.05, 1)
        assert chk.lhs == 0.0 and chk.rhs == 0.0 and chk.holds

    def test_rhs_linear_in_delta(self):
        a = perturbation_bound(0.5, 0.01, 1.0, 2.0, 1, 1, 2)
        assert perturbation_bound(0.5, 0.02, 1.0, 2.0, 1, 1, 2) == 2 * a

    def test_overflow_is_infinite(self):
        assert perturbation_bound(50.0, 0.1, 1.0, 10.0, 1, 1, 2) == math.inf

    def test_small_run_holds(self):
        chk = check_perturbation_bound(shimizu_yamada(), 0.05, None, lambda x: x[:, 0], 1.0, 0.25, 20_000, 0.05, 2)
        assert chk.holds

    def test_drift_only_shift_is_exact(self):
        # shifting only the drift moment moves every path by -delta * t under shared noise
        pert = lambda s: np.array([0.0, 0.05])  # noqa: E731
        chk = check_perturbation_bound(shimizu_yamada(), 0.05, pert, lambda x: x[:, 0], 1.0, 0.25, 2000, 0.05, 2)
        assert chk.lhs == pytest.approx(0.05 * 0.25, rel=1e-9)
        assert chk.std_error < 1e-9

    def test_custom_perturbation(self):
        pert = lambda s: np.array([0.0, 0.03 * math.sin(5 * s)])  # noqa: E731
        chk = check_perturbation_bound(shimizu_yamada(), 0.03, pert, lambda x: x[:, 0], 1.0, 0.5, 5000, 0.05, 2)
        assert chk.holds and chk.sup_perturbation <= 0.03

    def test_perturbation_too_large(self):
        pert = lambda s: np.array([0.0, 0.1])  # noqa: E731
        with pytest.raises(ValueError):
            check_perturbation_bound(shimizu_yamada(), 0.05, pert, lambda x: x[:, 0], 1.0, 0.5, 100, 0.05, 1)

    def test_needs_exact_gamma(self):
        with pytest.raises(ValueError):
            check_perturbation_bound(shimizu_yamada(literal_pairing=True), 0.05, None, lambda x: x[:, 0],
                                     1.0, 0.5, 100, 0.05, 1)
