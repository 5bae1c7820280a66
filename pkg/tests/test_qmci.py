import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvqmc.qmci import (GroverSchedule, clip_and_rescale, grover_query_count, log_likelihood, mle_argmax,
                        qmciml, rescale, sample_counts)
from mvqmc.rng import QMCI_SHOTS, StreamKey, derive_seed


def expected_counts(theta, schedule):
    p1 = np.sin((2 * schedule.powers + 1) * theta) ** 2
    n1 = np.rint(schedule.n_shot * p1).astype(np.int64)
    return np.stack([schedule.n_shot - n1, n1], axis=1)


class TestSchedule:
    def test_powers(self):
        assert GroverSchedule(0, 1).powers.tolist() == [0, 1]
        assert GroverSchedule(3, 1).powers.tolist() == [0, 1, 2, 4, 8]
        assert GroverSchedule(3, 1).N_G == 8

    @pytest.mark.parametrize("kw", [{"M_G": -1, "n_shot": 1}, {"M_G": 2, "n_shot": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            GroverSchedule(**kw)


class TestQueryCount:
    def test_smallest(self):
        assert grover_query_count(GroverSchedule(0, 1), 1) == 4

    def test_no_shots(self):
        assert grover_query_count(GroverSchedule(5, 0), 3) == 0

    def test_closed_form(self):
        assert grover_query_count(GroverSchedule(3, 30), 5) == 5250

    @given(st.integers(0, 20), st.integers(0, 100), st.integers(1, 50))
    def test_matches_enumeration(self, M, n_shot, depth):
        sched = GroverSchedule(M, n_shot)
        assert grover_query_count(sched, depth) == depth * n_shot * sum(2 * j + 1 for j in sched.powers)

    @given(st.integers(0, 15), st.integers(1, 50), st.integers(1, 30))
    def test_strictly_monotone(self, M, n_shot, depth):
        base = grover_query_count(GroverSchedule(M, n_shot), depth)
        assert grover_query_count(GroverSchedule(M + 1, n_shot), depth) > base
        assert grover_query_count(GroverSchedule(M, n_shot + 1), depth) > base
        assert grover_query_count(GroverSchedule(M, n_shot), depth + 1) > base

    def test_depth_must_be_positive(self):
        with pytest.raises(ValueError):
            grover_query_count(GroverSchedule(1, 1), 0)


class TestMle:
    def test_all_zero_outcomes(self):
        sched = GroverSchedule(4, 30)
        counts = np.tile([30, 0], (6, 1))
        assert mle_argmax(counts, sched) == 0.0

    def test_all_one_outcomes(self):
        sched = GroverSchedule(0, 30)
        counts = np.array([[0, 30], [0, 30]])
        assert mle_argmax(counts, sched) == pytest.approx(math.pi / 2, abs=1e-9)

    def test_consistency_at_pi_over_six(self):
        sched = GroverSchedule(4, 10_000)
        theta = mle_argmax(expected_counts(math.pi / 6, sched), sched)
        assert abs(theta - math.pi / 6) < 0.01

    def test_agrees_with_dense_search(self):
        sched = GroverSchedule(3, 50)
        counts = sample_counts(0.42, sched, StreamKey(3, substream=QMCI_SHOTS))
        grid = np.linspace(0, math.pi / 2, 400_001)
        ll = [log_likelihood(t, counts, sched) for t in grid[::100]]
        coarse = grid[::100][int(np.argmax(ll))]
        theta = mle_argmax(counts, sched)
        assert log_likelihood(theta, counts, sched) >= max(ll) - 1e-9
        assert abs(theta - coarse) < 1e-3

    @pytest.mark.parametrize("theta", [0.1, 0.5, 1.0, 1.4])
    def test_recovers_theta_from_expected_counts(self, theta):
        sched = GroverSchedule(6, 1_000_000)
        assert mle_argmax(expected_counts(theta, sched), sched) == pytest.approx(theta, abs=1e-4)

    def test_log_likelihood_minus_inf_at_zero(self):
        sched = GroverSchedule(0, 2)
        assert log_likelihood(0.0, [[1, 1], [2, 0]], sched) == -math.inf
        assert log_likelihood(0.0, [[2, 0], [2, 0]], sched) == 0.0

    @pytest.mark.parametrize("counts", [
        [[1, 1]],                        # wrong number of rows
        [[3, -1], [2, 0]],               # negative
        [[1, 0], [2, 0]],                # row sum differs from n_shot
    ])
    def test_bad_counts(self, counts):
        with pytest.raises(ValueError):
            mle_argmax(counts, GroverSchedule(0, 2))

    def test_no_shots(self):
        with pytest.raises(ValueError):
            mle_argmax(np.zeros((2, 2), dtype=int), GroverSchedule(0, 0))
        with pytest.raises(ValueError):
            qmciml(0.5, GroverSchedule(0, 0), StreamKey(1))


class TestQmciml:
    def test_mu_zero(self):
        out = qmciml(0.0, GroverSchedule(5, 30), StreamKey(1))
        assert np.all(out.counts[:, 1] == 0)
        assert out.theta_hat == 0.0 and out.estimate == 0.0

    def test_mu_one(self):
        out = qmciml(1.0, GroverSchedule(5, 30), StreamKey(1))
        assert out.estimate == pytest.approx(1.0, abs=1e-12)
        assert out.counts[0, 1] == 30

    def test_rmse_at_point_three(self):
        sched = GroverSchedule(8, 30)
        est = [qmciml(0.3, sched, StreamKey(derive_seed(11, r), substream=QMCI_SHOTS)).estimate for r in range(100)]
        rmse = math.sqrt(np.mean((np.array(est) - 0.3) ** 2))
        assert rmse <= 0.01

    def test_deterministic(self):
        sched = GroverSchedule(4, 30)
        a = qmciml(0.37, sched, StreamKey(5, 1, 2, QMCI_SHOTS))
        b = qmciml(0.37, sched, StreamKey(5, 1, 2, QMCI_SHOTS))
        assert a.estimate == b.estimate and np.array_equal(a.counts, b.counts)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 1.0), st.integers(0, 6), st.integers(0, 1000))
    def test_ranges_and_counts(self, mu, M, seed):
        sched = GroverSchedule(M, 7)
        out = qmciml(mu, sched, StreamKey(seed))
        assert 0.0 <= out.estimate <= 1.0
        assert 0.0 <= out.theta_hat <= math.pi / 2
        assert out.estimate == pytest.approx(math.sin(out.theta_hat) ** 2)
        assert out.counts.shape == (M + 2, 2)
        assert np.all(out.counts.sum(axis=1) == 7)
        assert out.grover_applications == sched.oracle_calls_per_run()

    def test_mu_out_of_range(self):
        with pytest.raises(ValueError):
            qmciml(1.2, GroverSchedule(2, 3), StreamKey(0))

    def test_to_json(self):
        out = qmciml(0.5, GroverSchedule(1, 3), StreamKey(0)).to_json()
        assert set(out) == {"estimate", "theta_hat", "counts", "grover_applications"}
        assert isinstance(out["counts"], list)


class TestRescale:
    def test_endpoints_and_midpoint(self):
        assert clip_and_rescale(-1.0, 3.0, -1.0) == 0.0
        assert clip_and_rescale(3.0, 3.0, -1.0) == 1.0
        assert clip_and_rescale(1.0, 3.0, -1.0) == 0.5

    @pytest.mark.parametrize("x", [-2.0, 1.0, 4.0])
    def test_round_trip_clamps(self, x):
        u, lo = 3.0, -1.0
        assert rescale(clip_and_rescale(x, u, lo), u, lo) == pytest.approx(min(max(x, lo), u))

    @given(st.floats(-1e3, 1e3), st.floats(-10, 10), st.floats(0.01, 10))
    def test_in_unit_interval(self, x, lo, width):
        v = clip_and_rescale(x, lo + width, lo)
        assert 0.0 <= v <= 1.0

    def test_bounds_ordered(self):
        with pytest.raises(ValueError):
            clip_and_rescale(0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            rescale(0.5, 0.0, 1.0)

    def test_vectorised(self):
        out = clip_and_rescale(np.array([-5.0, 0.0, 5.0]), 1.0, -1.0)
        assert out.tolist() == [0.0, 0.5, 1.0]
