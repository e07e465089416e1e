from dataclasses import replace

import numpy as np
import pytest

from mmwave_track.experiments import (
    ExperimentConfig,
    InitScheme,
    init_trial,
    run_experiment,
    simulate_truth,
    sweep,
)
from mmwave_track.model import ArrayConfig, ChannelState, DynamicsParams, evolve
from mmwave_track.trackers import StepSizes


def small(**kw):
    base = dict(horizon=30, trials=40, seed=1)
    base.update(kw)
    return ExperimentConfig(**base)


class TestInitTrial:
    truth = ChannelState([0.4 - 0.3j, 1.1j], [0.8, 0.7], [0.75, 0.9])

    def test_perfect_is_exact(self):
        x = init_trial(self.truth, InitScheme("perfect"), np.random.default_rng(0))
        np.testing.assert_array_equal(x, self.truth.to_vector())

    def test_zero_variance_imperfect_is_exact(self):
        x = init_trial(self.truth, InitScheme("imperfect", 0.0, 0.0), np.random.default_rng(0))
        np.testing.assert_array_equal(x, self.truth.to_vector())

    def test_error_covariance(self):
        scheme = InitScheme("imperfect", 0.25, np.deg2rad(0.5) ** 2)
        rng = np.random.default_rng(1)
        x0 = self.truth.to_vector()
        eps = np.array([init_trial(self.truth, scheme, rng) - x0 for _ in range(100_000)])
        expected = np.array([0.25] * 4 + [np.deg2rad(0.5) ** 2] * 4)
        np.testing.assert_allclose(eps.var(axis=0), expected, rtol=0.05)
        off_diag = np.cov(eps.T) - np.diag(np.diag(np.cov(eps.T)))
        assert np.abs(off_diag / np.sqrt(np.outer(expected, expected))).max() < 0.02

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            InitScheme("noisy")


class TestTruthSimulation:
    def test_matches_stepwise_evolve_statistics(self):
        # One-step increments of the batched simulator against evolve().
        dyn = DynamicsParams(0.9, 1e-3, 4e-3)
        rng = np.random.default_rng(2)
        x0 = ChannelState([0.5 + 0.5j], [0.8], [0.8]).to_vector()
        batched = simulate_truth(np.tile(x0, (50_000, 1)), rng.standard_normal((50_000, 1, 4)), dyn)[:, 1]
        state = ChannelState.from_vector(x0)
        stepped = np.array([evolve(state, dyn, rng).to_vector() for _ in range(50_000)])
        for arr in (batched, stepped):
            np.testing.assert_allclose(arr.mean(axis=0), [0.45, 0.45, 0.8, 0.8], atol=0.01)
            np.testing.assert_allclose(arr.var(axis=0), [(1 - 0.81) / 2] * 2 + [1e-3, 4e-3], rtol=0.03)


class TestRunExperiment:
    def test_static_noiseless_is_exact(self):
        cfg = small(
            dynamics=DynamicsParams(1.0, 0.0, 0.0),
            snr_db=400.0,
            init=InitScheme("perfect"),
            terminal_init="truth",
            perfect_init_var=0.0,
        )
        trace = run_experiment(cfg)
        for alg in cfg.algorithms:
            for group in ("aoa", "aod", "gain"):
                assert np.max(trace.mse[alg][group]) < 1e-20, (alg, group)

    def test_shapes_and_nonnegative(self):
        trace = run_experiment(small())
        for alg in ("lms", "bilms", "ekf", "none"):
            assert trace.diverged[alg] == 0
            for group in ("aoa", "aod", "gain"):
                assert trace.mse[alg][group].shape == (30,)
                assert np.all(trace.mse[alg][group] >= 0)
                assert np.all(np.isfinite(trace.stderr[alg][group]))

    def test_same_seed_identical(self):
        a, b = run_experiment(small()), run_experiment(small())
        for alg in a.mse:
            for group in a.mse[alg]:
                assert a.mse[alg][group].tobytes() == b.mse[alg][group].tobytes()

    def test_trials_independent_of_batch(self):
        # Trial t sees the same draws whether run alone or among others.
        full = run_experiment(small(trials=5, algorithms=("lms",)))
        first = run_experiment(small(trials=1, algorithms=("lms",)))
        np.testing.assert_array_equal(full.trial_errors["lms"]["aoa"][0], first.trial_errors["lms"]["aoa"][0])

    def test_none_baseline_holds_initial_estimate(self):
        cfg = small(algorithms=("none",), trials=2000, horizon=20, seed=3)
        trace = run_experiment(cfg)
        k = np.arange(20)
        expected = k * cfg.dynamics.var_theta
        np.testing.assert_allclose(trace.mse["none"]["aoa"][1:], expected[1:], rtol=0.15)
        assert trace.mse["none"]["aoa"][0] == 0.0

    def test_divergence_is_counted_and_flagged(self):
        cfg = small(steps=StepSizes(1e6, 1e-4, 1e-4), algorithms=("lms", "ekf", "none"), trials=5, horizon=100)
        trace = run_experiment(cfg)
        assert trace.diverged == {"lms": 5, "ekf": 0, "none": 0}
        assert trace.all_diverged("lms")
        assert np.all(np.isnan(trace.mse["lms"]["aoa"]))
        assert np.isnan(trace.steady_state("lms")[0])
        assert np.all(np.isfinite(trace.mse["ekf"]["aoa"]))

    def test_paper_defaults_ordering(self):
        trace = run_experiment(ExperimentConfig(trials=500, seed=5))
        ss = {alg: trace.steady_state(alg) for alg in ("lms", "bilms", "ekf", "none")}
        assert ss["bilms"][0] < ss["ekf"][0]
        for alg in ("lms", "bilms", "ekf"):
            assert ss[alg][0] < ss["none"][0]

    @pytest.mark.parametrize("bad", [dict(horizon=0), dict(trials=0), dict(algorithms=("kalman",)),
                                     dict(algorithms=()), dict(terminal_init="oracle")])
    def test_config_validation(self, bad):
        with pytest.raises(ValueError):
            ExperimentConfig(**bad)


class TestSweep:
    def test_single_value_matches_run(self):
        cfg = small(algorithms=("lms", "ekf"))
        (trace,) = sweep(cfg, "snr_db", [20.0])
        ref = run_experiment(replace(cfg, snr_db=20.0))
        np.testing.assert_array_equal(trace.mse["ekf"]["aoa"], ref.mse["ekf"]["aoa"])

    def test_array_size_sets_both_ends(self):
        cfg = small(algorithms=("none",), trials=3)
        traces = sweep(cfg, "array_size", [4, 8])
        assert len(traces) == 2
        # "none" does not depend on the array, and the draws are paired across values.
        np.testing.assert_array_equal(traces[0].mse["none"]["aoa"], traces[1].mse["none"]["aoa"])

    def test_snr_improvement_shrinks(self):
        cfg = ExperimentConfig(trials=1000, algorithms=("lms", "bilms"), seed=6)
        t10, t20, t30 = sweep(cfg, "snr_db", [10, 20, 30])
        for alg in ("lms", "bilms"):
            m10, m20, m30 = (t.steady_state(alg)[0] for t in (t10, t20, t30))
            assert m20 - m30 < m10 - m20

    def test_rejects_bad_parameter(self):
        with pytest.raises(ValueError):
            sweep(small(), "rho", [0.9])
        with pytest.raises(ValueError):
            sweep(small(), "snr_db", [])
