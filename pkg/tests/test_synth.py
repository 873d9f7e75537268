"""Synthetic data generators and the slow numeric twins they feed."""

import math

import numpy as np
import pytest

from moescale import (
    AffineLatencyModel,
    HardwareConfig,
    SynthSpec,
    predict_loss,
    serve_simulate,
    synth_profile,
    synth_runs,
    throughput,
)
from moescale.synth import dense_optimal_numeric, grid_argmin_loss

from conftest import DENSE_TRUTH, TRUTH


class TestSynthRuns:
    def test_zero_noise_is_bitwise_exact(self, runs_clean, truth):
        for r in runs_clean:
            assert r.val_loss == float(
                predict_loss(r.n_dense, r.d_tokens, r.experts, truth)
            )

    def test_covers_the_full_design(self, runs_clean):
        assert len(runs_clean) == 100
        assert len({(r.n_dense, r.d_tokens, r.experts) for r in runs_clean}) == 100

    def test_seeded_and_reproducible(self, truth):
        spec = SynthSpec(truth, (1.0e8, 2.0e8), (1.0e10,), (1.0, 8.0), 0.01, rng_seed=5)
        assert synth_runs(spec) == synth_runs(spec)
        other = SynthSpec(truth, (1.0e8, 2.0e8), (1.0e10,), (1.0, 8.0), 0.01, rng_seed=6)
        assert synth_runs(other) != synth_runs(spec)

    def test_noise_is_centered_in_log_space(self, truth):
        sigma = 0.01
        spec = SynthSpec(
            truth,
            tuple(np.geomspace(1.0e8, 2.0e9, 25)),
            tuple(np.geomspace(1.0e9, 5.0e10, 20)),
            tuple(float(e) for e in range(1, 21)),
            noise_sigma=sigma,
            rng_seed=2,
        )
        runs = synth_runs(spec)
        assert len(runs) == 10000
        clean = predict_loss(
            np.array([r.n_dense for r in runs]),
            np.array([r.d_tokens for r in runs]),
            np.array([r.experts for r in runs]),
            truth,
        )
        residuals = np.log([r.val_loss for r in runs]) - np.log(clean)
        assert abs(residuals.mean()) < 3.0 * sigma / 100.0
        np.testing.assert_allclose(residuals.std(), sigma, rtol=0.05)

    def test_rejects_bad_specs(self, truth):
        with pytest.raises(ValueError):
            SynthSpec(truth, (), (1.0e10,), (1.0,))
        with pytest.raises(ValueError):
            SynthSpec(truth, (1.0e8,), (1.0e10,), (0.5,))
        with pytest.raises(ValueError):
            SynthSpec(truth, (1.0e8,), (1.0e10,), (1.0,), noise_sigma=-0.1)


class TestSynthProfile:
    def test_reproduces_the_affine_models_off_grid(self, profile):
        from conftest import DECODE_MODEL, PROMPT_MODEL

        for stage, model in (("prompt", PROMPT_MODEL), ("decode", DECODE_MODEL)):
            val, extrapolated = profile.interpolate(stage, 3.3e9, 3, 200.0)
            np.testing.assert_allclose(val, model.latency(200.0, 3.3e9, 3), rtol=1.0e-12)
            assert not extrapolated

    def test_stages_are_independent(self, profile):
        p, _ = profile.interpolate("prompt", 1.0e9, 2, 64.0)
        d, _ = profile.interpolate("decode", 1.0e9, 2, 64.0)
        assert p != d

    def test_nonpositive_latency_rejected(self):
        sinking = AffineLatencyModel(c0=-1.0, c1=1.0e-6, c2=0.0)
        with pytest.raises(ValueError, match="nonpositive"):
            synth_profile(sinking, sinking, (1.0, 64.0), (1.0e8, 1.0e9), (1,))

    def test_needs_two_grid_points_per_axis(self):
        flat = AffineLatencyModel(c0=0.01, c1=0.0, c2=0.0)
        with pytest.raises(ValueError, match="distinct"):
            synth_profile(flat, flat, (64.0,), (1.0e8, 1.0e9), (1,))


class TestServeSimulate:
    # batch ~ 480 >= output_len keeps the simulator in the steady-batching
    # regime where the analytic amortization argument holds
    CONFIG = dict(n_dense=1.0e9, experts=1.0, gpus=2)

    def test_agrees_with_analytic_throughput(self, hw, geom, profile):
        sim = serve_simulate(
            self.CONFIG["n_dense"], self.CONFIG["experts"], self.CONFIG["gpus"],
            hw, geom, profile, steps=4096,
        )
        analytic = throughput(
            self.CONFIG["n_dense"], self.CONFIG["experts"], self.CONFIG["gpus"],
            hw, geom, profile,
        )
        assert sim.warmed_up
        assert abs(sim.tokens_per_second / analytic - 1.0) < 0.01

    def test_deterministic(self, hw, geom, profile):
        a = serve_simulate(1.0e9, 1.0, 2, hw, geom, profile, steps=1024)
        b = serve_simulate(1.0e9, 1.0, 2, hw, geom, profile, steps=1024)
        assert a == b

    def test_doubling_latency_exactly_halves_the_rate(self, hw, geom):
        from conftest import (
            DECODE_MODEL,
            PROFILE_BATCHES,
            PROFILE_GPUS,
            PROFILE_MODEL_BYTES,
            PROMPT_MODEL,
        )

        slow_prompt = AffineLatencyModel(
            2.0 * PROMPT_MODEL.c0, 2.0 * PROMPT_MODEL.c1, 2.0 * PROMPT_MODEL.c2
        )
        slow_decode = AffineLatencyModel(
            2.0 * DECODE_MODEL.c0, 2.0 * DECODE_MODEL.c1, 2.0 * DECODE_MODEL.c2
        )
        fast = synth_profile(
            PROMPT_MODEL, DECODE_MODEL, PROFILE_BATCHES, PROFILE_MODEL_BYTES, PROFILE_GPUS
        )
        slow = synth_profile(
            slow_prompt, slow_decode, PROFILE_BATCHES, PROFILE_MODEL_BYTES, PROFILE_GPUS
        )
        r_fast = serve_simulate(1.0e9, 1.0, 2, hw, geom, fast, steps=1024)
        r_slow = serve_simulate(1.0e9, 1.0, 2, hw, geom, slow, steps=1024)
        assert r_slow.tokens_per_second == r_fast.tokens_per_second / 2.0
        assert r_slow.tokens_emitted == r_fast.tokens_emitted

    def test_short_run_reports_cold_measurement(self, hw, geom, profile):
        sim = serve_simulate(1.0e9, 1.0, 2, hw, geom, profile, steps=100)
        assert not sim.warmed_up

    def test_no_room_for_a_single_request(self, geom, profile):
        """Weights fit but the KV cache cannot hold one request."""
        tight = HardwareConfig(gpu_mem_bytes=2.1e9, max_gpus=1)
        sim = serve_simulate(1.0e9, 1.0, 1, tight, geom, profile)
        assert sim.tokens_per_second == 0.0
        assert sim.tokens_emitted == 0
        assert not sim.warmed_up


class TestGridArgmin:
    def test_deterministic_and_bounded(self, truth, arch):
        n1, l1 = grid_argmin_loss(1.0e20, 8.0, truth, arch)
        n2, l2 = grid_argmin_loss(1.0e20, 8.0, truth, arch)
        assert (n1, l1) == (n2, l2)
        assert 1.0e5 <= n1 <= 1.0e13

    def test_endpoints_are_scanned(self, truth, arch):
        """A window pinned away from the optimum returns its best edge."""
        n, _ = grid_argmin_loss(1.0e20, 8.0, truth, arch, n_bounds=(1.0e5, 1.0e6), grid_size=16)
        assert n == 1.0e6

    def test_rejects_degenerate_grids(self, truth, arch):
        with pytest.raises(ValueError):
            grid_argmin_loss(1.0e20, 8.0, truth, arch, grid_size=1)
        with pytest.raises(ValueError):
            grid_argmin_loss(1.0e20, 8.0, truth, arch, n_bounds=(1.0e6, 1.0e5))


class TestDenseOptimalNumeric:
    def test_matches_the_closed_form(self):
        from moescale import dense_optimal

        budget = 3.7e19
        n_closed, d_closed = dense_optimal(budget, DENSE_TRUTH)
        n_num, d_num = dense_optimal_numeric(budget, DENSE_TRUTH)
        np.testing.assert_allclose(n_num, n_closed, rtol=1.0e-6)
        np.testing.assert_allclose(d_num, d_closed, rtol=1.0e-6)

    def test_rejects_nonpositive_budget(self):
        with pytest.raises(ValueError):
            dense_optimal_numeric(-1.0, DENSE_TRUTH)
