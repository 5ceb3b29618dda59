"""Noise schedule, forward process, velocity identities, respacing, and
ancestral sampling.

The posterior oracle below takes the precision-form route (product of the
two Gaussian factors) rather than the closed-form coefficients, so the
two computations share no code path.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fragdiff._diffusion import (
    NoiseSchedule,
    SamplingError,
    ddpm_sample,
    eps_from_v,
    make_cosine_schedule,
    make_sampling_subsequence,
    posterior_moments,
    q_sample,
    v_from_x0_eps,
    x0_from_eps,
    x0_from_v,
)


def posterior_precision_oracle(x0, xt, t, s):
    """Moments of q(x_{t-1} | x_t, x_0) by completing the square (t >= 2)."""
    alpha, beta, ab_prev = s.alpha[t], s.beta[t], s.alpha_bar[t - 1]
    precision = alpha / beta + 1.0 / (1.0 - ab_prev)
    var = 1.0 / precision
    mean = var * (np.sqrt(alpha) / beta * xt + np.sqrt(ab_prev) / (1.0 - ab_prev) * x0)
    return mean, var


class TestCosineSchedule:
    def test_table_shapes_and_sentinels(self):
        s = make_cosine_schedule(1000)
        assert s.steps == 1000
        assert s.alpha_bar.shape == (1001,)
        assert s.alpha_bar[0] == 1.0
        assert s.posterior_beta[1] == 0.0
        np.testing.assert_array_equal(s.timesteps, np.arange(1001))

    def test_alpha_bar_strictly_decreasing_and_small_at_end(self):
        s = make_cosine_schedule(1000)
        assert (np.diff(s.alpha_bar) < 0).all()
        assert s.alpha_bar[-1] <= 1e-4

    def test_beta_cap(self):
        s = make_cosine_schedule(1000)
        assert s.beta[1:].max() == 0.999  # the final step hits the cap
        assert s.beta[1:].min() > 0

    def test_tables_mutually_consistent(self):
        s = make_cosine_schedule(1000)
        np.testing.assert_array_equal(s.alpha[1:], 1.0 - s.beta[1:])
        np.testing.assert_array_equal(s.alpha_bar[1:], np.cumprod(s.alpha[1:]))

    def test_float64_tables(self):
        s = make_cosine_schedule(50)
        for table in (s.beta, s.alpha, s.alpha_bar, s.posterior_beta):
            assert table.dtype == np.float64

    @given(st.integers(min_value=4, max_value=300))
    @settings(max_examples=25, deadline=None)
    def test_invariants_any_length(self, T):
        s = make_cosine_schedule(T)
        assert (np.diff(s.alpha_bar) < 0).all()
        assert ((s.beta[1:] > 0) & (s.beta[1:] <= 0.999)).all()
        assert (s.posterior_beta[1:] <= s.beta[1:]).all()
        assert s.posterior_beta[1] == 0.0


class TestScheduleValidation:
    def _tables(self, betas):
        betas = np.asarray(betas, dtype=np.float64)
        n = betas.size
        alpha = 1.0 - betas
        return dict(
            steps=n,
            beta=np.concatenate([[0.0], betas]),
            alpha=np.concatenate([[1.0], alpha]),
            alpha_bar=np.concatenate([[1.0], np.cumprod(alpha)]),
            posterior_beta=np.zeros(n + 1),
            timesteps=np.arange(n + 1),
        )

    def test_beta_of_exactly_one_accepted(self):
        # a respaced tail stride can round to 1.0; the tables must carry it
        NoiseSchedule(**self._tables([0.5, 1.0 - 1e-12]))
        t = self._tables([0.5, 0.9])
        t["beta"][2] = 1.0
        t["alpha"][2] = 0.0
        t["alpha_bar"][2] = 1e-300
        NoiseSchedule(**t)

    def test_beta_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            NoiseSchedule(**self._tables([0.5, 1.0 + 1e-9]))
        with pytest.raises(ValueError):
            NoiseSchedule(**self._tables([0.0, 0.5]))

    def test_non_decreasing_alpha_bar_rejected(self):
        t = self._tables([0.5, 0.5])
        t["alpha_bar"][2] = t["alpha_bar"][1]
        with pytest.raises(ValueError):
            NoiseSchedule(**t)

    def test_alpha_bar_sentinel_enforced(self):
        t = self._tables([0.5, 0.5])
        t["alpha_bar"][0] = 0.999999
        with pytest.raises(ValueError):
            NoiseSchedule(**t)


class TestPosterior:
    def test_first_step_collapses_to_clean_signal(self):
        s = make_cosine_schedule(1000)
        rng = np.random.default_rng(0)
        x0, xt = rng.standard_normal((2, 5, 5)), rng.standard_normal((2, 5, 5))
        m = posterior_moments(x0, xt, 1, s)
        np.testing.assert_allclose(m.mean, x0, rtol=1e-10)
        assert float(np.max(m.variance)) == 0.0

    @pytest.mark.parametrize("t", [2, 17, 500, 999, 1000])
    def test_matches_precision_form_oracle(self, t):
        s = make_cosine_schedule(1000)
        rng = np.random.default_rng(t)
        x0 = rng.standard_normal((3, 4))
        xt = rng.standard_normal((3, 4))
        m = posterior_moments(x0, xt, t, s)
        mean_ref, var_ref = posterior_precision_oracle(x0, xt, t, s)
        np.testing.assert_allclose(m.mean, mean_ref, rtol=1e-10)
        np.testing.assert_allclose(np.max(m.variance), var_ref, rtol=1e-10)

    def test_variance_never_exceeds_beta(self):
        s = make_cosine_schedule(1000)
        assert (s.posterior_beta[1:] <= s.beta[1:]).all()

    def test_mean_coefficient_sum(self):
        # the x0/xt coefficients sum to 1 only at t=1 (and nearly so while
        # beta is small); by the final step the sum has collapsed
        s = make_cosine_schedule(1000)
        t = np.arange(1, 1001)
        c0 = np.sqrt(s.alpha_bar[t - 1]) * s.beta[t] / (1.0 - s.alpha_bar[t])
        ct = np.sqrt(s.alpha[t]) * (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t])
        total = c0 + ct
        assert abs(total[0] - 1.0) < 1e-11
        assert total.max() <= 1.0 + 1e-9
        assert total[-1] < 0.05

    def test_timestep_bounds_checked(self):
        s = make_cosine_schedule(10)
        x = np.zeros((2, 2))
        with pytest.raises(ValueError):
            posterior_moments(x, x, 0, s)
        with pytest.raises(ValueError):
            posterior_moments(x, x, 11, s)


class TestForwardAndIdentities:
    def setup_method(self):
        self.s = make_cosine_schedule(1000)

    def test_q_sample_endpoints(self):
        rng = np.random.default_rng(1)
        x0 = rng.standard_normal((2, 3, 4, 4))
        eps = rng.standard_normal((2, 3, 4, 4))
        t = 400
        ab = self.s.alpha_bar[t]
        np.testing.assert_allclose(
            q_sample(x0, t, np.zeros_like(eps), self.s), np.sqrt(ab) * x0, rtol=1e-12
        )
        np.testing.assert_allclose(
            q_sample(np.zeros_like(x0), t, eps, self.s), np.sqrt(1 - ab) * eps, rtol=1e-12
        )

    def test_per_sample_timesteps_broadcast(self):
        rng = np.random.default_rng(2)
        x0 = rng.standard_normal((3, 2, 4, 4))
        eps = rng.standard_normal((3, 2, 4, 4))
        t = np.array([1, 500, 1000])
        batched = q_sample(x0, t, eps, self.s)
        for i, ti in enumerate(t):
            np.testing.assert_array_equal(batched[i], q_sample(x0[i], int(ti), eps[i], self.s))

    def test_timestep_zero_rejected(self):
        with pytest.raises(ValueError):
            q_sample(np.zeros((1, 2)), 0, np.zeros((1, 2)), self.s)

    def test_round_trip_identities(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            x0 = rng.standard_normal((2, 3, 4))
            eps = rng.standard_normal((2, 3, 4))
            t = int(rng.integers(1, 1001))
            xt = q_sample(x0, t, eps, self.s)
            v = v_from_x0_eps(x0, eps, t, self.s)
            np.testing.assert_allclose(x0_from_v(xt, v, t, self.s), x0, rtol=1e-9, atol=1e-9)
            np.testing.assert_allclose(eps_from_v(xt, v, t, self.s), eps, rtol=1e-9, atol=1e-9)
            np.testing.assert_allclose(x0_from_eps(xt, eps, t, self.s), x0, rtol=1e-9, atol=1e-9)

    def test_clean_estimate_routes_agree_for_any_velocity(self):
        # the direct velocity route and the via-noise route are the same
        # affine map, so they must agree even for an arbitrary prediction
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(200):
            xt = rng.standard_normal((2, 8))
            v_hat = rng.standard_normal((2, 8))
            t = int(rng.integers(1, 1001))
            direct = x0_from_v(xt, v_hat, t, self.s)
            via_eps = x0_from_eps(xt, eps_from_v(xt, v_hat, t, self.s), t, self.s)
            worst = max(worst, float(np.abs(direct - via_eps).max()))
        assert worst < 1e-5


class TestRespacing:
    def test_uniform_stride_selection(self):
        s = make_cosine_schedule(1000)
        taus, sub = make_sampling_subsequence(s, 100)
        np.testing.assert_array_equal(taus, np.arange(10, 1001, 10))
        assert sub.steps == 100

    def test_alpha_bar_carried_bit_for_bit(self):
        s = make_cosine_schedule(1000)
        taus, sub = make_sampling_subsequence(s, 73)
        np.testing.assert_array_equal(sub.alpha_bar[1:], s.alpha_bar[taus])
        np.testing.assert_array_equal(sub.timesteps[1:], taus)
        assert (np.diff(taus) > 0).all() and taus[-1] == 1000

    def test_full_respacing_is_identity(self):
        s = make_cosine_schedule(200)
        taus, sub = make_sampling_subsequence(s, 200)
        np.testing.assert_array_equal(taus, np.arange(1, 201))
        np.testing.assert_array_equal(sub.alpha_bar, s.alpha_bar)
        np.testing.assert_allclose(sub.beta[1:], s.beta[1:], rtol=1e-12)

    def test_single_step_chain(self):
        s = make_cosine_schedule(1000)
        taus, sub = make_sampling_subsequence(s, 1)
        np.testing.assert_array_equal(taus, [1000])
        assert sub.beta[1] == 1.0 - s.alpha_bar[1000]

    def test_step_count_bounds(self):
        s = make_cosine_schedule(100)
        with pytest.raises(ValueError):
            make_sampling_subsequence(s, 0)
        with pytest.raises(ValueError):
            make_sampling_subsequence(s, 101)

    @given(st.integers(min_value=10, max_value=400), st.data())
    @settings(max_examples=25, deadline=None)
    def test_subsequence_invariants(self, T, data):
        steps = data.draw(st.integers(min_value=1, max_value=T))
        s = make_cosine_schedule(T)
        taus, sub = make_sampling_subsequence(s, steps)
        assert taus.shape == (steps,)
        assert (np.diff(taus) > 0).all()
        assert taus[-1] == T
        np.testing.assert_array_equal(sub.alpha_bar[1:], s.alpha_bar[taus])
        assert ((sub.beta[1:] > 0) & (sub.beta[1:] <= 1.0)).all()


def perfect_velocity_model(target, s):
    def model(x_t, t, cond):
        eps = (x_t - np.sqrt(s.alpha_bar[t]) * target) / np.sqrt(1.0 - s.alpha_bar[t])
        return v_from_x0_eps(target, eps.astype(np.float32), t, s)

    return model


class TestAncestralSampling:
    def test_planted_denoiser_recovers_target(self):
        s = make_cosine_schedule(200)
        rng = np.random.default_rng(5)
        target = rng.uniform(-0.9, 0.9, size=(3, 4, 4)).astype(np.float32)
        model = perfect_velocity_model(target, s)
        full = ddpm_sample(model, None, target.shape, s, 200, rng_seed=11)
        assert np.abs(full - target).max() < 1e-2
        respaced = ddpm_sample(model, None, target.shape, s, 20, rng_seed=11)
        assert np.abs(respaced - target).max() < 5e-2

    def test_deterministic_given_seed(self):
        s = make_cosine_schedule(50)
        model = perfect_velocity_model(np.zeros((2, 3, 3), np.float32), s)
        a = ddpm_sample(model, None, (2, 3, 3), s, 50, rng_seed=4)
        b = ddpm_sample(model, None, (2, 3, 3), s, 50, rng_seed=4)
        c = ddpm_sample(model, None, (2, 3, 3), s, 50, rng_seed=5)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_output_within_value_range_shape_and_dtype(self):
        s = make_cosine_schedule(30)
        model = perfect_velocity_model(np.full((1, 4, 4), 0.5, np.float32), s)
        out = ddpm_sample(model, None, (1, 4, 4), s, 30, rng_seed=0)
        assert out.shape == (1, 4, 4) and out.dtype == np.float32
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_non_finite_output_reported_with_step(self):
        s = make_cosine_schedule(30)

        def broken(x_t, t, cond):
            return np.full_like(x_t, np.nan)

        with pytest.raises(SamplingError, match="chain index 30"):
            ddpm_sample(broken, None, (1, 2, 2), s, 30, rng_seed=0)
