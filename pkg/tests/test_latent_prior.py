"""Encoders, diffusion schedule algebra, reverse-chain oracles, and
prior generation."""

import numpy as np
import pytest

import cassikit.tensor as T
from cassikit.errors import NumericError, ShapeError, UsageError
from cassikit.gradcheck import grad_check
from cassikit.prior import (DiffusionSchedule, EpsilonMlp, LatentEncoder,
                            diffuse_forward, generate_prior, make_schedule,
                            posterior_mean, reverse_step, time_embedding)
from cassikit.tensor import Tape, Tensor

F64 = np.float64


class TestSchedule:
    def test_default_16_uses_linear_betas(self):
        sch = make_schedule(16)
        assert abs(sch.betas[0] - 0.1) < 1e-12 and abs(sch.betas[-1] - 0.99) < 1e-12
        assert sch.alpha_bars[-1] <= 1e-4

    @pytest.mark.parametrize("steps", [1, 2, 4, 8, 16, 32])
    def test_all_schedules_end_near_pure_noise(self, steps):
        sch = make_schedule(steps)
        assert sch.alpha_bars[-1] <= 1e-4
        assert np.all(np.diff(sch.alpha_bars) < 0.0) or steps == 1

    def test_invalid_betas_rejected(self):
        with pytest.raises(NumericError):
            DiffusionSchedule(np.array([0.5, 1.2]))
        with pytest.raises(NumericError):
            DiffusionSchedule(np.array([0.1, 0.1]))  # alpha_bar_T too large

    def test_t_bounds(self):
        sch = make_schedule(4)
        with pytest.raises(UsageError):
            sch.alpha(0)
        with pytest.raises(UsageError):
            sch.alpha(5)


class TestDiffuseForward:
    def test_epsilon_zero(self):
        sch = make_schedule(16)
        z0 = np.random.default_rng(0).standard_normal((4, 8))
        zt = diffuse_forward(z0, 5, np.zeros_like(z0), sch)
        np.testing.assert_allclose(zt, np.sqrt(sch.alpha_bar(5)) * z0, atol=1e-12)

    def test_near_identity_at_first_step_limit(self):
        # t -> 0 boundary convention: alpha_bar -> 1 reproduces z0; emulate
        # with an almost-noise-free first step
        sch = DiffusionSchedule(np.concatenate([[1e-12], np.full(20, 0.6)]))
        z0 = np.random.default_rng(1).standard_normal((4, 8))
        zt = diffuse_forward(z0, 1, np.zeros_like(z0), sch)
        np.testing.assert_allclose(zt, z0, atol=1e-9)

    def test_t_out_of_range(self):
        sch = make_schedule(4)
        with pytest.raises(UsageError):
            diffuse_forward(np.zeros((2, 2)), 0, np.zeros((2, 2)), sch)

    def test_monte_carlo_statistics(self):
        sch = make_schedule(16)
        rng = np.random.default_rng(2)
        z0 = rng.standard_normal(6)
        t = 9
        n = 10_000
        eps = rng.standard_normal((n, 6))
        samples = np.stack([diffuse_forward(z0, t, e, sch) for e in eps])
        ab = sch.alpha_bar(t)
        se_mean = np.sqrt((1 - ab) / n)
        assert np.abs(samples.mean(axis=0) - np.sqrt(ab) * z0).max() <= 3 * se_mean
        var = samples.var(axis=0, ddof=1)
        se_var = (1 - ab) * np.sqrt(2.0 / (n - 1))
        assert np.abs(var - (1 - ab)).max() <= 3 * se_var


class TestReverseStep:
    def test_zero_prediction_zero_noise(self):
        sch = make_schedule(16)
        rng = np.random.default_rng(0)
        zt = rng.standard_normal((4, 8))
        out = reverse_step(zt, 7, None, lambda z, c, t: np.zeros_like(zt), sch)
        np.testing.assert_allclose(out, zt / np.sqrt(sch.alpha(7)), atol=1e-12)

    @pytest.mark.parametrize("t", [2, 7, 16])
    def test_oracle_matches_posterior_mean_closed_form(self, t):
        # independent oracle: the standard posterior mean written in
        # (z0, z_t) coefficients instead of the epsilon form
        sch = make_schedule(16)
        rng = np.random.default_rng(t)
        z0 = rng.standard_normal((4, 8))
        eps = rng.standard_normal((4, 8))
        zt = diffuse_forward(z0, t, eps, sch)
        got = reverse_step(zt, t, None, lambda z, c, tt: eps, sch, noise=None)
        a = sch.alpha(t)
        ab = sch.alpha_bar(t)
        ab_prev = sch.alpha_bar(t - 1) if t > 1 else 1.0
        beta = 1.0 - a
        mu = (np.sqrt(ab_prev) * beta / (1 - ab)) * z0 \
            + (np.sqrt(a) * (1 - ab_prev) / (1 - ab)) * zt
        assert np.abs(got - mu).max() <= 1e-6

    def test_full_chain_with_denoising_oracle_recovers_z0(self):
        # z_T built from one shared epsilon; the oracle predicts the noise
        # implied by the current iterate, and the final step cancels it
        sch = make_schedule(16)
        rng = np.random.default_rng(5)
        z0 = rng.standard_normal((4, 8))
        eps = rng.standard_normal((4, 8))
        z = diffuse_forward(z0, 16, eps, sch)

        def oracle(zt, c, t):
            ab = sch.alpha_bar(t)
            return (zt - np.sqrt(ab) * z0) / np.sqrt(1 - ab)

        for t in range(16, 0, -1):
            z = reverse_step(z, t, None, oracle, sch, noise=None)
        assert np.abs(z - z0).max() <= 1e-4

    def test_noise_ignored_at_t1(self):
        sch = make_schedule(4)
        rng = np.random.default_rng(6)
        zt = rng.standard_normal((2, 3))
        noise = rng.standard_normal((2, 3))
        a = reverse_step(zt, 1, None, lambda z, c, t: np.zeros_like(zt), sch, noise=noise)
        b = reverse_step(zt, 1, None, lambda z, c, t: np.zeros_like(zt), sch, noise=None)
        np.testing.assert_array_equal(a, b)

    def test_variance_term(self):
        sch = make_schedule(8)
        zt = np.zeros((2, 2))
        noise = np.ones((2, 2))
        out = reverse_step(zt, 5, None, lambda z, c, t: np.zeros_like(zt), sch, noise=noise)
        np.testing.assert_allclose(out, np.sqrt(1 - sch.alpha(5)), atol=1e-12)


class TestEpsilonMlp:
    def test_shape_contract(self):
        rng = np.random.default_rng(0)
        mlp = EpsilonMlp(8, rng=rng, dtype=F64)
        z = Tensor(rng.standard_normal((2, 4, 8)), dtype=F64)
        c = Tensor(rng.standard_normal((2, 4, 8)), dtype=F64)
        assert mlp(z, c, 3).shape == (2, 4, 8)

    def test_time_sensitivity(self):
        rng = np.random.default_rng(1)
        mlp = EpsilonMlp(8, rng=rng, dtype=F64)
        # the head ships zero-initialized (chain stability); give it weight so
        # the injective time embedding reaches the output
        mlp.head.weight.data[:] = rng.standard_normal(mlp.head.weight.shape)
        z = Tensor(rng.standard_normal((1, 4, 8)), dtype=F64)
        c = Tensor(rng.standard_normal((1, 4, 8)), dtype=F64)
        a = mlp(z, c, 1).data
        b = mlp(z, c, 16).data
        assert not np.allclose(a, b)

    def test_embedding_injective_over_range(self):
        embs = [tuple(time_embedding(t, 8)) for t in range(1, 17)]
        assert len(set(embs)) == 16

    def test_shape_mismatch(self):
        rng = np.random.default_rng(2)
        mlp = EpsilonMlp(8, rng=rng)
        with pytest.raises(ShapeError):
            mlp(Tensor(np.zeros((1, 4, 8))), Tensor(np.zeros((1, 3, 8))), 1)

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        mlp = EpsilonMlp(4, rng=rng, dtype=F64)
        mlp.head.weight.data[:] = 0.1 * rng.standard_normal(mlp.head.weight.shape)
        z = Tensor(rng.standard_normal((1, 3, 4)), dtype=F64)
        c = Tensor(rng.standard_normal((1, 3, 4)), dtype=F64)
        assert grad_check(lambda t: T.sum_(T.abs_(mlp(z, c, 2))), mlp.fc_in.weight) <= 1e-4


class TestGeneratePrior:
    def test_determinism_under_fixed_seed(self):
        rng = np.random.default_rng(0)
        mlp = EpsilonMlp(8, rng=rng, dtype=F64)
        c = Tensor(rng.standard_normal((1, 4, 8)), dtype=F64)
        sch = make_schedule(16)
        a = generate_prior(c, sch, mlp, np.random.default_rng(42)).data
        b = generate_prior(c, sch, mlp, np.random.default_rng(42)).data
        assert np.array_equal(a, b)
        c2 = generate_prior(c, sch, mlp, np.random.default_rng(43)).data
        assert not np.array_equal(a, c2)

    def test_paper_scale_steps_16(self):
        # the chain runs exactly T steps; instrument the model call count
        rng = np.random.default_rng(1)
        mlp = EpsilonMlp(4, rng=rng, dtype=F64)
        calls = []
        wrapped = lambda z, c, t: (calls.append(t), mlp(z, c, t))[1]
        c = Tensor(rng.standard_normal((1, 2, 4)), dtype=F64)
        generate_prior(c, make_schedule(16), wrapped, np.random.default_rng(0))
        assert calls == list(range(16, 0, -1))

    def test_backward_through_chain(self):
        rng = np.random.default_rng(2)
        mlp = EpsilonMlp(4, rng=rng, dtype=F64)
        mlp.head.weight.data[:] = 0.05 * rng.standard_normal(mlp.head.weight.shape)
        sch = make_schedule(4)
        c = Tensor(rng.standard_normal((1, 3, 4)), dtype=F64)

        def f(theta):
            zhat = generate_prior(c, sch, mlp, np.random.default_rng(7), stochastic=True)
            return T.mean(T.abs_(zhat))

        assert grad_check(f, mlp.head.weight) <= 1e-4

    def test_gradients_reach_condition_encoder_inputs(self):
        rng = np.random.default_rng(3)
        mlp = EpsilonMlp(4, rng=rng, dtype=F64)
        mlp.head.weight.data[:] = 0.1 * rng.standard_normal(mlp.head.weight.shape)
        sch = make_schedule(4)
        c = Tensor(rng.standard_normal((1, 3, 4)), requires_grad=True, dtype=F64)
        with Tape() as tape:
            zhat = generate_prior(c, sch, mlp, np.random.default_rng(0))
            loss = T.mean(T.abs_(zhat))
            tape.backward(loss)
        assert c.grad is not None and np.any(c.grad != 0)


class TestLatentEncoder:
    def test_output_shape_various_inputs(self):
        rng = np.random.default_rng(0)
        enc = LatentEncoder(4, 16, 8, hidden=(4, 8, 8), rng=rng, dtype=F64)
        for hw in (32, 64):
            x = Tensor(rng.standard_normal((1, 4, hw, hw)), dtype=F64)
            assert enc(x).shape == (1, 16, 8)

    def test_zero_input_zero_latent(self):
        rng = np.random.default_rng(1)
        enc = LatentEncoder(4, 16, 8, hidden=(4, 8, 8), rng=rng, dtype=F64)
        out = enc(Tensor(np.zeros((1, 4, 32, 32)), dtype=F64))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_indivisible_extents_rejected(self):
        rng = np.random.default_rng(2)
        enc = LatentEncoder(4, 16, 8, hidden=(4, 8, 8), rng=rng)
        with pytest.raises(ShapeError):
            enc(Tensor(np.zeros((1, 4, 20, 20))))

    def test_distinct_scenes_give_distinct_conditions(self):
        from cassikit.physics import make_mask, make_synthetic_scene, SensingOperator, ShiftSpec
        rng = np.random.default_rng(3)
        enc = LatentEncoder(8, 16, 16, hidden=(8, 16, 16), rng=rng, dtype=F64)
        op = SensingOperator(make_mask(3, 32, 32), 8, ShiftSpec(1))
        c_vecs = []
        for seed in (10, 11):
            x = make_synthetic_scene(seed, 32, 32, 8, "gaussian_blobs")
            ynorm = op.normalize_measurement(op.forward(x))
            c_vecs.append(enc(Tensor(ynorm[None], dtype=F64)).data.reshape(-1))
        a, b = c_vecs
        cos = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
        assert cos < 1.0 - 1e-6

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        enc = LatentEncoder(1, 4, 4, hidden=(4, 4, 4), rng=rng, dtype=F64)
        x = Tensor(rng.standard_normal((1, 1, 16, 16)), requires_grad=True, dtype=F64)
        assert grad_check(lambda t: T.mean(T.abs_(enc(t))), x) <= 1e-4
