import math

import numpy as np
import pytest

from driftfield.fields import evaluate_fields
from driftfield.kernels import RadialKernel
from driftfield.sampling import sample_prior, sample_ring_mog, stream_rng
from driftfield.trainer import (
    EvalRecord,
    MlpGenerator,
    OptimizerState,
    TrainConfig,
    TrainingDivergedError,
    adam_step,
    drifting_loss_and_semigrad,
    flatten_grads,
    generator_forward,
    generator_vjp,
    load_generator,
    save_generator,
    save_timeline_csv,
    score_transport_semigrad,
    semigrad_cosine,
    train,
)


def tiny_gen(seed=0, latent=3, hidden=5, out=2):
    return MlpGenerator.create(latent, hidden, out, seed)


class TestForward:
    def test_zero_parameters_zero_output(self):
        gen = tiny_gen()
        gen.set_parameters([np.zeros_like(p) for p in gen.parameters()])
        out = gen.forward(np.ones((4, 3)))
        np.testing.assert_array_equal(out, np.zeros((4, 2)))

    def test_last_layer_bias_only(self):
        gen = tiny_gen()
        params = [np.zeros_like(p) for p in gen.parameters()]
        params[7] = np.array([1.5, -0.5])
        gen.set_parameters(params)
        out = gen.forward(np.ones((3, 3)))
        np.testing.assert_allclose(out, np.tile([1.5, -0.5], (3, 1)), atol=1e-15)

    def test_duplicate_arithmetic_oracle(self):
        gen = tiny_gen(seed=7)
        rng = stream_rng(1, "test/fwd_dup")
        Z = rng.standard_normal((6, 3))
        h = Z
        for w, b in list(zip(gen.weights, gen.biases))[:-1]:
            h = np.tanh(h @ w + b)
        expected = h @ gen.weights[-1] + gen.biases[-1]
        np.testing.assert_allclose(gen.forward(Z), expected, atol=1e-12)

    def test_cloud_wrapper(self):
        gen = tiny_gen(seed=2)
        z = sample_prior(3, 10, seed=4)
        out = generator_forward(gen, z)
        assert out.label == "generated"
        assert out.data.shape == (10, 2)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError):
            tiny_gen().forward(np.zeros((2, 4)))


class TestVjp:
    def test_zero_cotangents(self):
        gen = tiny_gen(seed=3)
        grads = generator_vjp(gen, np.ones((5, 3)), np.zeros((5, 2)))
        for g in grads:
            np.testing.assert_array_equal(g, np.zeros_like(g))

    def test_last_layer_matrix_calculus_oracle(self):
        # output layer is affine, so dW4[a, b] = mean_i h_a(z_i) G_i[b]
        gen = tiny_gen(seed=4)
        rng = stream_rng(5, "test/vjp_linear")
        Z = rng.standard_normal((8, 3))
        G = rng.standard_normal((8, 2))
        _, acts = gen._forward_cache(Z)
        grads = gen.vjp_from_cache(acts, G)
        np.testing.assert_allclose(
            grads[6], np.einsum("ia,ib->ab", acts[3], G) / 8.0, atol=1e-14
        )
        np.testing.assert_allclose(grads[7], G.mean(axis=0), atol=1e-15)

    def test_finite_difference_suite(self):
        # 20 random nets against central differences, rel error <= 1e-5
        rng = stream_rng(6, "test/vjp_fd")
        for case in range(20):
            gen = tiny_gen(seed=100 + case)
            Z = rng.standard_normal((4, 3))
            G = rng.standard_normal((4, 2))
            grads = flatten_grads(generator_vjp(gen, Z, G))

            def objective(flat, gen=gen, Z=Z, G=G):
                shapes = [p.shape for p in gen.parameters()]
                params, pos = [], 0
                for shape in shapes:
                    size = int(np.prod(shape))
                    params.append(flat[pos : pos + size].reshape(shape))
                    pos += size
                probe = MlpGenerator(params[0::2], params[1::2])
                return float(np.mean(np.sum(probe.forward(Z) * G, axis=1)))

            flat0 = flatten_grads(gen.parameters())
            h = 1e-5
            fd = np.empty_like(flat0)
            for i in range(len(flat0)):
                up = flat0.copy()
                up[i] += h
                dn = flat0.copy()
                dn[i] -= h
                fd[i] = (objective(up) - objective(dn)) / (2.0 * h)
            err = np.linalg.norm(grads - fd) / max(np.linalg.norm(fd), 1e-12)
            assert err <= 1e-5


class TestDriftingLoss:
    def _setup(self, kernel, seed=0, n=16):
        gen = tiny_gen(seed=seed)
        z = stream_rng(seed, "test/loss_z").standard_normal((n, 3))
        refs = stream_rng(seed, "test/loss_refs").standard_normal((24, 2)) * 2.0
        return gen, z, refs

    def test_loss_matches_fields_module(self):
        kern = RadialKernel.laplace(0.5)
        gen, z, refs = self._setup(kern, seed=1)
        loss, _ = drifting_loss_and_semigrad(gen, z, refs, kern)
        X = gen.forward(z)
        est = evaluate_fields(kern, X, refs, X, eta=1.0, exclude_self_q=True)
        oracle = float(np.mean(np.sum(est.drift**2, axis=1)))
        assert loss == pytest.approx(oracle, abs=1e-12)

    def test_eta_scaling(self):
        kern = RadialKernel.gaussian(0.7)
        gen, z, refs = self._setup(kern, seed=2)
        loss1, grads1 = drifting_loss_and_semigrad(gen, z, refs, kern, eta=1.0)
        loss2, grads2 = drifting_loss_and_semigrad(gen, z, refs, kern, eta=2.0)
        assert loss2 == pytest.approx(4.0 * loss1, rel=1e-12)
        np.testing.assert_allclose(
            flatten_grads(grads2), 2.0 * flatten_grads(grads1), rtol=1e-12
        )

    @pytest.mark.parametrize("family", ["laplace", "gaussian"])
    def test_equilibrium_matched_conventions(self, family):
        kern = getattr(RadialKernel, family)(0.5)
        gen, z, _ = self._setup(kern, seed=3)
        X = gen.forward(z)
        loss, grads = drifting_loss_and_semigrad(
            gen, z, X, kern, include_self=True
        )
        assert loss == 0.0
        assert np.linalg.norm(flatten_grads(grads)) == 0.0

    def test_equilibrium_laplace_default_loo(self):
        # coincidence exclusion makes the p side leave-one-out as well
        kern = RadialKernel.laplace(0.5)
        gen, z, _ = self._setup(kern, seed=4)
        X = gen.forward(z)
        loss, grads = drifting_loss_and_semigrad(gen, z, X, kern)
        assert loss == 0.0
        assert np.linalg.norm(flatten_grads(grads)) == 0.0


class TestScoreTransport:
    def test_gaussian_identity_with_tau_squared(self):
        tau = 0.8
        kern = RadialKernel.gaussian(tau)
        gen = tiny_gen(seed=5)
        rng = stream_rng(7, "test/st")
        z = rng.standard_normal((12, 3))
        refs = rng.standard_normal((20, 2))
        _, g_drift = drifting_loss_and_semigrad(gen, z, refs, kern, eta=1.3)
        g_st = score_transport_semigrad(gen, z, refs, kern, eta=1.3, C=tau**2)
        a, b = flatten_grads(g_drift), flatten_grads(g_st)
        assert np.linalg.norm(a - b) <= 1e-10 * (1.0 + np.linalg.norm(a))

    def test_zero_gradient_at_matched_refs(self):
        kern = RadialKernel.laplace(0.5)
        gen = tiny_gen(seed=6)
        z = stream_rng(8, "test/st0").standard_normal((10, 3))
        X = gen.forward(z)
        g = score_transport_semigrad(gen, z, X, kern, eta=1.0, C=1.0)
        assert np.linalg.norm(flatten_grads(g)) == 0.0

    def test_c_linearity(self):
        kern = RadialKernel.laplace(0.4)
        gen = tiny_gen(seed=7)
        rng = stream_rng(9, "test/st_c")
        z = rng.standard_normal((10, 3))
        refs = rng.standard_normal((15, 2))
        g1 = flatten_grads(score_transport_semigrad(gen, z, refs, kern, 1.0, C=1.0))
        g2 = flatten_grads(score_transport_semigrad(gen, z, refs, kern, 1.0, C=2.0))
        np.testing.assert_allclose(g2, 2.0 * g1, rtol=1e-12)


class TestSemigradCosine:
    def test_gaussian_exact_alignment(self):
        kern = RadialKernel.gaussian(0.6)
        gen = tiny_gen(seed=8)
        rng = stream_rng(10, "test/cosine")
        z = rng.standard_normal((16, 3))
        refs = rng.standard_normal((30, 2)) + 1.0
        cos = semigrad_cosine(gen, z, refs, kern)
        assert cos == pytest.approx(1.0, abs=1e-10)


class TestAdam:
    def test_zero_gradients_keep_params(self):
        params = [np.array([1.0, -2.0]), np.array([[0.5]])]
        grads = [np.zeros(2), np.zeros((1, 1))]
        state = OptimizerState.for_params(params)
        new_params, new_state = adam_step(params, grads, state, lr=0.01)
        for p, q in zip(params, new_params):
            np.testing.assert_array_equal(p, q)
        assert new_state.t == 1

    def test_first_step_unit_gradient(self):
        params = [np.array([0.0])]
        grads = [np.array([1.0])]
        state = OptimizerState.for_params(params)
        new_params, _ = adam_step(params, grads, state, lr=0.01)
        assert new_params[0][0] == pytest.approx(-0.01, rel=1e-7)

    def test_determinism(self):
        rng = stream_rng(11, "test/adam")
        params = [rng.standard_normal((3, 2)), rng.standard_normal(2)]
        grads = [rng.standard_normal((3, 2)), rng.standard_normal(2)]
        state = OptimizerState.for_params(params)
        out1 = adam_step(params, grads, state, lr=1e-3)
        out2 = adam_step(params, grads, state, lr=1e-3)
        for a, b in zip(out1[0], out2[0]):
            np.testing.assert_array_equal(a, b)


class TestTrainLoop:
    def _config(self, **kw):
        base = dict(
            dataset="ring_mog",
            kernel_family="laplace",
            kernel_scale=0.30,
            data_batch=64,
            model_batch=64,
            steps=3,
            seed=123,
            eval_interval=1,
            eval_samples=128,
            hidden_dim=32,
            swd_projections=32,
        )
        base.update(kw)
        return TrainConfig(**base)

    def test_single_step_contract(self):
        gen, timeline = train(self._config(steps=1))
        # baseline record at step 0 plus exactly one post-step record
        assert [rec.step for rec in timeline] == [0, 1]
        assert all(math.isfinite(rec.swd) for rec in timeline)

    def test_determinism_bit_identical(self):
        cfg = self._config(steps=2)
        gen1, t1 = train(cfg)
        gen2, t2 = train(cfg)
        for a, b in zip(gen1.parameters(), gen2.parameters()):
            np.testing.assert_array_equal(a, b)
        for r1, r2 in zip(t1, t2):
            assert (r1.step, r1.loss, r1.swd, r1.mmd) == (r2.step, r2.loss, r2.swd, r2.mmd)

    def test_validation(self):
        with pytest.raises(ValueError):
            self._config(data_batch=1)
        with pytest.raises(ValueError):
            self._config(steps=0)
        with pytest.raises(ValueError):
            self._config(eta=0.0)

    def test_diverged_keeps_partial_timeline(self, monkeypatch):
        import driftfield.trainer as trainer_mod

        calls = {"n": 0}
        original = trainer_mod.drifting_loss_and_semigrad

        def broken(*args, **kwargs):
            calls["n"] += 1
            loss, grads = original(*args, **kwargs)
            if calls["n"] >= 3:
                return float("nan"), grads
            return loss, grads

        monkeypatch.setattr(trainer_mod, "drifting_loss_and_semigrad", broken)
        with pytest.raises(TrainingDivergedError) as err:
            train(self._config(steps=5))
        assert len(err.value.timeline) >= 1
        assert math.isnan(err.value.timeline[-1].loss)

    def test_timeline_csv_and_model_roundtrip(self, tmp_path):
        cfg = self._config(steps=2)
        gen, timeline = train(cfg)
        csv_path = tmp_path / "timeline.csv"
        save_timeline_csv(timeline, csv_path, comments=["seed = 123"])
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "# seed = 123"
        assert lines[1] == "step,loss,swd,mmd,wallclock_ms"
        assert len(lines) == 2 + len(timeline)

        model_path = tmp_path / "model.txt"
        save_generator(gen, model_path)
        back = load_generator(model_path)
        for a, b in zip(gen.parameters(), back.parameters()):
            np.testing.assert_array_equal(a, b)
