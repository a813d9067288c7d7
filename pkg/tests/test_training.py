"""Gradients vs finite differences, optimizer equivariance, fixture factories."""

import dataclasses

import numpy as np
import pytest

from oracles import finite_difference_grads
from weightprov.errors import TrainingError, ValidationError
from weightprov.model import GluMlpParams, glu_mlp_forward
from weightprov.training import (
    TrainConfig,
    distill_glu_mlp,
    gaussian_batches,
    glu_mlp_grad,
    init_glu_mlp,
    init_model,
    make_dependent_pair,
    make_null_pair,
    pretrain_mlps,
    train_glu_mlp,
)
from weightprov.transforms import random_permutation


class TestGradients:
    def test_zero_upstream_gives_zero_grads(self, rng):
        params = init_glu_mlp(3, 5, rng)
        x = rng.standard_normal((4, 3))
        for g in glu_mlp_grad(params, x, np.zeros((4, 3))):
            assert np.all(g == 0.0)

    def test_against_finite_differences(self, rng):
        for _ in range(10):
            params = init_glu_mlp(3, 4, rng)
            x = rng.standard_normal((4, 3))
            upstream = rng.standard_normal((4, 3))
            analytic = glu_mlp_grad(params, x, upstream)
            numeric = finite_difference_grads(
                lambda ts: glu_mlp_forward(GluMlpParams(*ts), x),
                [params.G, params.U, params.D],
                upstream,
            )
            for a, n in zip(analytic, numeric):
                rel = np.abs(a - n).max() / max(np.abs(n).max(), 1e-12)
                assert rel <= 1e-6

    def test_gradient_permutation_equivariance(self, rng):
        params = init_glu_mlp(4, 7, rng)
        x = rng.standard_normal((5, 4))
        upstream = rng.standard_normal((5, 4))
        perm = random_permutation(7, rng)
        permuted = GluMlpParams(params.G[perm], params.U[perm], params.D[:, perm])
        dg, du, dd = glu_mlp_grad(params, x, upstream)
        pg, pu, pd = glu_mlp_grad(permuted, x, upstream)
        assert np.array_equal(pg, dg[perm])
        assert np.array_equal(pu, du[perm])
        assert np.array_equal(pd, dd[:, perm])


class TestTrainGluMlp:
    def test_config_validation(self):
        with pytest.raises(ValidationError):
            TrainConfig(steps=0)
        with pytest.raises(ValidationError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValidationError):
            TrainConfig(optimizer="rmsprop")

    def test_zero_gradient_leaves_params(self, rng):
        # targets equal to the model's own outputs: loss 0, no movement
        params = init_glu_mlp(4, 6, rng)

        def data_fn(step):
            x = np.random.default_rng(step).standard_normal((8, 4))
            return x, glu_mlp_forward(params, x)

        run = train_glu_mlp(params, data_fn, TrainConfig(optimizer="sgd", steps=5))
        assert run.losses == [0.0] * 5
        assert np.array_equal(run.params.G, params.G)

    @pytest.mark.parametrize("optimizer", ["sgd", "adam"])
    def test_training_equivariance(self, optimizer, rng):
        teacher = init_glu_mlp(4, 6, rng)
        data_fn = gaussian_batches(4, 16, 999, lambda x: glu_mlp_forward(teacher, x))
        cfg = TrainConfig(optimizer=optimizer, learning_rate=1e-2, steps=100, batch_size=16)
        init = init_glu_mlp(4, 8, 123)
        perm = random_permutation(8, rng)
        plain = train_glu_mlp(init, data_fn, cfg).params
        permuted_init = GluMlpParams(init.G[perm], init.U[perm], init.D[:, perm])
        permuted = train_glu_mlp(permuted_init, data_fn, cfg).params
        assert np.abs(permuted.G - plain.G[perm]).max() <= 1e-8
        assert np.abs(permuted.U - plain.U[perm]).max() <= 1e-8
        assert np.abs(permuted.D - plain.D[:, perm]).max() <= 1e-8

    def test_divergence_raises(self, rng):
        params = init_glu_mlp(3, 4, rng)
        huge = TrainConfig(optimizer="sgd", learning_rate=1e12, steps=50, batch_size=8)
        data_fn = gaussian_batches(3, 8, 5, lambda x: x * 1e3)
        with pytest.raises(TrainingError):
            train_glu_mlp(params, data_fn, huge)

    def test_distillation_converges_100x(self):
        teacher = init_glu_mlp(8, 8, 5)
        run = distill_glu_mlp(
            lambda x: glu_mlp_forward(teacher, x),
            8,
            16,
            TrainConfig(steps=2000, batch_size=512, seed=1),
            init_seed=2,
        )
        assert run.final_loss <= 1e-3
        assert run.final_loss * 100 <= run.losses[0]

    def test_determinism(self):
        teacher = init_glu_mlp(4, 4, 3)
        cfg = TrainConfig(steps=50, batch_size=8, seed=11)
        runs = [
            distill_glu_mlp(lambda x: glu_mlp_forward(teacher, x), 4, 8, cfg, init_seed=7)
            for _ in range(2)
        ]
        assert np.array_equal(runs[0].params.G, runs[1].params.G)
        assert runs[0].losses == runs[1].losses


class TestModelFixtures:
    def test_init_respects_shapes(self, toy_arch):
        model = init_model(toy_arch, seed=0)
        for role in toy_arch.required_roles():
            assert model.role(role).shape == toy_arch.expected_shape(role)

    def test_layernorms_default_to_ones(self, toy_arch):
        model = init_model(toy_arch, seed=0)
        assert np.all(model.role("final_layernorm") == 1.0)

    def test_gamma_spread_option(self, toy_arch):
        model = init_model(toy_arch, seed=0, gamma_log_sigma=1.0)
        gammas = model.role("final_layernorm")
        assert np.all(gammas > 0)
        assert gammas.std() > 0.1

    def test_pretraining_improves_fit(self, toy_arch):
        model = init_model(toy_arch, seed=4)
        trained = pretrain_mlps(model, data_seed=8, cfg=TrainConfig(steps=150, batch_size=64))
        # attention and embedding untouched; MLPs moved
        assert np.array_equal(trained.role("W_Q.0"), model.role("W_Q.0"))
        assert not np.array_equal(trained.role("gate_proj.0"), model.role("gate_proj.0"))

    def test_null_pair_same_seed_identical(self, toy_arch, quick_cfg):
        a, b = make_null_pair(toy_arch, data_seed=1, init_seeds=(5, 5), cfg=quick_cfg)
        assert all(np.array_equal(a.tensors[k], b.tensors[k]) for k in a.tensors)

    def test_null_pair_distinct_seeds_differ(self, toy_arch, quick_cfg):
        a, b = make_null_pair(toy_arch, data_seed=1, init_seeds=(5, 6), cfg=quick_cfg)
        assert not np.array_equal(a.role("up_proj.0"), b.role("up_proj.0"))

    def test_null_pair_deterministic(self, toy_arch, quick_cfg):
        a1, _ = make_null_pair(toy_arch, data_seed=9, init_seeds=(1, 2), cfg=quick_cfg)
        a2, _ = make_null_pair(toy_arch, data_seed=9, init_seeds=(1, 3), cfg=quick_cfg)
        assert all(np.array_equal(a1.tensors[k], a2.tensors[k]) for k in a1.tensors)

    def test_dependent_pair_changes_only_mlps(self, toy_arch, quick_cfg):
        base, _ = make_null_pair(toy_arch, data_seed=2, init_seeds=(3, 4), cfg=quick_cfg)
        ft = make_dependent_pair(base, dataclasses.replace(quick_cfg, seed=77))
        assert np.array_equal(ft.role("embedding"), base.role("embedding"))
        assert not np.array_equal(ft.role("gate_proj.1"), base.role("gate_proj.1"))

    def test_retrained_block_widens_manifest(self, toy_arch, quick_cfg):
        from weightprov.training import AdversarySpec

        base, _ = make_null_pair(toy_arch, data_seed=2, init_seeds=(3, 4), cfg=quick_cfg)
        dep = make_dependent_pair(
            base,
            dataclasses.replace(quick_cfg, seed=77),
            AdversarySpec(
                retrain_block=1,
                retrain_cfg=TrainConfig(steps=200, batch_size=128, seed=5),
            ),
        )
        assert dep.manifest.d_mlp == (16, 32)
        assert dep.role("gate_proj.1").shape == (32, 8)
