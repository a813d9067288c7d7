"""Acceptance suite: one test per criterion, at its stated tolerance.

Every criterion prints a single PASS/FAIL line (visible with ``pytest -s``
or via the per-test verdicts of ``pytest -v``).  All randomness is seeded;
the statistical criteria are Monte Carlo experiments regenerated from
scratch on every run.  The exporter-fidelity criterion belongs to the
secondary package and lives in ``hf_export/tests``.
"""

import math
import time

import numpy as np
import pytest

from oracles import brute_force_assignment, finite_difference_grads
from test_stats import CHI2_TABLE, STUDENT_T_TABLE
from weightprov.experiments import (
    CHI2_CRIT_19_1PCT,
    generalized_suite,
    localization_depth_suite,
    localization_width_suite,
    permtest_null_suite,
    power_suite,
    robustness_suite,
    spearman_null_suite,
    toy_transformer_arch,
)
from weightprov.matching import assignment_value, match_rows, solve_lap
from weightprov.model import (
    GluMlpParams,
    glu_mlp_forward,
    random_token_batch,
    transformer_forward,
)
from weightprov.stats import LogPValue, chi2_even_log_sf, fisher_aggregate, student_t_log_sf
from weightprov.training import (
    TrainConfig,
    gaussian_batches,
    glu_mlp_grad,
    init_glu_mlp,
    init_model,
    train_glu_mlp,
)
from weightprov.transforms import (
    TransformSpec,
    apply_pi_emb,
    apply_pi_mlp,
    apply_rotation,
    apply_transform_spec,
    random_permutation,
    random_rotation_params,
)


def verdict(name: str, passed: bool, detail: str) -> None:
    print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}", flush=True)


class TestAcceptance:
    def test_criterion_01_permtest_null_uniformity(self):
        """500 permutation tests on independent pairs: p uniform on {i/20}."""
        start = time.monotonic()
        out = permtest_null_suite(trials=500, T=19, seed=101)
        elapsed = time.monotonic() - start
        detail = (
            f"chi2({out['T']}) = {out['chi2_statistic']:.2f} "
            f"(1% critical {CHI2_CRIT_19_1PCT:.2f}), {elapsed:.0f}s"
        )
        verdict("criterion 1 permtest null uniformity", out["passed"], detail)
        assert out["chi2_statistic"] < CHI2_CRIT_19_1PCT
        assert elapsed < 600.0, "runtime target is 10 minutes single-machine"

    def test_criterion_02_spearman_null_uniformity(self):
        """Per-block and aggregated p-values uniform over 200 null pairs."""
        out = spearman_null_suite(trials=200, seed=202)
        worst = max(out["ks_statistics"].items(), key=lambda kv: kv[1])
        detail = (
            f"worst KS = {worst[1]:.4f} ({worst[0]}), "
            f"critical {out['ks_critical_1pct']:.4f}"
        )
        verdict("criterion 2 rank-test null uniformity", out["passed"], detail)
        assert out["passed"], out["ks_statistics"]

    def test_criterion_03_power(self):
        """Fine-tuned pairs (1x-10x budget): aggregated p <= 1e-6 in >= 95%."""
        out = power_suite(trials=100, seed=303)
        fr = out["fraction_significant"]
        detail = ", ".join(f"{k} {v:.0%}" for k, v in fr.items())
        verdict("criterion 3 power on dependent pairs", out["passed"], detail)
        assert all(v >= 0.95 for v in fr.values()), fr

    def test_criterion_04_robustness_contrast(self):
        """Camouflage: alignment stat survives, constrained test and weight-
        product invariant baselines do not."""
        out = robustness_suite(trials=100, seed=404)
        med = out["invariant_abs_medians"]
        detail = (
            f"match {out['phi_match_fraction_significant']:.0%}, "
            f"phi_u median {out['phi_u_median']:.2f}, "
            f"invariant medians {med['query_key']:.2f}/{med['value_output']:.2f}/"
            f"{med['gate_down']:.2f}"
        )
        verdict("criterion 4 robustness contrast", out["passed"], detail)
        assert out["phi_match_fraction_significant"] >= 0.95
        assert out["phi_u_median"] >= 0.2
        assert all(v < 0.3 for v in med.values()), med

    def test_criterion_05_output_preservation(self):
        """Max logit difference <= 1e-8 over 20 models x 5 transforms."""
        arch = toy_transformer_arch()
        batch = random_token_batch(arch.V, N=2, s=8, seed=5)
        worst = 0.0
        for seed in range(20):
            model = init_model(arch, seed=seed, gamma_log_sigma=0.5)
            base = transformer_forward(model, batch).logits
            rng = np.random.default_rng(900 + seed)
            transformed = [
                apply_pi_mlp(model, [random_permutation(h, rng) for h in arch.d_mlp]),
                apply_pi_emb(model, random_permutation(arch.d_emb, rng)),
                apply_rotation(model, random_rotation_params(model, seed=seed)),
                apply_transform_spec(model, TransformSpec("permute", seed)),
                apply_transform_spec(model, TransformSpec("both", seed)),
            ]
            for variant in transformed:
                diff = float(
                    np.abs(transformer_forward(variant, batch).logits - base).max()
                )
                worst = max(worst, diff)
        passed = worst <= 1e-8
        verdict(
            "criterion 5 output preservation", passed, f"max logit diff {worst:.2e}"
        )
        assert passed

    def test_criterion_06_training_equivariance(self):
        """train(pi(init)) == pi(train(init)) to 1e-8 after 100 steps."""
        worst = {"sgd": 0.0, "adam": 0.0}
        for trial in range(20):
            rng = np.random.default_rng(600 + trial)
            teacher = init_glu_mlp(4, 6, rng)
            data_fn = gaussian_batches(
                4, 16, 7000 + trial, lambda x: glu_mlp_forward(teacher, x)
            )
            init = init_glu_mlp(4, 8, 8000 + trial)
            perm = random_permutation(8, rng)
            permuted_init = GluMlpParams(init.G[perm], init.U[perm], init.D[:, perm])
            for optimizer in ("sgd", "adam"):
                cfg = TrainConfig(
                    optimizer=optimizer, learning_rate=1e-2, steps=100, batch_size=16
                )
                plain = train_glu_mlp(init, data_fn, cfg).params
                swapped = train_glu_mlp(permuted_init, data_fn, cfg).params
                diff = max(
                    np.abs(swapped.G - plain.G[perm]).max(),
                    np.abs(swapped.U - plain.U[perm]).max(),
                    np.abs(swapped.D - plain.D[:, perm]).max(),
                )
                worst[optimizer] = max(worst[optimizer], float(diff))
        passed = all(v <= 1e-8 for v in worst.values())
        verdict(
            "criterion 6 training equivariance",
            passed,
            f"max diff sgd {worst['sgd']:.2e}, adam {worst['adam']:.2e}",
        )
        assert passed, worst

    def test_criterion_07_matching_oracle(self):
        """Assignment solver equals brute force on 200 instances up to 7x7."""
        rng = np.random.default_rng(700)
        checked = 0
        for _ in range(200):
            h1 = int(rng.integers(1, 8))
            h2 = int(rng.integers(1, 8))
            sim = rng.standard_normal((h1, h2))
            got = solve_lap(sim)
            best_value, best = brute_force_assignment(sim)
            assert np.array_equal(got, best), (sim, got, best)
            assert assignment_value(sim, got) == pytest.approx(best_value, abs=1e-12)
            checked += 1
        verdict(
            "criterion 7 matching oracle", True, f"{checked}/200 instances exact"
        )

    def test_criterion_08_statistical_primitives(self):
        """Fisher identity, chi-square series, and t tails at stated tolerances."""
        worst_fisher = 0.0
        for p in (0.7, 0.05, 1e-9, 1e-150):
            out = fisher_aggregate([LogPValue(math.log(p))])
            worst_fisher = max(
                worst_fisher, abs(out.ln_p - math.log(p)) / abs(math.log(p))
            )
        assert worst_fisher <= 1e-12

        worst_chi2 = max(
            abs(chi2_even_log_sf(x, dof) - expected) / abs(expected)
            for dof, x, expected in CHI2_TABLE
        )
        assert worst_chi2 <= 1e-10

        worst_t = max(
            abs(student_t_log_sf(t, dof) - expected) / abs(expected)
            for dof, t, expected in STUDENT_T_TABLE
            if 0.0 <= t <= 40.0
        )
        assert worst_t <= 1e-8
        verdict(
            "criterion 8 statistical primitives",
            True,
            f"fisher rel {worst_fisher:.1e}, chi2 rel {worst_chi2:.1e}, "
            f"t rel {worst_t:.1e}",
        )

    def test_criterion_09_localization(self):
        """Planted pruning maps: depth exact 20/20, width units >= 95%."""
        depth = localization_depth_suite(fixtures=20, seed=909)
        width = localization_width_suite(fixtures=20, seed=910)
        detail = (
            f"depth {depth['exact_recoveries']}/20 exact, "
            f"width unit recovery {width['mean_recovery']:.1%}"
        )
        passed = depth["passed"] and width["passed"]
        verdict("criterion 9 localization", passed, detail)
        assert depth["exact_recoveries"] == 20, depth["details"]
        assert width["mean_recovery"] >= 0.95

    def test_criterion_10_generalized_test(self):
        """Distilled proxies: dependent p <= 1e-6 and independent p >= 0.01,
        each in >= 90% of 50 trials."""
        out = generalized_suite(trials=50, seed=1010)
        detail = (
            f"dependent {out['dependent_fraction_significant']:.0%} at 1e-6, "
            f"independent {out['independent_fraction_clean']:.0%} at 0.01"
        )
        verdict("criterion 10 generalized proxy test", out["passed"], detail)
        assert out["dependent_fraction_significant"] >= 0.9, out["dependent_log10_p"]
        assert out["independent_fraction_clean"] >= 0.9, out["independent_p"]

    def test_criterion_11_gradient_correctness(self):
        """Analytic GLU gradients vs central differences on 50 instances."""
        worst = 0.0
        for trial in range(50):
            rng = np.random.default_rng(1100 + trial)
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
                scale = max(float(np.abs(n).max()), 1e-12)
                worst = max(worst, float(np.abs(a - n).max()) / scale)
        passed = worst <= 1e-6
        verdict(
            "criterion 11 gradient correctness", passed, f"max rel error {worst:.2e}"
        )
        assert passed
