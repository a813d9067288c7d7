"""Statistical validation suites and the toy fixtures they run on.

These are the simulation experiments behind ``weightprov simulate``: null
calibration (p-values uniform when models are independent), power
(dependent pairs flagged at overwhelming significance), robustness under
camouflage, pruning localization with planted ground truth, and the
distilled-proxy test for gate-free architectures.  Every suite is a pure
function of its seed and returns a JSON-able summary with the per-trial
values included, so a report is enough to reproduce and audit any number
in it.

Fixture notes, because the toy scale is not entirely innocent:

* Pruning fixtures scale the attention-output and MLP-down projections by
  0.3 after pretraining.  Deep trained networks leave each block a small
  marginal contributor to the residual stream, which is what makes
  localization work on real pruned models; four-block toy models at unit
  scale do not have that property unless the residual branches are damped.

* The robustness fixture draws layernorm gains lognormally.  Breaking the
  weight-product invariant baselines requires the decade-wide layernorm
  spread real trained models exhibit; with all-ones gains the layernorm
  replacement step of the camouflage is a no-op.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .containers import ArchManifest, ModelBundle
from .errors import DomainError
from .independence import (
    aggregate_blocks,
    generalized_test,
    huref_invariants,
    jsd_baseline,
    localize_blocks,
    permtest,
    phi_h_all_blocks,
    phi_l2,
    phi_match_all_blocks,
    phi_u_block,
)
from .model import random_token_batch
from .seeding import substream
from .stats import (
    LogPValue,
    chi2_uniformity_statistic,
    fisher_aggregate,
    ks_critical_value,
    ks_statistic_uniform,
)
from .training import AdversarySpec, TrainConfig, init_model, make_dependent_pair, make_null_pair
from .transforms import TransformSpec

# upper 1% chi-square quantile for 19 degrees of freedom (20 permtest bins)
CHI2_CRIT_19_1PCT = 36.190869129270055

LN_1E6 = math.log(1e-6)


def toy_transformer_arch(
    L: int = 2, d_emb: int = 8, d_mlp: int = 16, V: int = 32, n_heads: int = 2
) -> ArchManifest:
    return ArchManifest.with_identity_roles(
        "glu-transformer", L=L, d_emb=d_emb, d_mlp=d_mlp, V=V, n_heads=n_heads
    )


def toy_plain_mlp_arch(d: int = 16, h: int = 128) -> ArchManifest:
    return ArchManifest.with_identity_roles("plain-mlp", L=1, d_emb=d, d_mlp=h)


def scale_residual_branches(model: ModelBundle, factor: float) -> ModelBundle:
    """Damp every block's contribution to the residual stream."""
    updates = {}
    for i in range(model.manifest.L):
        if model.manifest.family == "glu-transformer":
            updates[f"W_O.{i}"] = model.role(f"W_O.{i}") * factor
        updates[f"down_proj.{i}"] = model.role(f"down_proj.{i}") * factor
    return model.replace_roles(updates)


def prune_depth(model: ModelBundle, keep_blocks: list[int]) -> ModelBundle:
    """Model keeping only the listed blocks, reindexed contiguously."""
    man = model.manifest
    new_man = ArchManifest.with_identity_roles(
        man.family,
        L=len(keep_blocks),
        d_emb=man.d_emb,
        d_mlp=tuple(man.d_mlp[i] for i in keep_blocks),
        V=man.V,
        n_heads=man.n_heads,
    )
    tensors = {}
    for role in ("embedding", "final_layernorm", "output"):
        if role in man.role_map:
            tensors[role] = model.role(role)
    for j, i in enumerate(keep_blocks):
        for role in man.block_roles(i):
            base = role.rpartition(".")[0]
            tensors[f"{base}.{j}"] = model.role(role)
    return ModelBundle(new_man, tensors)


def prune_width(model: ModelBundle, keep_units: list[np.ndarray]) -> ModelBundle:
    """Model keeping only the listed hidden units in each block's MLP."""
    man = model.manifest
    new_man = ArchManifest.with_identity_roles(
        man.family,
        L=man.L,
        d_emb=man.d_emb,
        d_mlp=tuple(len(k) for k in keep_units),
        V=man.V,
        n_heads=man.n_heads,
    )
    tensors = dict(model.tensors)
    for i, kept in enumerate(keep_units):
        tensors[f"gate_proj.{i}"] = model.role(f"gate_proj.{i}")[kept]
        tensors[f"up_proj.{i}"] = model.role(f"up_proj.{i}")[kept]
        tensors[f"down_proj.{i}"] = model.role(f"down_proj.{i}")[:, kept]
    return ModelBundle(new_man, tensors)


def _default_cfg() -> TrainConfig:
    return TrainConfig(steps=150, batch_size=64)


def permtest_null_suite(trials: int = 500, T: int = 19, seed: int = 0) -> dict:
    """Criterion: permutation-test p-values uniform on {i/(T+1)} under the null."""
    arch = toy_transformer_arch()
    cfg = _default_cfg()
    p_values = []
    for trial in range(trials):
        b1, b2 = make_null_pair(
            arch,
            data_seed=int(substream(seed, trial, 0).integers(2**63)),
            init_seeds=(
                int(substream(seed, trial, 1).integers(2**63)),
                int(substream(seed, trial, 2).integers(2**63)),
            ),
            cfg=cfg,
        )
        p = permtest(b1, b2, phi_l2, T=T, seed=int(substream(seed, trial, 3).integers(2**63)))
        p_values.append(math.exp(p.ln_p))
    stat = chi2_uniformity_statistic(p_values, T + 1)
    return {
        "suite": "null-uniformity-permtest",
        "trials": trials,
        "T": T,
        "seed": seed,
        "p_values": p_values,
        "chi2_statistic": stat,
        "chi2_critical_1pct": CHI2_CRIT_19_1PCT,
        "passed": bool(stat < CHI2_CRIT_19_1PCT),
    }


def spearman_null_suite(trials: int = 200, seed: int = 0) -> dict:
    """Criterion: per-block and aggregated p-values uniform for null pairs."""
    arch = toy_transformer_arch()
    cfg = _default_cfg()
    per_block_u = [[] for _ in range(arch.L)]
    per_block_h = [[] for _ in range(arch.L)]
    agg_u, agg_h, agg_match = [], [], []
    for trial in range(trials):
        b1, b2 = make_null_pair(
            arch,
            data_seed=int(substream(seed, trial, 0).integers(2**63)),
            init_seeds=(
                int(substream(seed, trial, 1).integers(2**63)),
                int(substream(seed, trial, 2).integers(2**63)),
            ),
            cfg=cfg,
        )
        batch = random_token_batch(arch.V, N=4, s=16, seed=substream(seed, trial, 3))
        us = [phi_u_block(b1, b2, i) for i in range(arch.L)]
        hs = phi_h_all_blocks(b1, b2, batch)
        ms = [m.pvalue for m in phi_match_all_blocks(b1, b2, batch)]
        for i in range(arch.L):
            per_block_u[i].append(math.exp(us[i].ln_p))
            per_block_h[i].append(math.exp(hs[i].ln_p))
        agg_u.append(math.exp(aggregate_blocks(us).ln_p))
        agg_h.append(math.exp(aggregate_blocks(hs).ln_p))
        agg_match.append(math.exp(fisher_aggregate(ms).ln_p))
    crit = ks_critical_value(trials, alpha=0.01)
    series = {
        **{f"phi_u_block{i}": per_block_u[i] for i in range(arch.L)},
        **{f"phi_h_block{i}": per_block_h[i] for i in range(arch.L)},
        "phi_u_aggregate": agg_u,
        "phi_h_aggregate": agg_h,
        "phi_match_aggregate": agg_match,
    }
    ks = {name: ks_statistic_uniform(vals) for name, vals in series.items()}
    return {
        "suite": "null-uniformity-spearman",
        "trials": trials,
        "seed": seed,
        "ks_critical_1pct": crit,
        "ks_statistics": ks,
        "p_values": series,
        "passed": bool(all(v < crit for v in ks.values())),
    }


def power_suite(trials: int = 100, seed: int = 0) -> dict:
    """Criterion: fine-tuned pairs (1x-10x budget) flagged at p <= 1e-6."""
    arch = toy_transformer_arch()
    cfg = _default_cfg()
    hits = {"phi_u": 0, "phi_h": 0, "phi_match": 0}
    log10 = {"phi_u": [], "phi_h": [], "phi_match": []}
    multipliers = []
    for trial in range(trials):
        mult = 1 + trial % 10
        multipliers.append(mult)
        base, _ = make_null_pair(
            arch,
            data_seed=int(substream(seed, trial, 0).integers(2**63)),
            init_seeds=(int(substream(seed, trial, 1).integers(2**63)), 0),
            cfg=cfg,
        )
        ft_cfg = dataclasses.replace(
            cfg,
            steps=cfg.steps * mult,
            seed=int(substream(seed, trial, 2).integers(2**63)),
        )
        dep = make_dependent_pair(base, ft_cfg)
        batch = random_token_batch(arch.V, N=4, s=16, seed=substream(seed, trial, 3))
        results = {
            "phi_u": aggregate_blocks([phi_u_block(base, dep, i) for i in range(arch.L)]),
            "phi_h": aggregate_blocks(phi_h_all_blocks(base, dep, batch)),
            "phi_match": fisher_aggregate(
                [m.pvalue for m in phi_match_all_blocks(base, dep, batch)]
            ),
        }
        for name, p in results.items():
            hits[name] += p.ln_p <= LN_1E6
            log10[name].append(p.log10_p)
    return {
        "suite": "power",
        "trials": trials,
        "seed": seed,
        "finetune_multipliers": multipliers,
        "log10_p": log10,
        "fraction_significant": {k: v / trials for k, v in hits.items()},
        "passed": bool(all(v / trials >= 0.95 for v in hits.values())),
    }


ROBUSTNESS_ARCH = dict(L=2, d_emb=32, d_mlp=32, V=64, n_heads=2)
ROBUSTNESS_GAMMA_SIGMA = 1.0
ROBUSTNESS_ROTATION_SIGMA = 2.5


def robustness_suite(trials: int = 100, seed: int = 0) -> dict:
    """Criterion: camouflage defeats the constrained tests and the invariant
    baselines, but not the activation-alignment statistic."""
    arch = toy_transformer_arch(**ROBUSTNESS_ARCH)
    cfg = dataclasses.replace(_default_cfg(), steps=120)
    match_hits = 0
    phi_u_p, invariant_sims, match_log10 = [], [], []
    for trial in range(trials):
        base, _ = make_null_pair(
            arch,
            data_seed=int(substream(seed, trial, 0).integers(2**63)),
            init_seeds=(int(substream(seed, trial, 1).integers(2**63)), 0),
            cfg=cfg,
            gamma_log_sigma=ROBUSTNESS_GAMMA_SIGMA,
        )
        ft_cfg = dataclasses.replace(
            cfg, steps=2 * cfg.steps, seed=int(substream(seed, trial, 2).integers(2**63))
        )
        adversary = AdversarySpec(
            transform=TransformSpec(
                "both",
                int(substream(seed, trial, 4).integers(2**63)),
                rotation_gamma_log_sigma=ROBUSTNESS_ROTATION_SIGMA,
            )
        )
        dep = make_dependent_pair(base, ft_cfg, adversary)
        batch = random_token_batch(arch.V, N=4, s=16, seed=substream(seed, trial, 3))
        p_match = fisher_aggregate(
            [m.pvalue for m in phi_match_all_blocks(base, dep, batch)]
        )
        match_hits += p_match.ln_p <= LN_1E6
        match_log10.append(p_match.log10_p)
        p_u = aggregate_blocks([phi_u_block(base, dep, i) for i in range(arch.L)])
        phi_u_p.append(math.exp(p_u.ln_p))
        invariant_sims.append(list(huref_invariants(base, dep, 0)))
    sims = np.abs(np.array(invariant_sims))
    medians = np.median(sims, axis=0)
    return {
        "suite": "robustness",
        "trials": trials,
        "seed": seed,
        "phi_match_fraction_significant": match_hits / trials,
        "phi_match_log10_p": match_log10,
        "phi_u_p_values": phi_u_p,
        "phi_u_median": float(np.median(phi_u_p)),
        "invariant_similarities": invariant_sims,
        "invariant_abs_medians": {
            "query_key": float(medians[0]),
            "value_output": float(medians[1]),
            "gate_down": float(medians[2]),
        },
        "passed": bool(
            match_hits / trials >= 0.95
            and float(np.median(phi_u_p)) >= 0.2
            and bool((medians < 0.3).all())
        ),
    }


LOCALIZATION_ARCH = dict(L=4, d_emb=8, d_mlp=32, V=32, n_heads=2)
RESIDUAL_DAMPING = 0.3


def _localization_base(seed, trial) -> ModelBundle:
    arch = toy_transformer_arch(**LOCALIZATION_ARCH)
    base, _ = make_null_pair(
        arch,
        data_seed=int(substream(seed, trial, 0).integers(2**63)),
        init_seeds=(int(substream(seed, trial, 1).integers(2**63)), 0),
        cfg=_default_cfg(),
    )
    return scale_residual_branches(base, RESIDUAL_DAMPING)


def localization_depth_suite(fixtures: int = 20, seed: int = 0) -> dict:
    """Criterion: planted kept-block maps recovered exactly at threshold 1e-4."""
    exact = 0
    details = []
    for trial in range(fixtures):
        base = _localization_base(seed, trial)
        rng = substream(seed, trial, 2)
        keep = sorted(rng.choice(base.manifest.L, size=3, replace=False).tolist())
        pruned = prune_depth(base, keep)
        batch = random_token_batch(base.manifest.V, N=8, s=32, seed=substream(seed, trial, 3))
        found = sorted(
            (m.source_block, m.target_block)
            for m in localize_blocks(base, pruned, batch, ln_threshold=math.log(1e-4))
        )
        planted = sorted((i, j) for j, i in enumerate(keep))
        exact += found == planted
        details.append({"planted": planted, "found": found})
    return {
        "suite": "localization-depth",
        "fixtures": fixtures,
        "seed": seed,
        "exact_recoveries": exact,
        "details": details,
        "passed": bool(exact == fixtures),
    }


def localization_width_suite(fixtures: int = 20, seed: int = 0) -> dict:
    """Criterion: planted kept-unit maps recovered at >= 95%."""
    fractions = []
    for trial in range(fixtures):
        base = _localization_base(seed, trial)
        man = base.manifest
        rng = substream(seed, trial, 2)
        keeps = [
            np.sort(rng.choice(man.d_mlp[i], size=man.d_mlp[i] // 2, replace=False))
            for i in range(man.L)
        ]
        pruned = prune_width(base, keeps)
        batch = random_token_batch(man.V, N=8, s=32, seed=substream(seed, trial, 3))
        matches = {
            (m.source_block, m.target_block): m
            for m in localize_blocks(base, pruned, batch, ln_threshold=math.log(1e-4))
        }
        recovered = total = 0
        for i in range(man.L):
            outcome = matches.get((i, i))
            total += len(keeps[i])
            if outcome is not None:
                recovered += int((outcome.unit_assignment == keeps[i]).sum())
        fractions.append(recovered / total)
    return {
        "suite": "localization-width",
        "fixtures": fixtures,
        "seed": seed,
        "unit_recovery_fractions": fractions,
        "mean_recovery": float(np.mean(fractions)),
        "passed": bool(np.mean(fractions) >= 0.95),
    }


GENERALIZED_FIXTURE = dict(d=16, h_src=128, scale=2.0)
GENERALIZED_CFG = TrainConfig(steps=3000, learning_rate=3e-3, batch_size=256)


def plain_mlp_fixture(seed, d: int | None = None, h: int | None = None, scale: float | None = None) -> ModelBundle:
    """A squared-ReLU MLP block with first-layer weights scaled up.

    The scaling keeps pre-activations in the genuinely nonlinear range;
    near-linear blocks are fittable without feature alignment and carry no
    provenance signal.
    """
    d = d or GENERALIZED_FIXTURE["d"]
    h = h or GENERALIZED_FIXTURE["h_src"]
    scale = scale or GENERALIZED_FIXTURE["scale"]
    model = init_model(toy_plain_mlp_arch(d, h), seed)
    return model.replace_roles({"fc_in.0": model.role("fc_in.0") * scale})


def generalized_suite(trials: int = 50, seed: int = 0) -> dict:
    """Criterion: distilled proxies separate dependent from independent blocks."""
    h_proxy = GENERALIZED_FIXTURE["h_src"]
    dep_hits = ind_hits = 0
    dep_log10, ind_p = [], []
    for trial in range(trials):
        block = plain_mlp_fixture(int(substream(seed, trial, 0).integers(2**63)))
        res = generalized_test(
            block,
            block,
            h=h_proxy,
            train_cfg=GENERALIZED_CFG,
            seed=int(substream(seed, trial, 1).integers(2**63)),
        )
        dep_hits += res.pvalue.ln_p <= LN_1E6
        dep_log10.append(res.pvalue.log10_p)
        b1 = plain_mlp_fixture(int(substream(seed, trial, 2).integers(2**63)))
        b2 = plain_mlp_fixture(int(substream(seed, trial, 3).integers(2**63)))
        res = generalized_test(
            b1,
            b2,
            h=h_proxy,
            train_cfg=GENERALIZED_CFG,
            seed=int(substream(seed, trial, 4).integers(2**63)),
        )
        ind_hits += res.pvalue.ln_p >= math.log(0.01)
        ind_p.append(math.exp(res.pvalue.ln_p))
    return {
        "suite": "generalized",
        "trials": trials,
        "seed": seed,
        "dependent_log10_p": dep_log10,
        "independent_p": ind_p,
        "dependent_fraction_significant": dep_hits / trials,
        "independent_fraction_clean": ind_hits / trials,
        "passed": bool(dep_hits / trials >= 0.9 and ind_hits / trials >= 0.9),
    }


SUITES = {
    "null-uniformity": lambda trials, seed: {
        "permtest": permtest_null_suite(trials=trials or 500, seed=seed),
        "spearman": spearman_null_suite(trials=min(trials or 200, 200) if trials else 200, seed=seed),
    },
    "power": lambda trials, seed: power_suite(trials=trials or 100, seed=seed),
    "robustness": lambda trials, seed: robustness_suite(trials=trials or 100, seed=seed),
    "localization": lambda trials, seed: {
        "depth": localization_depth_suite(fixtures=trials or 20, seed=seed),
        "width": localization_width_suite(fixtures=trials or 20, seed=seed),
    },
    "generalized": lambda trials, seed: generalized_suite(trials=trials or 50, seed=seed),
}


def run_suite(name: str, trials: int | None, seed: int) -> dict:
    if name not in SUITES:
        raise DomainError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](trials, seed)
