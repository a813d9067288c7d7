"""Independence tests between two models, from weights and activations.

Two regimes share this module.  The exchangeability route simulates
transformed copies of the first model and ranks a similarity statistic
against them (``permtest``), or shortcuts the simulation entirely for
statistics whose null distribution is the same for every model pair: align
hidden units with a cosine linear-assignment match and feed the alignment
to a rank correlation (``phi_u_block``, ``phi_h_block``).  Those p-values
are exact under the permutation-symmetry assumptions and aggregate across
blocks by Fisher's method.

The robust route drops all assumptions: it correlates the gate-projection
alignment with the up-projection alignment (``phi_match_block``), which
survives hidden-unit permutations, embedding rotations, layernorm
rewrites, MLP rescaling, and width changes, and extends to per-block-pair
localization and to architectures without gated MLPs via distilled proxy
models (``generalized_test``).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .containers import ModelBundle
from .errors import ArchitectureMismatchError, DimensionError, DomainError
from .matching import match_rows
from .model import (
    ActivationTrace,
    TokenBatch,
    GluMlpParams,
    glu_mlp_forward,
    next_token_distribution,
    transformer_forward,
)
from .seeding import subseed, substream
from .stats import LogPValue, fisher_aggregate, rank_order, spearman_pvalue
from .training import TrainConfig, distill_glu_mlp
from .transforms import apply_pi_emb, apply_pi_mlp, random_permutation

Statistic = Callable[[ModelBundle, ModelBundle], float]


def _require_same_architecture(theta1: ModelBundle, theta2: ModelBundle) -> None:
    if not theta1.same_architecture(theta2):
        raise ArchitectureMismatchError(
            f"models have different architectures: "
            f"{theta1.manifest.to_json()} vs {theta2.manifest.to_json()}"
        )


def phi_l2(theta1: ModelBundle, theta2: ModelBundle) -> float:
    """Negative sum of per-tensor Euclidean distances; higher = more similar."""
    _require_same_architecture(theta1, theta2)
    total = 0.0
    for role in theta1.manifest.required_roles():
        a = theta1.role(role)
        b = theta2.role(role)
        if a.shape != b.shape:
            raise DimensionError(f"role {role!r}: shapes {a.shape} vs {b.shape}")
        total += float(np.linalg.norm(a - b))
    return -total


def permtest(
    theta1: ModelBundle,
    theta2: ModelBundle,
    phi: Statistic,
    T: int = 99,
    seed: int = 0,
) -> LogPValue:
    """Exchangeability p-value: rank phi against transformed copies of theta1.

    Each copy applies an independent uniform embedding permutation composed
    with per-block hidden-unit permutations.  The p-value is
    (1 + xi + #{phi_t > phi}) / (T + 1) with xi drawn uniformly over
    {0..n_ties}, so its support is {1/(T+1), ..., 1} and ties are broken
    randomly.  Small p means the original pair is more similar than its
    exchangeable copies.
    """
    _require_same_architecture(theta1, theta2)
    if T < 1:
        raise DomainError("permtest needs T >= 1")
    man = theta1.manifest
    phi_orig = float(phi(theta1, theta2))
    n_more = 0
    n_ties = 0
    for t in range(1, T + 1):
        rng = substream(seed, t)
        copy = apply_pi_emb(theta1, random_permutation(man.d_emb, rng))
        copy = apply_pi_mlp(copy, [random_permutation(h, rng) for h in man.d_mlp])
        phi_t = float(phi(copy, theta2))
        if phi_t > phi_orig:
            n_more += 1
        elif phi_t == phi_orig:
            n_ties += 1
    xi = int(substream(seed, 0).integers(0, n_ties + 1))
    p = (1 + n_more + xi) / (T + 1)
    return LogPValue(math.log(p))


def _assignment_spearman(a1: np.ndarray, a2: np.ndarray) -> LogPValue:
    """Spearman test between two injective assignments over a shared index set.

    Values are rank-transformed first, which is the identity when both
    assignments are already permutations (the equal-width case).
    """
    if len(a1) != len(a2):
        raise DimensionError("assignments cover different index sets")
    return spearman_pvalue(rank_order(a1), rank_order(a2))


def _check_block(model: ModelBundle, block: int) -> None:
    if not 0 <= block < model.manifest.L:
        raise DomainError(f"block {block} out of range for L = {model.manifest.L}")


def phi_u_block(theta1: ModelBundle, theta2: ModelBundle, block: int) -> LogPValue:
    """Constrained test on one block's up-projection weight rows.

    Matches hidden units between the two weight matrices and tests the
    alignment against the identity; exact under the constrained-setting
    assumptions, which require equal hidden width.
    """
    _check_block(theta1, block)
    _check_block(theta2, block)
    if (
        theta1.manifest.d_mlp[block] != theta2.manifest.d_mlp[block]
        or theta1.manifest.d_emb != theta2.manifest.d_emb
    ):
        raise ArchitectureMismatchError(
            "identity-alignment statistics need matching block dimensions"
        )
    assignment = match_rows(theta1.role(f"up_proj.{block}"), theta2.role(f"up_proj.{block}"))
    return _assignment_spearman(assignment, np.arange(len(assignment)))


def phi_h_all_blocks(
    theta1: ModelBundle, theta2: ModelBundle, batch: TokenBatch
) -> list[LogPValue]:
    """Constrained activation test for every block (one forward pass each).

    Each model produces its own hidden activations (gated product rows) on
    the shared token batch; per block, the unit alignment between the two
    activation matrices is tested against the identity.
    """
    _require_same_architecture(theta1, theta2)
    trace1 = transformer_forward(theta1, batch).trace
    trace2 = transformer_forward(theta2, batch).trace
    out = []
    for block in range(theta1.manifest.L):
        h1 = trace1.hidden_activations(block)
        h2 = trace2.hidden_activations(block)
        assignment = match_rows(h1, h2)
        out.append(_assignment_spearman(assignment, np.arange(len(assignment))))
    return out


def phi_h_block(
    theta1: ModelBundle, theta2: ModelBundle, batch: TokenBatch, block: int
) -> LogPValue:
    _check_block(theta1, block)
    return phi_h_all_blocks(theta1, theta2, batch)[block]


def aggregate_blocks(per_block: Sequence[LogPValue]) -> LogPValue:
    """Fisher-combine per-block p-values of one statistic family."""
    return fisher_aggregate(per_block)


@dataclass
class MatchOutcome:
    """Robust-statistic result for one block pair."""

    blocks: tuple[int, int]
    pvalue: LogPValue
    gate_assignment: np.ndarray
    up_assignment: np.ndarray


def _match_outcome(
    trace1: ActivationTrace, trace2: ActivationTrace, i: int, j: int
) -> MatchOutcome:
    a_gate = match_rows(trace1.gate_out[i], trace2.gate_out[j])
    a_up = match_rows(trace1.up_out[i], trace2.up_out[j])
    return MatchOutcome((i, j), _assignment_spearman(a_gate, a_up), a_gate, a_up)


def phi_match_block(
    theta1: ModelBundle,
    theta2: ModelBundle,
    batch: TokenBatch,
    block_pair: tuple[int, int],
) -> MatchOutcome:
    """Robust test between block i of theta1 and block j of theta2.

    Correlates the gate-projection unit alignment with the up-projection
    unit alignment.  Works across different hidden widths: the assignment
    covers the smaller side and is rank-transformed before the correlation.
    """
    i, j = block_pair
    _check_block(theta1, i)
    _check_block(theta2, j)
    trace1 = transformer_forward(theta1, batch).trace
    trace2 = transformer_forward(theta2, batch).trace
    return _match_outcome(trace1, trace2, i, j)


def phi_match_all_blocks(
    theta1: ModelBundle, theta2: ModelBundle, batch: TokenBatch
) -> list[MatchOutcome]:
    """Robust statistic on every aligned block pair (i, i)."""
    if theta1.manifest.L != theta2.manifest.L:
        raise ArchitectureMismatchError(
            "aligned block testing needs equal block counts; use localization"
        )
    trace1 = transformer_forward(theta1, batch).trace
    trace2 = transformer_forward(theta2, batch).trace
    return [
        _match_outcome(trace1, trace2, i, i) for i in range(theta1.manifest.L)
    ]


@dataclass
class LocalizedMatch:
    source_block: int
    target_block: int
    pvalue: LogPValue
    unit_assignment: np.ndarray  # up-projection unit map for the matched pair


def localize_blocks(
    theta1: ModelBundle,
    theta2: ModelBundle,
    batch: TokenBatch,
    ln_threshold: float = math.log(1e-4),
) -> list[LocalizedMatch]:
    """Scan all (i, j) block pairs and report those under the threshold.

    The hidden-unit assignment of each reported pair (from the
    up-projection alignment) is the reconstructed pruning map.
    """
    trace1 = transformer_forward(theta1, batch).trace
    trace2 = transformer_forward(theta2, batch).trace
    found = []
    for i in range(theta1.manifest.L):
        for j in range(theta2.manifest.L):
            outcome = _match_outcome(trace1, trace2, i, j)
            if outcome.pvalue.ln_p < ln_threshold:
                found.append(
                    LocalizedMatch(i, j, outcome.pvalue, outcome.up_assignment)
                )
    return found


def _block_function(model: ModelBundle, block: int) -> tuple[Callable, int, int]:
    """(f, d, width): the block's feed-forward submodel as a plain function."""
    man = model.manifest
    _check_block(model, block)
    if man.family in ("glu-transformer", "glu-mlp"):
        params = GluMlpParams(
            model.role(f"gate_proj.{block}"),
            model.role(f"up_proj.{block}"),
            model.role(f"down_proj.{block}"),
        )
        return (lambda x: glu_mlp_forward(params, x)), man.d_emb, man.d_mlp[block]
    # plain-mlp family: two-layer squared-ReLU feed-forward block
    w_in = model.role(f"fc_in.{block}")
    w_out = model.role(f"fc_out.{block}")

    def plain_forward(x):
        return (np.maximum(x @ w_in.T, 0.0) ** 2) @ w_out.T

    return plain_forward, man.d_emb, man.d_mlp[block]


@dataclass
class GeneralizedResult:
    pvalue: LogPValue
    fit_losses: tuple[float, float]
    proxy_width: tuple[int, int]
    warnings: list[str] = field(default_factory=list)


def generalized_test(
    theta1: ModelBundle,
    theta2: ModelBundle,
    h: int | None = None,
    input_dist: str = "gaussian",
    train_cfg: TrainConfig | None = None,
    block_pair: tuple[int, int] = (0, 0),
    eval_samples: int = 2048,
    proxy_init_scale: float = 0.3,
    seed: int = 0,
) -> GeneralizedResult:
    """Architecture-agnostic robust test via distilled gated-MLP proxies.

    Each model's chosen block is treated as a black-box R^d -> R^d map and
    imitated by a gated MLP (width 2x the source block by default) trained
    on isotropic Gaussian inputs with an independent seed per side.  The
    robust alignment statistic is then computed between the two proxies on
    fresh inputs.  A poor fit attaches a warning instead of failing.
    """
    if input_dist != "gaussian":
        raise DomainError(f"unsupported input distribution {input_dist!r}")
    f1, d1, w1 = _block_function(theta1, block_pair[0])
    f2, d2, w2 = _block_function(theta2, block_pair[1])
    if d1 != d2:
        raise ArchitectureMismatchError(
            f"block input widths differ ({d1} vs {d2}); proxies need a shared domain"
        )
    cfg = train_cfg or TrainConfig(steps=5000, learning_rate=3e-3, batch_size=256)
    widths = (h or 2 * w1, h or 2 * w2)
    warnings: list[str] = []
    proxies = []
    losses = []
    for k, (f, width) in enumerate(zip((f1, f2), widths)):
        side_seed = int(substream(seed, k, 0).integers(0, 2**63 - 1))
        side_cfg = dataclasses.replace(cfg, seed=side_seed)
        run = distill_glu_mlp(
            f,
            d1,
            width,
            side_cfg,
            init_seed=subseed(seed, k, 1),
            init_scale=proxy_init_scale,
        )
        # convergence check: compare fit error against the target's own scale
        probe = substream(seed, k, 2).standard_normal((256, d1))
        scale = float(np.mean(f(probe) ** 2))
        if scale > 0 and run.final_loss > 0.1 * scale:
            warnings.append(
                f"proxy fit for model {k + 1} may not have converged "
                f"(loss {run.final_loss:.3g} vs target scale {scale:.3g})"
            )
        proxies.append(run.params)
        losses.append(run.final_loss)
    x_eval = substream(seed, 99).standard_normal((eval_samples, d1))
    gate1, gate2 = proxies[0].G @ x_eval.T, proxies[1].G @ x_eval.T
    up1, up2 = proxies[0].U @ x_eval.T, proxies[1].U @ x_eval.T
    a_gate = match_rows(gate1, gate2)
    a_up = match_rows(up1, up2)
    return GeneralizedResult(
        pvalue=_assignment_spearman(a_gate, a_up),
        fit_losses=(losses[0], losses[1]),
        proxy_width=widths,
        warnings=warnings,
    )


def jsd_baseline(theta1: ModelBundle, theta2: ModelBundle, batch: TokenBatch) -> float:
    """Mean Jensen-Shannon divergence between next-token distributions (nats).

    Invariant to any output-preserving transformation by construction, so
    it carries no p-value; reported raw as a behavioral baseline.
    """
    if theta1.manifest.V != theta2.manifest.V:
        raise ArchitectureMismatchError("JSD baseline needs a shared vocabulary")
    p = next_token_distribution(theta1, batch)
    q = next_token_distribution(theta2, batch)
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl_pm = np.where(p > 0, p * (np.log(p) - np.log(m)), 0.0).sum(axis=-1)
        kl_qm = np.where(q > 0, q * (np.log(q) - np.log(m)), 0.0).sum(axis=-1)
    return float(np.mean(0.5 * kl_pm + 0.5 * kl_qm))


def _flat_cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = a.ravel()
    b = b.ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def huref_invariants(
    theta1: ModelBundle,
    theta2: ModelBundle,
    block: int,
    max_rows: int = 512,
    seed: int = 0,
) -> tuple[float, float, float]:
    """Cosine similarity of the three weight-product invariants of prior work.

    The invariants sandwich attention and MLP weight products between the
    embedding matrix and its transpose (query-key, value-output, and
    gate-down products).  A shared seeded row subsample of the embedding
    keeps them tractable.  These are the baselines that layernorm + rotation
    camouflage defeats while the robust alignment statistic does not.
    """
    _check_block(theta1, block)
    _check_block(theta2, block)
    if theta1.manifest.V != theta2.manifest.V:
        raise ArchitectureMismatchError("invariant baselines need a shared vocabulary")
    v = theta1.manifest.V
    if v > max_rows:
        rows = substream(seed).choice(v, size=max_rows, replace=False)
        rows.sort()
    else:
        rows = np.arange(v)
    sims = []
    for builder in (_huref_a, _huref_b, _huref_f):
        m1 = builder(theta1, block, rows)
        m2 = builder(theta2, block, rows)
        sims.append(_flat_cosine(m1, m2))
    return sims[0], sims[1], sims[2]


def _huref_a(model: ModelBundle, i: int, rows: np.ndarray) -> np.ndarray:
    e = model.role("embedding")[rows]
    return e @ model.role(f"W_Q.{i}").T @ model.role(f"W_K.{i}") @ e.T


def _huref_b(model: ModelBundle, i: int, rows: np.ndarray) -> np.ndarray:
    e = model.role("embedding")[rows]
    return e @ model.role(f"W_V.{i}").T @ model.role(f"W_O.{i}") @ e.T


def _huref_f(model: ModelBundle, i: int, rows: np.ndarray) -> np.ndarray:
    e = model.role("embedding")[rows]
    return e @ model.role(f"gate_proj.{i}").T @ model.role(f"down_proj.{i}").T @ e.T
