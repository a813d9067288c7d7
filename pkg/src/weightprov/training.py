"""Deterministic small-scale training.

Three jobs live here: manual gradients and SGD/Adam training for the GLU
MLP (the distillation loop the generalized test depends on), synthetic
pretraining that turns random initializations into weight fixtures, and
the null/dependent pair factories the statistical validation suites draw
from.

The synthetic pretraining task regresses each block's MLP onto the
embedding of the next token, using activations from the model's own
forward pass.  The targets and inputs are both expressed through the
model's own tensors, so permuting the embedding dimension or a block's
hidden units commutes exactly with the whole training run -- the property
that makes permutation-based null simulation sound.  (A fixed external
teacher on raw Gaussian inputs would pin the embedding basis and break
that commutation; see the loss target below.)

Everything is float64 and seeded; identical inputs give identical trained
weights.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .containers import ArchManifest, ModelBundle, bundle_from_arrays
from .errors import DimensionError, TrainingError, ValidationError
from .model import (
    GluMlpParams,
    _ACTIVATIONS,
    glu_mlp_forward,
    transformer_forward,
    TokenBatch,
)
from .seeding import as_generator, subseed, substream
from .transforms import TransformSpec, apply_transform_spec

_PRETRAIN_SEQ_LEN = 16


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"  # "sgd" | "adam"
    learning_rate: float = 1e-3
    steps: int = 2000
    batch_size: int = 512
    seed: int = 0
    loss: str = "mse"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError("training needs steps >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning rate must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.loss != "mse":
            raise ValidationError(f"unknown loss {self.loss!r}")


@dataclass
class TrainRun:
    params: GluMlpParams
    losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def glu_mlp_grad(
    params: GluMlpParams, x: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic gradients of the GLU MLP contracted with an upstream cotangent.

    Returns (dG, dU, dD) for f(x) = act(x G^T) * (x U^T) @ D^T summed
    against ``upstream`` (same shape as the output).
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if x.shape[-1] != params.d or upstream.shape != x.shape:
        raise DimensionError("input/upstream shapes do not match the MLP")
    act, act_grad = _ACTIVATIONS[params.activation]
    pre_gate = x @ params.G.T
    pre_up = x @ params.U.T
    s = act(pre_gate)
    z = s * pre_up
    d_z = upstream @ params.D
    d_d = upstream.T @ z
    d_pre_up = d_z * s
    d_pre_gate = d_z * pre_up * act_grad(pre_gate)
    d_g = d_pre_gate.T @ x
    d_u = d_pre_up.T @ x
    return d_g, d_u, d_d


class _Optimizer:
    """SGD or Adam over a flat list of tensors, state kept per tensor."""

    def __init__(self, cfg: TrainConfig, tensors: list[np.ndarray]):
        self.cfg = cfg
        self.t = 0
        if cfg.optimizer == "adam":
            self.m = [np.zeros_like(p) for p in tensors]
            self.v = [np.zeros_like(p) for p in tensors]

    def step(self, tensors: list[np.ndarray], grads: list[np.ndarray]) -> None:
        cfg = self.cfg
        self.t += 1
        if cfg.optimizer == "sgd":
            for p, g in zip(tensors, grads):
                p -= cfg.learning_rate * g
            return
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for p, g, m, v in zip(tensors, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= cfg.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + cfg.adam_eps)


def _mse_step_grads(
    params: GluMlpParams, x: np.ndarray, target: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """One fused forward/backward for the MSE loss (shares intermediates)."""
    act, act_grad = _ACTIVATIONS[params.activation]
    pre_gate = x @ params.G.T
    pre_up = x @ params.U.T
    s = act(pre_gate)
    z = s * pre_up
    out = z @ params.D.T
    resid = out - target
    loss = float(np.mean(resid * resid))
    upstream = (2.0 / resid.size) * resid
    d_z = upstream @ params.D
    d_d = upstream.T @ z
    d_g = (d_z * pre_up * act_grad(pre_gate)).T @ x
    d_u = (d_z * s).T @ x
    return loss, d_g, d_u, d_d


def train_glu_mlp(init: GluMlpParams, data_fn, cfg: TrainConfig) -> TrainRun:
    """Train a GLU MLP on MSE against batches from ``data_fn(step)``.

    ``data_fn`` must be deterministic in the step index; the whole run is
    then a pure function of (init, data_fn, cfg).
    """
    params = init.copy()
    tensors = [params.G, params.U, params.D]
    opt = _Optimizer(cfg, tensors)
    losses: list[float] = []
    for step in range(cfg.steps):
        x, target = data_fn(step)
        loss, d_g, d_u, d_d = _mse_step_grads(params, x, target)
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged at step {step}")
        losses.append(loss)
        opt.step(tensors, [d_g, d_u, d_d])
    return TrainRun(params=params, losses=losses)


def init_glu_mlp(d: int, h: int, seed, activation: str = "silu") -> GluMlpParams:
    """Symmetric uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    rng = as_generator(seed)
    bound_in = 1.0 / np.sqrt(d)
    bound_down = 1.0 / np.sqrt(h)
    return GluMlpParams(
        G=rng.uniform(-bound_in, bound_in, size=(h, d)),
        U=rng.uniform(-bound_in, bound_in, size=(h, d)),
        D=rng.uniform(-bound_down, bound_down, size=(d, h)),
        activation=activation,
    )


def gaussian_batches(d: int, batch_size: int, seed, target_fn):
    """Deterministic (x, target_fn(x)) batch generator on isotropic Gaussians."""

    def data_fn(step: int):
        rng = substream(seed, step)
        x = rng.standard_normal((batch_size, d))
        return x, target_fn(x)

    return data_fn


def distill_glu_mlp(
    target_fn, d: int, h: int, cfg: TrainConfig, init_seed, init_scale: float = 1.0
) -> TrainRun:
    """Fit a width-h GLU MLP to an arbitrary R^d -> R^d function by MSE.

    ``init_scale`` shrinks the starting weights; small initializations bias
    the fit toward feature-identifying solutions rather than lazy ones,
    which matters when the fitted units are later aligned across models.
    """
    init = init_glu_mlp(d, h, subseed(init_seed, 0))
    if init_scale != 1.0:
        init = GluMlpParams(
            init.G * init_scale, init.U * init_scale, init.D * init_scale
        )
    data_fn = gaussian_batches(d, cfg.batch_size, subseed(cfg.seed, 1), target_fn)
    return train_glu_mlp(init, data_fn, cfg)


# ---------------------------------------------------------------------------
# model-level fixtures


def _init_bound(role: str, manifest: ArchManifest) -> float:
    base = role.rpartition(".")[0] if "." in role else role
    if base in ("down_proj", "fc_out"):
        i = int(role.rpartition(".")[2])
        return 1.0 / np.sqrt(manifest.d_mlp[i])
    return 1.0 / np.sqrt(manifest.d_emb)


def init_model(manifest: ArchManifest, seed, gamma_log_sigma: float = 0.0) -> ModelBundle:
    """Random-init bundle: iid symmetric weights, positive layernorms.

    Entries are iid within every tensor, so the induced distribution is
    invariant under both hidden-unit and embedding permutations.  With
    ``gamma_log_sigma`` > 0 the layernorm entries are iid lognormal instead
    of all-ones, giving fixtures the decade-wide gain spread that trained
    models exhibit (the weight-product invariant baselines are only
    breakable when that spread exists).
    """
    tensors: dict[str, np.ndarray] = {}
    for idx, role in enumerate(manifest.required_roles()):
        shape = manifest.expected_shape(role)
        name = manifest.role_map[role]
        rng = substream(seed, idx)
        if "layernorm" in role:
            if gamma_log_sigma > 0.0:
                tensors[name] = np.exp(rng.normal(0.0, gamma_log_sigma, size=shape))
            else:
                tensors[name] = np.ones(shape)
        else:
            b = _init_bound(role, manifest)
            tensors[name] = rng.uniform(-b, b, size=shape)
    return bundle_from_arrays(manifest, tensors)


def _block_params(model: ModelBundle, i: int) -> GluMlpParams:
    return GluMlpParams(
        model.role(f"gate_proj.{i}"),
        model.role(f"up_proj.{i}"),
        model.role(f"down_proj.{i}"),
    )


def pretrain_mlps(model: ModelBundle, data_seed: int, cfg: TrainConfig) -> ModelBundle:
    """Train every block's MLP to regress the next token's embedding.

    Inputs are the model's own post-attention activations on a shared
    random token stream; targets are the model's own embeddings of the
    following token.  Both are covariant with the model's internal bases,
    which keeps the full run permutation-equivariant.
    """
    man = model.manifest
    if man.family != "glu-transformer":
        raise DimensionError("pretraining applies to glu-transformer bundles")
    s = _PRETRAIN_SEQ_LEN
    n_seq = max(1, cfg.batch_size // s)
    blocks = [_block_params(model, i).copy() for i in range(man.L)]
    opts = [_Optimizer(cfg, [b.G, b.U, b.D]) for b in blocks]
    current = model
    emb = model.role("embedding")
    for step in range(cfg.steps):
        rng = substream(data_seed, step)
        ids = rng.integers(0, man.V, size=(n_seq, s + 1), dtype=np.int64)
        batch = TokenBatch(ids[:, :-1], man.V)
        target = emb[ids[:, 1:]].reshape(n_seq * s, man.d_emb)
        trace = transformer_forward(current, batch).trace
        updates = {}
        for i, (b, opt) in enumerate(zip(blocks, opts)):
            x = trace.mlp_input[i]
            loss, d_g, d_u, d_d = _mse_step_grads(b, x, target)
            if not np.isfinite(loss):
                raise TrainingError(f"block {i} diverged at step {step}")
            opt.step([b.G, b.U, b.D], [d_g, d_u, d_d])
            updates[f"gate_proj.{i}"] = b.G
            updates[f"up_proj.{i}"] = b.U
            updates[f"down_proj.{i}"] = b.D
        current = model.replace_roles(updates)
    # detach the returned bundle from the mutable training buffers
    return model.replace_roles(
        {key: arr.copy() for key, arr in updates.items()}
    )


def _shared_teacher_distill(model: ModelBundle, data_seed: int, cfg: TrainConfig) -> ModelBundle:
    """Distill each block of a glu-mlp bundle toward one shared random teacher."""
    man = model.manifest
    teacher = init_glu_mlp(man.d_emb, max(man.d_mlp), substream(data_seed, 10_000))
    updates = {}
    for i in range(man.L):
        run = train_glu_mlp(
            _block_params(model, i),
            gaussian_batches(
                man.d_emb,
                cfg.batch_size,
                subseed(data_seed, i),
                lambda x: glu_mlp_forward(teacher, x),
            ),
            cfg,
        )
        updates[f"gate_proj.{i}"] = run.params.G
        updates[f"up_proj.{i}"] = run.params.U
        updates[f"down_proj.{i}"] = run.params.D
    return model.replace_roles(updates)


def make_null_pair(
    manifest: ArchManifest,
    data_seed: int,
    init_seeds: tuple[int, int],
    cfg: TrainConfig | None = None,
    gamma_log_sigma: float = 0.0,
) -> tuple[ModelBundle, ModelBundle]:
    """Two independently-initialized models put through the same training.

    The training procedure and data stream are shared; only the
    initialization seed differs, so the pair is independent by construction
    no matter how similar the trained behaviors end up.
    """
    cfg = cfg or TrainConfig(steps=150, batch_size=64)
    out = []
    for seed in init_seeds:
        model = init_model(manifest, seed, gamma_log_sigma=gamma_log_sigma)
        if manifest.family == "glu-transformer":
            model = pretrain_mlps(model, data_seed, cfg)
        elif manifest.family == "glu-mlp":
            model = _shared_teacher_distill(model, data_seed, cfg)
        # plain-mlp fixtures stay at initialization
        out.append(model)
    return out[0], out[1]


@dataclass(frozen=True)
class AdversarySpec:
    """Optional post-processing of a dependent model.

    ``retrain_block`` reinitializes one block's MLP at
    ``retrain_width_factor`` times the width and distills it to the original
    block's input/output behavior over isotropic Gaussian inputs;
    ``transform`` applies seeded permutation/rotation camouflage afterwards.
    """

    retrain_block: int | None = None
    retrain_width_factor: int = 2
    retrain_cfg: TrainConfig = TrainConfig(steps=2000, batch_size=512)
    transform: TransformSpec | None = None


def retrain_block_mlp(model: ModelBundle, block: int, width_factor: int, cfg: TrainConfig) -> ModelBundle:
    """Replace one block's MLP with a from-scratch imitation at another width."""
    man = model.manifest
    original = _block_params(model, block)
    h_new = width_factor * man.d_mlp[block]
    run = distill_glu_mlp(
        lambda x: glu_mlp_forward(original, x), man.d_emb, h_new, cfg, init_seed=cfg.seed
    )
    new_widths = list(man.d_mlp)
    new_widths[block] = h_new
    new_man = dataclasses.replace(man, d_mlp=tuple(new_widths))
    tensors = dict(model.tensors)
    tensors[man.role_map[f"gate_proj.{block}"]] = run.params.G
    tensors[man.role_map[f"up_proj.{block}"]] = run.params.U
    tensors[man.role_map[f"down_proj.{block}"]] = run.params.D
    return ModelBundle(new_man, tensors)


def make_dependent_pair(
    base: ModelBundle,
    finetune_cfg: TrainConfig,
    adversary: AdversarySpec | None = None,
) -> ModelBundle:
    """Fine-tuned (and optionally camouflaged) descendant of ``base``.

    Fine-tuning continues the synthetic pretraining task from the base
    weights under ``finetune_cfg`` (its seed selects a fresh data stream).
    """
    model = pretrain_mlps(base, finetune_cfg.seed, finetune_cfg)
    if adversary is not None:
        if adversary.retrain_block is not None:
            model = retrain_block_mlp(
                model,
                adversary.retrain_block,
                adversary.retrain_width_factor,
                adversary.retrain_cfg,
            )
        if adversary.transform is not None:
            model = apply_transform_spec(model, adversary.transform)
    return model
