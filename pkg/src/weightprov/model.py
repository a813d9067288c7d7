"""Deterministic forward passes: GLU MLP and the full GLU transformer.

All math runs in float64 regardless of storage dtype, and activations are
row-vector shaped (batch..., features) with weights applied as ``x @ W.T``.
The per-block trace captures each MLP's input together with its gate and
up projection pre-activations; those three matrices are what every
activation-based statistic consumes.

Layer normalization is the root-mean-square variant (mean of squares, no
mean subtraction, epsilon 1e-6): that choice is what makes the orthogonal
rotation camouflage exactly output-preserving.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .containers import ModelBundle
from .errors import DimensionError, ValidationError
from .seeding import as_generator

LAYERNORM_EPS = 1e-6


def silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def silu_grad(x: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


_ACTIVATIONS = {
    "silu": (silu, silu_grad),
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0.0).astype(np.float64)),
    # squared ReLU, the gate-free activation used by the plain MLP family
    "relu2": (lambda x: np.maximum(x, 0.0) ** 2, lambda x: 2.0 * np.maximum(x, 0.0)),
}


@dataclass
class GluMlpParams:
    """Parameters of a gated MLP computing D @ (act(G x) * (U x))."""

    G: np.ndarray  # (h, d)
    U: np.ndarray  # (h, d)
    D: np.ndarray  # (d, h)
    activation: str = "silu"

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64)
        self.D = np.asarray(self.D, dtype=np.float64)
        if self.G.shape != self.U.shape:
            raise DimensionError("gate and up projections must share a shape")
        if self.D.shape != (self.G.shape[1], self.G.shape[0]):
            raise DimensionError(
                f"down projection shape {self.D.shape} does not invert {self.G.shape}"
            )
        if self.activation not in _ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")

    @property
    def h(self) -> int:
        return self.G.shape[0]

    @property
    def d(self) -> int:
        return self.G.shape[1]

    def copy(self) -> "GluMlpParams":
        return GluMlpParams(self.G.copy(), self.U.copy(), self.D.copy(), self.activation)


def glu_mlp_forward(params: GluMlpParams, x: np.ndarray) -> np.ndarray:
    """Row-broadcast GLU MLP: each row of x maps through D(act(Gx) * (Ux))."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.d:
        raise DimensionError(
            f"input width {x.shape[-1]} does not match MLP width {params.d}"
        )
    act, _ = _ACTIVATIONS[params.activation]
    return (act(x @ params.G.T) * (x @ params.U.T)) @ params.D.T


@dataclass(frozen=True)
class TokenBatch:
    """N sequences of s token ids, all in [0, vocab_size)."""

    ids: np.ndarray  # (N, s) int64
    vocab_size: int

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.ndim != 2:
            raise DimensionError("token ids must be a (N, s) matrix")
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise ValidationError("token ids out of vocabulary range")
        object.__setattr__(self, "ids", ids)

    @property
    def n_sequences(self) -> int:
        return self.ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.ids.shape[1]


def random_token_batch(V: int, N: int, s: int, seed: int) -> TokenBatch:
    """Uniform random token ids; deterministic for a fixed seed."""
    if V < 1:
        raise ValidationError("vocabulary size must be >= 1")
    rng = as_generator(seed)
    return TokenBatch(rng.integers(0, V, size=(N, s), dtype=np.int64), V)


@dataclass
class ActivationTrace:
    """Per-block activations captured during a forward pass.

    mlp_input[i] is (N*s, d_emb); gate_out[i] and up_out[i] are (h_i, N*s)
    with one row per hidden unit.
    """

    mlp_input: list[np.ndarray] = field(default_factory=list)
    gate_out: list[np.ndarray] = field(default_factory=list)
    up_out: list[np.ndarray] = field(default_factory=list)

    def hidden_activations(self, i: int, activation: str = "silu") -> np.ndarray:
        """act(gate) * up for block i: the (h_i, N*s) GLU hidden layer."""
        act, _ = _ACTIVATIONS[activation]
        return act(self.gate_out[i]) * self.up_out[i]


@dataclass
class ForwardResult:
    logits: np.ndarray  # (N, s, V)
    trace: ActivationTrace


def rms_normalize(x: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    ms = np.mean(x * x, axis=-1, keepdims=True)
    return x / np.sqrt(ms + LAYERNORM_EPS) * gamma


def _causal_attention(x: np.ndarray, wq, wk, wv, wo, n_heads: int) -> np.ndarray:
    """Multi-head causal self-attention on (N, s, d) inputs."""
    n, s, d = x.shape
    d_head = d // n_heads
    q = x @ wq.T
    k = x @ wk.T
    v = x @ wv.T
    # (N, heads, s, d_head)
    q = q.reshape(n, s, n_heads, d_head).transpose(0, 2, 1, 3)
    k = k.reshape(n, s, n_heads, d_head).transpose(0, 2, 1, 3)
    v = v.reshape(n, s, n_heads, d_head).transpose(0, 2, 1, 3)
    scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(d_head)
    mask = np.tril(np.ones((s, s), dtype=bool))
    scores = np.where(mask, scores, -np.inf)
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    ctx = weights @ v  # (N, heads, s, d_head)
    ctx = ctx.transpose(0, 2, 1, 3).reshape(n, s, d)
    return ctx @ wo.T


def transformer_forward(model: ModelBundle, batch: TokenBatch) -> ForwardResult:
    """Full forward pass with activation capture.

    Per block: RMS input layernorm, causal multi-head self-attention
    (per-head softmax of Q K^T / sqrt(d_head)), residual, RMS post-attention
    layernorm, GLU MLP, residual.  Embedding in, final layernorm and linear
    output head out.  Inference only: dropout is the identity.
    """
    man = model.manifest
    if man.family != "glu-transformer":
        raise DimensionError(f"transformer forward needs family glu-transformer, got {man.family!r}")
    if batch.vocab_size != man.V:
        raise DimensionError(
            f"batch vocabulary {batch.vocab_size} does not match model V = {man.V}"
        )
    n, s = batch.ids.shape
    x = model.role("embedding")[batch.ids]  # (N, s, d)
    trace = ActivationTrace()
    for i in range(man.L):
        ln1 = rms_normalize(x, model.role(f"input_layernorm.{i}"))
        attn = _causal_attention(
            ln1,
            model.role(f"W_Q.{i}"),
            model.role(f"W_K.{i}"),
            model.role(f"W_V.{i}"),
            model.role(f"W_O.{i}"),
            man.n_heads,
        )
        x = x + attn
        u = rms_normalize(x, model.role(f"post_attn_layernorm.{i}"))
        flat = u.reshape(n * s, man.d_emb)
        gate = flat @ model.role(f"gate_proj.{i}").T  # (N*s, h)
        up = flat @ model.role(f"up_proj.{i}").T
        mlp = (silu(gate) * up) @ model.role(f"down_proj.{i}").T
        trace.mlp_input.append(flat)
        trace.gate_out.append(gate.T.copy())
        trace.up_out.append(up.T.copy())
        x = x + mlp.reshape(n, s, man.d_emb)
    xn = rms_normalize(x, model.role("final_layernorm"))
    logits = xn @ model.role("output")
    return ForwardResult(logits=logits, trace=trace)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def next_token_distribution(model: ModelBundle, batch: TokenBatch) -> np.ndarray:
    """Per-position probabilities over the vocabulary; rows sum to 1."""
    return softmax(transformer_forward(model, batch).logits)
