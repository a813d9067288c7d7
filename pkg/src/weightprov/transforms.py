"""Output-preserving weight transformations.

Two discrete classes -- permuting each block's MLP hidden units, and
permuting the embedding dimension consistently through every tensor that
touches the residual stream -- plus the continuous rotation camouflage,
which combines a shared orthogonal rotation of the residual stream,
per-block rotations of the query/key matrices, wholesale layernorm
replacement, and a per-block scaling of the MLP.  All of them leave the
model's logits unchanged, which is exactly what makes the permutations
usable as exchangeable-copy generators and the rotation usable as an
adversarial fixture.

Conventions: a permutation is an index array ``p``; ``w[p]`` permutes rows
and ``w[:, p]`` permutes columns.  Applied to a row-vector activation
``x``, the embedding permutation sends ``x`` to ``x[..., p]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .containers import ModelBundle
from .errors import DimensionError, ParameterError
from .seeding import as_generator, substream

_ORTHO_TOL = 1e-10


def random_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(n).astype(np.int64)


def identity_permutation(n: int) -> np.ndarray:
    return np.arange(n, dtype=np.int64)


def inverse_permutation(p: np.ndarray) -> np.ndarray:
    return np.argsort(p).astype(np.int64)


def compose_permutations(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """The permutation mapping i -> p[q[i]] (apply q first, then p)."""
    return np.asarray(p)[np.asarray(q)]


def apply_pi_mlp(model: ModelBundle, perms: list[np.ndarray]) -> ModelBundle:
    """Permute each block's MLP hidden units.

    Gate and up projections get their rows permuted, the down projection
    its columns, with an independent permutation per block.  Everything
    else is untouched; the block computes the same function.
    """
    man = model.manifest
    if len(perms) != man.L:
        raise DimensionError(f"need {man.L} block permutations, got {len(perms)}")
    updates = {}
    for i, p in enumerate(perms):
        p = np.asarray(p, dtype=np.int64)
        if p.shape[0] != man.d_mlp[i]:
            raise DimensionError(
                f"block {i}: permutation size {p.shape[0]} != d_mlp {man.d_mlp[i]}"
            )
        updates[f"gate_proj.{i}"] = model.role(f"gate_proj.{i}")[p]
        updates[f"up_proj.{i}"] = model.role(f"up_proj.{i}")[p]
        updates[f"down_proj.{i}"] = model.role(f"down_proj.{i}")[:, p]
    return model.replace_roles(updates)


def apply_pi_emb(model: ModelBundle, perm: np.ndarray) -> ModelBundle:
    """Permute the embedding dimension consistently across all tensors.

    Residual-stream activations come out permuted by the same index map at
    every layer, and the output head undoes it, so logits are unchanged
    exactly.
    """
    man = model.manifest
    p = np.asarray(perm, dtype=np.int64)
    if p.shape[0] != man.d_emb:
        raise DimensionError(f"permutation size {p.shape[0]} != d_emb {man.d_emb}")
    updates = {
        "embedding": model.role("embedding")[:, p],
        "final_layernorm": model.role("final_layernorm")[:, p],
        "output": model.role("output")[p, :],
    }
    for i in range(man.L):
        updates[f"input_layernorm.{i}"] = model.role(f"input_layernorm.{i}")[:, p]
        updates[f"post_attn_layernorm.{i}"] = model.role(f"post_attn_layernorm.{i}")[:, p]
        for w in ("W_Q", "W_K", "W_V"):
            updates[f"{w}.{i}"] = model.role(f"{w}.{i}")[:, p]
        updates[f"W_O.{i}"] = model.role(f"W_O.{i}")[p, :]
        updates[f"gate_proj.{i}"] = model.role(f"gate_proj.{i}")[:, p]
        updates[f"up_proj.{i}"] = model.role(f"up_proj.{i}")[:, p]
        updates[f"down_proj.{i}"] = model.role(f"down_proj.{i}")[p, :]
    return model.replace_roles(updates)


def random_orthogonal(n: int, seed) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of iid normals, sign-corrected."""
    if n < 1:
        raise DimensionError("orthogonal matrix size must be >= 1")
    rng = as_generator(seed)
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    # without the sign correction the QR convention biases the distribution
    q = q * np.sign(np.diag(r))
    return q


def _check_orthogonal(r: np.ndarray, what: str) -> None:
    err = np.max(np.abs(r.T @ r - np.eye(r.shape[0])))
    if err > _ORTHO_TOL:
        raise ParameterError(f"{what} is not orthogonal (max deviation {err:.2e})")


@dataclass
class RotationParams:
    """Everything the rotation camouflage needs.

    ``R_blocks[i]`` rotates block i's query/key matrices and must be
    block-diagonal with one orthogonal block per attention head: queries and
    keys are rotated identically, but the per-head dot products only survive
    if the rotation never mixes features across heads.  The replacement
    layernorm vectors must have no zero entries and each per-block MLP scale
    must be nonzero.
    """

    R_emb: np.ndarray
    R_blocks: list[np.ndarray]
    gamma_input: list[np.ndarray]
    gamma_post: list[np.ndarray]
    gamma_final: np.ndarray
    c: list[float]

    def validate(self, model: ModelBundle) -> None:
        man = model.manifest
        d = man.d_emb
        if self.R_emb.shape != (d, d):
            raise DimensionError("R_emb has the wrong shape")
        _check_orthogonal(self.R_emb, "R_emb")
        if (
            len(self.R_blocks) != man.L
            or len(self.gamma_input) != man.L
            or len(self.gamma_post) != man.L
            or len(self.c) != man.L
        ):
            raise DimensionError("rotation parameters do not cover every block")
        for i, r in enumerate(self.R_blocks):
            if r.shape != (d, d):
                raise DimensionError(f"R_blocks[{i}] has the wrong shape")
            _check_orthogonal(r, f"R_blocks[{i}]")
        for name, gammas in (("input", self.gamma_input), ("post-attn", self.gamma_post)):
            for i, g in enumerate(gammas):
                if g.shape != (1, d):
                    raise DimensionError(f"{name} layernorm {i} has the wrong shape")
                if np.any(g == 0.0):
                    raise ParameterError(f"replacement {name} layernorm {i} has a zero entry")
        if self.gamma_final.shape != (1, d):
            raise DimensionError("final layernorm replacement has the wrong shape")
        if np.any(self.gamma_final == 0.0):
            raise ParameterError("replacement final layernorm has a zero entry")
        for i, c in enumerate(self.c):
            if c == 0.0:
                raise ParameterError(f"MLP scale for block {i} is zero")


def head_block_orthogonal(d_emb: int, n_heads: int, rng: np.random.Generator) -> np.ndarray:
    """Block-diagonal orthogonal matrix with one Haar block per head."""
    d_head = d_emb // n_heads
    out = np.zeros((d_emb, d_emb))
    for j in range(n_heads):
        lo = j * d_head
        out[lo : lo + d_head, lo : lo + d_head] = random_orthogonal(d_head, rng)
    return out


def random_rotation_params(
    model: ModelBundle, seed, gamma_log_sigma: float = 1.5
) -> RotationParams:
    """Sample a full set of rotation parameters for a model.

    Replacement layernorms are drawn lognormal(0, gamma_log_sigma): strictly
    positive, and spread over a couple of decades the way trained layernorms
    are -- a flat narrow band (e.g. uniform [0.5, 2]) leaves the weight-product
    invariants of prior work largely intact, which defeats the point of the
    camouflage.  MLP scales are uniform in [0.5, 2.0]; they cancel between
    the up and down projections anyway.
    """
    man = model.manifest
    rng = as_generator(seed)
    d = man.d_emb

    def gammas():
        return np.exp(rng.normal(0.0, gamma_log_sigma, size=(1, d)))

    params = RotationParams(
        R_emb=random_orthogonal(d, rng),
        R_blocks=[head_block_orthogonal(d, man.n_heads, rng) for _ in range(man.L)],
        gamma_input=[gammas() for _ in range(man.L)],
        gamma_post=[gammas() for _ in range(man.L)],
        gamma_final=gammas(),
        c=[float(rng.uniform(0.5, 2.0)) for _ in range(man.L)],
    )
    params.validate(model)
    return params


def apply_rotation(model: ModelBundle, rot: RotationParams) -> ModelBundle:
    """Apply the output-preserving rotation camouflage.

    Every tensor is rewritten so that the rotated model's residual stream
    equals the original stream times R_emb at every point, the replacement
    layernorms absorb the original ones, and the MLP scale cancels between
    the up and down projections.  Logits are preserved exactly (up to
    float64 rounding).
    """
    rot.validate(model)
    man = model.manifest
    r = rot.R_emb
    updates: dict[str, np.ndarray] = {
        "embedding": model.role("embedding") @ r,
        "final_layernorm": rot.gamma_final.copy(),
    }
    for i in range(man.L):
        g_in = model.role(f"input_layernorm.{i}").ravel()
        g_in_new = rot.gamma_input[i].ravel()
        g_post = model.role(f"post_attn_layernorm.{i}").ravel()
        g_post_new = rot.gamma_post[i].ravel()
        ri = rot.R_blocks[i]
        c = rot.c[i]
        # diag(gamma) R diag(1/gamma') as one dense factor per layernorm
        mix_in = (g_in[:, None] * r) / g_in_new[None, :]
        mix_post = (g_post[:, None] * r) / g_post_new[None, :]
        updates[f"W_Q.{i}"] = ri @ model.role(f"W_Q.{i}") @ mix_in
        updates[f"W_K.{i}"] = ri @ model.role(f"W_K.{i}") @ mix_in
        updates[f"W_V.{i}"] = model.role(f"W_V.{i}") @ mix_in
        updates[f"W_O.{i}"] = r.T @ model.role(f"W_O.{i}")
        updates[f"input_layernorm.{i}"] = rot.gamma_input[i].copy()
        updates[f"post_attn_layernorm.{i}"] = rot.gamma_post[i].copy()
        updates[f"gate_proj.{i}"] = model.role(f"gate_proj.{i}") @ mix_post
        updates[f"up_proj.{i}"] = c * (model.role(f"up_proj.{i}") @ mix_post)
        updates[f"down_proj.{i}"] = (r.T @ model.role(f"down_proj.{i}")) / c
    g_f = model.role("final_layernorm").ravel()
    g_f_new = rot.gamma_final.ravel()
    # output head stored (d_emb, V): absorb diag(gamma) R diag(1/gamma') transposed
    updates["output"] = (r.T @ (g_f[:, None] * model.role("output"))) / g_f_new[:, None]
    return model.replace_roles(updates)


@dataclass(frozen=True)
class TransformSpec:
    """Seed-level description of a transform, serializable as a sidecar."""

    kind: str  # "permute" | "rotate" | "both"
    seed: int
    rotation_gamma_log_sigma: float = 1.5

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "rotation_gamma_log_sigma": self.rotation_gamma_log_sigma,
        }

    @staticmethod
    def from_json(doc: dict) -> "TransformSpec":
        return TransformSpec(
            kind=str(doc["kind"]),
            seed=int(doc["seed"]),
            rotation_gamma_log_sigma=float(doc.get("rotation_gamma_log_sigma", 1.5)),
        )


def apply_transform_spec(model: ModelBundle, spec: TransformSpec) -> ModelBundle:
    """Materialize and apply a seeded transform; deterministic per seed."""
    if spec.kind not in ("permute", "rotate", "both"):
        raise ParameterError(f"unknown transform kind {spec.kind!r}")
    man = model.manifest
    out = model
    if spec.kind in ("permute", "both"):
        rng = substream(spec.seed, 0)
        out = apply_pi_emb(out, random_permutation(man.d_emb, rng))
        out = apply_pi_mlp(out, [random_permutation(h, rng) for h in man.d_mlp])
    if spec.kind in ("rotate", "both"):
        rot = random_rotation_params(
            out, substream(spec.seed, 1), gamma_log_sigma=spec.rotation_gamma_log_sigma
        )
        out = apply_rotation(out, rot)
    return out
