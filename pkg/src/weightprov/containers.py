"""Binary tensor container, architecture manifest, and model bundle loading.

Container layout (bit-exact):
  bytes 0-7    little-endian u64 N = header length
  bytes 8-8+N  UTF-8 JSON object: name -> {"dtype": "F32"|"F64",
               "shape": [u64...], "data_offsets": [begin, end]}
  remainder    concatenated little-endian raw tensor data; offsets are
               relative to the end of the header

Writes are canonical -- names sorted lexicographically, offsets contiguous,
compact JSON with sorted keys -- so identical tensor maps always produce
identical bytes.  Reads are more lenient (any non-overlapping in-bounds
offsets are accepted) but reject NaN/Inf values outright: every statistic
downstream assumes finite inputs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import (
    ContainerCorruptionError,
    ContainerFormatError,
    ManifestError,
    ValidationError,
)

_DTYPES = {"F32": np.dtype("<f4"), "F64": np.dtype("<f8")}
_DTYPE_NAMES = {np.dtype(np.float32): "F32", np.dtype(np.float64): "F64"}

FAMILIES = ("glu-transformer", "glu-mlp", "plain-mlp")


def read_container(path) -> dict[str, np.ndarray]:
    """Read all tensors from a container file.

    Raises ContainerFormatError for malformed headers,
    ContainerCorruptionError for offset overlap/overrun, and
    ValidationError if any stored value is non-finite.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ContainerFormatError(f"{path}: file too short for a header")
    (header_len,) = struct.unpack("<Q", raw[:8])
    if 8 + header_len > len(raw):
        raise ContainerFormatError(f"{path}: header length {header_len} overruns file")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerFormatError(f"{path}: header is not valid JSON ({exc})") from exc
    if not isinstance(header, dict):
        raise ContainerFormatError(f"{path}: header must be a JSON object")

    data = raw[8 + header_len :]
    tensors: dict[str, np.ndarray] = {}
    spans: list[tuple[int, int, str]] = []
    for name, entry in header.items():
        if not isinstance(entry, dict) or set(entry) != {"dtype", "shape", "data_offsets"}:
            raise ContainerFormatError(f"{path}: bad entry for tensor {name!r}")
        dtype_name = entry["dtype"]
        if dtype_name not in _DTYPES:
            raise ContainerFormatError(f"{path}: unsupported dtype {dtype_name!r}")
        shape = entry["shape"]
        if not isinstance(shape, list) or any(
            not isinstance(v, int) or v < 0 for v in shape
        ):
            raise ContainerFormatError(f"{path}: bad shape for tensor {name!r}")
        offsets = entry["data_offsets"]
        if (
            not isinstance(offsets, list)
            or len(offsets) != 2
            or any(not isinstance(v, int) or v < 0 for v in offsets)
        ):
            raise ContainerFormatError(f"{path}: bad data_offsets for tensor {name!r}")
        begin, end = offsets
        dtype = _DTYPES[dtype_name]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if end < begin or end - begin != count * dtype.itemsize:
            raise ContainerCorruptionError(
                f"{path}: tensor {name!r} spans {end - begin} bytes, "
                f"expected {count * dtype.itemsize}"
            )
        if end > len(data):
            raise ContainerCorruptionError(f"{path}: tensor {name!r} overruns the file")
        spans.append((begin, end, name))
        arr = np.frombuffer(data[begin:end], dtype=dtype).reshape(shape)
        if not np.isfinite(arr).all():
            raise ValidationError(f"{path}: tensor {name!r} contains non-finite values")
        tensors[name] = arr.copy()

    spans.sort()
    for (b0, e0, n0), (b1, e1, n1) in zip(spans, spans[1:]):
        if b1 < e0:
            raise ContainerCorruptionError(
                f"{path}: tensors {n0!r} and {n1!r} overlap"
            )
    return tensors


def write_container(tensors: Mapping[str, np.ndarray], path) -> None:
    """Write tensors canonically: sorted names, contiguous offsets."""
    header: dict[str, dict] = {}
    blobs: list[bytes] = []
    offset = 0
    for name in sorted(tensors):
        if not name:
            raise ValidationError("tensor names must be non-empty")
        arr = np.asarray(tensors[name])
        dtype_name = _DTYPE_NAMES.get(arr.dtype)
        if dtype_name is None:
            raise ValidationError(
                f"tensor {name!r} has unsupported dtype {arr.dtype}; "
                "only float32/float64 are storable"
            )
        if not np.isfinite(arr).all():
            raise ValidationError(f"tensor {name!r} contains non-finite values")
        blob = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes(order="C")
        header[name] = {
            "dtype": dtype_name,
            "shape": [int(v) for v in arr.shape],
            "data_offsets": [offset, offset + len(blob)],
        }
        blobs.append(blob)
        offset += len(blob)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode(
        "utf-8"
    )
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


@dataclass(frozen=True)
class ArchManifest:
    """Architecture manifest: dims plus the role -> tensor-name map.

    ``d_mlp`` is per block; a plain int in the JSON form means every block
    shares that width (a block whose MLP was retrained at a different width
    is the one case that needs the per-block list).
    """

    family: str
    L: int
    d_emb: int
    d_mlp: tuple[int, ...]
    V: int
    n_heads: int
    role_map: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ManifestError(
                f"unknown family {self.family!r}; expected one of {FAMILIES}"
            )
        if self.L < 1 or self.d_emb < 1:
            raise ManifestError("L and d_emb must be positive")
        if len(self.d_mlp) != self.L:
            raise ManifestError(
                f"d_mlp lists {len(self.d_mlp)} blocks but L = {self.L}"
            )
        if self.family == "glu-transformer":
            if self.V < 1 or self.n_heads < 1:
                raise ManifestError("glu-transformer needs V >= 1 and n_heads >= 1")
            if self.d_emb % self.n_heads != 0:
                raise ManifestError(
                    f"d_emb = {self.d_emb} not divisible by n_heads = {self.n_heads}"
                )

    @property
    def d_head(self) -> int:
        return self.d_emb // self.n_heads

    def block_roles(self, i: int) -> list[str]:
        if self.family == "glu-transformer":
            return [
                f"input_layernorm.{i}",
                f"W_Q.{i}",
                f"W_K.{i}",
                f"W_V.{i}",
                f"W_O.{i}",
                f"post_attn_layernorm.{i}",
                f"gate_proj.{i}",
                f"up_proj.{i}",
                f"down_proj.{i}",
            ]
        if self.family == "glu-mlp":
            return [f"gate_proj.{i}", f"up_proj.{i}", f"down_proj.{i}"]
        return [f"fc_in.{i}", f"fc_out.{i}"]

    def required_roles(self) -> list[str]:
        roles: list[str] = []
        if self.family == "glu-transformer":
            roles.append("embedding")
        for i in range(self.L):
            roles.extend(self.block_roles(i))
        if self.family == "glu-transformer":
            roles.extend(["final_layernorm", "output"])
        return roles

    def expected_shape(self, role: str) -> tuple[int, ...]:
        d, v = self.d_emb, self.V
        if role == "embedding":
            return (v, d)
        if role == "output":
            return (d, v)
        if role == "final_layernorm":
            return (1, d)
        base, _, idx = role.rpartition(".")
        i = int(idx)
        h = self.d_mlp[i]
        shapes = {
            "input_layernorm": (1, d),
            "post_attn_layernorm": (1, d),
            "W_Q": (d, d),
            "W_K": (d, d),
            "W_V": (d, d),
            "W_O": (d, d),
            "gate_proj": (h, d),
            "up_proj": (h, d),
            "down_proj": (d, h),
            "fc_in": (h, d),
            "fc_out": (d, h),
        }
        if base not in shapes:
            raise ManifestError(f"unknown role {role!r}")
        return shapes[base]

    def to_json(self) -> dict:
        d_mlp = list(self.d_mlp)
        if len(set(d_mlp)) == 1:
            d_mlp = d_mlp[0]
        return {
            "family": self.family,
            "L": self.L,
            "d_emb": self.d_emb,
            "d_mlp": d_mlp,
            "V": self.V,
            "n_heads": self.n_heads,
            "role_map": dict(self.role_map),
        }

    @staticmethod
    def from_json(doc: dict) -> "ArchManifest":
        try:
            d_mlp = doc["d_mlp"]
            if isinstance(d_mlp, int):
                d_mlp = [d_mlp] * int(doc["L"])
            return ArchManifest(
                family=doc["family"],
                L=int(doc["L"]),
                d_emb=int(doc["d_emb"]),
                d_mlp=tuple(int(v) for v in d_mlp),
                V=int(doc["V"]),
                n_heads=int(doc["n_heads"]),
                role_map={str(k): str(v) for k, v in doc["role_map"].items()},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"manifest is missing or mistypes a field: {exc}") from exc

    @staticmethod
    def with_identity_roles(
        family: str,
        L: int,
        d_emb: int,
        d_mlp,
        V: int = 0,
        n_heads: int = 1,
    ) -> "ArchManifest":
        """Manifest whose tensor names equal the role keys."""
        if isinstance(d_mlp, int):
            d_mlp = (d_mlp,) * L
        m = ArchManifest(family, L, d_emb, tuple(d_mlp), V, n_heads, {})
        object.__setattr__(m, "role_map", {r: r for r in m.required_roles()})
        return m


def read_manifest(path) -> ArchManifest:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: cannot parse manifest ({exc})") from exc
    return ArchManifest.from_json(doc)


def write_manifest(manifest: ArchManifest, path) -> None:
    Path(path).write_text(
        json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


@dataclass(frozen=True)
class ModelBundle:
    """A fully-resolved model: manifest plus named weight tensors (float64).

    Treat bundles as immutable; transforms return new bundles.
    """

    manifest: ArchManifest
    tensors: dict[str, np.ndarray]

    def role(self, key: str) -> np.ndarray:
        name = self.manifest.role_map.get(key)
        if name is None or name not in self.tensors:
            raise ManifestError(f"role {key!r} is not resolvable in this bundle")
        return self.tensors[name]

    def replace_roles(self, updates: Mapping[str, np.ndarray]) -> "ModelBundle":
        """New bundle with the given roles replaced (values copied as float64)."""
        tensors = dict(self.tensors)
        for key, arr in updates.items():
            name = self.manifest.role_map.get(key)
            if name is None:
                raise ManifestError(f"role {key!r} is not mapped in the manifest")
            tensors[name] = np.asarray(arr, dtype=np.float64)
        return ModelBundle(self.manifest, tensors)

    def same_architecture(self, other: "ModelBundle") -> bool:
        a, b = self.manifest, other.manifest
        return (
            a.family == b.family
            and a.L == b.L
            and a.d_emb == b.d_emb
            and a.d_mlp == b.d_mlp
            and a.V == b.V
            and a.n_heads == b.n_heads
        )


def validate_bundle(manifest: ArchManifest, tensors: Mapping[str, np.ndarray]) -> None:
    """Check that every required role resolves to a tensor of the right shape."""
    for role in manifest.required_roles():
        name = manifest.role_map.get(role)
        if name is None:
            raise ManifestError(f"manifest does not map required role {role!r}")
        if name not in tensors:
            raise ManifestError(f"container is missing tensor {name!r} for role {role!r}")
        expected = manifest.expected_shape(role)
        got = tuple(tensors[name].shape)
        if got != expected:
            raise ManifestError(
                f"role {role!r}: expected shape {list(expected)}, got {list(got)}"
            )


def bundle_from_arrays(
    manifest: ArchManifest, tensors: Mapping[str, np.ndarray]
) -> ModelBundle:
    """Validate and assemble a bundle, promoting all tensors to float64."""
    validate_bundle(manifest, tensors)
    promoted = {
        name: np.asarray(arr, dtype=np.float64) for name, arr in tensors.items()
    }
    return ModelBundle(manifest, promoted)


def load_model(container_path, manifest_path) -> ModelBundle:
    """Load a container + manifest pair into a validated ModelBundle."""
    manifest = read_manifest(manifest_path)
    tensors = read_container(container_path)
    return bundle_from_arrays(manifest, tensors)


def save_model(bundle: ModelBundle, container_path, manifest_path, dtype="F64") -> None:
    """Write a bundle back out; dtype selects the storage precision."""
    np_dtype = _DTYPES.get(dtype)
    if np_dtype is None:
        raise ValidationError(f"unsupported storage dtype {dtype!r}")
    write_container(
        {name: arr.astype(np_dtype) for name, arr in bundle.tensors.items()},
        container_path,
    )
    write_manifest(bundle.manifest, manifest_path)
