"""Checkpoint export: ecosystem weights -> container + manifest.

Reads a checkpoint directory or file (torch state dicts, safetensors, or
npz), maps source tensor names onto the analysis tool's role vocabulary via
a data-driven template, casts everything to float32 (nearest-even for
float64 sources; half-precision upcasts are exact), and writes the
container/manifest pair.  Role templates are JSON files, so supporting a
new naming scheme means adding a template, not code.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .container import write_container, write_manifest

SUPPORTED_FAMILIES = ("glu-transformer", "glu-mlp", "plain-mlp")


class ExportError(Exception):
    pass


class UnknownFamilyError(ExportError):
    pass


class MissingTensorError(ExportError):
    pass


@dataclass
class ExportSpec:
    """What to export and how to interpret it."""

    source: str
    template: str  # template name (e.g. hf-llama) or a path to a template file
    n_heads: int | None = None  # required for transformer sources without config.json
    extra_config: dict = field(default_factory=dict)


def load_template(name: str) -> dict:
    path = Path(name)
    if path.suffix == ".json" and path.exists():
        return json.loads(path.read_text(encoding="utf-8"))
    ref = resources.files("hf_export.templates").joinpath(f"{name}.json")
    try:
        with ref.open() as fh:
            return json.load(fh)
    except FileNotFoundError:
        available = sorted(
            p.name.removesuffix(".json")
            for p in resources.files("hf_export.templates").iterdir()
            if p.name.endswith(".json")
        )
        raise UnknownFamilyError(
            f"no template {name!r}; available: {available}"
        ) from None


# ---------------------------------------------------------------------------
# checkpoint readers

_SAFETENSORS_DTYPES = {
    "F64": np.dtype("<f8"),
    "F32": np.dtype("<f4"),
    "F16": np.dtype("<f2"),
    "I64": np.dtype("<i8"),
    "I32": np.dtype("<i4"),
}


def _read_safetensors(path: Path) -> dict[str, np.ndarray]:
    raw = path.read_bytes()
    (header_len,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    header.pop("__metadata__", None)
    data = raw[8 + header_len :]
    out = {}
    for name, entry in header.items():
        dtype_name = entry["dtype"]
        begin, end = entry["data_offsets"]
        buf = data[begin:end]
        if dtype_name == "BF16":
            # widen bfloat16 to float32 by zero-padding the mantissa
            u16 = np.frombuffer(buf, dtype="<u2").astype(np.uint32) << 16
            arr = u16.view(np.float32).reshape(entry["shape"])
        elif dtype_name in _SAFETENSORS_DTYPES:
            arr = np.frombuffer(buf, dtype=_SAFETENSORS_DTYPES[dtype_name]).reshape(
                entry["shape"]
            )
        else:
            raise ExportError(f"{path}: unsupported safetensors dtype {dtype_name}")
        out[name] = arr
    return out


def _read_torch(path: Path) -> dict[str, np.ndarray]:
    try:
        import torch
    except ImportError as exc:
        raise ExportError(
            f"{path} looks like a torch checkpoint but torch is not installed"
        ) from exc
    state = torch.load(path, map_location="cpu", weights_only=True)
    if hasattr(state, "state_dict"):
        state = state.state_dict()
    out = {}
    for name, tensor in state.items():
        if not hasattr(tensor, "dtype"):
            continue
        out[name] = tensor.to(torch.float32).numpy() if tensor.dtype in (
            torch.float16,
            torch.bfloat16,
        ) else tensor.numpy()
    return out


def read_checkpoint(source) -> tuple[dict[str, np.ndarray], dict]:
    """All tensors plus the parsed config.json (if any) from a source.

    Directories are scanned for *.safetensors / *.bin / *.pt / *.npz shards,
    concatenated in sorted order.
    """
    src = Path(source)
    files: list[Path]
    config: dict = {}
    if src.is_dir():
        cfg = src / "config.json"
        if cfg.exists():
            config = json.loads(cfg.read_text(encoding="utf-8"))
        files = sorted(
            p
            for p in src.iterdir()
            if p.suffix in (".safetensors", ".bin", ".pt", ".npz")
        )
        if not files:
            raise ExportError(f"{source}: no checkpoint files found")
    elif src.exists():
        files = [src]
    else:
        raise ExportError(f"{source}: not found")
    tensors: dict[str, np.ndarray] = {}
    for path in files:
        if path.suffix == ".safetensors":
            shard = _read_safetensors(path)
        elif path.suffix == ".npz":
            shard = dict(np.load(path))
        else:
            shard = _read_torch(path)
        overlap = tensors.keys() & shard.keys()
        if overlap:
            raise ExportError(f"{path}: duplicate tensors across shards: {sorted(overlap)[:3]}")
        tensors.update(shard)
    return tensors, config


# ---------------------------------------------------------------------------
# role mapping


def _count_blocks(template: dict, tensors: dict) -> int:
    pattern = template["block_key"]
    count = 0
    while pattern.format(i=count) in tensors:
        count += 1
    if count == 0:
        raise MissingTensorError(
            f"no blocks found: expected tensors like {pattern.format(i=0)!r}"
        )
    return count


def _to_f32(arr: np.ndarray, name: str) -> np.ndarray:
    if arr.dtype == np.float32:
        return arr
    if arr.dtype in (np.float64, np.float16):
        return arr.astype(np.float32)
    raise ExportError(f"tensor {name!r} has non-float dtype {arr.dtype}")


def _resolve_role(role: str, rule: dict, tensors: dict) -> np.ndarray:
    source = rule["source"]
    if source not in tensors:
        raise MissingTensorError(
            f"checkpoint is missing tensor {source!r} required for role {role!r}"
        )
    arr = _to_f32(np.asarray(tensors[source]), source)
    if rule.get("transpose"):
        arr = arr.T.copy()
    if rule.get("reshape") == "row":
        arr = arr.reshape(1, -1)
    return arr


def export_checkpoint(spec: ExportSpec, out_dir) -> tuple[Path, Path]:
    """Convert a checkpoint; returns (container_path, manifest_path)."""
    template = load_template(spec.template)
    family = template["family"]
    if family not in SUPPORTED_FAMILIES:
        raise UnknownFamilyError(
            f"template family {family!r} unsupported; expected one of {SUPPORTED_FAMILIES}"
        )
    source_tensors, config = read_checkpoint(spec.source)
    n_blocks = _count_blocks(template, source_tensors)

    resolved: dict[str, np.ndarray] = {}
    for role_pattern, rule in template["roles"].items():
        if "{i}" in role_pattern:
            for i in range(n_blocks):
                role = role_pattern.format(i=i)
                concrete = {**rule, "source": rule["source"].format(i=i)}
                resolved[role] = _resolve_role(role, concrete, source_tensors)
        else:
            resolved[role_pattern] = _resolve_role(role_pattern, rule, source_tensors)

    dims = {"L": n_blocks, "V": 0, "n_heads": 1}
    for dim, (role_pattern, axis) in template["dims"].items():
        role = role_pattern.format(i=0)
        value = int(resolved[role].shape[axis])
        if dim == "d_mlp":
            per_block = [
                int(resolved[role_pattern.format(i=i)].shape[axis])
                for i in range(n_blocks)
            ]
            dims["d_mlp"] = per_block[0] if len(set(per_block)) == 1 else per_block
        else:
            dims[dim] = value
    for dim, key in template.get("config_keys", {}).items():
        if key in config:
            dims[dim] = int(config[key])
    if spec.n_heads is not None:
        dims["n_heads"] = spec.n_heads
    dims.update(spec.extra_config)
    if family == "glu-transformer" and dims.get("n_heads", 1) <= 1 and "n_heads" not in spec.extra_config:
        if spec.n_heads is None and "num_attention_heads" not in config:
            raise ExportError(
                "transformer export needs n_heads (pass it explicitly or provide config.json)"
            )

    manifest = {
        "family": family,
        "L": dims["L"],
        "d_emb": dims["d_emb"],
        "d_mlp": dims["d_mlp"],
        "V": dims["V"],
        "n_heads": dims["n_heads"],
        "role_map": {role: role for role in resolved},
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    container_path = out / "model.weightprov.bin"
    manifest_path = out / "model.manifest.json"
    write_container(resolved, container_path)
    write_manifest(manifest, manifest_path)
    return container_path, manifest_path
