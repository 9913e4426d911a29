"""The .rvq container: a JSON manifest plus a raw little-endian blob.

Layout:

    bytes 0..8    magic "RVQM0001"
    bytes 8..16   manifest length, unsigned 64-bit little-endian
    manifest      UTF-8 JSON
    blob          tensor payloads, back to back

The manifest holds the format version, a stage marker, the model
configuration, the tensor table (name, shape, dtype, byte offset, byte
length relative to the blob), per-site quantizer parameters, fold records,
and a logical pass log. Payload dtypes are "f32" (float32 LE) for weights
and activations and "i32" (int32 LE) for integer codes. Compute stays in
float64; 32-bit floats exist only in this file format. Serialization is
deterministic: equal containers produce equal bytes.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .model import BlockWeights, ModelConfig
from .tensors import as_int_tensor, as_tensor

MAGIC = b"RVQM0001"
FORMAT_VERSION = 1

_DTYPES = {"f32": np.dtype("<f4"), "i32": np.dtype("<i4")}

WEIGHT_FIELDS = ("gamma1", "beta1", "w_qkv", "b_qkv", "w_o", "b_o",
                 "gamma2", "beta2", "w_1", "b_1", "w_2", "b_2")


class ContainerError(ValueError):
    """Malformed or inconsistent container bytes."""


@dataclass
class ModelContainer:
    """In-memory form: manifest metadata plus named float64/int32 tensors."""

    meta: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def kind(self):
        return self.meta.get("kind")

    @property
    def stage(self):
        return self.meta.get("stage")

    def config(self):
        return ModelConfig.from_json(self.meta["model_config"])


def _payload_dtype(arr):
    if arr.dtype.kind == "f":
        return "f32"
    if arr.dtype.kind in "iu":
        return "i32"
    raise ContainerError(f"unsupported tensor dtype {arr.dtype}")


def to_bytes(container):
    """Serialize deterministically; tensors are laid out in name order."""
    table = []
    chunks = []
    offset = 0
    for name in sorted(container.tensors):
        arr = container.tensors[name]
        tag = _payload_dtype(arr)
        payload = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        table.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": tag,
            "offset": offset,
            "length": len(payload),
        })
        chunks.append(payload)
        offset += len(payload)
    manifest = dict(container.meta)
    manifest["format_version"] = FORMAT_VERSION
    manifest["tensors"] = table
    doc = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + len(doc).to_bytes(8, "little") + doc + b"".join(chunks)


def from_bytes(raw):
    """Parse and validate container bytes; inverse of `to_bytes`."""
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise ContainerError("bad magic: not a container file")
    doc_len = int.from_bytes(raw[8:16], "little")
    if 16 + doc_len > len(raw):
        raise ContainerError("manifest length exceeds file size")
    try:
        manifest = json.loads(raw[16:16 + doc_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(f"manifest is not valid JSON: {e}") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ContainerError(f"unsupported format version {manifest.get('format_version')}")
    blob = raw[16 + doc_len:]

    tensors = {}
    for entry in manifest.get("tensors", []):
        name = entry["name"]
        if name in tensors:
            raise ContainerError(f"duplicate tensor name {name!r}")
        tag = entry["dtype"]
        if tag not in _DTYPES:
            raise ContainerError(f"tensor {name!r} has unknown dtype {tag!r}")
        shape = tuple(int(v) for v in entry["shape"])
        offset, length = int(entry["offset"]), int(entry["length"])
        if offset < 0 or length < 0 or offset + length > len(blob):
            raise ContainerError(f"tensor {name!r} extends past the blob")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if count * _DTYPES[tag].itemsize != length:
            raise ContainerError(f"tensor {name!r}: shape {shape} does not match byte length {length}")
        flat = np.frombuffer(blob, dtype=_DTYPES[tag], count=count, offset=offset)
        arr = flat.reshape(shape)
        if tag == "f32":
            arr = as_tensor(arr)
            if not np.isfinite(arr).all():
                raise ContainerError(f"tensor {name!r} contains non-finite values")
        else:
            arr = as_int_tensor(arr)
        tensors[name] = arr

    meta = {k: v for k, v in manifest.items() if k not in ("tensors", "format_version")}
    return ModelContainer(meta=meta, tensors=tensors)


def write_container(container, path):
    data = to_bytes(container)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_container(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def container_from_model(cfg, blocks, stage="fp", meta_extra=None):
    """Pack encoder weights into a container."""
    if len(blocks) != cfg.blocks:
        raise ContainerError(f"{len(blocks)} blocks for a {cfg.blocks}-block config")
    tensors = {}
    for i, bw in enumerate(blocks):
        bw.validate(cfg)
        for name in WEIGHT_FIELDS:
            tensors[f"block{i}.{name}"] = getattr(bw, name)
    meta = {"kind": "model", "stage": stage, "model_config": cfg.to_json()}
    if meta_extra:
        meta.update(meta_extra)
    return ModelContainer(meta=meta, tensors=tensors)


def blocks_from_container(container):
    """Unpack (config, [BlockWeights]) from a model container."""
    if container.kind != "model":
        raise ContainerError(f"expected a model container, got kind {container.kind!r}")
    cfg = container.config()
    blocks = []
    for i in range(cfg.blocks):
        kwargs = {}
        for name in WEIGHT_FIELDS:
            key = f"block{i}.{name}"
            if key not in container.tensors:
                raise ContainerError(f"model container is missing tensor {key!r}")
            kwargs[name] = container.tensors[key]
        blocks.append(BlockWeights(**kwargs).validate(cfg))
    return cfg, blocks


def container_from_activations(cfg, acts):
    """Pack an activation batch (n, patches, dim) into a container."""
    acts = as_tensor(acts, check_finite=True)
    if acts.ndim != 3 or acts.shape[1:] != (cfg.patches, cfg.dim):
        raise ContainerError(
            f"activations must be (n, {cfg.patches}, {cfg.dim}), got {acts.shape}"
        )
    meta = {"kind": "activations", "model_config": cfg.to_json()}
    return ModelContainer(meta=meta, tensors={"activations": acts})


def activations_from_container(container):
    if container.kind != "activations":
        raise ContainerError(f"expected an activations container, got kind {container.kind!r}")
    return container.tensors["activations"]
