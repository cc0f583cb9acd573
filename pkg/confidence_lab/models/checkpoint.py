"""
Checkpoint storage
Binary container: ASCII magic "CWL1", a 4-byte little-endian manifest length,
a UTF-8 JSON manifest (model config + name/shape/offset/frozen per tensor),
then the little-endian float64 payloads back to back.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
from pydantic import ValidationError

from ..core.exceptions import CheckpointError, ConfigurationError
from ..core.tensor import Tensor
from ..utils.record_storage import atomic_write
from .transformer import ModelConfig, ModelParams, parameter_shapes

logger = logging.getLogger(__name__)

MAGIC = b"CWL1"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<I")
_FLOAT = np.dtype("<f8")


def checkpoint_bytes(params: ModelParams) -> bytes:
    """Serialize parameters deterministically"""
    entries = []
    payloads = []
    offset = 0
    for name, tensor in params.tensors.items():
        blob = np.ascontiguousarray(tensor.data, dtype=_FLOAT).tobytes()
        entries.append({
            "name": name,
            "shape": list(tensor.shape),
            "offset": offset,
            "frozen": name in params.frozen,
        })
        payloads.append(blob)
        offset += len(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": params.config.model_dump(mode="json"),
        "tensors": entries,
        "payload_bytes": offset,
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + _LENGTH.pack(len(header)) + header + b"".join(payloads)


def save_checkpoint(params: ModelParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    with atomic_write(path, binary=True) as handle:
        handle.write(checkpoint_bytes(params))
    logger.info(f"💾 Checkpoint saved: {path} ({params.config.head_kind.value}, {params.parameter_count()} parameters)")
    return path


def parse_checkpoint(blob: bytes, source: str = "<bytes>") -> ModelParams:
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint (magic {blob[:4]!r}, expected {MAGIC!r})")
    if len(blob) < 8:
        raise CheckpointError(f"{source}: truncated header")
    (header_len,) = _LENGTH.unpack(blob[4:8])
    header_end = 8 + header_len
    try:
        manifest: Dict[str, Any] = json.loads(blob[8:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{source}: unreadable manifest: {e}") from e
    if not isinstance(manifest, dict):
        raise CheckpointError(f"{source}: manifest is not a JSON object")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported format version {manifest.get('format_version')}")
    try:
        config = ModelConfig.model_validate(manifest["config"])
    except (KeyError, ValidationError) as e:
        raise CheckpointError(f"{source}: invalid model config: {e}") from e

    payload = blob[header_end:]
    if len(payload) != manifest.get("payload_bytes"):
        raise CheckpointError(f"{source}: payload has {len(payload)} bytes, manifest declares {manifest.get('payload_bytes')}")

    expected = parameter_shapes(config)
    tensors: Dict[str, Tensor] = {}
    frozen = set()
    for index, entry in enumerate(manifest.get("tensors", [])):
        try:
            name, shape, start = str(entry["name"]), tuple(int(n) for n in entry["shape"]), int(entry["offset"])
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"{source}: tensor entry {index} is malformed (name, shape and offset are required): {e!r}") from e
        if name not in expected:
            raise CheckpointError(f"{source}: tensor {name} is not part of the configured model")
        if shape != expected[name]:
            raise CheckpointError(f"{source}: tensor {name} has shape {shape}, config implies {expected[name]}")
        count = int(np.prod(shape)) if shape else 1
        end = start + count * _FLOAT.itemsize
        if start < 0 or end > len(payload):
            raise CheckpointError(f"{source}: tensor {name} payload out of range")
        data = np.frombuffer(payload[start:end], dtype=_FLOAT).astype(np.float64).reshape(shape)
        is_frozen = bool(entry.get("frozen", False))
        if is_frozen:
            frozen.add(name)
        tensors[name] = Tensor(data, requires_grad=not is_frozen, name=name)

    params = ModelParams(config=config, tensors={name: tensors[name] for name in expected if name in tensors}, frozen=frozen)
    try:
        params.validate()
    except ConfigurationError as e:
        raise CheckpointError(f"{source}: {e}") from e
    return params


def load_checkpoint(path: Union[str, Path]) -> ModelParams:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    params = parse_checkpoint(blob, source=str(path))
    logger.info(f"📂 Checkpoint loaded: {path} ({params.config.head_kind.value})")
    return params
