"""
CAE1 checkpoint files.

Little-endian layout: magic "CAE1", version u8, variant u8, seed u64,
best epoch u32, epochs run u32, best validation loss f64, input bands u32,
input frames u32, block count u32, then one block per tensor:
layer tag u8, ndim u8, shape u32 x ndim, float32 payload.
"""

import struct
from pathlib import Path
from typing import Dict, List, Tuple, Union
import numpy as np
from .cae import LAYER_NAMES, CaeError, CaeModel, build_cae
from .logging import get_logger


MAGIC = b"CAE1"
VERSION = 1
HEADER = struct.Struct("<4sBBQIIdIII")
# Low three bits of a layer tag name the tensor, the high bits the layer
TENSOR_KINDS = ("w", "b", "gamma", "beta", "mean", "var")

logger = get_logger("checkpoint")


class CheckpointError(Exception):
    """Custom exception for checkpoint file errors."""
    pass


def _tag(name: str) -> int:
    layer, kind = name.rsplit(".", 1)
    return (LAYER_NAMES.index(layer) << 3) | TENSOR_KINDS.index(kind)


def _name(tag: int) -> str:
    layer, kind = tag >> 3, tag & 0b111
    if layer >= len(LAYER_NAMES) or kind >= len(TENSOR_KINDS):
        raise CheckpointError(f"unknown layer tag {tag}")
    return f"{LAYER_NAMES[layer]}.{TENSOR_KINDS[kind]}"


def _tensors(model: CaeModel) -> List[Tuple[str, np.ndarray]]:
    merged = {**model.params, **model.state}
    return sorted(merged.items(), key=lambda item: _tag(item[0]))


def checkpoint_to_bytes(model: CaeModel) -> bytes:
    arch = model.architecture
    if arch.variant_id is None:
        raise CheckpointError("only registered variants 1..11 can be checkpointed")
    tensors = _tensors(model)
    parts = [HEADER.pack(
        MAGIC, VERSION, arch.variant_id, model.seed, model.best_epoch, model.epochs_run,
        float(model.best_val_loss), arch.input_shape[0], arch.input_shape[1], len(tensors),
    )]
    for name, tensor in tensors:
        parts.append(struct.pack("<BB", _tag(name), tensor.ndim))
        parts.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    return b"".join(parts)


def checkpoint_from_bytes(data: bytes) -> CaeModel:
    """Parse a checkpoint and validate every tensor against build_cae(variant)."""
    if len(data) < HEADER.size:
        raise CheckpointError("truncated checkpoint header")
    magic, version, variant, seed, best_epoch, epochs_run, best_loss, bands, frames, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not a CAE1 checkpoint")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        arch = build_cae(variant, (bands, frames))
    except CaeError as e:
        raise CheckpointError(f"checkpoint architecture is invalid: {e}")

    expected: Dict[str, Tuple[int, ...]] = {**arch.parameter_shapes(), **arch.state_shapes()}
    tensors: Dict[str, np.ndarray] = {}
    offset = HEADER.size
    try:
        for _ in range(count):
            tag, ndim = struct.unpack_from("<BB", data, offset)
            offset += 2
            shape = struct.unpack_from(f"<{ndim}I", data, offset)
            offset += 4 * ndim
            name = _name(tag)
            if name not in expected or tuple(shape) != expected[name]:
                raise CheckpointError(
                    f"{arch.name}: tensor {name} has shape {tuple(shape)}, expected {expected.get(name)}"
                )
            size = int(np.prod(shape))
            tensors[name] = np.frombuffer(data, dtype="<f4", count=size, offset=offset).reshape(shape).astype(np.float32)
            offset += 4 * size
    except struct.error as e:
        raise CheckpointError(f"truncated checkpoint: {e}")
    except ValueError as e:
        raise CheckpointError(f"truncated checkpoint payload: {e}")

    if offset != len(data):
        raise CheckpointError(f"{len(data) - offset} trailing bytes after the last block")
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise CheckpointError(f"{arch.name}: checkpoint is missing {missing}")

    params = {k: v for k, v in tensors.items() if k in arch.parameter_shapes()}
    state = {k: v for k, v in tensors.items() if k in arch.state_shapes()}
    model = CaeModel(
        architecture=arch, params=params, state=state, seed=seed,
        epochs_run=epochs_run, best_epoch=best_epoch, best_val_loss=best_loss,
    )
    try:
        model.validate()
    except CaeError as e:
        raise CheckpointError(str(e))
    return model


def save_checkpoint(model: CaeModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_to_bytes(model))
    tmp.replace(path)
    logger.debug(f"💾 Saved {model.architecture.name} checkpoint to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> CaeModel:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"missing checkpoint: {path}")
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    try:
        return checkpoint_from_bytes(data)
    except CheckpointError as e:
        raise CheckpointError(f"{path}: {e}")
