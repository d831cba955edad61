#!/usr/bin/env python3
"""
Versioned binary checkpoints.

Layout, all little-endian:
    magic            8 bytes  b"CFMCKPT\\x00"
    format version   uint32
    header length    uint32, then that many bytes of UTF-8 JSON
                     {"model_kind", "config", "metadata"}
    parameter count  uint32
    per parameter    uint32 element count, then float32 values,
                     in declaration order
"""

import json
import logging
import os
import struct
from typing import Dict, List, Optional, Tuple

import numpy as np

from errors import CheckpointError
from model import ModelConfig, TrajectoryModel, build_model

logger = logging.getLogger(__name__)

MAGIC = b"CFMCKPT\x00"
FORMAT_VERSION = 1
_U32 = struct.Struct('<I')


def save_checkpoint(model: TrajectoryModel, path: str, metadata: Optional[Dict] = None) -> str:
    header = json.dumps({
        'model_kind': model.kind,
        'config': model.config.to_dict(),
        'metadata': metadata or {},
    }, sort_keys=True).encode('utf-8')
    parameters = model.parameters()

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    tmp_path = f"{path}.tmp"
    with open(tmp_path, 'wb') as f:
        f.write(MAGIC)
        f.write(_U32.pack(FORMAT_VERSION))
        f.write(_U32.pack(len(header)))
        f.write(header)
        f.write(_U32.pack(len(parameters)))
        for param in parameters:
            values = np.ascontiguousarray(param.data, dtype='<f4')
            f.write(_U32.pack(values.size))
            f.write(values.tobytes())
    os.replace(tmp_path, path)
    logger.debug(f"Saved {model.kind} checkpoint with {len(parameters)} parameter tensors to {path}")
    return path


def _read_exact(f, size: int, what: str) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise CheckpointError(f"checkpoint truncated while reading {what}")
    return data


def read_checkpoint(path: str) -> Tuple[Dict, List[np.ndarray]]:
    """Header dict and raw parameter arrays, without building a model."""
    try:
        f = open(path, 'rb')
    except OSError as e:
        raise CheckpointError(f"cannot open checkpoint {path}: {e}")
    with f:
        if _read_exact(f, len(MAGIC), 'magic') != MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        (version,) = _U32.unpack(_read_exact(f, 4, 'version'))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
        (header_length,) = _U32.unpack(_read_exact(f, 4, 'header length'))
        try:
            header = json.loads(_read_exact(f, header_length, 'header').decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"corrupt checkpoint header: {e}")
        (count,) = _U32.unpack(_read_exact(f, 4, 'parameter count'))
        arrays = []
        for i in range(count):
            (size,) = _U32.unpack(_read_exact(f, 4, f'size of parameter {i}'))
            arrays.append(np.frombuffer(_read_exact(f, 4 * size, f'parameter {i}'), dtype='<f4'))
        if f.read(1):
            raise CheckpointError("trailing bytes after the last parameter")
    return header, arrays


def load_checkpoint(path: str, expected_config: Optional[ModelConfig] = None,
                    expected_kind: Optional[str] = None) -> TrajectoryModel:
    header, arrays = read_checkpoint(path)
    try:
        config = ModelConfig.from_dict(header['config'])
        kind = header['model_kind']
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"checkpoint header is missing {e}")
    if expected_config is not None and config != expected_config:
        raise CheckpointError("checkpoint was written for a different model configuration")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"checkpoint holds a {kind} model, expected {expected_kind}")

    model = build_model(kind, config)
    restore_parameters(model, arrays)
    logger.info(f"Loaded {kind} checkpoint from {path}")
    return model


def checkpoint_metadata(path: str) -> Dict:
    header, _ = read_checkpoint(path)
    return header.get('metadata', {})


def snapshot_parameters(model: TrajectoryModel) -> List[np.ndarray]:
    return [param.data.copy() for param in model.parameters()]


def restore_parameters(model: TrajectoryModel, arrays: List[np.ndarray]):
    parameters = model.parameters()
    if len(arrays) != len(parameters):
        raise CheckpointError(f"checkpoint has {len(arrays)} parameter tensors, model has {len(parameters)}")
    for i, (param, values) in enumerate(zip(parameters, arrays)):
        if values.size != param.data.size:
            raise CheckpointError(f"parameter {i} has {values.size} values, model expects {param.data.size}")
        param.data = np.asarray(values, dtype=param.data.dtype).reshape(param.shape).copy()
        param.grad = None
