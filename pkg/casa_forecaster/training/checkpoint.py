"""
Binary checkpoint format.

Layout (all integers little-endian u32):
    b"CASA" | version | config JSON | n params | records | optim flag [| optim] | train log JSON
A record is name (length-prefixed UTF-8) | ndim | dims | '<f4' data.
"""
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from casa_forecaster.exceptions import (
    BadMagic,
    CheckpointError,
    CheckpointParseError,
    ShapeMismatch,
    VersionMismatch,
)
from casa_forecaster.models.casa import CasaModel, ModelConfig
from casa_forecaster.training.optim import OptimState

MAGIC = b"CASA"
FORMAT_VERSION = 1
STORAGE_DTYPE = np.dtype('<f4')
_U32 = struct.Struct('<I')
_LOG_KEYS = ('epoch', 'train_mse', 'val_mse', 'lr')


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    optim: Optional[OptimState] = None
    train_log: list = field(default_factory=list)
    version: int = FORMAT_VERSION

    def to_model(self):
        return CasaModel(self.config, self.params)


def _pack_u32(value):
    return _U32.pack(value)


def _pack_blob(payload):
    return _pack_u32(len(payload)) + payload


def _pack_record(name, array):
    array = np.ascontiguousarray(array, dtype=STORAGE_DTYPE)
    parts = [_pack_blob(name.encode('utf-8')), _pack_u32(array.ndim)]
    parts.extend(_pack_u32(dim) for dim in array.shape)
    parts.append(array.tobytes())
    return b"".join(parts)


def round_to_storage(model):
    """
    Round a model's parameters to the 32-bit storage precision in place.

    A 64-bit model keeps its dtype; after rounding, save and load reproduce
    its forward bit-exactly.
    """
    model.load_params({name: value.astype(STORAGE_DTYPE) for name, value in model.params.items()})
    return model


def _json_bytes(value):
    return json.dumps(value, sort_keys=True, separators=(',', ':')).encode('utf-8')


def serialize_checkpoint(model, optim=None, train_log=None):
    """Checkpoint bytes for a model, optional OptimState and epoch log."""
    parts = [MAGIC, _pack_u32(FORMAT_VERSION), _pack_blob(_json_bytes(model.config.to_dict())),
             _pack_u32(len(model.params))]
    parts.extend(_pack_record(name, value) for name, value in model.params.items())

    if optim is None:
        parts.append(_pack_u32(0))
    else:
        parts.append(_pack_u32(1))
        parts.append(_pack_blob(_json_bytes(optim.hyperparameters())))
        names = list(optim.m)
        parts.append(_pack_u32(len(names)))
        for name in names:
            parts.append(_pack_record(name, optim.m[name]))
            parts.append(_pack_record(name, optim.v[name]))

    # Wall-clock seconds stay out so identical runs give identical bytes
    log = [{key: entry[key] for key in _LOG_KEYS if key in entry} for entry in (train_log or [])]
    parts.append(_pack_blob(_json_bytes(log)))
    return b"".join(parts)


def save_checkpoint(path, model, optim=None, train_log=None, logger=None):
    """
    Write a checkpoint file.

    Args:
        path: Destination file
        model: CasaModel
        optim: Optional OptimState
        train_log: Optional list of epoch dictionaries
        logger: Logger instance for logging

    Returns:
        Path to the saved file
    """
    lossy = [name for name, value in model.params.items()
             if not np.array_equal(value, value.astype(STORAGE_DTYPE))]
    if lossy and logger:
        logger.warning(f"{len(lossy)} parameter tensors lose precision in 32-bit storage; "
                       f"call round_to_storage first for a bit-exact reload")
    payload = serialize_checkpoint(model, optim, train_log)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as handle:
        handle.write(payload)
    if logger:
        logger.info(f"Checkpoint saved to {path} ({len(payload)} bytes)")
    return path


class _Reader:
    def __init__(self, payload):
        self.payload = payload
        self.offset = 0

    def take(self, size):
        end = self.offset + size
        if end > len(self.payload):
            raise CheckpointParseError(
                f"checkpoint truncated: need {size} bytes at offset {self.offset}, file has {len(self.payload)}")
        chunk = self.payload[self.offset:end]
        self.offset = end
        return chunk

    def u32(self):
        return _U32.unpack(self.take(4))[0]

    def blob(self):
        return self.take(self.u32())

    def json(self):
        try:
            return json.loads(self.blob().decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointParseError(f"corrupt JSON section: {e}")

    def record(self):
        try:
            name = self.blob().decode('utf-8')
        except UnicodeDecodeError as e:
            raise CheckpointParseError(f"corrupt record name: {e}")
        ndim = self.u32()
        if ndim > 8:
            raise CheckpointParseError(f"record {name}: implausible ndim {ndim}")
        shape = tuple(self.u32() for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(self.take(STORAGE_DTYPE.itemsize * count), dtype=STORAGE_DTYPE).reshape(shape)
        return name, data.copy()


def parse_checkpoint(payload):
    """Decode checkpoint bytes into a Checkpoint."""
    if len(payload) < len(MAGIC) or payload[:len(MAGIC)] != MAGIC:
        raise BadMagic("not a CASA checkpoint (bad magic bytes)")
    reader = _Reader(payload)
    reader.take(len(MAGIC))
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format version {version}, expected {FORMAT_VERSION}")

    config_values = reader.json()
    if not isinstance(config_values, dict):
        raise CheckpointParseError("config section is not a mapping")
    config = ModelConfig.from_dict(config_values)

    params = {}
    for _ in range(reader.u32()):
        name, value = reader.record()
        params[name] = value

    optim = None
    flag = reader.u32()
    if flag == 1:
        hyper = reader.json()
        optim = OptimState(**hyper)
        for _ in range(reader.u32()):
            name, m = reader.record()
            _, v = reader.record()
            optim.m[name] = m.astype(np.float64)
            optim.v[name] = v.astype(np.float64)
    elif flag != 0:
        raise CheckpointParseError(f"invalid optimizer flag {flag}")

    train_log = reader.json()
    if reader.offset != len(payload):
        raise CheckpointParseError(f"{len(payload) - reader.offset} trailing bytes after checkpoint")
    return Checkpoint(config=config, params=params, optim=optim, train_log=train_log, version=version)


def load_checkpoint(path, expected_config=None, logger=None):
    """
    Read a checkpoint file.

    Args:
        path: Checkpoint file
        expected_config: Optional ModelConfig the stored parameters must fit
        logger: Logger instance for logging

    Returns:
        Checkpoint
    """
    logger = logger or logging.getLogger("CASA-Forecaster")
    if not os.path.isfile(path):
        raise CheckpointError(f"Checkpoint not found: {path}")
    with open(path, 'rb') as handle:
        payload = handle.read()
    checkpoint = parse_checkpoint(payload)

    reference = CasaModel(checkpoint.config, seed=0).params
    if expected_config is not None:
        reference = CasaModel(expected_config, seed=0).params
    for name, value in reference.items():
        stored = checkpoint.params.get(name)
        if stored is None or stored.shape != value.shape:
            got = None if stored is None else stored.shape
            raise ShapeMismatch(f"checkpoint parameter {name}: expected {value.shape}, got {got}")
    if set(checkpoint.params) != set(reference):
        extra = sorted(set(checkpoint.params) - set(reference))
        raise ShapeMismatch(f"checkpoint has unexpected parameters {extra[:5]}")

    logger.info(f"Loaded checkpoint {path} ({len(checkpoint.params)} tensors)")
    return checkpoint
