"""Binary checkpoint format: magic, version, config, tensor directory, payload.

Layout (all integers little-endian):
    magic          4 bytes  "SFCK"
    version        u32
    config_len     u32, then UTF-8 JSON of the model config
    n_tensors      u32
    per tensor:    name_len u32, name bytes, ndim u32, dims u32 * ndim,
                   offset u64 (bytes into the payload)
    payload_len    u64, then float32 payload
    checksum       u32, CRC-32 of the payload

Round trips are bitwise; the checksum is verified on load.
"""

import dataclasses
import json
import struct
import zlib

import numpy as np

from .model import ModelConfig, ModelParams
from .tensor import Tensor

CHECKPOINT_MAGIC = b"SFCK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


def save_checkpoint(path, params, cfg):
    """Write params + config; tensors must be finite."""
    params.check_finite()
    names = params.names()
    payload_parts = []
    directory = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(params[name].data, dtype="<f4")
        directory.append((name, arr.shape, offset))
        payload_parts.append(arr.tobytes())
        offset += len(payload_parts[-1])
    payload = b"".join(payload_parts)

    cfg_json = json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(cfg_json)))
        fh.write(cfg_json)
        fh.write(struct.pack("<I", len(directory)))
        for name, shape, off in directory:
            raw = name.encode()
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", len(shape)))
            fh.write(struct.pack(f"<{len(shape)}I", *shape) if shape else b"")
            fh.write(struct.pack("<Q", off))
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def _read_exact(fh, n, what):
    raw = fh.read(n)
    if len(raw) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return raw


def load_checkpoint(path, expected_cfg=None):
    """Read back (params, cfg); optionally validate against expected_cfg."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise BadMagicError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise VersionError(f"{path}: unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        cfg_fields = json.loads(_read_exact(fh, cfg_len, "config"))
        known = {f.name for f in dataclasses.fields(ModelConfig)}
        unknown = set(cfg_fields) - known
        if unknown:
            raise CheckpointError(f"{path}: unknown config keys {sorted(unknown)}")
        cfg = ModelConfig(**cfg_fields)

        (n_tensors,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        directory = []
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "name").decode()
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "dims")) if ndim else ()
            (off,) = struct.unpack("<Q", _read_exact(fh, 8, "offset"))
            directory.append((name, shape, off))

        (payload_len,) = struct.unpack("<Q", _read_exact(fh, 8, "payload length"))
        payload = _read_exact(fh, payload_len, "payload")
        (stored_crc,) = struct.unpack("<I", _read_exact(fh, 4, "checksum"))
        if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
            raise ChecksumError(f"{path}: payload checksum mismatch")

    tensors = {}
    for name, shape, off in directory:
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = payload[off : off + 4 * n]
        if len(raw) != 4 * n:
            raise CheckpointError(f"{path}: payload too short for tensor {name}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
        tensors[name] = Tensor(arr, requires_grad=True)
    params = ModelParams(tensors)

    if expected_cfg is not None:
        from .model import init_params

        reference = init_params(expected_cfg, seed=0)
        for name in reference.names():
            if name not in params:
                raise CheckpointError(f"{path}: checkpoint is missing tensor {name}")
            if params[name].shape != reference[name].shape:
                raise CheckpointError(
                    f"{path}: tensor {name} has shape {params[name].shape}, "
                    f"config expects {reference[name].shape}"
                )
        for name in params.names():
            if name not in reference:
                raise CheckpointError(f"{path}: unknown tensor name {name}")
    return params, cfg
