"""Binary checkpoint format (all integers and floats little-endian).

    offset  field
    0       magic  b"IDDMCKPT"
    8       u32    format version
    12      u32 x4 K, L, hidden, time_dim
    28      u32    n = byte length of the config echo
    32      n      config echo (UTF-8 dotted-key text)
    32+n    f64 x K            prior simplex
    ...     u64    parameter count P
    ...     f64 x P            flat parameters (W1, b1, W2, b2, W3, b3, beta; row-major)
    ...     32     SHA-256 of every preceding byte
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .denoiser import DenoiserParams

MAGIC = b"IDDMCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: DenoiserParams
    prior: np.ndarray
    config: RunConfig


def to_bytes(ckpt: Checkpoint) -> bytes:
    p = ckpt.params
    cfg = ckpt.config.to_text().encode("utf-8")
    prior = np.asarray(ckpt.prior, dtype="<f8")
    if prior.shape != (p.K,):
        raise CheckpointError("prior length must equal K")
    flat = p.flat().astype("<f8")
    body = b"".join([
        MAGIC,
        struct.pack("<5I", VERSION, p.K, p.L, p.hidden, p.time_dim),
        struct.pack("<I", len(cfg)), cfg,
        prior.tobytes(),
        struct.pack("<Q", flat.size), flat.tobytes(),
    ])
    return body + hashlib.sha256(body).digest()


def from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < 64 or blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, digest = blob[:-32], blob[-32:]
    version, K, L, hidden, time_dim = struct.unpack_from("<5I", body, 8)
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version}, expected {VERSION}")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch; file is corrupt")
    pos = 28
    (n_cfg,) = struct.unpack_from("<I", body, pos)
    pos += 4
    config = RunConfig.from_text(body[pos:pos + n_cfg].decode("utf-8"))
    pos += n_cfg
    prior = np.frombuffer(body, dtype="<f8", count=K, offset=pos).astype(np.float64)
    pos += 8 * K
    (n_params,) = struct.unpack_from("<Q", body, pos)
    pos += 8
    flat = np.frombuffer(body, dtype="<f8", count=n_params, offset=pos).astype(np.float64)
    if pos + 8 * n_params != len(body):
        raise CheckpointError("trailing or missing bytes")
    if (config.data_kind != "file" and (config.data_K, config.data_L) != (K, L)) \
            or (config.model_hidden, config.model_time_dim) != (hidden, time_dim):
        raise CheckpointError("header dimensions disagree with the config echo")
    params = DenoiserParams.from_flat(flat, K, L, hidden, time_dim, prior=prior)
    return Checkpoint(params=params, prior=prior, config=config)


def save(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())
