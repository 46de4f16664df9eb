"""Binary model checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic b"MEMENCKP"
    u32       format version
    u32       header length H
    H bytes   UTF-8 JSON header: architecture, payload size, metadata
    N bytes   parameters as float64 ('<f8'), order W0, b0, W1, b1, ...
              (weights row-major, shape (out, in))
    32 bytes  SHA-256 of everything above

The header may carry a fingerprint of the encoding key (a hash of the seed,
never the seed itself) and a snapshot of the training configuration.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .datasets import atomic_write
from .nn import DenseLayer, MlpModel

MAGIC = b"MEMENCKP"
FORMAT_VERSION = 1
_DIGEST = 32


class CheckpointError(ValueError):
    pass


def key_fingerprint(seed: int) -> str:
    return hashlib.sha256(b"memenc-key:" + struct.pack("<Q", int(seed))).hexdigest()


def dumps(model: MlpModel, meta: dict | None = None, version: int = FORMAT_VERSION) -> bytes:
    arch = [{"in": l.n_in, "out": l.n_out, "activation": l.activation} for l in model.layers]
    payload = b"".join(p.astype("<f8").tobytes() for p in model.params())
    header = json.dumps({"architecture": arch, "payload_bytes": len(payload), "dtype": "<f8",
                         "meta": meta or {}}, sort_keys=True).encode()
    body = MAGIC + struct.pack("<II", version, len(header)) + header + payload
    return body + hashlib.sha256(body).digest()


def loads(buf: bytes):
    """Parse checkpoint bytes into ``(model, meta)``."""
    fixed = len(MAGIC) + 8
    if len(buf) < fixed + _DIGEST:
        raise CheckpointError("truncated checkpoint")
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", buf[len(MAGIC):fixed])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} "
                              f"(this build reads {FORMAT_VERSION})")
    if len(buf) < fixed + hlen + _DIGEST:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(buf[fixed:fixed + hlen])
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    end = fixed + hlen + int(header.get("payload_bytes", -1))
    if header.get("payload_bytes", -1) < 0 or len(buf) != end + _DIGEST:
        raise CheckpointError("truncated or oversized checkpoint payload")
    if hashlib.sha256(buf[:end]).digest() != buf[end:]:
        raise CheckpointError("checksum mismatch: checkpoint is corrupt")

    flat = np.frombuffer(buf, dtype="<f8", count=header["payload_bytes"] // 8,
                         offset=fixed + hlen).astype(np.float64)
    layers, pos = [], 0
    for spec in header["architecture"]:
        n_w = spec["out"] * spec["in"]
        w = flat[pos:pos + n_w].reshape(spec["out"], spec["in"]).copy()
        pos += n_w
        b = flat[pos:pos + spec["out"]].copy()
        pos += spec["out"]
        layers.append(DenseLayer(w, b, spec["activation"]))
    if pos != flat.size:
        raise CheckpointError("payload size does not match architecture")
    return MlpModel(layers), header["meta"]


def save_checkpoint(model: MlpModel, path, meta: dict | None = None) -> str:
    """Write atomically; returns the hex SHA-256 trailer."""
    data = dumps(model, meta)
    with atomic_write(path, "wb") as fh:
        fh.write(data)
    return data[-_DIGEST:].hex()


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


def checkpoint_digest(path) -> str:
    with open(path, "rb") as fh:
        return fh.read()[-_DIGEST:].hex()
