"""Binary checkpoint container: network config plus named float64 tensors.

Layout (all integers little-endian):

    magic   4 bytes  b"M2FC"
    version u32      currently 1
    cfg_len u32      length of the UTF-8 JSON network config
    config  cfg_len bytes
    count   u32      number of tensors
    per tensor:
        name_len u16, name bytes (UTF-8)
        ndim u8, dims u32 * ndim
        values float64 little-endian, row-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import M2FCN, NetworkConfig, build_network

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointError", "network_from_checkpoint"]

MAGIC = b"M2FC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, config: NetworkConfig, state: dict[str, np.ndarray]) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    cfg = json.dumps(config.to_dict(), sort_keys=True).encode()
    blob += struct.pack("<I", len(cfg))
    blob += cfg
    blob += struct.pack("<I", len(state))
    for name, arr in state.items():
        a = np.ascontiguousarray(arr, dtype=np.float64)
        encoded = name.encode()
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", a.ndim)
        for d in a.shape:
            blob += struct.pack("<I", d)
        blob += a.astype("<f8").tobytes()
    from .iohelpers import atomic_write_bytes

    atomic_write_bytes(path, bytes(blob))


def load_checkpoint(path) -> tuple[NetworkConfig, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"truncated checkpoint {path}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", take(4))
    try:
        config = NetworkConfig.from_dict(json.loads(bytes(take(cfg_len)).decode()))
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"bad config block in {path}: {exc}") from exc
    (count,) = struct.unpack("<I", take(4))
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode()
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim)) if ndim else ()
        n_values = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(take(8 * n_values), dtype="<f8").reshape(dims)
        state[name] = np.array(arr, dtype=np.float64)
    if pos != len(view):
        raise CheckpointError(f"trailing bytes in checkpoint {path}")
    return config, state


def network_from_checkpoint(path) -> M2FCN:
    config, state = load_checkpoint(path)
    net = build_network(config, seed=0)
    net.load_state(state)
    return net
