"""Binary weight snapshots plus a JSON sidecar manifest.

Layout, all integers little-endian u32 and floats little-endian f64::

    b"SPSC"  version  n_layers
    per layer: rows  cols  weights[rows*cols] (row-major)  bias[rows]

The manifest (``<file>.json``) records architecture, ReLU flags, seed and
epoch so the network can be rebuilt without guessing.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .errors import FormatError
from .net import Layer, MlpNetwork

MAGIC = b"SPSC"
FORMAT_VERSION = 1


def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_weights(path: str | Path, net: MlpNetwork) -> None:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(net.layers))]
    for layer in net.layers:
        rows, cols = layer.weights.shape
        parts.append(struct.pack("<II", rows, cols))
        parts.append(layer.weights.astype("<f8").tobytes(order="C"))
        parts.append(layer.bias.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_weights(path: str | Path, relu_flags: list[bool] | None = None) -> MlpNetwork:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header")
    version, n_layers = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = 12
    layers = []
    for i in range(n_layers):
        if off + 8 > len(data):
            raise FormatError(f"{path}: truncated at layer {i}")
        rows, cols = struct.unpack_from("<II", data, off)
        off += 8
        need = 8 * (rows * cols + rows)
        if off + need > len(data):
            raise FormatError(f"{path}: truncated payload at layer {i}")
        w = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
        off += 8 * rows * cols
        b = np.frombuffer(data, dtype="<f8", count=rows, offset=off)
        off += 8 * rows
        relu = relu_flags[i] if relu_flags is not None else i < n_layers - 1
        layers.append(Layer(w.astype(np.float64), b.astype(np.float64), relu))
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    return MlpNetwork(layers)


def save_network(path: str | Path, net: MlpNetwork, **meta: Any) -> None:
    """Write weights and the sidecar manifest; ``meta`` adds seed/epoch/etc."""
    write_weights(path, net)
    manifest = {
        "format": "SPSC",
        "version": FORMAT_VERSION,
        "sizes": net.sizes,
        "relu": [layer.relu for layer in net.layers],
        **meta,
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_network(path: str | Path) -> tuple[MlpNetwork, dict]:
    """Read weights, using the manifest's ReLU flags when it exists."""
    mpath = manifest_path(path)
    manifest: dict = {}
    flags = None
    if mpath.exists():
        manifest = json.loads(mpath.read_text())
        flags = manifest.get("relu")
    net = read_weights(path, flags)
    if manifest.get("sizes") and manifest["sizes"] != net.sizes:
        raise FormatError(f"{path}: manifest sizes {manifest['sizes']} != payload {net.sizes}")
    return net, manifest
