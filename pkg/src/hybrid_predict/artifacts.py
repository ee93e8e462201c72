"""Versioned binary container for named float64 arrays plus a JSON header.

Layout (little-endian)::

    8 bytes   magic  b"HPBLOB\\0\\0"
    u32       format version
    u32       header length in bytes
    header    UTF-8 JSON: {"kind", "config", "meta", "arrays": [{"name", "shape"}, ...]}
    u64       total number of float64 values
    f64[...]  array data, concatenated in header order, C order
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"HPBLOB\x00\x00"
VERSION = 1


def write_blob(path, kind: str, config: dict, arrays: dict, meta: dict | None = None) -> None:
    names = list(arrays)
    header = {
        "kind": kind,
        "config": config,
        "meta": meta or {},
        "arrays": [{"name": n, "shape": list(np.shape(arrays[n]))} for n in names],
    }
    hb = json.dumps(header, sort_keys=True).encode()
    flat = [np.asarray(arrays[n], dtype="<f8").ravel() for n in names]
    data = np.concatenate(flat) if flat else np.zeros(0, dtype="<f8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", VERSION, len(hb)))
            fh.write(hb)
            fh.write(struct.pack("<Q", data.size))
            fh.write(data.astype("<f8").tobytes())
    except OSError as exc:
        raise OSError(f"cannot write {kind} artifact to {path}: {exc}") from exc


def read_blob(path, kind: str | None = None):
    """Returns (config, arrays, meta). Raises ValueError on any format problem."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a model artifact (bad magic)")
        version, n_header = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported artifact version {version}")
        header = json.loads(fh.read(n_header))
        if kind is not None and header["kind"] != kind:
            raise ValueError(f"{path}: expected a {kind} artifact, found {header['kind']}")
        (count,) = struct.unpack("<Q", fh.read(8))
        raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ValueError(f"{path}: truncated artifact")
    data = np.frombuffer(raw, dtype="<f8")
    arrays, pos = {}, 0
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        size = int(np.prod(shape)) if shape else 1
        arrays[spec["name"]] = data[pos:pos + size].reshape(shape).astype(np.float64)
        pos += size
    if pos != count:
        raise ValueError(f"{path}: array sizes do not add up to the stored count")
    return header["config"], arrays, header.get("meta", {})
