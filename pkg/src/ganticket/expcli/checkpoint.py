"""
Named-tensor checkpoint files.

Layout (all integers little-endian)::

    magic    4 bytes   b"GTCK"
    version  uint32
    hlen     uint64    length of the JSON header
    header   hlen bytes UTF-8 JSON: {"meta": ..., "tensors": [{name, dtype, shape, offset, nbytes}]}
    data     concatenated raw tensor bytes ("<f8", "<i8" or "|u1")
    crc32    uint32    zlib.crc32 of every byte before it

Floats are stored as IEEE-754 little-endian doubles, so a save/load round
trip is bit-exact and files are portable between platforms.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import asdict
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ganticket.errors import CorruptionError, UnsupportedVersionError
from ganticket.models import DiscConfig, GenConfig, ParamSet, Snapshot

MAGIC = b"GTCK"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_CRC = struct.Struct("<I")
_DTYPES = {"<f8": np.float64, "<i8": np.int64, "|u1": np.uint8}


def _canonical(arr: np.ndarray) -> tuple[str, np.ndarray]:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        return "<f8", arr.astype("<f8", copy=False)
    if arr.dtype.kind in "iu" and arr.dtype != np.uint8:
        return "<i8", arr.astype("<i8", copy=False)
    if arr.dtype in (np.uint8, np.bool_):
        return "|u1", arr.astype(np.uint8, copy=False)
    raise TypeError(f"cannot store dtype {arr.dtype}")


def encode(tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> bytes:
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        code, arr = _canonical(arr)
        raw = np.ascontiguousarray(arr).tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": dict(meta or {}), "tensors": entries}, sort_keys=True).encode()
    body = _PREFIX.pack(MAGIC, VERSION, len(header)) + header + b"".join(blobs)
    return body + _CRC.pack(zlib.crc32(body))


def decode(buf: bytes, source: str = "<bytes>") -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if len(buf) < _PREFIX.size + _CRC.size:
        raise CorruptionError(f"{source}: truncated ({len(buf)} bytes)")
    magic, version, hlen = _PREFIX.unpack_from(buf)
    if magic != MAGIC:
        raise CorruptionError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"{source}: format version {version}, this build reads version {VERSION}")
    (crc,) = _CRC.unpack_from(buf, len(buf) - _CRC.size)
    if zlib.crc32(buf[: -_CRC.size]) != crc:
        raise CorruptionError(f"{source}: checksum mismatch (truncated or modified)")
    start = _PREFIX.size
    try:
        header = json.loads(buf[start: start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CorruptionError(f"{source}: unreadable header: {err}") from None
    data = memoryview(buf)[start + hlen: len(buf) - _CRC.size]
    tensors = {}
    for e in header["tensors"]:
        lo, n = e["offset"], e["nbytes"]
        if lo + n > len(data) or e["dtype"] not in _DTYPES:
            raise CorruptionError(f"{source}: tensor {e['name']!r} outside the data block")
        arr = np.frombuffer(data[lo: lo + n], dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        tensors[e["name"]] = arr.astype(_DTYPES[e["dtype"]])
    return tensors, header["meta"]


def atomic_write(path: Path | str, data: bytes) -> None:
    """Write via a temporary sibling and rename, so readers never see half a file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_tensors(path, tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> None:
    atomic_write(path, encode(tensors, meta))


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    return decode(path.read_bytes(), str(path))


# ------------------------------------------------------------ typed helpers

def config_to_dict(config: GenConfig | DiscConfig) -> dict[str, Any]:
    out = asdict(config)
    out["hidden"] = list(config.hidden)
    out["kind"] = "disc" if isinstance(config, DiscConfig) else "gen"
    return out


def config_from_dict(data: Mapping[str, Any]) -> GenConfig | DiscConfig:
    data = dict(data)
    kind = data.pop("kind")
    data["hidden"] = tuple(data["hidden"])
    return DiscConfig(**data) if kind == "disc" else GenConfig(**data)


def _paramset_tensors(ps: ParamSet, prefix: str = "") -> dict[str, np.ndarray]:
    out = {f"{prefix}param/{k}": v for k, v in ps.params.items()}
    out.update({f"{prefix}buffer/{k}": v for k, v in ps.buffers.items()})
    return out


def _paramset_from(tensors: Mapping[str, np.ndarray], config, prefix: str = "") -> ParamSet:
    params, buffers = {}, {}
    for key, arr in tensors.items():
        if not key.startswith(prefix):
            continue
        kind, name = key[len(prefix):].split("/", 1)
        (params if kind == "param" else buffers)[name] = arr
    return ParamSet(config, params, buffers)


def save_paramset(path, ps: ParamSet) -> None:
    save_tensors(path, _paramset_tensors(ps), {"type": "paramset", "config": config_to_dict(ps.config)})


def load_paramset(path) -> ParamSet:
    tensors, meta = load_tensors(path)
    _expect(meta, "paramset", path)
    return _paramset_from(tensors, config_from_dict(meta["config"]))


def save_mask(path, mask: Mapping[str, np.ndarray]) -> None:
    """Masks are 0/1 and stored as bytes; loading gives float64 again."""
    save_tensors(path, {k: (np.asarray(v) != 0) for k, v in mask.items()}, {"type": "mask"})


def load_mask(path) -> dict[str, np.ndarray]:
    tensors, meta = load_tensors(path)
    _expect(meta, "mask", path)
    return {k: v.astype(np.float64) for k, v in tensors.items()}


def save_snapshot(path, snap: Snapshot) -> None:
    tensors = {**_paramset_tensors(snap.g, "g/"), **_paramset_tensors(snap.d, "d/")}
    meta = {
        "type": "snapshot",
        "step": snap.step,
        "g_config": config_to_dict(snap.g.config),
        "d_config": config_to_dict(snap.d.config),
        "rng_state": snap.rng_state,
    }
    save_tensors(path, tensors, meta)


def load_snapshot(path) -> Snapshot:
    tensors, meta = load_tensors(path)
    _expect(meta, "snapshot", path)
    return Snapshot(
        meta["step"],
        _paramset_from(tensors, config_from_dict(meta["g_config"]), "g/"),
        _paramset_from(tensors, config_from_dict(meta["d_config"]), "d/"),
        meta["rng_state"],
    )


def _expect(meta, kind: str, path) -> None:
    if meta.get("type") != kind:
        raise CorruptionError(f"{path}: expected a {kind} file, found {meta.get('type')!r}")
