"""AVIS checkpoint files.

Layout (all integers little-endian)::

    b"AVIS"  u16 version  u8 kind  u8 reserved
    u32 config_len   config JSON (utf-8)
    u32 n_tensors
    per tensor: u16 name_len, name, u8 dtype code, u8 ndim, u32 * ndim shape,
                u64 payload offset, u64 nbytes
    payload: raw float32 little-endian arrays
    u32 CRC32 of everything above
"""
from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .ann import VisionModelANN
from .config import ConfigError, RunConfig
from .snn import VisionModelSNN

MAGIC = b"AVIS"
VERSION = 1
KINDS = {"ann": 0, "snn": 1}
DTYPES = {0: np.dtype("<f4")}


class CheckpointError(ValueError):
    def __init__(self, message, tensor=None, path=None):
        where = f"{path}: " if path else ""
        what = f"tensor {tensor!r}: " if tensor else ""
        super().__init__(where + what + message)
        self.tensor = tensor
        self.path = path


@dataclass
class CheckpointFile:
    version: int
    kind: str
    config_json: str
    tensors: dict  # name -> ndarray, in file order

    @property
    def config(self):
        return RunConfig.from_json(self.config_json)


def run_config_of(model):
    cfg = RunConfig(model=model.cfg, akwta=model.akwta_cfg)
    if model.kind == "snn":
        cfg.snn = model.snn_cfg
    return cfg


def encode_checkpoint(model, run_config: RunConfig = None) -> bytes:
    cfg = run_config or run_config_of(model)
    config_bytes = cfg.to_json().encode()
    tensors = model.state_tensors()
    header = io.BytesIO()
    header.write(MAGIC)
    header.write(struct.pack("<HBB", VERSION, KINDS[model.kind], 0))
    header.write(struct.pack("<I", len(config_bytes)))
    header.write(config_bytes)
    header.write(struct.pack("<I", len(tensors)))
    payload = io.BytesIO()
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        raw = data.tobytes()
        name_b = name.encode()
        header.write(struct.pack("<H", len(name_b)))
        header.write(name_b)
        header.write(struct.pack("<BB", 0, data.ndim))
        header.write(struct.pack(f"<{data.ndim}I", *data.shape))
        header.write(struct.pack("<QQ", payload.tell(), len(raw)))
        payload.write(raw)
    body = header.getvalue() + payload.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model, path, run_config: RunConfig = None):
    blob = encode_checkpoint(model, run_config)
    with open(path, "wb") as fh:
        fh.write(blob)
    return path


class _Reader:
    def __init__(self, blob, path):
        self.blob, self.pos, self.path = blob, 0, path

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"file truncated while reading {what}", path=self.path)
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(blob: bytes, path=None) -> CheckpointFile:
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise CheckpointError("not an AVIS checkpoint (bad magic)", path=path)
    if len(blob) < 8:
        raise CheckpointError("file truncated while reading header", path=path)
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    r = _Reader(body, path)
    r.take(4, "magic")
    version, kind_code, _ = r.unpack("<HBB", "header")
    if version != VERSION:
        raise CheckpointError(f"unsupported format version {version} (expected {VERSION})",
                              path=path)
    if zlib.crc32(body) != crc:
        raise CheckpointError("CRC32 mismatch (file corrupt or truncated)", path=path)
    kinds = {v: k for k, v in KINDS.items()}
    if kind_code not in kinds:
        raise CheckpointError(f"unknown model kind code {kind_code}", path=path)
    (config_len,) = r.unpack("<I", "config length")
    config_json = r.take(config_len, "config").decode()
    (n_tensors,) = r.unpack("<I", "tensor count")
    table = []
    for _ in range(n_tensors):
        (name_len,) = r.unpack("<H", "tensor name length")
        name = r.take(name_len, "tensor name").decode()
        dtype_code, ndim = r.unpack("<BB", f"tensor {name} header")
        shape = r.unpack(f"<{ndim}I", f"tensor {name} shape")
        offset, nbytes = r.unpack("<QQ", f"tensor {name} offset")
        if dtype_code not in DTYPES:
            raise CheckpointError(f"unsupported dtype code {dtype_code}", name, path)
        if any(t[0] == name for t in table):
            raise CheckpointError("present more than once", name, path)
        table.append((name, DTYPES[dtype_code], shape, offset, nbytes))
    payload = body[r.pos:]
    tensors = {}
    for name, dtype, shape, offset, nbytes in table:
        if nbytes != dtype.itemsize * int(np.prod(shape, dtype=np.int64)):
            raise CheckpointError(f"byte count {nbytes} does not match shape {shape}", name, path)
        if offset + nbytes > len(payload):
            raise CheckpointError("payload out of bounds", name, path)
        arr = np.frombuffer(payload, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset)
        tensors[name] = arr.reshape(shape).astype(np.float32)
    return CheckpointFile(version, kinds[kind_code], config_json, tensors)


def read_checkpoint(path) -> CheckpointFile:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), path)


def build_model(kind, cfg: RunConfig):
    if kind == "snn":
        return VisionModelSNN(cfg.model, cfg.snn, cfg.akwta)
    return VisionModelANN(cfg.model, cfg.akwta)


def load_checkpoint(path, kind=None):
    """Rebuild the model stored at ``path``; ``kind`` demands ann or snn."""
    ck = read_checkpoint(path)
    if kind is not None and ck.kind != kind:
        raise CheckpointError(
            f"checkpoint holds an {ck.kind.upper()} model but an {kind.upper()} model was "
            f"requested", path=path)
    try:
        cfg = ck.config
    except (ConfigError, ValueError) as exc:
        raise CheckpointError(f"embedded config invalid: {exc}", path=path) from None
    model = build_model(ck.kind, cfg)
    expected = model.state_tensors()
    for name, ref in expected.items():
        if name not in ck.tensors:
            raise CheckpointError("missing from checkpoint", name, path)
        if ck.tensors[name].shape != ref.shape:
            raise CheckpointError(
                f"shape {ck.tensors[name].shape} does not match architecture {ref.shape}",
                name, path)
    for name in ck.tensors:
        if name not in expected:
            raise CheckpointError("not part of the architecture", name, path)
    model.load_state(ck.tensors)
    return model
