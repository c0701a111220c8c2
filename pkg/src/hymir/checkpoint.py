"""Versioned binary checkpoints.

Layout, all integers little-endian:

    magic   8 bytes  b"HYMRCKPT"
    version u32      currently 1
    config  u32 length + utf-8 `key = value` text
    count   u32      number of tensor records
    records          u32 name length, utf-8 name, u8 dtype tag, u8 rank,
                     u32 extents[rank], raw little-endian values
    checksum 8 bytes first half of SHA-256 over everything above

Records cover model parameters and buffers by qualified name; optimizer
state rides along under an `opt.` prefix.  Loading writes arrays in place
so optimizer references to parameter storage stay valid.
"""

import hashlib
import io
import struct

import numpy as np

MAGIC = b"HYMRCKPT"
VERSION = 1

_DTYPE_TAGS = {
    np.dtype(np.float32): 0,
    np.dtype(np.float64): 1,
    np.dtype(np.int64): 2,
}
_TAG_DTYPES = {tag: dt for dt, tag in _DTYPE_TAGS.items()}


def _write_record(buf, name, array):
    # np.ascontiguousarray would promote 0-d records to 1-d; tobytes()
    # serializes any layout in C order on its own.
    array = np.asarray(array)
    if array.dtype not in _DTYPE_TAGS:
        raise ValueError(f"record {name!r} has unsupported dtype {array.dtype}")
    encoded = name.encode("utf-8")
    buf.write(struct.pack("<I", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<BB", _DTYPE_TAGS[array.dtype], array.ndim))
    buf.write(struct.pack(f"<{array.ndim}I", *array.shape))
    buf.write(array.astype(array.dtype.newbyteorder("<"), copy=False).tobytes())


def save_checkpoint(path, model, config_text: str, extra=None):
    """Write the model's parameters and buffers, plus optional extra records."""
    records = {}
    for name, p in model.named_parameters():
        records[name] = p.data
    for name, b in model.named_buffers():
        records[name] = b
    for name, arr in (extra or {}).items():
        if name in records:
            raise ValueError(f"extra record {name!r} collides with a model tensor")
        records[name] = np.asarray(arr)

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    encoded_cfg = config_text.encode("utf-8")
    buf.write(struct.pack("<I", len(encoded_cfg)))
    buf.write(encoded_cfg)
    buf.write(struct.pack("<I", len(records)))
    for name, arr in records.items():
        _write_record(buf, name, arr)
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).digest()[:8]
    with open(path, "wb") as f:
        f.write(payload)
        f.write(digest)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ValueError("checkpoint truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path):
    """Read a checkpoint; returns (config_text, records dict name -> array)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 4 + 8:
        raise ValueError("checkpoint truncated")
    payload, digest = blob[:-8], blob[-8:]
    if hashlib.sha256(payload).digest()[:8] != digest:
        raise ValueError("checkpoint checksum mismatch; file corrupt or truncated")
    r = _Reader(payload)
    if r.take(len(MAGIC)) != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}, expected {VERSION}")
    config_text = r.take(r.u32()).decode("utf-8")
    records = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        tag, rank = struct.unpack("<BB", r.take(2))
        if tag not in _TAG_DTYPES:
            raise ValueError(f"record {name!r} has unknown dtype tag {tag}")
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        dtype = _TAG_DTYPES[tag]
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        raw = r.take(n * dtype.itemsize)
        arr = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
        records[name] = arr
    if r.pos != len(payload):
        raise ValueError(f"{len(payload) - r.pos} trailing bytes after last record")
    return config_text, records


def load_state(model, records, strict=True):
    """Copy records into the model's tensors in place; returns leftover records.

    Every model parameter and buffer must be present with matching shape and
    dtype.  Records that match nothing (e.g. optimizer state) are returned
    for the caller to interpret; with strict=True they must all carry the
    `opt.` prefix so a typo cannot silently skip a weight.
    """
    leftovers = dict(records)
    targets = list(model.named_parameters())
    targets += [(name, b) for name, b in model.named_buffers()]
    for name, dst in targets:
        if name not in leftovers:
            raise ValueError(f"checkpoint is missing tensor {name!r}")
        src = leftovers.pop(name)
        dst_arr = dst if isinstance(dst, np.ndarray) else dst.data
        if tuple(src.shape) != tuple(dst_arr.shape):
            raise ValueError(f"tensor {name!r}: checkpoint shape {src.shape} != model shape {dst_arr.shape}")
        if src.dtype != dst_arr.dtype:
            raise ValueError(f"tensor {name!r}: checkpoint dtype {src.dtype} != model dtype {dst_arr.dtype}")
        dst_arr[...] = src
    if strict:
        stray = [n for n in leftovers if not n.startswith("opt.")]
        if stray:
            raise ValueError(f"checkpoint has records matching no model tensor: {sorted(stray)[:5]}")
    return leftovers
