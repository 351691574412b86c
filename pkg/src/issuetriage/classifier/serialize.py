"""Binary model container.

Layout (little-endian): magic "MOMB", u32 version, u32 metadata length,
canonical-JSON metadata, then per tensor a u16 name length, the name,
u8 dtype (0 = f32), u8 rank, rank u64 dims and the row-major f32
payload. The file ends with a u64 FNV-1a checksum of everything before
it. Structure errors carry the byte offset they were detected at.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .bundle import MODEL_FORMAT_VERSION, ModelBundle
from .config import EncoderConfig, LinearConfig, TaskConfig, TrainConfig
from ..errors import (BadMagicError, ChecksumMismatchError, ModelFormatError,
                      TruncatedFileError, UnsupportedVersionError)
from ..textproc import Vocabulary, fnv1a_64

MAGIC = b"MOMB"
DTYPE_F32 = 0


def vocab_hash(vocab: Vocabulary) -> str:
    return f"{fnv1a_64(vocab.to_json().encode('utf-8')):016x}"


def _metadata(model: ModelBundle) -> dict:
    return {
        "backend": model.backend,
        "task": model.task_config.to_dict(),
        "encoder": model.encoder_config.to_dict() if model.encoder_config else None,
        "linear": model.linear_config.to_dict() if model.linear_config else None,
        "train": model.train_config.to_dict() if model.train_config else None,
        "label_names": list(model.task_config.label_names),
        "vocab": {"min_frequency": model.vocabulary.min_frequency,
                  "max_size": model.vocabulary.max_size,
                  "tokens": model.vocabulary.tokens},
        "vocab_hash": vocab_hash(model.vocabulary),
    }


def to_bytes(model: ModelBundle) -> bytes:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", MODEL_FORMAT_VERSION)
    meta = json.dumps(_metadata(model), ensure_ascii=False, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    buf += struct.pack("<I", len(meta))
    buf += meta
    for name in sorted(model.weights):
        if not np.isfinite(model.weights[name]).all():
            raise ValueError(f"tensor {name!r} contains NaN/Inf; refusing to save")
        arr = np.ascontiguousarray(model.weights[name], dtype="<f4")
        name_bytes = name.encode("utf-8")
        buf += struct.pack("<H", len(name_bytes))
        buf += name_bytes
        buf += struct.pack("<BB", DTYPE_F32, arr.ndim)
        for dim in arr.shape:
            buf += struct.pack("<Q", dim)
        buf += arr.tobytes()
    buf += struct.pack("<Q", fnv1a_64(bytes(buf)))
    return bytes(buf)


class _Reader:
    def __init__(self, data: bytes, limit: int):
        self.data = data
        self.pos = 0
        self.limit = limit

    def take(self, n: int) -> bytes:
        if self.pos + n > self.limit:
            raise TruncatedFileError("unexpected end of file", offset=self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def from_bytes(data: bytes) -> ModelBundle:
    if len(data) < len(MAGIC):
        raise TruncatedFileError("file shorter than magic", offset=len(data))
    if data[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}", offset=0)
    if len(data) < 8:
        raise TruncatedFileError("unexpected end of file", offset=len(data))
    version = struct.unpack("<I", data[4:8])[0]
    if version != MODEL_FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}", offset=4)
    if len(data) < 16 + 8:  # header + at least the trailing checksum
        raise TruncatedFileError("unexpected end of file", offset=len(data))

    body_end = len(data) - 8
    r = _Reader(data, body_end)
    r.pos = 8
    meta_len = r.u32()
    meta_start = r.pos
    meta_raw = r.take(meta_len)

    # Walk the tensor table before touching any content, so truncation is
    # reported as such rather than as a checksum failure.
    tensors: list[tuple[str, tuple[int, ...], int, int]] = []
    while r.pos < body_end:
        name = r.take(r.u16()).decode("utf-8")
        dtype_at = r.pos
        dtype = r.u8()
        if dtype != DTYPE_F32:
            raise ModelFormatError(f"unsupported dtype {dtype}", offset=dtype_at)
        rank = r.u8()
        dims = tuple(r.u64() for _ in range(rank))
        count = 1
        for d in dims:
            count *= d
        payload_at = r.pos
        r.take(count * 4)
        tensors.append((name, dims, payload_at, count))

    stored = struct.unpack("<Q", data[body_end:])[0]
    actual = fnv1a_64(data[:body_end])
    if stored != actual:
        raise ChecksumMismatchError(
            f"checksum {stored:016x} != computed {actual:016x}", offset=body_end)

    try:
        meta = json.loads(meta_raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"bad metadata json: {exc}", offset=meta_start)

    try:
        vocab = Vocabulary(tokens=list(meta["vocab"]["tokens"]),
                           min_frequency=int(meta["vocab"]["min_frequency"]),
                           max_size=int(meta["vocab"]["max_size"]))
        task = TaskConfig.from_dict(meta["task"])
        encoder = EncoderConfig.from_dict(meta["encoder"]) if meta["encoder"] else None
        lin = LinearConfig.from_dict(meta["linear"]) if meta["linear"] else None
        tr = TrainConfig.from_dict(meta["train"]) if meta["train"] else None
        expected_hash = meta["vocab_hash"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"incomplete metadata: {exc}", offset=meta_start)
    if vocab_hash(vocab) != expected_hash:
        raise ModelFormatError("vocabulary hash mismatch", offset=meta_start)

    weights = {}
    for name, dims, payload_at, count in tensors:
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=payload_at)
        if not np.isfinite(arr).all():
            raise ModelFormatError(f"tensor {name!r} contains NaN/Inf",
                                   offset=payload_at)
        weights[name] = arr.reshape(dims).copy()

    return ModelBundle(backend=meta["backend"], task_config=task,
                       encoder_config=encoder, linear_config=lin,
                       vocabulary=vocab, weights=weights,
                       version=version, train_config=tr)


def save_model(model: ModelBundle, path) -> None:
    with open(path, "wb") as f:
        f.write(to_bytes(model))


def load_model(path) -> ModelBundle:
    with open(path, "rb") as f:
        return from_bytes(f.read())


def bundle_fingerprint(model: ModelBundle) -> str:
    """Stable identifier for a finalized bundle."""
    return f"momb{model.version}-{fnv1a_64(to_bytes(model)):016x}"
