"""Binary file formats: parameter checkpoints and dataset files.

Both formats are little-endian and bit-exact on round trip.  Malformed
input raises FormatError naming the byte offset, never an uncaught
struct/index error.
"""

from __future__ import annotations

import struct

import numpy as np

from .data import CLASS_NAMES, DatasetMeta, VideoSample
from .tensor import ParamSet

CHECKPOINT_MAGIC = b"SVFC"
DATASET_MAGIC = b"SVDS"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Raised for bad magic, version, or truncated/invalid payloads."""


class _Reader:
    def __init__(self, blob: bytes, label: str):
        self.blob = blob
        self.label = label
        self.off = 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.blob):
            raise FormatError(
                f"{self.label}: truncated while reading {what} at offset {self.off}")
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str, what: str):
        vals = struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))
        return vals[0] if len(vals) == 1 else vals

    def f32(self, count: int, what: str) -> np.ndarray:
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32)

    def expect_done(self):
        if self.off != len(self.blob):
            raise FormatError(
                f"{self.label}: {len(self.blob) - self.off} trailing bytes "
                f"at offset {self.off}")


def _check_header(r: _Reader, magic: bytes):
    got = r.take(4, "magic")
    if got != magic:
        raise FormatError(f"{r.label}: bad magic {got!r} at offset 0")
    version = r.unpack("I", "version")
    if version != FORMAT_VERSION:
        raise FormatError(f"{r.label}: unsupported version {version} at offset 4")


# -- checkpoints -----------------------------------------------------


def save_checkpoint(path, params: ParamSet):
    """Write every parameter as (name, shape, float32 values)."""
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", FORMAT_VERSION, len(params))]
    for name, t in params.items():
        raw = name.encode("utf-8")
        # ascontiguousarray would promote rank-0 params to rank 1
        arr = np.asarray(t.data, dtype="<f4")
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_checkpoint(path) -> ParamSet:
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob, str(path))
    _check_header(r, CHECKPOINT_MAGIC)
    count = r.unpack("I", "entry count")
    params = ParamSet()
    for i in range(count):
        name_len = r.unpack("H", f"name length of entry {i}")
        name = r.take(name_len, f"name of entry {i}").decode("utf-8")
        rank = r.unpack("B", f"rank of {name}")
        dims = tuple(
            r.unpack("I", f"dim {d} of {name}") for d in range(rank))
        n = 1
        for d in dims:
            n *= d
        values = r.f32(n, f"values of {name}").reshape(dims)
        if name in params:
            raise FormatError(f"{r.label}: duplicate entry {name!r} at offset {r.off}")
        params.add(name, values)
    r.expect_done()
    return params


# -- datasets --------------------------------------------------------


def save_dataset(path, meta: DatasetMeta, samples):
    if meta.n_samples != len(samples):
        raise ValueError(
            f"meta says {meta.n_samples} samples, got {len(samples)}")
    parts = [
        DATASET_MAGIC,
        struct.pack("<II", FORMAT_VERSION, meta.n_samples),
        struct.pack("<HHHH", meta.t, meta.h, meta.w, meta.c),
        struct.pack("<H", meta.n_classes),
        struct.pack("<Q", meta.seed & ((1 << 64) - 1)),
    ]
    shape = (meta.t, meta.h, meta.w, meta.c)
    for s in samples:
        if s.clip.shape != shape:
            raise ValueError(
                f"sample {s.sample_id} has shape {s.clip.shape}, expected {shape}")
        parts.append(struct.pack("<Qi", s.sample_id, s.label))
        parts.append(np.ascontiguousarray(s.clip, dtype="<f4").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_dataset(path):
    """Read an SVDS file back into (meta, samples)."""
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob, str(path))
    _check_header(r, DATASET_MAGIC)
    n_samples = r.unpack("I", "sample count")
    t, h, w, c = r.unpack("HHHH", "clip dims")
    n_classes = r.unpack("H", "class count")
    seed = r.unpack("Q", "seed")
    if min(t, h, w, c, n_classes) < 1:
        raise FormatError(f"{r.label}: non-positive meta field at offset 8")
    names = CLASS_NAMES if n_classes == len(CLASS_NAMES) else tuple(
        f"class-{i}" for i in range(n_classes))
    meta = DatasetMeta(n_samples=n_samples, t=t, h=h, w=w, c=c,
                       n_classes=n_classes, seed=seed, class_names=names)
    pixels = t * h * w * c
    samples = []
    for i in range(n_samples):
        at = r.off
        sample_id, label = r.unpack("Qi", f"header of sample {i}")
        if not (label == -1 or 0 <= label < n_classes):
            raise FormatError(
                f"{r.label}: label {label} out of range at offset {at + 8}")
        clip = r.f32(pixels, f"pixels of sample {i}").reshape(t, h, w, c)
        samples.append(VideoSample(sample_id=sample_id, label=label, clip=clip))
    r.expect_done()
    return meta, samples
