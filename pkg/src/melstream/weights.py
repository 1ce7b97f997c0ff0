"""Named-tensor archive, manifests and seeded initialisation.

Archive layout (all integers little-endian u32)::

    b"MMNT" | version | count |
    count x ( name_len | utf-8 name | rank | dims[rank] | dtype | payload )

``dtype`` 0 is float32; payloads are little-endian row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"MMNT"
VERSION = 1
DTYPE_F32 = 0

META_PREFIX = "meta."  # non-parameter tensors, ignored by validation

_U32 = struct.Struct("<I")


class ArchiveError(ValueError):
    """Malformed archive; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset, tensor=None):
        where = f" in tensor {tensor!r}" if tensor is not None else ""
        super().__init__(f"{message}{where} at byte offset {offset}")
        self.offset = offset
        self.tensor = tensor


class ManifestError(ValueError):
    def __init__(self, diff):
        super().__init__("weights do not match manifest:\n" + "\n".join(diff))
        self.diff = diff


# --------------------------------------------------------------------------
# archive


def to_bytes(tensors):
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise TypeError(f"tensor {name!r} is {arr.dtype}, only float32 is supported")
        raw = name.encode("utf-8")
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
        parts.append(_U32.pack(arr.ndim))
        parts.extend(_U32.pack(d) for d in arr.shape)
        parts.append(_U32.pack(DTYPE_F32))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def from_bytes(data):
    data = memoryview(bytes(data))
    pos = 0
    current = None

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise ArchiveError(f"truncated while reading {what}", pos, current)
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    def u32(what):
        return _U32.unpack(take(4, what))[0]

    if bytes(take(4, "magic")) != MAGIC:
        raise ArchiveError("bad magic", 0)
    version = u32("version")
    if version != VERSION:
        raise ArchiveError(f"unsupported version {version}", 4)
    count = u32("tensor count")
    tensors = {}
    for index in range(count):
        current = f"#{index}"
        name_len = u32("name length")
        try:
            name = bytes(take(name_len, "name")).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ArchiveError("name is not UTF-8", pos - name_len, current) from exc
        current = name
        if name in tensors:
            raise ArchiveError("duplicate tensor name", pos - name_len, name)
        rank = u32("rank")
        dims = tuple(u32("dims") for _ in range(rank))
        dtype_at = pos
        if u32("dtype") != DTYPE_F32:
            raise ArchiveError("unsupported dtype code", dtype_at, name)
        n = int(np.prod(dims, dtype=np.int64))
        payload = take(4 * n, "payload")
        tensors[name] = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)
    if pos != len(data):
        raise ArchiveError(f"{len(data) - pos} trailing bytes", pos)
    return tensors


def save(tensors, path):
    Path(path).write_bytes(to_bytes(tensors))


def load(path):
    return from_bytes(Path(path).read_bytes())


# --------------------------------------------------------------------------
# manifest / init


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple
    init: str = "uniform"  # uniform | ones | zeros
    fan_in: int = 1

    @property
    def size(self):
        return int(np.prod(self.shape, dtype=np.int64))


def param_specs(cfg):
    """Every learnable tensor of the pipeline described by ``cfg``, in order."""
    from . import backbone, stft2mel

    specs = []
    if cfg.frontend == "mel":
        specs.extend(stft2mel.param_specs(cfg))
    specs.extend(backbone.param_specs(cfg))
    return specs


def manifest(cfg):
    """``{name: shape}`` expected for ``cfg``."""
    return {s.name: s.shape for s in param_specs(cfg)}


def validate(tensors, cfg):
    """Return a list of human-readable differences (empty when valid)."""
    expected = manifest(cfg)
    diff = []
    for name, shape in expected.items():
        if name not in tensors:
            diff.append(f"missing {name} {list(shape)}")
        elif tuple(tensors[name].shape) != tuple(shape):
            diff.append(f"shape {name}: expected {list(shape)}, got {list(tensors[name].shape)}")
    for name in tensors:
        if name not in expected and not name.startswith(META_PREFIX):
            diff.append(f"unexpected {name} {list(tensors[name].shape)}")
    return diff


def with_fingerprint(tensors, fp):
    """Copy of ``tensors`` tagged with a ``meta.fingerprint.<fp>`` marker."""
    out = {k: v for k, v in tensors.items() if not k.startswith(META_PREFIX + "fingerprint.")}
    out[f"{META_PREFIX}fingerprint.{fp}"] = np.zeros(1, np.float32)
    return out


def fingerprint_of(tensors):
    """The fingerprint a tensor set was tagged with, or ``None``."""
    tag = META_PREFIX + "fingerprint."
    found = [k[len(tag) :] for k in tensors if k.startswith(tag)]
    return found[0] if found else None


def check(tensors, cfg):
    diff = validate(tensors, cfg)
    if diff:
        raise ManifestError(diff)


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed, n, start=0):
    """Outputs ``start+1 .. start+n`` of the SplitMix64 sequence seeded with ``seed``."""
    with np.errstate(over="ignore"):
        k = np.arange(start + 1, start + n + 1, dtype=np.uint64)
        z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + k * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def uniform01(seed, n, start=0):
    """Doubles in [0, 1) from the top 53 bits of :func:`splitmix64`."""
    return (splitmix64(seed, n, start) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def random_init(cfg, seed=0):
    """Deterministic weights for ``cfg``.

    One SplitMix64 stream is consumed across tensors in manifest order;
    ``uniform`` tensors are ``U(-1, 1) / sqrt(fan_in)``.
    """
    out = {}
    pos = 0
    for spec in param_specs(cfg):
        if spec.init == "ones":
            out[spec.name] = np.ones(spec.shape, np.float32)
        elif spec.init == "zeros":
            out[spec.name] = np.zeros(spec.shape, np.float32)
        else:
            u = uniform01(seed, spec.size, pos)
            pos += spec.size
            bound = 1.0 / np.sqrt(spec.fan_in)
            out[spec.name] = ((2.0 * u - 1.0) * bound).astype(np.float32).reshape(spec.shape)
    return out


def n_params(cfg):
    return sum(s.size for s in param_specs(cfg))
