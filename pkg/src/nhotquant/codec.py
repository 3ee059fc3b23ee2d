"""Real-tensor <-> integer-code bridge: scales, projection, packing, file IO.

Quantization follows the shared-scale convention: the step size is
alpha = (M - m) / 2**b for both the uniform grid and the non-uniform
codebooks, so the two agree exactly on every shared level.  Symmetric
tensors (weights) store a sign bit plus a magnitude index; affine tensors
(activations) store a plain grid index.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .codebook import Codebook, gen_codebook

MAGIC_QUANT = b"NHQT"
MAGIC_FLOAT = b"NHFT"
FORMAT_VERSION = 1
_MODE_IDS = {"uniform": 0, "pot": 1, "one-hot": 2, "additive": 3, "nhot": 4}
_ID_MODES = {v: k for k, v in _MODE_IDS.items()}


class FormatError(ValueError):
    """Malformed container bytes; ``offset`` points at the failing byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class DegenerateRangeError(ValueError):
    """Tensor has zero dynamic range and no explicit limits were supplied."""


@dataclass(frozen=True)
class QuantParams:
    """Quantization range [lower, upper] and the step size (M - m) / 2**b.

    ``scale`` is stored rather than derived so that a scale read back from a
    serialized header stays bit-identical to the one written.
    """

    lower: float
    upper: float
    bit_width: int
    symmetric: bool = True
    scale: float = 0.0

    def __post_init__(self) -> None:
        if not self.upper > self.lower:
            raise ValueError(f"need upper > lower, got [{self.lower}, {self.upper}]")
        if self.bit_width < 1:
            raise ValueError(f"bit width must be >= 1, got {self.bit_width}")
        if self.symmetric and self.lower != -self.upper:
            raise ValueError("symmetric params require lower == -upper")
        if self.scale == 0.0:
            object.__setattr__(
                self, "scale", (self.upper - self.lower) / (1 << self.bit_width)
            )


@dataclass(eq=False)
class QuantizedTensor:
    """Shape + per-element (sign, magnitude index) codes + parameters."""

    shape: tuple[int, ...]
    params: QuantParams
    mode: str
    num_terms: int
    signs: np.ndarray  # int8, +1/-1 (all +1 in affine mode)
    indices: np.ndarray  # int32 indices into codebook.magnitudes (affine: grid index)

    def __post_init__(self) -> None:
        count = int(np.prod(self.shape)) if self.shape else 0
        if count <= 0:
            raise ValueError(f"shape must be non-empty with positive dims, got {self.shape}")
        if self.signs.size != count or self.indices.size != count:
            raise ValueError("element count does not match shape")

    @property
    def codebook(self) -> Codebook:
        return gen_codebook(self.params.bit_width, self.num_terms, self.mode)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        # upper is derivable from (lower, scale, b); comparing the
        # serialized identity keeps pack/unpack round-trips exact
        return (
            self.shape == other.shape
            and self.mode == other.mode
            and self.num_terms == other.num_terms
            and self.params.bit_width == other.params.bit_width
            and self.params.symmetric == other.params.symmetric
            and self.params.lower == other.params.lower
            and self.params.scale == other.params.scale
            and np.array_equal(self.signs, other.signs)
            and np.array_equal(self.indices, other.indices)
        )


@lru_cache(maxsize=None)
def _signed_table(book: Codebook) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sorted signed magnitudes with parallel (sign, index) lookup arrays."""
    mags = np.asarray(book.magnitudes, dtype=np.int64)
    nz = mags[mags > 0]
    values = np.concatenate([-nz[::-1], mags[:1] * 0, nz])
    signs = np.sign(values).astype(np.int8)
    signs[signs == 0] = 1
    idx_nz = np.arange(1, nz.size + 1, dtype=np.int32)
    indices = np.concatenate([idx_nz[::-1], np.zeros(1, np.int32), idx_nz])
    return values, signs, indices


def project_array(x: np.ndarray, book: Codebook, params: QuantParams) -> tuple[np.ndarray, np.ndarray]:
    """Nearest signed codebook level for every element; ties go to the
    smaller magnitude.  Returns (signs, magnitude indices)."""
    if not params.symmetric:
        raise ValueError("signed-magnitude projection requires symmetric params")
    if book.bit_width != params.bit_width:
        raise ValueError("codebook and params disagree on bit width")
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    table, tsigns, tindices = _signed_table(book)
    levels = table * params.scale
    xc = np.clip(x, params.lower, params.upper)
    # nearest of the two neighbors in the sorted level array
    hi = np.clip(np.searchsorted(levels, xc, side="left"), 0, levels.size - 1)
    lo = np.clip(hi - 1, 0, levels.size - 1)
    d_lo = np.abs(xc - levels[lo])
    d_hi = np.abs(levels[hi] - xc)
    pick_hi = d_hi < d_lo
    tie = d_hi == d_lo
    pick_hi |= tie & (np.abs(table[hi]) < np.abs(table[lo]))
    chosen = np.where(pick_hi, hi, lo)
    return tsigns[chosen].copy(), tindices[chosen].astype(np.int32)


def project(x: float, book: Codebook, params: QuantParams) -> tuple[int, int]:
    """Scalar projection: returns (sign, magnitude)."""
    if not math.isfinite(x):
        raise ValueError(f"cannot project non-finite value {x!r}")
    signs, idx = project_array(np.asarray([x]), book, params)
    return int(signs[0]), int(book.magnitudes[idx[0]])


def uniform_quantize(x, params: QuantParams):
    """Affine uniform quantizer: clamp to [m, M], snap to the alpha grid.

    Accepts scalars or arrays; rounding is half-up for determinism.
    """
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("input contains non-finite values")
    alpha = params.scale
    xc = np.clip(arr, params.lower, params.upper)
    out = np.floor((xc - params.lower) / alpha + 0.5) * alpha + params.lower
    return float(out) if np.isscalar(x) else out


def resolve_params(data: np.ndarray, b: int, range_policy) -> QuantParams:
    """Turn a range policy into concrete QuantParams.

    Policies: "symmetric" (M = max|x|), "minmax" (affine m..M), or an
    explicit (lower, upper) pair (symmetric iff lower == -upper).
    """
    if isinstance(range_policy, str):
        if range_policy == "symmetric":
            peak = float(np.max(np.abs(data)))
            if peak == 0.0:
                raise DegenerateRangeError("all-zero tensor; supply explicit limits")
            return QuantParams(-peak, peak, b, symmetric=True)
        if range_policy == "minmax":
            lo, hi = float(np.min(data)), float(np.max(data))
            if lo == hi:
                raise DegenerateRangeError("constant tensor; supply explicit limits")
            return QuantParams(lo, hi, b, symmetric=False)
        raise ValueError(f"unknown range policy {range_policy!r}")
    lo, hi = float(range_policy[0]), float(range_policy[1])
    return QuantParams(lo, hi, b, symmetric=(lo == -hi))


def quantize_tensor(data, b: int, n: int, mode: str, range_policy="symmetric") -> QuantizedTensor:
    """Quantize a real tensor to per-element codes under one shared scale."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot quantize an empty tensor")
    if not np.all(np.isfinite(arr)):
        raise ValueError("input contains non-finite values")
    params = resolve_params(arr, b, range_policy)
    flat = arr.reshape(-1)
    if not params.symmetric:
        if mode != "uniform":
            raise ValueError("affine ranges are only supported for mode='uniform'")
        alpha = params.scale
        idx = np.floor((np.clip(flat, params.lower, params.upper) - params.lower) / alpha + 0.5)
        signs = np.ones(flat.size, dtype=np.int8)
        indices = idx.astype(np.int32)
    else:
        book = gen_codebook(b, n, mode)
        signs, indices = project_array(flat, book, params)
    return QuantizedTensor(tuple(arr.shape), params, mode, n, signs, indices)


def dequantize(qt: QuantizedTensor) -> np.ndarray:
    """Real tensor reconstruction: sign * magnitude * alpha (affine: m + k*alpha)."""
    alpha = qt.params.scale
    if not qt.params.symmetric:
        hi = 1 << qt.params.bit_width
        if np.any(qt.indices < 0) or np.any(qt.indices > hi):
            raise ValueError("affine index out of range")
        vals = qt.params.lower + qt.indices.astype(np.float64) * alpha
    else:
        mags = np.asarray(qt.codebook.magnitudes, dtype=np.float64)
        if np.any(qt.indices < 0) or np.any(qt.indices >= mags.size):
            raise ValueError("magnitude index out of range")
        vals = qt.signs.astype(np.float64) * mags[qt.indices] * alpha
    return vals.reshape(qt.shape)


def element_bits(qt: QuantizedTensor) -> int:
    """Storage bits per element: ceil(log2(#distinct signed values))."""
    if not qt.params.symmetric:
        return qt.params.bit_width + 1  # affine grid index 0 .. 2**b inclusive
    n_mag = len(qt.codebook)
    distinct = 2 * (n_mag - 1) + 1
    return max(1, math.ceil(math.log2(distinct)))


class _BitWriter:
    def __init__(self) -> None:
        self.buf = bytearray()
        self._acc = 0
        self._nbits = 0

    def write(self, value: int, width: int) -> None:
        self._acc = (self._acc << width) | (value & ((1 << width) - 1))
        self._nbits += width
        while self._nbits >= 8:
            self._nbits -= 8
            self.buf.append((self._acc >> self._nbits) & 0xFF)

    def finish(self) -> bytes:
        if self._nbits:
            self.buf.append((self._acc << (8 - self._nbits)) & 0xFF)
            self._acc = self._nbits = 0
        return bytes(self.buf)


class _BitReader:
    def __init__(self, data: bytes, base_offset: int = 0) -> None:
        self.data = data
        self.base = base_offset
        self.pos = 0
        self._acc = 0
        self._nbits = 0

    @property
    def offset(self) -> int:
        return self.base + self.pos

    def read(self, width: int) -> int:
        while self._nbits < width:
            if self.pos >= len(self.data):
                raise FormatError("payload truncated", self.offset)
            self._acc = (self._acc << 8) | self.data[self.pos]
            self.pos += 1
            self._nbits += 8
        self._nbits -= width
        return (self._acc >> self._nbits) & ((1 << width) - 1)


def pack(qt: QuantizedTensor) -> bytes:
    """Serialize to the NHQT container (little-endian header, MSB-first
    bit-packed elements padded to a byte boundary)."""
    header = struct.pack(
        "<4sHBBBB dd B",
        MAGIC_QUANT,
        FORMAT_VERSION,
        _MODE_IDS[qt.mode],
        qt.params.bit_width,
        qt.num_terms,
        1 if qt.params.symmetric else 0,
        qt.params.scale,
        qt.params.lower,
        len(qt.shape),
    )
    dims = struct.pack(f"<{len(qt.shape)}I", *qt.shape)
    width = element_bits(qt)
    writer = _BitWriter()
    if qt.params.symmetric:
        n_mag = len(qt.codebook)
        offset = n_mag - 1
        for s, i in zip(qt.signs.tolist(), qt.indices.tolist()):
            writer.write(int(s) * int(i) + offset, width)
    else:
        for i in qt.indices.tolist():
            writer.write(int(i), width)
    return header + dims + writer.finish()


def unpack(data: bytes) -> QuantizedTensor:
    """Parse an NHQT container; raises FormatError with the byte offset of
    the first inconsistency."""
    head_fmt = "<4sHBBBB dd B"
    head_len = struct.calcsize(head_fmt)
    if len(data) < head_len:
        raise FormatError("header truncated", len(data))
    magic, version, mode_id, b, n, flags, scale, lower, ndim = struct.unpack_from(head_fmt, data)
    if magic != MAGIC_QUANT:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if mode_id not in _ID_MODES:
        raise FormatError(f"unknown mode id {mode_id}", 6)
    mode = _ID_MODES[mode_id]
    symmetric = bool(flags & 1)
    dims_len = 4 * ndim
    if len(data) < head_len + dims_len:
        raise FormatError("dims truncated", len(data))
    shape = struct.unpack_from(f"<{ndim}I", data, head_len)
    if ndim == 0 or any(d == 0 for d in shape):
        raise FormatError(f"invalid shape {shape}", head_len)
    count = int(np.prod(shape))
    if symmetric:
        params = QuantParams(lower, -lower, b, symmetric=True, scale=scale)
    else:
        params = QuantParams(lower, lower + scale * (1 << b), b, symmetric=False, scale=scale)
    qt_probe = QuantizedTensor(
        tuple(shape), params, mode, n,
        np.ones(count, np.int8), np.zeros(count, np.int32),
    )
    width = element_bits(qt_probe)
    reader = _BitReader(data[head_len + dims_len:], base_offset=head_len + dims_len)
    signs = np.ones(count, dtype=np.int8)
    indices = np.zeros(count, dtype=np.int32)
    if symmetric:
        n_mag = len(qt_probe.codebook)
        offset = n_mag - 1
        for k in range(count):
            raw = reader.read(width) - offset
            if abs(raw) > offset:
                raise FormatError(f"signed index {raw} out of range", reader.offset)
            signs[k] = -1 if raw < 0 else 1
            indices[k] = abs(raw)
    else:
        hi = 1 << b
        for k in range(count):
            raw = reader.read(width)
            if raw > hi:
                raise FormatError(f"grid index {raw} out of range", reader.offset)
            indices[k] = raw
    return QuantizedTensor(tuple(shape), params, mode, n, signs, indices)


def pack_floats(arr) -> bytes:
    """Serialize a float tensor to the NHFT sibling container (f32 payload)."""
    a = np.asarray(arr, dtype=np.float32)
    if a.size == 0:
        raise ValueError("cannot pack an empty tensor")
    header = struct.pack("<4sHB", MAGIC_FLOAT, FORMAT_VERSION, a.ndim)
    dims = struct.pack(f"<{a.ndim}I", *a.shape)
    return header + dims + a.astype("<f4").tobytes()


def unpack_floats(data: bytes) -> np.ndarray:
    head_fmt = "<4sHB"
    head_len = struct.calcsize(head_fmt)
    if len(data) < head_len:
        raise FormatError("header truncated", len(data))
    magic, version, ndim = struct.unpack_from(head_fmt, data)
    if magic != MAGIC_FLOAT:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if len(data) < head_len + 4 * ndim:
        raise FormatError("dims truncated", len(data))
    shape = struct.unpack_from(f"<{ndim}I", data, head_len)
    count = int(np.prod(shape)) if ndim else 0
    payload = data[head_len + 4 * ndim:]
    if len(payload) < 4 * count:
        raise FormatError("payload truncated", head_len + 4 * ndim + len(payload))
    return np.frombuffer(payload[: 4 * count], dtype="<f4").reshape(shape).copy()
