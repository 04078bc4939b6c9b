"""Morton-order resorting, container serialization, and entropy coding.

Container layout (all integers little-endian):

    payload := magic "ELMG" (4 bytes)
             | version u16 = 1
             | flags u16       bit 0: morton-ordered; bits 1..4: deflate level
             | count u64
             | aabb 6 x f64    min xyz then max xyz of dequantized positions
             | 6 attribute records, in id order 0..5:
                 id u8, bits u8, signed u8, reserved u8 = 0,
                 step f64, raw_len u64, comp_len u64,
                 raw DEFLATE stream of comp_len bytes
    container := payload | crc32(payload) u32

Each attribute's integer codes are serialized row-major, two's complement,
at ceil(bits/8) bytes per code, then compressed as one raw DEFLATE stream.
The trailing CRC makes corruption anywhere in the file detectable.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .quant import QuantizedScene, QuantizerState, dequantize
from .scene import ATTRIBUTE_ARITY, ATTRIBUTE_NAMES

MAGIC = b"ELMG"
VERSION = 1
DEFAULT_DEFLATE_LEVEL = 6
MORTON_BITS = 21
GRID_MAX = (1 << MORTON_BITS) - 1

ATTRIBUTE_IDS = {name: i for i, name in enumerate(ATTRIBUTE_NAMES)}


class ContainerError(Exception):
    """Base class for container decode failures."""


class ContainerFormatError(ContainerError):
    """Bad magic or unsupported version."""


class ContainerCorruptionError(ContainerError):
    """Checksum, length, or range validation failed."""


def _split21(v: np.ndarray) -> np.ndarray:
    """Spread the low 21 bits of each value so bit k lands at bit 3k."""
    v = v.astype(np.uint64)
    v &= np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def _compact21(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64)
    v &= np.uint64(0x1249249249249249)
    v = (v | (v >> np.uint64(2))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v >> np.uint64(4))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v >> np.uint64(8))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v >> np.uint64(16))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v >> np.uint64(32))) & np.uint64(0x1FFFFF)
    return v


def morton_encode(grid) -> np.ndarray:
    """Interleave (..., 3) grid coordinates into 63-bit Morton keys.

    Bit k of axis a lands at output bit 3k + a, x being the least
    significant axis.
    """
    g = np.asarray(grid, dtype=np.int64)
    single = g.ndim == 1
    g = np.atleast_2d(g)
    if g.shape[-1] != 3:
        raise ValueError("grid coordinates must have 3 components")
    if g.size and (g.min() < 0 or g.max() > GRID_MAX):
        raise ValueError(f"grid coordinate out of range [0, {GRID_MAX}]")
    code = (
        _split21(g[:, 0])
        | (_split21(g[:, 1]) << np.uint64(1))
        | (_split21(g[:, 2]) << np.uint64(2))
    )
    return code[0] if single else code


def morton_decode(code) -> np.ndarray:
    """Inverse of morton_encode; returns (..., 3) grid coordinates."""
    c = np.asarray(code, dtype=np.uint64)
    single = c.ndim == 0
    c = np.atleast_1d(c)
    out = np.stack(
        [
            _compact21(c),
            _compact21(c >> np.uint64(1)),
            _compact21(c >> np.uint64(2)),
        ],
        axis=-1,
    ).astype(np.int64)
    return out[0] if single else out


def position_grid(positions: np.ndarray, aabb=None):
    """Map positions onto the Morton grid over the bounding box.

    Returns (grid coords, aabb). Degenerate axes map to coordinate 0.
    """
    pos = np.asarray(positions, dtype=np.float64)
    if pos.size and not np.all(np.isfinite(pos)):
        raise ValueError("positions must be finite")
    if pos.shape[0] == 0:
        return np.zeros((0, 3), dtype=np.int64), np.zeros((2, 3))
    if aabb is None:
        aabb = np.stack([pos.min(axis=0), pos.max(axis=0)])
    extent = aabb[1] - aabb[0]
    scale = np.where(extent > 0, GRID_MAX / np.where(extent > 0, extent, 1.0), 0.0)
    grid = np.floor((pos - aabb[0]) * scale).astype(np.int64)
    return np.clip(grid, 0, GRID_MAX), aabb


def morton_sort(positions: np.ndarray) -> np.ndarray:
    """Stable permutation ordering positions along the Z-order curve."""
    grid, _ = position_grid(positions)
    keys = morton_encode(grid)
    return np.argsort(keys, kind="stable")


def entropy_bits(codes) -> float:
    """First-order entropy of the empirical symbol distribution, bits/symbol."""
    c = np.asarray(codes).reshape(-1)
    if c.size == 0:
        raise ValueError("entropy of empty code array")
    _, counts = np.unique(c, return_counts=True)
    p = counts / c.size
    return float(-np.sum(p * np.log2(p)))


def _code_width(bits: int) -> int:
    return (bits + 7) // 8


def _serialize_codes(codes: np.ndarray, qs: QuantizerState) -> bytes:
    width = _code_width(qs.bits)
    flat = np.ascontiguousarray(codes, dtype=np.int64).reshape(-1)
    masked = flat.astype(np.uint64) & np.uint64((1 << (8 * width)) - 1)
    le_bytes = masked[:, None].view(np.uint8).reshape(-1, 8)[:, :width]
    return le_bytes.tobytes()


def _parse_codes(data: bytes, count: int, arity: int, qs: QuantizerState) -> np.ndarray:
    width = _code_width(qs.bits)
    n = count * arity
    if len(data) != n * width:
        raise ContainerCorruptionError(
            f"{qs.attribute}: expected {n * width} code bytes, got {len(data)}"
        )
    raw = np.frombuffer(data, dtype=np.uint8).reshape(n, width)
    padded = np.zeros((n, 8), dtype=np.uint8)
    padded[:, :width] = raw
    vals = padded.view("<u8").reshape(n).astype(np.int64)
    if qs.signed and width < 8:
        half = np.int64(1) << np.int64(8 * width - 1)
        vals = np.where(vals >= half, vals - (half << np.int64(1)), vals)
    if n and (vals.min() < -qs.q_n or vals.max() > qs.q_p):
        raise ContainerCorruptionError(
            f"{qs.attribute}: code outside [-{qs.q_n}, {qs.q_p}]"
        )
    return vals.reshape((count,) if arity == 1 else (count, arity))


def encode(qscene: QuantizedScene, order: str = "morton",
           level: int = DEFAULT_DEFLATE_LEVEL) -> bytes:
    """Serialize a quantized scene into container bytes.

    order="morton" resorts the Gaussians along the Z-order curve of their
    dequantized positions before serialization; order="original" keeps the
    stored order.
    """
    if order not in ("morton", "original"):
        raise ValueError(f"unknown order {order!r}")
    if not 0 <= level <= 9:
        raise ValueError("deflate level must be in [0, 9]")
    positions = dequantize(qscene.codes["position"], qscene.states["position"])
    _, aabb = position_grid(positions)
    if order == "morton":
        perm = morton_sort(positions)
        scene = qscene.take(perm)
    else:
        scene = qscene
    flags = (1 if order == "morton" else 0) | (level << 1)
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HH", VERSION, flags)
    out += struct.pack("<Q", qscene.count)
    out += struct.pack("<6d", *aabb[0], *aabb[1])
    for name in ATTRIBUTE_NAMES:
        qs = scene.states[name]
        raw = _serialize_codes(scene.codes[name], qs)
        comp = zlib.compressobj(level, zlib.DEFLATED, -15)
        stream = comp.compress(raw) + comp.flush()
        out += struct.pack(
            "<BBBB", ATTRIBUTE_IDS[name], qs.bits, 1 if qs.signed else 0, 0
        )
        out += struct.pack("<dQQ", qs.step, len(raw), len(stream))
        out += stream
    payload = bytes(out)
    return payload + struct.pack("<I", zlib.crc32(payload))


def decode(data: bytes) -> QuantizedScene:
    """Parse container bytes back into a QuantizedScene.

    The Gaussian order is the stored order; a Morton-sorted container is not
    unsorted.
    """
    if len(data) < 8:
        raise ContainerFormatError("container shorter than magic and version")
    if data[:4] != MAGIC:
        raise ContainerFormatError(f"bad magic {data[:4]!r}")
    version, flags = struct.unpack_from("<HH", data, 4)
    if version != VERSION:
        raise ContainerFormatError(f"unsupported version {version}")
    if len(data) < 12:
        raise ContainerCorruptionError("container truncated before checksum")
    payload, (crc,) = data[:-4], struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(payload) != crc:
        raise ContainerCorruptionError("checksum mismatch")
    pos = 8
    if len(payload) < pos + 8 + 48:
        raise ContainerCorruptionError("container truncated in header")
    (count,) = struct.unpack_from("<Q", payload, pos)
    pos += 8
    aabb = np.array(struct.unpack_from("<6d", payload, pos)).reshape(2, 3)
    pos += 48
    codes = {}
    states = {}
    for expected_id, name in enumerate(ATTRIBUTE_NAMES):
        if len(payload) < pos + 4 + 24:
            raise ContainerCorruptionError(f"container truncated before {name} record")
        attr_id, bits, signed, reserved = struct.unpack_from("<BBBB", payload, pos)
        pos += 4
        if attr_id != expected_id:
            raise ContainerCorruptionError(
                f"attribute record {expected_id} has id {attr_id}"
            )
        if reserved != 0 or signed not in (0, 1) or not 2 <= bits <= 32:
            raise ContainerCorruptionError(f"{name}: invalid quantizer metadata")
        step, raw_len, comp_len = struct.unpack_from("<dQQ", payload, pos)
        pos += 24
        if not (np.isfinite(step) and step > 0):
            raise ContainerCorruptionError(f"{name}: invalid step size {step}")
        qs = QuantizerState(attribute=name, bits=bits, signed=bool(signed), step=step)
        expected_raw = count * ATTRIBUTE_ARITY[name] * _code_width(bits)
        if raw_len != expected_raw:
            raise ContainerCorruptionError(
                f"{name}: raw length {raw_len}, expected {expected_raw}"
            )
        if len(payload) < pos + comp_len:
            raise ContainerCorruptionError(f"{name}: stream truncated")
        stream = payload[pos:pos + comp_len]
        pos += comp_len
        try:
            decomp = zlib.decompressobj(-15)
            raw = decomp.decompress(stream)
            raw += decomp.flush()
        except zlib.error as exc:
            raise ContainerCorruptionError(f"{name}: deflate error: {exc}") from None
        if not decomp.eof or decomp.unused_data:
            raise ContainerCorruptionError(f"{name}: malformed deflate stream")
        codes[name] = _parse_codes(raw, count, ATTRIBUTE_ARITY[name], qs)
        states[name] = qs
    if pos != len(payload):
        raise ContainerCorruptionError(f"{len(payload) - pos} trailing bytes")
    return QuantizedScene(
        codes=codes,
        states=states,
        count=count,
        morton_ordered=bool(flags & 1),
        aabb=aabb,
    )
