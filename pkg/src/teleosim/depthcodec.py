"""Lossless 16-bit depth frame codec and point-cloud deprojection.

Every frame is self-contained (intra-only).  Encoding pipeline:

  1. previous-pixel delta within each row; the first pixel of a row is
     predicted from the first pixel of the row above (0 for the top row),
  2. zigzag mapping of the signed deltas to unsigned integers,
  3. tokenized payload: runs of zeros (dominant for invalid spans and flat
     regions) and fixed-width bit-packed blocks of up to 128 values.

Container layout (little-endian):

  magic u32 'TDZ1' | version u16 | width u16 | height u16 | reserved u16 |
  depth_scale f64 | frame_id u32 | timestamp_us u64 | payload_len u32 |
  crc32 u32 | payload

Payload tokens:

  0x00  zero run      : u32 count
  0x01  packed block  : u8 bit width (1..17), u8 count-1, ceil(count*width/8) bytes
                        (zigzagged 16-bit deltas span up to 17 bits)
  0x03  raw frame     : width*height u16 pixels (whole-frame fallback that
                        bounds worst-case expansion)

Corruption is caught by the CRC over the payload plus structural checks;
a damaged frame is always rejected, never silently wrong.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .geometry import Transform

MAGIC = 0x315A4454  # 'TDZ1'
VERSION = 1
_HEADER = struct.Struct("<IHHHHdIQII")
HEADER_SIZE = _HEADER.size

_TOK_ZERO_RUN = 0x00
_TOK_BLOCK = 0x01
_TOK_RAW_FRAME = 0x03

_BLOCK = 128
_MIN_RUN = 8


class FrameRejected(ValueError):
    """Decode failure: corrupted, truncated, or structurally invalid frame."""


@dataclass
class DepthFrame:
    width: int
    height: int
    depth_scale: float
    pixels: np.ndarray  # uint16, shape (height, width); 0 marks invalid

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.uint16)
        if self.pixels.shape != (self.height, self.width):
            raise ValueError("pixel buffer shape mismatch")
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be positive")


@dataclass
class CodedDepthFrame:
    width: int
    height: int
    depth_scale: float
    frame_id: int
    timestamp_us: int
    payload: bytes
    crc: int

    def to_bytes(self) -> bytes:
        return (
            _HEADER.pack(
                MAGIC,
                VERSION,
                self.width,
                self.height,
                0,
                self.depth_scale,
                self.frame_id,
                self.timestamp_us,
                len(self.payload),
                self.crc,
            )
            + self.payload
        )

    @staticmethod
    def from_bytes(raw: bytes) -> "CodedDepthFrame":
        if len(raw) < HEADER_SIZE:
            raise FrameRejected("short header")
        magic, ver, w, h, _, scale, fid, ts, plen, crc = _HEADER.unpack_from(raw)
        if magic != MAGIC or ver != VERSION:
            raise FrameRejected("bad magic/version")
        payload = raw[HEADER_SIZE:]
        if len(payload) != plen:
            raise FrameRejected("truncated payload")
        return CodedDepthFrame(w, h, scale, fid, ts, payload, crc)


def _delta_zigzag(pixels: np.ndarray) -> np.ndarray:
    p = pixels.astype(np.int32)
    d = np.empty_like(p)
    d[:, 1:] = p[:, 1:] - p[:, :-1]
    d[0, 0] = p[0, 0]
    d[1:, 0] = p[1:, 0] - p[:-1, 0]
    dz = d.ravel()
    return ((dz << 1) ^ (dz >> 31)).astype(np.uint32)


def _unzigzag_undelta(z: np.ndarray, height: int, width: int) -> np.ndarray:
    d = (z >> 1).astype(np.int32) ^ -(z & 1).astype(np.int32)
    d = d.reshape(height, width)
    rec = np.cumsum(d, axis=1, dtype=np.int64)
    first = np.cumsum(d[:, 0], dtype=np.int64)
    rec += (first - d[:, 0])[:, None]
    if rec.min() < 0 or rec.max() > 0xFFFF:
        raise FrameRejected("reconstructed pixel out of range")
    return rec.astype(np.uint16)


def _pack_block(values: np.ndarray, width_bits: int) -> bytes:
    shifts = np.arange(width_bits - 1, -1, -1, dtype=np.uint32)
    bits = ((values[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    return np.packbits(bits.ravel()).tobytes()


def _unpack_block(data: bytes, count: int, width_bits: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    need = count * width_bits
    if bits.size < need:
        raise FrameRejected("packed block underrun")
    bits = bits[:need].reshape(count, width_bits).astype(np.uint32)
    weights = 1 << np.arange(width_bits - 1, -1, -1, dtype=np.uint32)
    return bits @ weights


def encode_depth(f: DepthFrame, frame_id: int = 0, timestamp_us: int = 0) -> CodedDepthFrame:
    z = _delta_zigzag(f.pixels)
    n = z.size
    # long zero runs get dedicated tokens; everything between them is literal
    mask = (z == 0).astype(np.int8)
    edges = np.flatnonzero(np.diff(np.concatenate([[0], mask, [0]])))
    run_starts, run_ends = edges[::2], edges[1::2]
    keep = (run_ends - run_starts) >= _MIN_RUN
    run_starts, run_ends = run_starts[keep], run_ends[keep]
    out = bytearray()
    pos = 0
    for rs, re in zip(np.append(run_starts, n), np.append(run_ends, n)):
        # literal span [pos, rs) chopped into fixed-width packed blocks
        while pos < rs:
            block = z[pos : min(rs, pos + _BLOCK)]
            width_bits = max(1, int(block.max()).bit_length())
            out.append(_TOK_BLOCK)
            out.append(width_bits)
            out.append(len(block) - 1)
            out += _pack_block(block, width_bits)
            pos += len(block)
        if re > rs:
            out.append(_TOK_ZERO_RUN)
            out += struct.pack("<I", int(re - rs))
            pos = re
    if len(out) > 2 * n + 1:
        # pathological content (e.g. uniform random); raw frame bounds expansion
        out = bytearray([_TOK_RAW_FRAME]) + bytearray(f.pixels.astype("<u2").tobytes())
    payload = bytes(out)
    return CodedDepthFrame(
        width=f.width,
        height=f.height,
        depth_scale=f.depth_scale,
        frame_id=frame_id,
        timestamp_us=timestamp_us,
        payload=payload,
        crc=zlib.crc32(payload),
    )


def decode_depth(c: CodedDepthFrame) -> DepthFrame:
    if zlib.crc32(c.payload) != c.crc:
        raise FrameRejected("payload checksum mismatch")
    n = c.width * c.height
    if c.payload and c.payload[0] == _TOK_RAW_FRAME:
        raw = c.payload[1:]
        if len(raw) != 2 * n:
            raise FrameRejected("raw frame size mismatch")
        pixels = np.frombuffer(raw, dtype="<u2").reshape(c.height, c.width)
        return DepthFrame(c.width, c.height, c.depth_scale, pixels.astype(np.uint16))
    z = np.empty(n, dtype=np.uint32)
    pos = 0
    i = 0
    payload = c.payload
    while pos < len(payload):
        tok = payload[pos]
        pos += 1
        if tok == _TOK_ZERO_RUN:
            if pos + 4 > len(payload):
                raise FrameRejected("truncated run token")
            (count,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            if i + count > n:
                raise FrameRejected("run overflows frame")
            z[i : i + count] = 0
            i += count
        elif tok == _TOK_BLOCK:
            if pos + 2 > len(payload):
                raise FrameRejected("truncated block header")
            width_bits = payload[pos]
            count = payload[pos + 1] + 1
            pos += 2
            if not (1 <= width_bits <= 17):
                raise FrameRejected("invalid block bit width")
            nbytes = (count * width_bits + 7) // 8
            if pos + nbytes > len(payload):
                raise FrameRejected("truncated block data")
            if i + count > n:
                raise FrameRejected("block overflows frame")
            z[i : i + count] = _unpack_block(payload[pos : pos + nbytes], count, width_bits)
            pos += nbytes
            i += count
        else:
            raise FrameRejected(f"unknown token {tok:#x}")
    if i != n:
        raise FrameRejected("payload does not cover frame")
    return DepthFrame(c.width, c.height, c.depth_scale, _unzigzag_undelta(z, c.height, c.width))


# ---------------------------------------------------------------------------
# deprojection


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")


def deproject(
    f: DepthFrame,
    k: CameraIntrinsics,
    anchor: Transform | None = None,
    stride: int = 1,
) -> np.ndarray:
    """Valid pixels to 3-D points (meters); ``anchor`` places the cloud."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    px = f.pixels[::stride, ::stride]
    vs, us = np.nonzero(px)
    depth = px[vs, us].astype(float) * f.depth_scale
    u = us * stride
    v = vs * stride
    pts = np.column_stack(
        [depth * (u - k.cx) / k.fx, depth * (v - k.cy) / k.fy, depth]
    )
    if anchor is not None:
        pts = pts @ anchor.rotation_matrix().T + anchor.p
    return pts


# ---------------------------------------------------------------------------
# synthetic scenes and the opaque color stream model


def synthetic_tabletop(
    width: int = 848,
    height: int = 480,
    plane_depth_units: int = 2000,
    boxes: int = 3,
    noise_sigma: float = 2.0,
    invalid_border: int = 8,
    seed: int = 0,
) -> DepthFrame:
    """Plane-plus-boxes depth render with Gaussian sensor noise (units of 1 mm)."""
    rng = np.random.default_rng(seed)
    img = np.full((height, width), float(plane_depth_units))
    for _ in range(boxes):
        w = int(rng.integers(width // 10, width // 3))
        h = int(rng.integers(height // 10, height // 3))
        x = int(rng.integers(0, width - w))
        y = int(rng.integers(0, height - h))
        img[y : y + h, x : x + w] -= float(rng.integers(100, 600))
    if noise_sigma > 0:
        img += rng.normal(0.0, noise_sigma, size=img.shape)
    img = np.clip(np.rint(img), 1, 0xFFFF)
    if invalid_border > 0:
        img[:invalid_border, :] = 0
        img[-invalid_border:, :] = 0
        img[:, :invalid_border] = 0
        img[:, -invalid_border:] = 0
    return DepthFrame(width, height, 1e-3, img.astype(np.uint16))


FRAME_FAMILIES = ("constant", "gradient", "scene", "random", "noise")


def frame_family(name: str, width: int, height: int, seed: int = 0) -> DepthFrame:
    """Test frame generator used by the losslessness suites."""
    rng = np.random.default_rng(seed)
    if name == "constant":
        val = int(rng.integers(0, 0xFFFF))
        px = np.full((height, width), val, dtype=np.uint16)
    elif name == "gradient":
        gx = np.linspace(0, int(rng.integers(200, 40000)), width)
        gy = np.linspace(0, int(rng.integers(200, 20000)), height)
        px = np.clip(gx[None, :] + gy[:, None], 0, 0xFFFF).astype(np.uint16)
    elif name == "scene":
        return synthetic_tabletop(width, height, seed=seed)
    elif name == "random":
        px = rng.integers(0, 0x10000, size=(height, width), dtype=np.uint16)
    elif name == "noise":
        base = 1500 + rng.normal(0, 3.0, size=(height, width))
        px = np.clip(np.rint(base), 0, 0xFFFF).astype(np.uint16)
        px[rng.random(size=px.shape) < 0.02] = 0  # sensor dropouts
    else:
        raise ValueError(f"unknown frame family {name!r}")
    return DepthFrame(width, height, 1e-3, px)


@dataclass
class ColorStreamConfig:
    bitrate_bps: float = 5e6
    fps: float = 30.0
    intra_period: int = 30
    intra_ratio: float = 4.0
    seed: int = 0


def color_payload_model(frame_index: int, config: ColorStreamConfig) -> bytes:
    """Opaque stand-in for a hardware-encoded color stream.

    Payload sizes average bitrate/fps/8 with periodically larger intra
    frames; content is seeded noise and is never decoded.
    """
    if config.bitrate_bps <= 0:
        return b""
    mean = config.bitrate_bps / 8.0 / config.fps
    p = config.intra_period
    base = mean * p / (p - 1 + config.intra_ratio)
    size = base * (config.intra_ratio if frame_index % p == 0 else 1.0)
    nbytes = max(1, int(round(size)))
    rng = np.random.default_rng((config.seed << 32) ^ frame_index)
    return rng.integers(0, 256, size=nbytes, dtype=np.uint8).tobytes()
