"""Core value types and I/O for dynamic light fields.

A dynamic light field is a 5-D volume of ray intensities L[t, v, u, y, x]:
viewpoint (u, v) on the aperture grid, pixel (x, y) on the sensor, and
time unit t inside a single exposure.  All signal data is float32; arrays
are frozen after construction so values can be shared freely.

The flat memory layout is row-major over (t, v, u, y, x) with x fastest,
so a fixed-t slice is one contiguous multi-view image block.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DTYPE = np.float32

LF5D_MAGIC = b"LF5D"
LF5D_VERSION = 1

# spatial period of the pixel-wise exposure patterns; also the
# space-to-depth block size
TILE = 8


def derive_seed(root: int, *names) -> int:
    """Derive a named substream seed from the single 64-bit run seed.

    All randomness in a run flows from one root seed through named
    substreams (e.g. ``derive_seed(seed, "noise", step, slot)``), so any
    stage can be re-derived in isolation and checkpoints never need to
    carry generator state.
    """
    h = hashlib.sha256()
    h.update(int(root).to_bytes(8, "little", signed=False))
    for name in names:
        h.update(b"/")
        h.update(str(name).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


class LF5DError(Exception):
    """Base error for light-field file handling."""

    code = "lf5d-error"


class BadMagicError(LF5DError):
    code = "bad-magic"


class UnsupportedVersionError(LF5DError):
    code = "unsupported-version"


class DimensionMismatchError(LF5DError):
    code = "dimension-mismatch"


class TruncatedPayloadError(LF5DError):
    code = "truncated-payload"


@dataclass(frozen=True)
class Dims:
    """Extent of each light-field axis.

    n_u, n_v are viewpoint counts, n_x, n_y pixel counts, n_t the number
    of time units inside one exposure.  Defaults follow the reference
    camera configuration (5x5 viewpoints, 4 time units).
    """

    n_u: int = 5
    n_v: int = 5
    n_x: int = 64
    n_y: int = 64
    n_t: int = 4

    def __post_init__(self):
        for name in ("n_u", "n_v", "n_x", "n_y", "n_t"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    @property
    def n_views(self) -> int:
        return self.n_u * self.n_v

    @property
    def n_elements(self) -> int:
        return self.n_t * self.n_v * self.n_u * self.n_y * self.n_x

    @property
    def shape(self) -> tuple[int, int, int, int, int]:
        """Array shape in storage order (t, v, u, y, x)."""
        return (self.n_t, self.n_v, self.n_u, self.n_y, self.n_x)

    def require_tile_divisible(self):
        """Pixel counts must be multiples of the 8x8 pattern period."""
        if self.n_x % TILE or self.n_y % TILE:
            raise ValueError(
                f"n_x and n_y must be divisible by {TILE} when an exposure "
                f"pattern is attached, got {self.n_x}x{self.n_y}"
            )


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=DTYPE)
    a.flags.writeable = False
    return a


class LightField5D:
    """Immutable 5-D intensity volume with shape (n_t, n_v, n_u, n_y, n_x)."""

    __slots__ = ("dims", "data", "out_of_range")

    def __init__(self, dims: Dims, data: np.ndarray, out_of_range: int = 0):
        data = np.asarray(data)
        if data.shape != dims.shape:
            raise DimensionMismatchError(
                f"data shape {data.shape} does not match dims {dims.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError("light-field values must be finite")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", _freeze(data))
        # count of values outside [0, 1] seen by the file reader; generator
        # output is clamped so this is normally 0
        object.__setattr__(self, "out_of_range", int(out_of_range))

    def __setattr__(self, name, value):
        raise AttributeError("LightField5D is immutable")

    @classmethod
    def zeros(cls, dims: Dims) -> "LightField5D":
        return cls(dims, np.zeros(dims.shape, dtype=DTYPE))

    @classmethod
    def from_array(cls, data: np.ndarray) -> "LightField5D":
        data = np.asarray(data)
        if data.ndim != 5:
            raise DimensionMismatchError(f"expected 5-D array, got {data.ndim}-D")
        n_t, n_v, n_u, n_y, n_x = data.shape
        return cls(Dims(n_u=n_u, n_v=n_v, n_x=n_x, n_y=n_y, n_t=n_t), data)

    def view(self, t: int, v: int, u: int) -> np.ndarray:
        return self.data[t, v, u]


class CodedImage:
    """Immutable 2-D sensor measurement, shape (n_y, n_x)."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        data = np.asarray(data)
        if data.ndim != 2:
            raise DimensionMismatchError(f"expected 2-D image, got {data.ndim}-D")
        if not np.all(np.isfinite(data)):
            raise ValueError("coded-image values must be finite")
        object.__setattr__(self, "data", _freeze(data))

    def __setattr__(self, name, value):
        raise AttributeError("CodedImage is immutable")

    @property
    def n_y(self) -> int:
        return self.data.shape[0]

    @property
    def n_x(self) -> int:
        return self.data.shape[1]


class PackedImage:
    """Space-to-depth packing of a coded image: (64, n_y/8, n_x/8).

    Channel c holds the pixels at spatial phase (y mod 8, x mod 8) with
    c = 8*(y mod 8) + (x mod 8).
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        data = np.asarray(data)
        if data.ndim != 3 or data.shape[0] != TILE * TILE:
            raise DimensionMismatchError(
                f"expected ({TILE * TILE}, n_y/{TILE}, n_x/{TILE}) tensor, got {data.shape}"
            )
        object.__setattr__(self, "data", _freeze(data))

    def __setattr__(self, name, value):
        raise AttributeError("PackedImage is immutable")


def pack_space_to_depth(img: CodedImage) -> PackedImage:
    """Rearrange every 8x8 pixel block into 64 channels.

    PackedImage[c, y', x'] = img[8*y' + c//8, 8*x' + c%8].
    """
    h, w = img.data.shape
    if h % TILE or w % TILE:
        raise DimensionMismatchError(
            f"image dims {h}x{w} not divisible by {TILE}"
        )
    blocks = img.data.reshape(h // TILE, TILE, w // TILE, TILE)
    packed = blocks.transpose(1, 3, 0, 2).reshape(TILE * TILE, h // TILE, w // TILE)
    return PackedImage(packed)


def unpack_depth_to_space(p: PackedImage) -> CodedImage:
    """Exact inverse of :func:`pack_space_to_depth`."""
    c, hb, wb = p.data.shape
    blocks = p.data.reshape(TILE, TILE, hb, wb).transpose(2, 0, 3, 1)
    return CodedImage(blocks.reshape(hb * TILE, wb * TILE))


def extract_epi(lf: LightField5D, y: int, v: int, t: int) -> np.ndarray:
    """Horizontal epipolar-plane image: EPI[u, x] = L[t, v, u, y, x].

    Scene depth appears as the slope of lines in the (u, x) plane.
    """
    d = lf.dims
    if not (0 <= y < d.n_y and 0 <= v < d.n_v and 0 <= t < d.n_t):
        raise IndexError(f"(y={y}, v={v}, t={t}) out of range for dims {d}")
    return np.array(lf.data[t, v, :, y, :])


# ---------------------------------------------------------------------------
# LF5D binary format
#
#   magic "LF5D" | u16 version | u32 n_u, n_v, n_x, n_y, n_t | f32 payload
#
# little-endian throughout; payload in storage order (t, v, u, y, x).
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sH5I")


def write_lf5d(lf: LightField5D, path) -> None:
    d = lf.dims
    header = _HEADER.pack(LF5D_MAGIC, LF5D_VERSION, d.n_u, d.n_v, d.n_x, d.n_y, d.n_t)
    payload = np.ascontiguousarray(lf.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def read_lf5d(path) -> LightField5D:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: file shorter than header")
    magic, version, n_u, n_v, n_x, n_y, n_t = _HEADER.unpack_from(raw)
    if magic != LF5D_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != LF5D_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    if min(n_u, n_v, n_x, n_y, n_t) < 1:
        raise DimensionMismatchError(f"{path}: zero-sized dimension in header")
    dims = Dims(n_u=n_u, n_v=n_v, n_x=n_x, n_y=n_y, n_t=n_t)
    expected = dims.n_elements * 4
    body = raw[_HEADER.size:]
    if len(body) < expected:
        raise TruncatedPayloadError(
            f"{path}: payload holds {len(body)} bytes, header promises {expected}"
        )
    if len(body) > expected:
        raise DimensionMismatchError(
            f"{path}: payload holds {len(body)} bytes, header promises {expected}"
        )
    data = np.frombuffer(body, dtype="<f4").reshape(dims.shape)
    oob = int(np.count_nonzero((data < 0.0) | (data > 1.0)))
    if oob:
        log.warning("%s: %d values outside [0, 1]", path, oob)
    return LightField5D(dims, data, out_of_range=oob)


def write_pgm(image: np.ndarray, path) -> None:
    """Export a single view as binary 8-bit PGM; values clipped to [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise DimensionMismatchError(f"expected 2-D image, got {image.ndim}-D")
    quant = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = quant.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quant.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary 8-bit PGM back to floats in [0, 1]."""
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P5":
        raise BadMagicError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise UnsupportedVersionError(f"{path}: only maxval 255 supported")
    pos += 1  # single whitespace after maxval
    pixels = np.frombuffer(raw, dtype=np.uint8, count=h * w, offset=pos)
    if pixels.size < h * w:
        raise TruncatedPayloadError(f"{path}: pixel payload truncated")
    return (pixels.reshape(h, w).astype(DTYPE)) / DTYPE(255.0)
