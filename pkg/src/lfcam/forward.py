"""Measurement models for coded light-field capture.

An ordinary camera integrates the 5-D volume over viewpoints and time:

    I[y,x] = sum_{t,v,u} L[t,v,u,y,x]

The coded camera modulates each ray by an aperture transmittance a[t,v,u]
in [0,1] and a per-pixel binary exposure p[t,y,x] in {0,1} before the sum.
Exposure patterns are hardware-constrained to be 8x8-periodic and
row-column separable.  A free-form 5-D mask m[t,v,u, y%8, x%8] generalizes
both codes and serves as the software-only upper bound.

Every operation here is a pure function of its inputs; noise injection
takes an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DTYPE, TILE, CodedImage, Dims, LightField5D


def steep_sigmoid(x: np.ndarray, tau: float) -> np.ndarray:
    """Logistic curve 1 / (1 + exp(-tau * x)); sharpens toward a step as tau grows."""
    return 1.0 / (1.0 + np.exp(-tau * np.asarray(x)))


def binarize(logits: np.ndarray) -> np.ndarray:
    """Hard threshold used at deployment: strictly positive logits map to 1.

    Exactly-zero logits map to 0 so the tie-break is deterministic.
    """
    return (np.asarray(logits) > 0).astype(DTYPE)


class AperturePattern:
    """Per-time-unit viewpoint transmittance map, shape (n_t, n_v, n_u), values in [0, 1]."""

    __slots__ = ("values",)

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=DTYPE)
        if values.ndim != 3:
            raise ValueError(f"aperture pattern must be (n_t, n_v, n_u), got shape {values.shape}")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("aperture transmittance must lie in [0, 1]")
        self.values = values
        self.values.flags.writeable = False

    @classmethod
    def uniform(cls, n_t: int, n_v: int, n_u: int, value: float = 1.0) -> "AperturePattern":
        return cls(np.full((n_t, n_v, n_u), value, dtype=DTYPE))

    @property
    def n_t(self) -> int:
        return self.values.shape[0]


class ExposurePattern:
    """Row-column separable binary exposure code.

    Parameterized by row logits r[t, j] and column logits c[t, i] with
    j, i in [0, 8).  The realized pattern

        p[t, y, x] = bin(r[t, y % 8]) * bin(c[t, x % 8])

    is binary, 8x8-periodic, and every 8x8 tile is the outer product of a
    row indicator and a column indicator.  ``mode="train"`` substitutes a
    steep-sigmoid relaxation so gradients can reach the logits.
    """

    __slots__ = ("row_logits", "col_logits")

    def __init__(self, row_logits: np.ndarray, col_logits: np.ndarray):
        row_logits = np.asarray(row_logits, dtype=DTYPE)
        col_logits = np.asarray(col_logits, dtype=DTYPE)
        if row_logits.ndim != 2 or row_logits.shape[1] != TILE:
            raise ValueError(f"row logits must be (n_t, {TILE}), got {row_logits.shape}")
        if col_logits.shape != row_logits.shape:
            raise ValueError("row and column logits must share shape (n_t, 8)")
        if not (np.all(np.isfinite(row_logits)) and np.all(np.isfinite(col_logits))):
            raise ValueError("exposure logits must be finite")
        self.row_logits = row_logits
        self.col_logits = col_logits

    @classmethod
    def all_on(cls, n_t: int) -> "ExposurePattern":
        ones = np.ones((n_t, TILE), dtype=DTYPE)
        return cls(ones, ones)

    @classmethod
    def from_indicators(cls, rows: np.ndarray, cols: np.ndarray) -> "ExposurePattern":
        """Build from 0/1 indicator arrays of shape (n_t, 8)."""
        rows = np.asarray(rows, dtype=DTYPE)
        cols = np.asarray(cols, dtype=DTYPE)
        return cls(np.where(rows > 0.5, 1.0, -1.0), np.where(cols > 0.5, 1.0, -1.0))

    @property
    def n_t(self) -> int:
        return self.row_logits.shape[0]

    def tile(self, mode: str = "binary", tau: float = 1.0) -> np.ndarray:
        """One 8x8 period per time unit, shape (n_t, 8, 8)."""
        if mode == "binary":
            r = binarize(self.row_logits)
            c = binarize(self.col_logits)
        elif mode == "train":
            r = steep_sigmoid(self.row_logits, tau).astype(DTYPE)
            c = steep_sigmoid(self.col_logits, tau).astype(DTYPE)
        else:
            raise ValueError(f"unknown realization mode {mode!r}")
        return r[:, :, None] * c[:, None, :]

    def realize(self, n_y: int, n_x: int, mode: str = "binary", tau: float = 1.0) -> np.ndarray:
        """Full-sensor pattern p[t, y, x] obtained by tiling the 8x8 period."""
        if n_y % TILE or n_x % TILE:
            raise ValueError(f"sensor dims {n_y}x{n_x} not divisible by {TILE}")
        t = self.tile(mode=mode, tau=tau)
        return np.tile(t, (1, n_y // TILE, n_x // TILE))


class Free5DMask:
    """Free-form modulation m[t, v, u, j, i] in [0, 1], 8x8-periodic in space.

    Spatial indices are the tile phase (j, i) = (y % 8, x % 8).  This mask is
    a software-only construct with no hardware realization; it upper-bounds
    what the factorized aperture + exposure codes can express.
    """

    __slots__ = ("values",)

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=DTYPE)
        if values.ndim != 5 or values.shape[3:] != (TILE, TILE):
            raise ValueError(
                f"mask must be (n_t, n_v, n_u, {TILE}, {TILE}), got shape {values.shape}"
            )
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("mask values must lie in [0, 1]")
        self.values = values
        self.values.flags.writeable = False

    @classmethod
    def from_factorized(cls, a: AperturePattern, tile: np.ndarray) -> "Free5DMask":
        """m[t,v,u,j,i] = a[t,v,u] * tile[t,j,i] — reproduces the two-stage code."""
        tile = np.asarray(tile, dtype=DTYPE)
        return cls(a.values[:, :, :, None, None] * tile[:, None, None, :, :])

    def expand(self, n_y: int, n_x: int) -> np.ndarray:
        """Materialize to (n_t, n_v, n_u, n_y, n_x) by spatial tiling."""
        jj = np.arange(n_y) % TILE
        ii = np.arange(n_x) % TILE
        return self.values[:, :, :, jj[:, None], ii[None, :]]


@dataclass(frozen=True)
class RegionTiming:
    """Staggered exposure of the four vertical sensor regions.

    The sensor is split into ``n_regions`` equal-height horizontal bands.
    Region k starts exposing ``offsets[k]`` time units after region 0 and
    therefore sees the cyclic pattern schedule rotated by that offset:
    pattern index pi_k(t) = (t + offsets[k]) % n_t.
    """

    n_regions: int = 4
    offsets: tuple = (0, 1, 2, 3)

    def __post_init__(self):
        if len(self.offsets) != self.n_regions:
            raise ValueError("one offset per region required")
        if any(o < 0 for o in self.offsets):
            raise ValueError("offsets must be non-negative")

    def permutation(self, k: int, n_t: int) -> np.ndarray:
        """Pattern index used at local exposure slot t of region k."""
        return (np.arange(n_t) + self.offsets[k]) % n_t

    @property
    def max_offset(self) -> int:
        return max(self.offsets)


# ---------------------------------------------------------------------------
# capture operators
# ---------------------------------------------------------------------------


def _realized_exposure(p, n_y: int, n_x: int) -> np.ndarray:
    if isinstance(p, ExposurePattern):
        return p.realize(n_y, n_x, mode="binary")
    p = np.asarray(p, dtype=DTYPE)
    if p.ndim != 3 or p.shape[1:] != (n_y, n_x):
        raise ValueError(f"exposure array must be (n_t, {n_y}, {n_x}), got {p.shape}")
    return p


def _check_aperture(lf: LightField5D, a: AperturePattern):
    d = lf.dims
    if a.values.shape != (d.n_t, d.n_v, d.n_u):
        raise ValueError(
            f"aperture shape {a.values.shape} does not match dims ({d.n_t}, {d.n_v}, {d.n_u})"
        )


def ordinary_capture(lf: LightField5D) -> CodedImage:
    """Uncoded camera: plain sum of all rays per pixel."""
    return CodedImage(lf.data.sum(axis=(0, 1, 2)))


def aperture_code(lf: LightField5D, a: AperturePattern) -> np.ndarray:
    """First coding stage: J[t,y,x] = sum_{v,u} a[t,v,u] * L[t,v,u,y,x]."""
    _check_aperture(lf, a)
    return np.einsum("tvu,tvuyx->tyx", a.values, lf.data)


def exposure_code(J: np.ndarray, p) -> CodedImage:
    """Second coding stage: I[y,x] = sum_t p[t,y,x] * J[t,y,x]."""
    J = np.asarray(J)
    if J.ndim != 3:
        raise ValueError(f"expected (n_t, n_y, n_x) tensor, got shape {J.shape}")
    n_t, n_y, n_x = J.shape
    pr = _realized_exposure(p, n_y, n_x)
    if pr.shape[0] != n_t:
        raise ValueError(f"pattern has {pr.shape[0]} time units, tensor has {n_t}")
    return CodedImage((pr * J).sum(axis=0))


def coded_capture(lf: LightField5D, a: AperturePattern, p) -> CodedImage:
    """Fused two-stage capture: I[y,x] = sum_{t,v,u} a[t,v,u] p[t,y,x] L[t,v,u,y,x].

    Single-kernel evaluation of the joint code; agrees with
    exposure_code(aperture_code(lf, a), p) to float32 round-off.
    """
    _check_aperture(lf, a)
    d = lf.dims
    pr = _realized_exposure(p, d.n_y, d.n_x)
    if pr.shape[0] != d.n_t:
        raise ValueError(f"pattern has {pr.shape[0]} time units, light field has {d.n_t}")
    return CodedImage(np.einsum("tvu,tyx,tvuyx->yx", a.values, pr, lf.data))


def free5d_capture(lf: LightField5D, m: Free5DMask) -> CodedImage:
    """Free-form capture: I[y,x] = sum_{t,v,u} m[t,v,u, y%8, x%8] * L[t,v,u,y,x]."""
    d = lf.dims
    if m.values.shape[:3] != (d.n_t, d.n_v, d.n_u):
        raise ValueError(
            f"mask shape {m.values.shape[:3]} does not match dims ({d.n_t}, {d.n_v}, {d.n_u})"
        )
    d.require_tile_divisible()
    mx = m.expand(d.n_y, d.n_x)
    return CodedImage(np.einsum("tvuyx,tvuyx->yx", mx, lf.data))


def normalization_scale(dims: Dims) -> float:
    """Maximum achievable uncoded pixel value: n_u * n_v * n_t for unit radiance."""
    return float(dims.n_views * dims.n_t)


def normalize_capture(img: CodedImage, dims: Dims) -> CodedImage:
    """Bring the raw coded sum back to the [0, 1] range fed to reconstruction."""
    return CodedImage(img.data / DTYPE(normalization_scale(dims)))


def add_sensor_noise(img: CodedImage, sigma: float, seed: int, scale: float = 1.0) -> CodedImage:
    """Additive zero-mean Gaussian read noise, std sigma * scale per pixel.

    ``scale`` is the maximum achievable uncoded pixel value of the image's
    dynamic range (1.0 for normalized images).  Deterministic given seed.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return img
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma * scale, size=img.data.shape)
    return CodedImage(img.data + noise.astype(DTYPE))


def capture_with_region_timing(
    lf: LightField5D, a: AperturePattern, p, rt: RegionTiming
) -> CodedImage:
    """Capture with the staggered per-region exposure windows.

    ``lf`` must extend over at least n_t + max(offsets) time units: region k
    integrates content at absolute times [offsets[k], offsets[k] + n_t) while
    the coding-pattern schedule keeps cycling globally, so region k sees the
    patterns in the order pi_k(t) = (t + offsets[k]) % n_t.
    """
    n_t = a.n_t
    d = lf.dims
    need = n_t + rt.max_offset
    if d.n_t < need:
        raise ValueError(
            f"light field spans {d.n_t} time units, region timing needs at least {need}"
        )
    if d.n_y % rt.n_regions:
        raise ValueError(f"n_y={d.n_y} not divisible by {rt.n_regions} regions")
    pr = _realized_exposure(p, d.n_y, d.n_x)
    if pr.shape[0] != n_t:
        raise ValueError("exposure pattern and aperture disagree on n_t")

    band = d.n_y // rt.n_regions
    out = np.zeros((d.n_y, d.n_x), dtype=DTYPE)
    for k in range(rt.n_regions):
        off = rt.offsets[k]
        ys = slice(k * band, (k + 1) * band)
        for s in range(n_t):  # local exposure slot
            tp = (s + off) % n_t  # pattern index in play at absolute time off + s
            view_sum = np.einsum("vu,vuyx->yx", a.values[tp], lf.data[off + s, :, :, ys, :])
            out[ys] += pr[tp, ys, :] * view_sum
    return CodedImage(out)


def region_permuted_field(lf: LightField5D, offset: int) -> LightField5D:
    """Reorder time units the way a region with the given start offset sees them.

    Pattern index t pairs with source frame (t - offset) % n_t, so the
    permuted field satisfies out[t] = lf[(t - offset) % n_t].
    """
    n_t = lf.dims.n_t
    idx = (np.arange(n_t) - offset) % n_t
    return LightField5D(lf.dims, lf.data[idx])
