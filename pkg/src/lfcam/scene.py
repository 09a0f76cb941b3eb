"""Synthetic dynamic-light-field generation.

Scenes are fronto-parallel textured planes.  A texture G, a disparity d
(pixels per viewpoint step) and a lateral velocity (alpha_x, alpha_y)
(pixels per time unit) define the volume

    L[t,v,u,y,x] = G(x - d*uc - alpha_x*t,  y - d*vc - alpha_y*t)

with viewpoint indices centered on the aperture (uc = u - n_u//2) and
bilinear interpolation for fractional sample positions.  The same model
drives point-source probe scenes and the virtual-motion augmentation used
to build training corpora from static light fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DTYPE, Dims, LightField5D

# full velocity grid used for motion augmentation: 25 in-plane translations
MOTION_GRID = tuple((ax, ay) for ay in (-2, -1, 0, 1, 2) for ax in (-2, -1, 0, 1, 2))


@dataclass(frozen=True)
class MotionDisparity:
    """Lateral velocity (pixels per time unit) and disparity (pixels per view step)."""

    alpha_x: float = 0.0
    alpha_y: float = 0.0
    d: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.alpha_x, self.alpha_y, self.d)):
            raise ValueError("motion/disparity parameters must be finite")


class Texture:
    """Grayscale plane texture with values in [0, 1]."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=DTYPE)
        if data.ndim != 2:
            raise ValueError(f"texture must be 2-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("texture values must be finite")
        self.data = data
        self.data.flags.writeable = False

    @property
    def shape(self):
        return self.data.shape


def sample_bilinear(G: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    """Bilinear lookup of G at fractional positions, zero outside the support."""
    G = np.asarray(G)
    h, w = G.shape
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    fy = sy - y0
    fx = sx - x0
    out = np.zeros(np.broadcast(sy, sx).shape, dtype=G.dtype)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yy = y0 + dy
            xx = x0 + dx
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            weight = wy * wx
            vals = G[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out = out + np.where(valid, weight * vals, 0.0)
    return out


class TextureTooSmallError(ValueError):
    code = "texture-too-small"


def synth_plane(
    texture: Texture,
    md: MotionDisparity,
    dims: Dims,
    origin: tuple[float, float] = (0.0, 0.0),
    pad: bool = False,
) -> LightField5D:
    """Render a moving fronto-parallel plane into a dynamic light field.

    ``origin`` gives the texture coordinates (oy, ox) of output pixel (0, 0)
    in the central view at t = 0.  Unless ``pad`` is set, every bilinear
    sample must fall inside the texture; shifts that would leave the support
    raise :class:`TextureTooSmallError` instead of silently zero-padding.
    """
    h, w = texture.shape
    oy, ox = origin
    uc = np.arange(dims.n_u) - dims.n_u // 2
    vc = np.arange(dims.n_v) - dims.n_v // 2
    ts = np.arange(dims.n_t)

    # per-(t, v, u) constant offsets into the texture
    off_x = ox - md.d * uc[None, None, :] - md.alpha_x * ts[:, None, None]
    off_y = oy - md.d * vc[None, :, None] - md.alpha_y * ts[:, None, None]
    off_x = np.broadcast_to(off_x, (dims.n_t, dims.n_v, dims.n_u))
    off_y = np.broadcast_to(off_y, (dims.n_t, dims.n_v, dims.n_u))

    if not pad:
        lo_x = off_x.min()
        hi_x = off_x.max() + dims.n_x - 1
        lo_y = off_y.min()
        hi_y = off_y.max() + dims.n_y - 1
        if lo_x < 0 or hi_x > w - 1 or lo_y < 0 or hi_y > h - 1:
            raise TextureTooSmallError(
                f"samples span x [{lo_x:.2f}, {hi_x:.2f}], y [{lo_y:.2f}, {hi_y:.2f}] "
                f"but texture is {h}x{w}; enlarge the texture or enable pad"
            )

    ys = np.arange(dims.n_y, dtype=np.float64)
    xs = np.arange(dims.n_x, dtype=np.float64)
    data = np.empty(dims.shape, dtype=DTYPE)
    for t in range(dims.n_t):
        for v in range(dims.n_v):
            for u in range(dims.n_u):
                sy = ys[:, None] + off_y[t, v, u]
                sx = xs[None, :] + off_x[t, v, u]
                data[t, v, u] = sample_bilinear(texture.data.astype(np.float64), sy, sx)
    return LightField5D(dims, data)


def psf_point_positions(dims: Dims) -> list[tuple[int, int]]:
    """Regular 3x3 probe-point grid at the quarter positions of the sensor."""
    ys = [(i + 1) * dims.n_y // 4 for i in range(3)]
    xs = [(j + 1) * dims.n_x // 4 for j in range(3)]
    return [(y, x) for y in ys for x in xs]


def make_psf_scene(md: MotionDisparity, dims: Dims) -> LightField5D:
    """Plane scene whose texture is nine bright points on a 3x3 grid.

    Captures of this scene expose the imaging model's point spread function
    at nine sensor positions for the given motion and disparity.
    """
    shift_x = abs(md.d) * (dims.n_u // 2) + abs(md.alpha_x) * (dims.n_t - 1)
    shift_y = abs(md.d) * (dims.n_v // 2) + abs(md.alpha_y) * (dims.n_t - 1)
    mx = int(math.ceil(shift_x)) + 2
    my = int(math.ceil(shift_y)) + 2
    if dims.n_y < 8 or dims.n_x < 8:
        raise ValueError("sensor too small for a 3x3 point grid with margins")
    tex = np.zeros((dims.n_y + 2 * my, dims.n_x + 2 * mx), dtype=DTYPE)
    for y, x in psf_point_positions(dims):
        tex[my + y, mx + x] = 1.0
    return synth_plane(Texture(tex), md, dims, origin=(float(my), float(mx)))


def augment_motion(
    static_views: np.ndarray, alpha_x: float, alpha_y: float, n_t: int,
    out_y: int | None = None, out_x: int | None = None,
) -> LightField5D:
    """Animate a static light field (v, u, Y, X) with a constant-velocity translation.

    Frame t shows the source translated by (alpha_x * t, alpha_y * t) in every
    view; the output crop is centered so the source must carry a margin of at
    least (n_t - 1) * |alpha| pixels per axis.  Integer velocities reduce to
    exact pixel shifts.
    """
    static_views = np.asarray(static_views)
    if static_views.ndim != 4:
        raise ValueError(f"expected (n_v, n_u, Y, X) source, got shape {static_views.shape}")
    n_v, n_u, src_y, src_x = static_views.shape
    out_y = src_y if out_y is None else out_y
    out_x = src_x if out_x is None else out_x
    my = (src_y - out_y) // 2
    mx = (src_x - out_x) // 2
    need_y = abs(alpha_y) * (n_t - 1)
    need_x = abs(alpha_x) * (n_t - 1)
    if my < need_y or mx < need_x:
        raise ValueError(
            f"margin ({my}, {mx}) insufficient for velocity ({alpha_x}, {alpha_y}) "
            f"over {n_t} time units (needs ({need_y:.1f}, {need_x:.1f}))"
        )
    dims = Dims(n_u=n_u, n_v=n_v, n_x=out_x, n_y=out_y, n_t=n_t)
    data = np.empty(dims.shape, dtype=DTYPE)
    ys = np.arange(out_y, dtype=np.float64)
    xs = np.arange(out_x, dtype=np.float64)
    for t in range(n_t):
        sy = ys[:, None] + (my - alpha_y * t)
        sx = xs[None, :] + (mx - alpha_x * t)
        for v in range(n_v):
            for u in range(n_u):
                data[t, v, u] = sample_bilinear(static_views[v, u].astype(np.float64), sy, sx)
    return LightField5D(dims, data)


def extract_patches(
    sources: list[np.ndarray], patch: int, stride: int, intensity_scales=(1.0,)
) -> list[np.ndarray]:
    """Deterministic enumeration of spatial crops times intensity scalings.

    Sources are static light fields (n_v, n_u, Y, X); crops walk the spatial
    grid row-major with the given stride, and every crop is emitted once per
    intensity scale with values clamped to [0, 1].
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    for s in intensity_scales:
        if not 0.0 < s <= 1.0:
            raise ValueError(f"intensity scales must lie in (0, 1], got {s}")
    out = []
    for src in sources:
        src = np.asarray(src)
        sy, sx = src.shape[2], src.shape[3]
        if patch > sy or patch > sx:
            raise ValueError(f"patch {patch} larger than source {sy}x{sx}")
        for py in range(0, sy - patch + 1, stride):
            for px in range(0, sx - patch + 1, stride):
                crop = src[:, :, py : py + patch, px : px + patch]
                for s in intensity_scales:
                    out.append(np.clip(crop * DTYPE(s), 0.0, 1.0).astype(DTYPE))
    return out


# ---------------------------------------------------------------------------
# training corpus: manifest + on-demand synthesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    source_id: int
    patch_x: int
    patch_y: int
    scale: float
    alpha_x: int
    alpha_y: int

    def line(self) -> str:
        return (
            f"{self.source_id},{self.patch_x},{self.patch_y},"
            f"{self.scale:g},{self.alpha_x},{self.alpha_y}"
        )

    @classmethod
    def parse(cls, line: str) -> "ManifestEntry":
        sid, px, py, scale, ax, ay = line.strip().split(",")
        return cls(int(sid), int(px), int(py), float(scale), int(ax), int(ay))


def build_manifest(
    source_shapes: list[tuple[int, int]],
    patch: int,
    stride: int,
    intensity_scales=(1.0,),
    motions=MOTION_GRID,
    margin: int = 0,
) -> list[ManifestEntry]:
    """Enumerate every (patch position, scale, motion) combination.

    ``margin`` reserves border pixels of each source for the translation
    sweep, so listed patches can always be synthesized without padding.
    Counts are exactly |patches| * |scales| * |motions|.
    """
    entries = []
    for sid, (sy, sx) in enumerate(source_shapes):
        y_stop = sy - patch - margin + 1
        x_stop = sx - patch - margin + 1
        for py in range(margin, y_stop, stride):
            for px in range(margin, x_stop, stride):
                for scale in intensity_scales:
                    for ax, ay in motions:
                        entries.append(ManifestEntry(sid, px, py, float(scale), ax, ay))
    return entries


def write_manifest(entries: list[ManifestEntry], path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for e in entries:
            fh.write(e.line() + "\n")


def read_manifest(path) -> list[ManifestEntry]:
    with open(path, "r", encoding="ascii") as fh:
        return [ManifestEntry.parse(ln) for ln in fh if ln.strip()]


class SampleSet:
    """Training samples synthesized on demand from static sources and a manifest.

    Sources are static light fields (n_v, n_u, Y, X) whose disparity content
    is baked in; each manifest entry selects a patch, an intensity scale and
    a constant-velocity translation.  Synthesis is index-addressable and
    deterministic, so shards can be generated independently.
    """

    def __init__(self, sources: list[np.ndarray], entries: list[ManifestEntry],
                 patch: int, n_t: int, margin: int):
        self.sources = [np.asarray(s, dtype=DTYPE) for s in sources]
        self.entries = list(entries)
        self.patch = patch
        self.n_t = n_t
        self.margin = margin

    def __len__(self) -> int:
        return len(self.entries)

    def sample(self, i: int) -> LightField5D:
        e = self.entries[i]
        src = self.sources[e.source_id]
        m = self.margin
        crop = src[
            :, :,
            e.patch_y - m : e.patch_y + self.patch + m,
            e.patch_x - m : e.patch_x + self.patch + m,
        ]
        crop = np.clip(crop * DTYPE(e.scale), 0.0, 1.0)
        return augment_motion(crop, e.alpha_x, e.alpha_y, self.n_t,
                              out_y=self.patch, out_x=self.patch)

    def describe(self, i: int) -> str:
        """Manifest line for sample i (used in failure diagnostics)."""
        return f"[{i}] {self.entries[i].line()}"


def procedural_texture(h: int, w: int, seed: int, coarse: int = 8, detail: float = 0.3) -> Texture:
    """Deterministic multi-scale random texture in [0, 1] for synthetic scenes."""
    rng = np.random.default_rng(seed)
    grid = rng.random((h // coarse + 2, w // coarse + 2))
    ys = np.arange(h, dtype=np.float64)[:, None] / coarse
    xs = np.arange(w, dtype=np.float64)[None, :] / coarse
    smooth = sample_bilinear(grid, np.broadcast_to(ys, (h, w)), np.broadcast_to(xs, (h, w)))
    fine = rng.random((h, w))
    tex = (1.0 - detail) * smooth + detail * fine
    tex = (tex - tex.min()) / max(tex.max() - tex.min(), 1e-9)
    return Texture(tex.astype(DTYPE))


def make_plane_sources(
    dims: Dims, n_textures: int, disparities, source_size: int, seed: int
) -> list[np.ndarray]:
    """Static plane light fields (one per texture x disparity) for corpus building."""
    sources = []
    static = Dims(n_u=dims.n_u, n_v=dims.n_v, n_x=source_size, n_y=source_size, n_t=1)
    for k in range(n_textures):
        for d in disparities:
            shift = abs(d) * max(dims.n_u // 2, dims.n_v // 2)
            m = int(math.ceil(shift)) + 2
            tex = procedural_texture(source_size + 2 * m, source_size + 2 * m,
                                     seed=seed * 1009 + k * 131 + int(round(d * 10)))
            lf = synth_plane(tex, MotionDisparity(0.0, 0.0, d), static,
                             origin=(float(m), float(m)))
            sources.append(lf.data[0])  # (n_v, n_u, Y, X)
    return sources
