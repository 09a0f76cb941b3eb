"""Evaluation harness: PSNR reports, PSF atlas, working-range sweep, ablations.

All quality numbers are peak-signal-to-noise ratios against a peak of
1.0: psnr = 10*log10(1 / MSE).  A zero MSE reports the +inf sentinel;
means exclude such entries and carry an exclusion count instead of
silently propagating infinities.

Reconstruction borders are polluted by convolution padding and by the
phase of the 8x8 pattern tile, so scoring crops a configurable border
(8 pixels on every side by default) before comparing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Dims, TILE
from .forward import (AperturePattern, Free5DMask, coded_capture, free5d_capture,
                      normalize_capture)
from .scene import MotionDisparity, Texture, make_psf_scene, synth_plane
from .patterns import VariantParams

DEFAULT_CROP = 8


def crop_border(img: np.ndarray, px: int) -> np.ndarray:
    """Trim px pixels from every side of the trailing two axes."""
    if px == 0:
        return img
    if 2 * px >= img.shape[-1] or 2 * px >= img.shape[-2]:
        raise ValueError(f"crop of {px} px leaves no pixels for shape {img.shape}")
    return img[..., px:-px, px:-px]


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) on [0,1]-scaled images; equality gives +inf."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def _finite_mean(values: np.ndarray) -> float:
    """Mean excluding +inf sentinels; all-excluded collapses to +inf."""
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return math.inf
    return float(finite.mean())


@dataclass
class PsnrReport:
    """Per-frame, per-view PSNR matrix with sentinel-aware means.

    ``values[frame, view]`` with view index v * n_u + u; +inf marks
    exact reconstructions and is excluded from every mean.
    """

    values: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    def frame_means(self) -> np.ndarray:
        return np.array([_finite_mean(row) for row in self.values])

    def global_mean(self) -> float:
        return _finite_mean(self.values.reshape(-1))

    def inf_count(self) -> int:
        return int(np.isinf(self.values).sum())

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            n_views = self.values.shape[1]
            cols = ",".join(f"view{j}" for j in range(n_views))
            fh.write(f"frame,{cols},frame_mean\n")
            means = self.frame_means()
            for i, row in enumerate(self.values):
                cells = ",".join("inf" if math.isinf(x) else f"{x:.6f}" for x in row)
                m = "inf" if math.isinf(means[i]) else f"{means[i]:.6f}"
                fh.write(f"{i},{cells},{m}\n")
            g = self.global_mean()
            fh.write(f"# global_mean={'inf' if math.isinf(g) else f'{g:.6f}'} "
                     f"excluded_inf={self.inf_count()}\n")


def eval_sequence(model_fn, frames: np.ndarray, dims: Dims,
                  crop: int = DEFAULT_CROP) -> PsnrReport:
    """Score a model over a dynamic sequence of T frames.

    ``frames`` is (T, n_v, n_u, n_y, n_x) with T divisible by n_t; the
    model captures and reconstructs each n_t-frame window, and every
    reconstructed frame/view is scored against the ground truth.
    ``model_fn`` maps an (n_t, n_v, n_u, n_y, n_x) array to an equal
    -shaped reconstruction.
    """
    frames = np.asarray(frames)
    t_total = frames.shape[0]
    if t_total % dims.n_t:
        raise ValueError(f"sequence length {t_total} not divisible by n_t={dims.n_t}")
    if frames.shape[1:] != (dims.n_v, dims.n_u, dims.n_y, dims.n_x):
        raise ValueError(f"frame block shape {frames.shape[1:]} does not match dims")
    values = np.empty((t_total, dims.n_views), dtype=np.float64)
    for w in range(t_total // dims.n_t):
        window = frames[w * dims.n_t : (w + 1) * dims.n_t]
        recon = np.asarray(model_fn(window))
        if recon.shape != window.shape:
            raise ValueError(f"model returned shape {recon.shape}, "
                             f"expected {window.shape}")
        for tl in range(dims.n_t):
            for v in range(dims.n_v):
                for u in range(dims.n_u):
                    values[w * dims.n_t + tl, v * dims.n_u + u] = psnr(
                        crop_border(recon[tl, v, u], crop),
                        crop_border(window[tl, v, u], crop),
                    )
    return PsnrReport(values)


# ---------------------------------------------------------------------------
# PSF atlas
# ---------------------------------------------------------------------------

# four-quadrant (alpha_x, d) probe set for distinctness checks
PSF_GRID = (
    MotionDisparity(0.0, 0.0, 0.0),
    MotionDisparity(2.0, 0.0, 0.0),
    MotionDisparity(0.0, 0.0, 2.0),
    MotionDisparity(2.0, 0.0, 2.0),
)


def capture_for_params(params: VariantParams, lf, mode: str = "binary",
                       tau: float = 1.0) -> np.ndarray:
    """Reference (non-autodiff) capture with a variant's realized patterns."""
    d = lf.dims
    if params.name == "Free5D":
        img = free5d_capture(lf, Free5DMask(params.mask_values()))
    else:
        tiles = params.exposure_tiles(mode=mode, tau=tau)
        full = np.tile(tiles, (1, d.n_y // TILE, d.n_x // TILE))
        img = coded_capture(lf, AperturePattern(params.aperture_values()), full)
    return normalize_capture(img, d).data


def psf_atlas(params: VariantParams, md_list, dims: Dims,
              mode: str = "binary") -> np.ndarray:
    """Point-response stamps, one per (motion, disparity) probe.

    Each stamp is the normalized capture of the nine-point probe scene,
    brightness-corrected to a per-stamp maximum of 1 for visualization
    and comparison.
    """
    stamps = np.zeros((len(md_list), dims.n_y, dims.n_x), dtype=np.float64)
    for i, md in enumerate(md_list):
        scene = make_psf_scene(md, dims)
        img = capture_for_params(params, scene, mode=mode)
        peak = float(img.max())
        stamps[i] = img / peak if peak > 0 else img
    return stamps


def stamp_ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Zero-mean normalized cross-correlation between two stamps."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ValueError("stamps must have equal shapes")
    a = a - a.mean()
    b = b - b.mean()
    na = float(np.sqrt((a * a).sum()))
    nb = float(np.sqrt((b * b).sum()))
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float((a * b).sum() / (na * nb))


# ---------------------------------------------------------------------------
# working-range sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepGrid:
    """Mean PSNR per (alpha_x, d) cell; values[ai, di]."""

    alpha_axis: tuple[float, ...]
    d_axis: tuple[float, ...]
    values: np.ndarray

    def __post_init__(self):
        for axis in (self.alpha_axis, self.d_axis):
            if any(b <= a for a, b in zip(axis, axis[1:])):
                raise ValueError(f"sweep axis must be strictly increasing: {axis}")
        if self.values.shape != (len(self.alpha_axis), len(self.d_axis)):
            raise ValueError(f"grid shape {self.values.shape} does not match axes")

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("alpha_x\\d," + ",".join(f"{d:g}" for d in self.d_axis) + "\n")
            for a, row in zip(self.alpha_axis, self.values):
                cells = ",".join("inf" if math.isinf(x) else f"{x:.6f}" for x in row)
                fh.write(f"{a:g},{cells}\n")


def sweep_scene(md: MotionDisparity, dims: Dims, texture: Texture,
                margin: tuple[int, int]):
    """Plane scene centered in a shared oversized texture."""
    return synth_plane(texture, md, dims, origin=(float(margin[0]), float(margin[1])))


def sweep_margins(alpha_axis, d_axis, dims: Dims) -> tuple[int, int]:
    """Texture margin covering every cell of the sweep."""
    a_max = max(abs(a) for a in alpha_axis)
    d_max = max(abs(d) for d in d_axis)
    mx = int(math.ceil(d_max * (dims.n_u // 2) + a_max * (dims.n_t - 1))) + 2
    my = int(math.ceil(d_max * (dims.n_v // 2))) + 2
    return my, mx


def working_range_sweep(model_fn, alpha_axis, d_axis, dims: Dims,
                        texture: Texture, crop: int = DEFAULT_CROP) -> SweepGrid:
    """Mean reconstruction PSNR over the (alpha_x, d) grid on plane scenes.

    The same texture serves every cell, so differences between cells are
    attributable to motion/disparity alone.  The texture must carry the
    margins from :func:`sweep_margins`; smaller textures raise.
    """
    my, mx = sweep_margins(alpha_axis, d_axis, dims)
    h, w = texture.shape
    if h < dims.n_y + 2 * my or w < dims.n_x + 2 * mx:
        raise ValueError(f"texture {h}x{w} too small for sweep margins "
                         f"({my}, {mx}); need {dims.n_y + 2 * my}x{dims.n_x + 2 * mx}")
    values = np.empty((len(alpha_axis), len(d_axis)), dtype=np.float64)
    for ai, alpha in enumerate(alpha_axis):
        for di, d in enumerate(d_axis):
            md = MotionDisparity(float(alpha), 0.0, float(d))
            scene = sweep_scene(md, dims, texture, (my, mx))
            recon = np.asarray(model_fn(scene.data))
            cell = np.empty(dims.n_t * dims.n_views, dtype=np.float64)
            i = 0
            for t in range(dims.n_t):
                for v in range(dims.n_v):
                    for u in range(dims.n_u):
                        cell[i] = psnr(crop_border(recon[t, v, u], crop),
                                       crop_border(scene.data[t, v, u], crop))
                        i += 1
            values[ai, di] = _finite_mean(cell)
    return SweepGrid(tuple(float(a) for a in alpha_axis),
                     tuple(float(d) for d in d_axis), values)


# ---------------------------------------------------------------------------
# ablation comparison
# ---------------------------------------------------------------------------


@dataclass
class AblationTable:
    """Variants ranked by mean held-out PSNR (best first)."""

    rows: list[tuple[str, float]]
    curves: dict[str, np.ndarray]  # per-frame mean PSNR

    def mean(self, name: str) -> float:
        for n, m in self.rows:
            if n == name:
                return m
        raise KeyError(name)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("variant,mean_psnr\n")
            for name, m in self.rows:
                fh.write(f"{name},{'inf' if math.isinf(m) else f'{m:.6f}'}\n")


def ablation_compare(models: dict[str, object], scenes: list[np.ndarray],
                     dims: Dims, crop: int = DEFAULT_CROP) -> AblationTable:
    """Score every model on the same held-out scenes and rank them.

    ``scenes`` are (n_t, n_v, n_u, n_y, n_x) ground-truth windows; each
    model is a capture+reconstruct callable as in :func:`eval_sequence`.
    """
    if not scenes:
        raise ValueError("no evaluation scenes given")
    curves: dict[str, np.ndarray] = {}
    means: list[tuple[str, float]] = []
    for name, fn in models.items():
        reports = [eval_sequence(fn, s, dims, crop=crop) for s in scenes]
        all_vals = np.concatenate([r.values.reshape(-1) for r in reports])
        frame = np.mean([r.frame_means() for r in reports], axis=0)
        curves[name] = frame
        means.append((name, _finite_mean(all_vals)))
    means.sort(key=lambda kv: kv[1], reverse=True)
    return AblationTable(rows=means, curves=curves)


# ---------------------------------------------------------------------------
# image helpers for reports
# ---------------------------------------------------------------------------


def difference_image(a: np.ndarray, b: np.ndarray, gain: float = 3.0) -> np.ndarray:
    """|a - b| with a visualization gain, clipped to [0, 1]."""
    return np.clip(np.abs(np.asarray(a, dtype=np.float64)
                          - np.asarray(b, dtype=np.float64)) * gain, 0.0, 1.0)


def epi_image(lf, y: int, v: int, t: int, stretch: int = 8) -> np.ndarray:
    """Epipolar slice (u vs x) stretched vertically for visibility."""
    from .core import extract_epi
    epi = extract_epi(lf, y=y, v=v, t=t)
    return np.repeat(epi, stretch, axis=0)
