"""Trainable parameterizations of the coding patterns.

The camera has two physical degrees of freedom: a semi-transparent
aperture map a[t, v, u] in [0, 1], and a binary pixel-wise exposure
pattern that hardware restricts to 8x8-periodic, row-column separable
tiles.  Both are stored as unconstrained real arrays ("logits"):

* aperture logits realize through a clamp to [0, 1], so trained values
  stay directly interpretable as transmittances and can reach the ends;
* exposure row/column logits realize through a steep sigmoid product
  during training (temperature tau annealed upward) and through hard
  thresholding ``logit > 0`` on export, the straight-through recipe.

``make_variant`` builds the five ablation configurations (A+P, A-only,
P-only, Ordinary, Free5D) with the appropriate parameters frozen to
exact constants.  Frozen slots carry no logits at all: realization
returns the constant directly in both modes, so e.g. the Ordinary
variant degenerates to a plainly scaled view sum with zero relaxation
error.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .core import DTYPE, TILE, Dims, derive_seed, write_pgm
from .forward import AperturePattern, ExposurePattern, steep_sigmoid

VARIANTS = ("A+P", "A-only", "P-only", "Ordinary", "Free5D")


def uniform_aperture_value(dims: Dims) -> float:
    """Constant transmittance for frozen apertures: 1 / (n_u * n_v)."""
    return 1.0 / (dims.n_u * dims.n_v)


def init_aperture_logits(dims: Dims, seed: int) -> np.ndarray:
    """Aperture logits ~ uniform(0.3, 0.7), shape (n_t, n_v, n_u)."""
    rng = np.random.default_rng(derive_seed(seed, "init", "aperture"))
    return rng.uniform(0.3, 0.7, size=(dims.n_t, dims.n_v, dims.n_u)).astype(DTYPE)


def init_exposure_logits(dims: Dims, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column logits ~ uniform(-1, 1), shape (n_t, 8) each.

    Each time unit draws from its own named substream so that changing
    n_t leaves the patterns of the shared time units untouched.
    """
    rows = np.empty((dims.n_t, TILE), dtype=DTYPE)
    cols = np.empty((dims.n_t, TILE), dtype=DTYPE)
    for t in range(dims.n_t):
        rng = np.random.default_rng(derive_seed(seed, "init", "exposure", t))
        rows[t] = rng.uniform(-1.0, 1.0, size=TILE)
        cols[t] = rng.uniform(-1.0, 1.0, size=TILE)
    return rows, cols


def realize_aperture(w: np.ndarray) -> AperturePattern:
    """Clamp logits elementwise to [0, 1]."""
    if not np.all(np.isfinite(w)):
        raise ValueError("aperture logits must be finite")
    return AperturePattern(np.clip(w, 0.0, 1.0))


def realize_exposure(rows: np.ndarray, cols: np.ndarray, mode: str = "binary",
                     tau: float = 1.0) -> np.ndarray:
    """Realize the 8x8 exposure tiles, (n_t, 8, 8).

    mode="train" gives the relaxed product sigma_tau(rows) * sigma_tau(cols);
    mode="binary" gives the hard separable 0/1 tile with the [logit > 0]
    convention (exact zeros map to 0).
    """
    if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(cols))):
        raise ValueError("exposure logits must be finite")
    return ExposurePattern(rows, cols).tile(mode=mode, tau=tau)


def train_binary_gap(rows: np.ndarray, cols: np.ndarray, tau: float = 1.0) -> float:
    """max |relaxed tile - binary tile|: how tight the relaxation is."""
    relaxed = realize_exposure(rows, cols, mode="train", tau=tau)
    hard = realize_exposure(rows, cols, mode="binary")
    return float(np.abs(relaxed - hard).max())


@dataclass
class VariantParams:
    """Pattern parameter set for one ablation variant.

    Trainable slots hold logit arrays; frozen slots hold None and realize
    to exact constants.  ``trainable()`` is the contract the optimizer
    sees -- frozen parameters simply do not exist as far as training is
    concerned, which makes the zero-gradient-when-frozen property hold
    by construction.
    """

    name: str
    dims: Dims
    aperture: np.ndarray | None = None       # (n_t, n_v, n_u) logits
    exp_rows: np.ndarray | None = None       # (n_t, 8) logits
    exp_cols: np.ndarray | None = None       # (n_t, 8) logits
    mask: np.ndarray | None = None           # (n_t, n_v, n_u, 8, 8) values

    def trainable(self) -> dict[str, np.ndarray]:
        out = {}
        if self.aperture is not None:
            out["pattern.aperture"] = self.aperture
        if self.exp_rows is not None:
            out["pattern.exp_rows"] = self.exp_rows
            out["pattern.exp_cols"] = self.exp_cols
        if self.mask is not None:
            out["pattern.mask"] = self.mask
        return out

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite trainable slots in place from a checkpointed dict."""
        for name, arr in self.trainable().items():
            if name not in arrays:
                raise KeyError(f"checkpoint is missing parameter {name!r}")
            if arrays[name].shape != arr.shape:
                raise ValueError(f"checkpoint parameter {name!r} has shape "
                                 f"{arrays[name].shape}, expected {arr.shape}")
            arr[...] = arrays[name]

    # -- realization -------------------------------------------------------

    def aperture_values(self) -> np.ndarray:
        """Realized transmittance (n_t, n_v, n_u); exact constant if frozen."""
        d = self.dims
        if self.name == "Free5D":
            raise ValueError("Free5D variant has no separate aperture")
        if self.aperture is None:
            return np.full((d.n_t, d.n_v, d.n_u), uniform_aperture_value(d), dtype=DTYPE)
        return realize_aperture(self.aperture).values

    def exposure_tiles(self, mode: str = "binary", tau: float = 1.0) -> np.ndarray:
        """Realized 8x8 tiles (n_t, 8, 8); exact ones if frozen."""
        d = self.dims
        if self.name == "Free5D":
            raise ValueError("Free5D variant has no separate exposure pattern")
        if self.exp_rows is None:
            return np.ones((d.n_t, TILE, TILE), dtype=DTYPE)
        return realize_exposure(self.exp_rows, self.exp_cols, mode=mode, tau=tau)

    def mask_values(self) -> np.ndarray:
        if self.mask is None:
            raise ValueError(f"variant {self.name!r} has no free-form mask")
        return np.clip(self.mask, 0.0, 1.0).astype(DTYPE, copy=False)

    def binary_gap(self, tau: float = 1.0) -> float:
        if self.exp_rows is None:
            return 0.0
        return train_binary_gap(self.exp_rows, self.exp_cols, tau=tau)

    def export(self) -> tuple[AperturePattern, np.ndarray]:
        """Hardware-facing realization: clamped aperture + binary tiles."""
        return (AperturePattern(self.aperture_values()),
                self.exposure_tiles(mode="binary"))


def make_variant(name: str, dims: Dims, seed: int = 0) -> VariantParams:
    """Build the pattern parameter set for one ablation variant.

    A+P       trainable aperture + trainable exposure
    A-only    trainable aperture, exposure frozen to all-on
    P-only    trainable exposure, aperture frozen to 1/(n_u*n_v)
    Ordinary  both frozen (plain view-sum capture, scaled)
    Free5D    single trainable 5-D mask, initialized to the factorized
              product of the A+P initialization so the initial capture
              matches A+P exactly
    """
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    if name == "A+P":
        rows, cols = init_exposure_logits(dims, seed)
        return VariantParams(name, dims, aperture=init_aperture_logits(dims, seed),
                             exp_rows=rows, exp_cols=cols)
    if name == "A-only":
        return VariantParams(name, dims, aperture=init_aperture_logits(dims, seed))
    if name == "P-only":
        rows, cols = init_exposure_logits(dims, seed)
        return VariantParams(name, dims, exp_rows=rows, exp_cols=cols)
    if name == "Ordinary":
        return VariantParams(name, dims)
    # Free5D: factor the A+P initialization (clamped aperture x relaxed
    # tile at tau=1, the training-time realization) into the mask.
    a0 = np.clip(init_aperture_logits(dims, seed), 0.0, 1.0)
    rows, cols = init_exposure_logits(dims, seed)
    tile0 = steep_sigmoid(rows, 1.0)[:, :, None] * steep_sigmoid(cols, 1.0)[:, None, :]
    mask = (a0[:, :, :, None, None] * tile0[:, None, None, :, :]).astype(DTYPE)
    return VariantParams(name, dims, mask=mask)


# ---------------------------------------------------------------------------
# export for visual inspection
# ---------------------------------------------------------------------------


def _upscale(img: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(img, factor, axis=0), factor, axis=1)


def export_pattern_images(params: VariantParams, out_dir: str,
                          exposure_scale: int = 16, aperture_scale: int = 32) -> list[str]:
    """Write per-time-unit PGM images plus a CSV of raw realized values.

    Exposure tiles are exported in binary mode (the hardware realization);
    the aperture map is the clamped transmittance on a 0..255 gray scale.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    csv_path = os.path.join(out_dir, "patterns.csv")
    with open(csv_path, "w") as fh:
        fh.write("kind,t,a,b,c,value\n")
        if params.name == "Free5D":
            mask = params.mask_values()
            for t in range(params.dims.n_t):
                # one PGM per time unit: the (v, u) grid of 8x8 tiles
                d = params.dims
                sheet = np.zeros((d.n_v * TILE, d.n_u * TILE), dtype=DTYPE)
                for v in range(d.n_v):
                    for u in range(d.n_u):
                        sheet[v * TILE:(v + 1) * TILE, u * TILE:(u + 1) * TILE] = mask[t, v, u]
                path = os.path.join(out_dir, f"mask_t{t}.pgm")
                write_pgm(_upscale(sheet, 4), path)
                written.append(path)
            for idx in np.ndindex(mask.shape):
                t, v, u, j, i = idx
                fh.write(f"mask,{t},{v * TILE + j},{u * TILE + i},0,{mask[idx]:.8f}\n")
        else:
            ap = params.aperture_values()
            tiles = params.exposure_tiles(mode="binary")
            for t in range(params.dims.n_t):
                path = os.path.join(out_dir, f"exposure_t{t}.pgm")
                write_pgm(_upscale(tiles[t], exposure_scale), path)
                written.append(path)
                path = os.path.join(out_dir, f"aperture_t{t}.pgm")
                write_pgm(_upscale(ap[t], aperture_scale), path)
                written.append(path)
            for (t, v, u), val in np.ndenumerate(ap):
                fh.write(f"aperture,{t},{v},{u},0,{val:.8f}\n")
            for (t, j, i), val in np.ndenumerate(tiles):
                fh.write(f"exposure,{t},{j},{i},0,{val:.0f}\n")
    written.append(csv_path)
    return written
