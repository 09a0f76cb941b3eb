"""AcqNet and RecNet: the differentiable capture/reconstruction pair.

AcqNet re-expresses the physical image formation as autodiff operations
so that gradients reach the pattern logits: realize patterns, apply the
capture model, normalize by n_u*n_v*n_t, add sensor noise, and pack the
coded image space-to-depth into a 64-channel tensor at 1/8 resolution.
With binary-mode patterns and zero noise its output is value-equal to
the plain capture path in :mod:`lfcam.forward`; that equality is what
lets trained patterns transfer to a real camera.

RecNet maps the packed measurement back to the 5-D light field:

    packed 64ch  -> 5 conv layers widening to 64*n_t channels
                 -> pixel shuffle x8 (back to sensor resolution, n_t ch)
                 -> 2 entry convs to n_u*n_v*n_t channels
                 -> refinement stack (default 19 convs) + residual
                 -> reshape channels to (t, v, u) slots

All convolutions are 3x3 by default, ReLU after every layer except the
last refinement conv and the residual sum.  The channel order of the
output tensor is the single bijection c = u + n_u*(v + n_v*t) shared by
the loss and the file writer.  Desk-scale runs shrink the net through
``channel_mult``/``depth_mult`` without touching the pinned interface
channels (64 in, 64*n_t before shuffle, n_u*n_v*n_t out).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .core import DTYPE, TILE, Dims, derive_seed
from .forward import normalization_scale
from .patterns import VariantParams

# fractions of the 64 -> 64*n_t ramp used for the four intermediate head
# widths; at n_t=4 they give the reference schedule 96, 128, 160, 208
_HEAD_FRACS = (1 / 6, 1 / 3, 1 / 2, 3 / 4)


@dataclass(frozen=True)
class AcqNetConfig:
    dims: Dims
    variant: str = "A+P"
    noise_sigma: float = 0.005
    region_timing: bool = False


@dataclass(frozen=True)
class RecNetConfig:
    dims: Dims
    kernel: int = 3
    refine_layers: int = 19
    channel_mult: float = 1.0
    depth_mult: float = 1.0
    head_widths: tuple[int, ...] | None = None
    entry_width: int | None = None
    refine_width: int | None = None

    @property
    def n_channels(self) -> int:
        """Output channels: one per (t, v, u) slot."""
        d = self.dims
        return d.n_t * d.n_v * d.n_u

    def _scaled(self, width: float) -> int:
        return max(8, int(round(width * self.channel_mult)))

    def resolved_head(self) -> tuple[int, ...]:
        """Widths of the 5 head convs; the last is pinned to 64 * n_t."""
        target = TILE * TILE * self.dims.n_t
        if self.head_widths is not None:
            widths = tuple(int(w) for w in self.head_widths)
            if widths[-1] != target:
                raise ValueError(f"final head width must be {target} "
                                 f"(64*n_t), got {widths[-1]}")
            return widths
        inter = tuple(self._scaled(64 + f * (target - 64)) for f in _HEAD_FRACS)
        return inter + (target,)

    def layer_plan(self) -> list[tuple[str, int, int, bool]]:
        """(name, c_in, c_out, relu) for every conv, in forward order."""
        n_ch = self.n_channels
        plan = []
        c_in = TILE * TILE
        for i, w in enumerate(self.resolved_head()):
            plan.append((f"head{i}", c_in, w, True))
            c_in = w
        entry_w = self.entry_width if self.entry_width is not None else self._scaled(n_ch)
        plan.append(("entry0", self.dims.n_t, entry_w, True))
        plan.append(("entry1", entry_w, n_ch, True))
        n_refine = max(1, int(round(self.refine_layers * self.depth_mult)))
        refine_w = self.refine_width if self.refine_width is not None else self._scaled(n_ch)
        if n_refine == 1:
            plan.append(("refine0", n_ch, n_ch, False))
        else:
            plan.append(("refine0", n_ch, refine_w, True))
            for i in range(1, n_refine - 1):
                plan.append((f"refine{i}", refine_w, refine_w, True))
            plan.append((f"refine{n_refine - 1}", refine_w, n_ch, False))
        return plan


# ---------------------------------------------------------------------------
# graph builders (functional; classes below just own the leaf tensors)
# ---------------------------------------------------------------------------


def acqnet_graph(lf: ad.Tensor, tensors: dict[str, ad.Tensor], params: VariantParams,
                 cfg: AcqNetConfig, mode: str = "train", tau: float = 1.0,
                 noise: ad.Tensor | None = None) -> ad.Tensor:
    """Differentiable capture: light field tensor -> packed measurement.

    ``tensors`` holds the trainable leaves (keys from
    ``params.trainable()``); frozen slots realize as exact constants.
    mode="binary" uses the hard exposure tiles (deployment path) while
    still letting gradients reach the aperture.
    """
    d = cfg.dims
    dt = lf.data.dtype
    if lf.data.shape != d.shape:
        raise ValueError(f"light field shape {lf.data.shape} != {d.shape}")
    if params.name == "Free5D":
        m = ad.clamp(tensors["pattern.mask"], 0.0, 1.0)
        coded = ad.phase_mask_apply(lf, m, period=TILE)
    else:
        if "pattern.aperture" in tensors:
            a_node = ad.clamp(tensors["pattern.aperture"], 0.0, 1.0)
        else:
            a_node = ad.constant(params.aperture_values().astype(dt))
        j = ad.aperture_apply(lf, a_node)  # (n_t, n_y, n_x)
        if "pattern.exp_rows" in tensors and mode == "train":
            p = ad.tile_separable(ad.sigmoid(tensors["pattern.exp_rows"], tau),
                                  ad.sigmoid(tensors["pattern.exp_cols"], tau),
                                  d.n_y, d.n_x, period=TILE)
            coded = ad.sum_leading(ad.mul(p, j), 1)
        elif "pattern.exp_rows" in tensors:
            tiles = params.exposure_tiles(mode="binary")
            full = np.tile(tiles, (1, d.n_y // TILE, d.n_x // TILE)).astype(dt)
            coded = ad.sum_leading(ad.mul(ad.constant(full), j), 1)
        else:
            coded = ad.sum_leading(j, 1)  # frozen all-on exposure
    scaled = ad.smul(coded, 1.0 / normalization_scale(d))
    if noise is not None:
        scaled = ad.add(scaled, noise)
    return ad.space_to_depth(ad.reshape(scaled, (1, d.n_y, d.n_x)), TILE)


def recnet_graph(packed: ad.Tensor, weights: dict[str, ad.Tensor],
                 cfg: RecNetConfig) -> ad.Tensor:
    """Packed measurement -> light-field tensor (n_t, n_v, n_u, n_y, n_x)."""
    d = cfg.dims
    expected = (TILE * TILE, d.n_y // TILE, d.n_x // TILE)
    if packed.data.shape != expected:
        raise ValueError(f"packed shape {packed.data.shape} != {expected}")
    x = packed
    plan = cfg.layer_plan()
    shuffled = False
    residual = None
    for name, _, _, use_relu in plan:
        if name == "entry0" and not shuffled:
            x = ad.pixel_shuffle(x, TILE)
            shuffled = True
        x = ad.conv2d(x, weights[f"{name}.w"], weights[f"{name}.b"])
        if use_relu:
            x = ad.relu(x)
        if name == "entry1":
            residual = x
    x = ad.add(x, residual)
    return ad.reshape(x, (d.n_t, d.n_v, d.n_u, d.n_y, d.n_x))


def init_recnet_weights(cfg: RecNetConfig, seed: int, scope: str = "rec") -> dict[str, np.ndarray]:
    """He-normal weights, zero biases; one named substream per tensor.

    The substream names ignore the region index on purpose: a four-region
    ensemble built from the same seed starts from identical weights.
    """
    k = cfg.kernel
    out: dict[str, np.ndarray] = {}
    for name, c_in, c_out, _ in cfg.layer_plan():
        rng = np.random.default_rng(derive_seed(seed, "init", scope, name))
        std = np.sqrt(2.0 / (c_in * k * k))
        out[f"{name}.w"] = (std * rng.standard_normal((c_out, c_in, k, k))).astype(DTYPE)
        out[f"{name}.b"] = np.zeros(c_out, dtype=DTYPE)
    return out


def field_channel(u: int, v: int, t: int, dims: Dims) -> int:
    """The channel bijection c = u + n_u * (v + n_v * t)."""
    return u + dims.n_u * (v + dims.n_v * t)


# ---------------------------------------------------------------------------
# stateful wrappers
# ---------------------------------------------------------------------------


class AcqNet:
    """Owns the pattern leaf tensors for one variant.

    The tensors alias the arrays inside ``params`` (same buffers), so
    in-place optimizer updates keep ``params`` current for export.
    """

    def __init__(self, cfg: AcqNetConfig, params: VariantParams):
        if params.dims != cfg.dims:
            raise ValueError("pattern dims disagree with AcqNetConfig dims")
        self.cfg = cfg
        self.params = params
        self.tensors = {name: ad.Tensor(arr, requires_grad=True)
                        for name, arr in params.trainable().items()}

    def forward(self, lf: np.ndarray, mode: str = "train", tau: float = 1.0,
                noise: np.ndarray | None = None) -> ad.Tensor:
        noise_t = None if noise is None else ad.constant(noise)
        return acqnet_graph(ad.constant(lf), self.tensors, self.params, self.cfg,
                            mode=mode, tau=tau, noise=noise_t)


class RecNet:
    """Owns one reconstruction network's weight tensors."""

    def __init__(self, cfg: RecNetConfig, seed: int, scope: str = "rec",
                 prefix: str = "rec.", weights: dict[str, np.ndarray] | None = None):
        self.cfg = cfg
        self.prefix = prefix
        raw = weights if weights is not None else init_recnet_weights(cfg, seed, scope)
        self.tensors = {name: ad.Tensor(arr, requires_grad=True)
                        for name, arr in raw.items()}

    def forward(self, packed: ad.Tensor) -> ad.Tensor:
        return recnet_graph(packed, self.tensors, self.cfg)

    def predict(self, packed: np.ndarray) -> np.ndarray:
        """Inference on a plain packed array; returns the field array."""
        return self.forward(ad.constant(packed)).data

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def named_parameters(self) -> dict[str, ad.Tensor]:
        return {self.prefix + name: t for name, t in self.tensors.items()}


def build_region_ensemble(acq_cfg: AcqNetConfig, rec_cfg: RecNetConfig, seed: int,
                          params: VariantParams | None = None,
                          n_regions: int = 4) -> tuple[AcqNet, list[RecNet]]:
    """One shared pattern set plus ``n_regions`` RecNets with shared init.

    Region k trains on inputs whose time axis is cyclically shifted by
    the region's timing offset, so each instance learns the pattern
    order its sensor rows actually see.
    """
    d = acq_cfg.dims
    if d.n_y % (n_regions * TILE):
        raise ValueError(f"n_y={d.n_y} not divisible by n_regions*{TILE}={n_regions * TILE}")
    if params is None:
        from .patterns import make_variant
        params = make_variant(acq_cfg.variant, d, seed)
    acq = AcqNet(acq_cfg, params)
    base = init_recnet_weights(rec_cfg, seed, scope="rec")
    recs = [RecNet(rec_cfg, seed, prefix=f"rec{k}.",
                   weights={n: a.copy() for n, a in base.items()})
            for k in range(n_regions)]
    return acq, recs
