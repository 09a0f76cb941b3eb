"""Estimator-style facade over the capture/train/reconstruct pipeline.

:class:`LightFieldCamera` follows the fit/transform/predict convention:
constructor arguments are plain hyperparameters stored verbatim,
``fit`` runs the joint optimization, ``transform`` maps scenes to packed
measurements (the acquisition half), ``predict`` reconstructs light
fields from scenes, and ``score`` reports mean PSNR.  ``get_params`` /
``set_params`` make instances clonable by the usual grid-search
machinery without importing any of it.

Attributes learned by ``fit`` carry the trailing-underscore convention
(``acqnet_``, ``recnets_``, ``result_``).  Prediction is deterministic:
the deploy path uses binarized exposure patterns and no sensor noise.
"""

from __future__ import annotations

import inspect

import numpy as np

from .core import DTYPE, Dims, LightField5D, CodedImage, pack_space_to_depth
from .evaluate import DEFAULT_CROP, capture_for_params, crop_border, psnr, _finite_mean
from .nets import AcqNet, AcqNetConfig, RecNet, RecNetConfig, build_region_ensemble
from .patterns import make_variant
from .train import TrainConfig, train


def check_is_fitted(estimator, attributes=("acqnet_",)) -> None:
    missing = [a for a in attributes if not hasattr(estimator, a)]
    if missing:
        raise RuntimeError(
            f"{type(estimator).__name__} is not fitted yet; call fit() first "
            f"(missing {missing})"
        )


def validate_field_array(X, dims: Dims) -> np.ndarray:
    """Coerce one scene to a float32 (n_t, n_v, n_u, n_y, n_x) array."""
    if isinstance(X, LightField5D):
        X = X.data
    arr = np.asarray(X, dtype=DTYPE)
    if arr.shape != dims.shape:
        raise ValueError(f"scene shape {arr.shape} does not match dims {dims.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("scene contains non-finite values")
    return arr


class _ArrayDataset:
    """List-of-arrays adapter for the training loop."""

    def __init__(self, scenes: list[np.ndarray]):
        self.scenes = scenes

    def __len__(self) -> int:
        return len(self.scenes)

    def sample(self, i: int) -> np.ndarray:
        return self.scenes[i]

    def describe(self, i: int) -> str:
        return f"array scene {i}"


class LightFieldCamera:
    """Jointly learned compressive light-field camera.

    Parameters
    ----------
    n_u, n_v, n_y, n_x, n_t : sensor and light-field extents
    variant : one of "A+P", "A-only", "P-only", "Ordinary", "Free5D"
    steps, lr, batch_size, noise_sigma : training-loop knobs
    channel_mult, depth_mult : desk-scale shrink factors for RecNet
    region_timing : train four region instances on time-shifted inputs
    crop : border pixels ignored by ``score``
    seed : root seed for every random substream
    """

    def __init__(self, n_u=3, n_v=3, n_y=32, n_x=32, n_t=2, variant="A+P",
                 steps=500, lr=3e-3, batch_size=8, noise_sigma=0.005,
                 channel_mult=1.0, depth_mult=0.25, region_timing=False,
                 crop=DEFAULT_CROP, seed=0):
        self.n_u = n_u
        self.n_v = n_v
        self.n_y = n_y
        self.n_x = n_x
        self.n_t = n_t
        self.variant = variant
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.noise_sigma = noise_sigma
        self.channel_mult = channel_mult
        self.depth_mult = depth_mult
        self.region_timing = region_timing
        self.crop = crop
        self.seed = seed

    # -- parameter protocol --------------------------------------------------

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep=True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "LightFieldCamera":
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"invalid parameter {key!r} for "
                                 f"{type(self).__name__}; valid: {sorted(valid)}")
            setattr(self, key, value)
        return self

    def dims(self) -> Dims:
        return Dims(n_u=self.n_u, n_v=self.n_v, n_x=self.n_x, n_y=self.n_y,
                    n_t=self.n_t)

    # -- estimator API ---------------------------------------------------------

    def fit(self, X, y=None, out_dir: str | None = None) -> "LightFieldCamera":
        """Jointly train patterns and reconstruction on scenes X.

        X is either a dataset object (``__len__`` + ``sample(i)``) or a
        sequence of (n_t, n_v, n_u, n_y, n_x) arrays.  y is ignored; the
        scenes are their own reconstruction targets.
        """
        d = self.dims()
        if hasattr(X, "sample") and hasattr(X, "__len__"):
            dataset = X
        else:
            dataset = _ArrayDataset([validate_field_array(s, d) for s in X])
        if len(dataset) == 0:
            raise ValueError("fit requires at least one scene")
        acq_cfg = AcqNetConfig(dims=d, variant=self.variant,
                               noise_sigma=self.noise_sigma,
                               region_timing=self.region_timing)
        rec_cfg = RecNetConfig(dims=d, channel_mult=self.channel_mult,
                               depth_mult=self.depth_mult)
        tcfg = TrainConfig(steps=self.steps, lr=self.lr,
                           batch_size=self.batch_size,
                           noise_sigma=self.noise_sigma, seed=self.seed)
        if self.region_timing:
            acq, recs = build_region_ensemble(acq_cfg, rec_cfg, self.seed)
        else:
            acq = AcqNet(acq_cfg, make_variant(self.variant, d, self.seed))
            recs = [RecNet(rec_cfg, self.seed)]
        self.result_ = train(acq, recs, dataset, tcfg, out_dir=out_dir)
        self.acqnet_ = acq
        self.recnets_ = recs
        self.dims_ = d
        return self

    def transform(self, X) -> np.ndarray:
        """Acquisition half: scene -> packed measurement (deploy path).

        Accepts a single scene or a sequence; returns the packed
        (64, n_y/8, n_x/8) tensor(s) from the binarized patterns,
        noise-free.
        """
        check_is_fitted(self)
        single = self._is_single(X)
        scenes = [X] if single else list(X)
        out = [self._measure(validate_field_array(s, self.dims_)) for s in scenes]
        return out[0] if single else np.stack(out)

    def predict(self, X) -> np.ndarray:
        """Capture and reconstruct scene(s); returns field array(s)."""
        check_is_fitted(self)
        single = self._is_single(X)
        scenes = [X] if single else list(X)
        out = []
        for s in scenes:
            packed = self._measure(validate_field_array(s, self.dims_))
            out.append(self.recnets_[0].predict(packed))
        return out[0] if single else np.stack(out)

    def score(self, X, y=None) -> float:
        """Mean border-cropped PSNR of predictions against the scenes."""
        check_is_fitted(self)
        single = self._is_single(X)
        scenes = [X] if single else list(X)
        vals = []
        for s in scenes:
            truth = validate_field_array(s, self.dims_)
            recon = self.predict(truth)
            for t in range(self.dims_.n_t):
                for v in range(self.dims_.n_v):
                    for u in range(self.dims_.n_u):
                        vals.append(psnr(crop_border(recon[t, v, u], self.crop),
                                         crop_border(truth[t, v, u], self.crop)))
        return _finite_mean(np.asarray(vals))

    # -- internals -------------------------------------------------------------

    def _is_single(self, X) -> bool:
        if isinstance(X, LightField5D):
            return True
        arr = np.asarray(X, dtype=object) if isinstance(X, (list, tuple)) else np.asarray(X)
        return getattr(arr, "ndim", 0) == 5

    def _measure(self, scene: np.ndarray) -> np.ndarray:
        coded = capture_for_params(self.acqnet_.params,
                                   LightField5D(self.dims_, scene), mode="binary")
        return pack_space_to_depth(CodedImage(coded.astype(DTYPE))).data

    def as_model_fn(self):
        """Adapter for the evaluation harness: scene array -> recon array."""
        check_is_fitted(self)
        return lambda scene: self.predict(scene)
