"""LightFieldCamera estimator facade: params protocol, fit/transform/predict."""

import numpy as np
import pytest

from lfcam.core import CodedImage, Dims, LightField5D, pack_space_to_depth
from lfcam.estimator import (LightFieldCamera, check_is_fitted,
                             validate_field_array)
from lfcam.evaluate import capture_for_params

TINY = dict(n_u=2, n_v=2, n_y=16, n_x=16, n_t=2,
            steps=5, batch_size=2, channel_mult=0.05, depth_mult=0.1,
            crop=2, seed=0)


def make_scenes(dims, n, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.random(dims.shape).astype(np.float32) for _ in range(n)]


@pytest.fixture(scope="module")
def fitted():
    est = LightFieldCamera(**TINY)
    est.fit(make_scenes(est.dims(), 3))
    return est


class TestParamsProtocol:
    def test_defaults(self):
        p = LightFieldCamera().get_params()
        assert p["n_u"] == 3 and p["n_v"] == 3 and p["n_t"] == 2
        assert p["variant"] == "A+P"
        assert p["steps"] == 500
        assert p["lr"] == 3e-3
        assert p["channel_mult"] == 1.0
        assert p["depth_mult"] == 0.25
        assert p["crop"] == 8
        assert p["seed"] == 0

    def test_get_params_round_trips_through_constructor(self):
        est = LightFieldCamera(variant="Free5D", steps=7, lr=0.01)
        clone = LightFieldCamera(**est.get_params())
        assert clone.get_params() == est.get_params()

    def test_set_params_returns_self_and_applies(self):
        est = LightFieldCamera()
        out = est.set_params(steps=9, variant="P-only")
        assert out is est
        assert est.steps == 9 and est.variant == "P-only"

    def test_set_params_rejects_unknown(self):
        with pytest.raises(ValueError, match="learning_rate"):
            LightFieldCamera().set_params(learning_rate=0.1)

    def test_params_exclude_fitted_state(self, fitted):
        assert "acqnet_" not in fitted.get_params()
        assert set(fitted.get_params()) == set(LightFieldCamera().get_params())

    def test_dims_accessor(self):
        est = LightFieldCamera(**TINY)
        assert est.dims() == Dims(n_u=2, n_v=2, n_x=16, n_y=16, n_t=2)


class TestValidation:
    def test_unfitted_raises(self):
        est = LightFieldCamera(**TINY)
        scene = make_scenes(est.dims(), 1)[0]
        for method in (est.transform, est.predict, est.score):
            with pytest.raises(RuntimeError, match="not fitted"):
                method(scene)
        with pytest.raises(RuntimeError, match="not fitted"):
            est.as_model_fn()

    def test_check_is_fitted_names_missing(self):
        with pytest.raises(RuntimeError, match="acqnet_"):
            check_is_fitted(LightFieldCamera())

    def test_validate_shape_mismatch(self):
        dims = Dims(n_u=2, n_v=2, n_x=16, n_y=16, n_t=2)
        with pytest.raises(ValueError, match="shape"):
            validate_field_array(np.zeros((2, 2, 2, 8, 8)), dims)

    def test_validate_rejects_nan(self):
        dims = Dims(n_u=2, n_v=2, n_x=16, n_y=16, n_t=2)
        bad = np.zeros(dims.shape, dtype=np.float32)
        bad[0, 0, 0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            validate_field_array(bad, dims)

    def test_validate_accepts_wrapper_and_casts(self):
        dims = Dims(n_u=2, n_v=2, n_x=16, n_y=16, n_t=2)
        lf = LightField5D(dims, np.zeros(dims.shape, dtype=np.float32))
        out = validate_field_array(lf, dims)
        assert out.dtype == np.float32 and out.shape == dims.shape
        out64 = validate_field_array(np.zeros(dims.shape, dtype=np.float64), dims)
        assert out64.dtype == np.float32

    def test_fit_empty_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            LightFieldCamera(**TINY).fit([])

    def test_predict_wrong_shape_rejected(self, fitted):
        with pytest.raises(ValueError, match="shape"):
            fitted.predict(np.zeros((2, 2, 2, 8, 8), dtype=np.float32))


class TestFit:
    def test_fitted_attributes(self, fitted):
        assert hasattr(fitted, "acqnet_")
        assert hasattr(fitted, "recnets_") and len(fitted.recnets_) == 1
        assert hasattr(fitted, "result_")
        assert fitted.dims_ == fitted.dims()
        assert len(fitted.result_.rows) == TINY["steps"]

    def test_fit_returns_self(self):
        est = LightFieldCamera(**dict(TINY, steps=1))
        assert est.fit(make_scenes(est.dims(), 1)) is est

    def test_fit_accepts_dataset_object(self):
        est = LightFieldCamera(**dict(TINY, steps=2))
        scenes = make_scenes(est.dims(), 2)

        class DS:
            def __len__(self):
                return len(scenes)

            def sample(self, i):
                return scenes[i]

            def describe(self, i):
                return f"scene {i}"

        est.fit(DS())
        assert len(est.result_.rows) == 2

    def test_region_timing_builds_four_heads(self):
        est = LightFieldCamera(n_u=2, n_v=2, n_y=32, n_x=32, n_t=2,
                               steps=1, batch_size=1, channel_mult=0.05,
                               depth_mult=0.1, region_timing=True, seed=0)
        est.fit(make_scenes(est.dims(), 1))
        assert len(est.recnets_) == 4


class TestPredictTransform:
    def test_transform_shape_single_and_batch(self, fitted):
        scenes = make_scenes(fitted.dims_, 3, seed=5)
        single = fitted.transform(scenes[0])
        assert single.shape == (64, 2, 2)
        batch = fitted.transform(scenes)
        assert batch.shape == (3, 64, 2, 2)
        assert np.array_equal(batch[0], single)

    def test_transform_matches_capture_pipeline(self, fitted):
        scene = make_scenes(fitted.dims_, 1, seed=6)[0]
        coded = capture_for_params(fitted.acqnet_.params,
                                   LightField5D(fitted.dims_, scene),
                                   mode="binary")
        expected = pack_space_to_depth(CodedImage(coded.astype(np.float32))).data
        assert np.array_equal(fitted.transform(scene), expected)

    def test_predict_shape_and_determinism(self, fitted):
        scene = make_scenes(fitted.dims_, 1, seed=7)[0]
        a = fitted.predict(scene)
        b = fitted.predict(scene)
        assert a.shape == fitted.dims_.shape
        assert np.array_equal(a, b)
        batch = fitted.predict([scene, scene])
        assert batch.shape == (2,) + fitted.dims_.shape
        assert np.array_equal(batch[0], a)

    def test_score_is_finite_mean_psnr(self, fitted):
        scene = make_scenes(fitted.dims_, 1, seed=8)[0]
        s = fitted.score(scene)
        assert np.isfinite(s)
        assert s > 0.0
        assert fitted.score([scene, scene]) == pytest.approx(s)

    def test_as_model_fn_matches_predict(self, fitted):
        scene = make_scenes(fitted.dims_, 1, seed=9)[0]
        fn = fitted.as_model_fn()
        assert np.array_equal(fn(scene), fitted.predict(scene))
