"""AcqNet/RecNet graphs: shapes, physics equivalence, init discipline."""

import numpy as np
import pytest

from lfcam import autodiff as ad
from lfcam.core import CodedImage, Dims, pack_space_to_depth
from lfcam.forward import AperturePattern, add_sensor_noise, coded_capture, normalize_capture
from lfcam.nets import (
    AcqNet,
    AcqNetConfig,
    RecNet,
    RecNetConfig,
    acqnet_graph,
    build_region_ensemble,
    field_channel,
    init_recnet_weights,
)
from lfcam.patterns import make_variant

from conftest import random_field


class TestRecNetConfig:
    def test_reference_head_schedule(self):
        """At n_t=4 full width the head ramp is 96, 128, 160, 208, 256."""
        cfg = RecNetConfig(dims=Dims(n_t=4))
        assert cfg.resolved_head() == (96, 128, 160, 208, 256)

    def test_final_head_width_pinned(self, desk_dims):
        cfg = RecNetConfig(dims=desk_dims, channel_mult=0.25)
        head = cfg.resolved_head()
        assert head[-1] == 64 * desk_dims.n_t
        with pytest.raises(ValueError):
            RecNetConfig(dims=desk_dims, head_widths=(16, 16, 16, 16, 100)).resolved_head()

    def test_channel_mult_floors_at_8(self, desk_dims):
        cfg = RecNetConfig(dims=desk_dims, channel_mult=0.01)
        plan = dict((n, (ci, co)) for n, ci, co, _ in cfg.layer_plan())
        assert plan["head0"][1] == 8

    def test_layer_plan_interface_channels(self, desk_dims):
        cfg = RecNetConfig(dims=desk_dims, channel_mult=0.5, depth_mult=0.5)
        plan = cfg.layer_plan()
        names = [p[0] for p in plan]
        assert names[0] == "head0" and names[4] == "head4"
        by_name = {n: (ci, co, r) for n, ci, co, r in plan}
        assert by_name["head0"][0] == 64
        assert by_name["head4"][1] == 64 * desk_dims.n_t
        assert by_name["entry0"][0] == desk_dims.n_t
        assert by_name["entry1"][1] == cfg.n_channels
        assert plan[-1][2] == cfg.n_channels
        assert plan[-1][3] is False  # last refine conv has no relu
        assert all(r for n, _, _, r in plan[:-1])

    def test_depth_mult_scales_refine_count(self, desk_dims):
        full = RecNetConfig(dims=desk_dims, depth_mult=1.0)
        quarter = RecNetConfig(dims=desk_dims, depth_mult=0.25)
        n_full = sum(1 for n, *_ in full.layer_plan() if n.startswith("refine"))
        n_quarter = sum(1 for n, *_ in quarter.layer_plan() if n.startswith("refine"))
        assert n_full == 19
        assert n_quarter == round(19 * 0.25)

    def test_single_refine_layer_special_case(self, desk_dims):
        cfg = RecNetConfig(dims=desk_dims, refine_layers=1)
        refine = [p for p in cfg.layer_plan() if p[0].startswith("refine")]
        assert refine == [("refine0", cfg.n_channels, cfg.n_channels, False)]

    def test_n_channels(self, desk_dims):
        assert RecNetConfig(dims=desk_dims).n_channels == 2 * 3 * 3


class TestChannelBijection:
    def test_formula_and_round_trip(self, desk_dims):
        d = desk_dims
        seen = set()
        for t in range(d.n_t):
            for v in range(d.n_v):
                for u in range(d.n_u):
                    c = field_channel(u, v, t, d)
                    assert c == u + d.n_u * (v + d.n_v * t)
                    seen.add(c)
        assert seen == set(range(d.n_t * d.n_v * d.n_u))

    def test_matches_reshape_order(self, desk_dims, rng):
        """Reshaping (C, H, W) to the field must land channel c at (t, v, u)."""
        d = desk_dims
        n_ch = d.n_t * d.n_v * d.n_u
        stack = rng.random((n_ch, d.n_y, d.n_x)).astype(np.float32)
        field = stack.reshape(d.shape)
        for t in range(d.n_t):
            for v in range(d.n_v):
                for u in range(d.n_u):
                    np.testing.assert_array_equal(
                        field[t, v, u], stack[field_channel(u, v, t, d)]
                    )


class TestAcqNet:
    def build(self, variant, dims, seed=0, sigma=0.0):
        params = make_variant(variant, dims, seed)
        cfg = AcqNetConfig(dims=dims, variant=variant, noise_sigma=sigma)
        return AcqNet(cfg, params)

    def test_output_shape(self, desk_dims):
        acq = self.build("A+P", desk_dims)
        out = acq.forward(np.zeros(desk_dims.shape, dtype=np.float32))
        assert out.data.shape == (64, desk_dims.n_y // 8, desk_dims.n_x // 8)

    @pytest.mark.parametrize("variant", ["A+P", "A-only", "P-only", "Ordinary"])
    def test_binary_mode_equals_physics_path(self, variant, desk_dims, rng):
        """Graph capture with hard patterns == forward-module capture, packed."""
        lf = random_field(desk_dims, rng)
        acq = self.build(variant, desk_dims, seed=3)
        got = acq.forward(lf, mode="binary").data

        a = AperturePattern(acq.params.aperture_values())
        tiles = acq.params.exposure_tiles(mode="binary")
        full = np.tile(tiles, (1, desk_dims.n_y // 8, desk_dims.n_x // 8))
        from lfcam.core import LightField5D

        img = normalize_capture(coded_capture(LightField5D(desk_dims, lf), a, full), desk_dims)
        want = pack_space_to_depth(img).data
        assert np.abs(got - want).max() <= 1e-6

    def test_free5d_graph_equals_physics_path(self, desk_dims, rng):
        from lfcam.core import LightField5D
        from lfcam.forward import Free5DMask, free5d_capture

        lf = random_field(desk_dims, rng)
        acq = self.build("Free5D", desk_dims, seed=3)
        got = acq.forward(lf, mode="binary").data
        img = normalize_capture(
            free5d_capture(LightField5D(desk_dims, lf), Free5DMask(acq.params.mask_values())),
            desk_dims,
        )
        want = pack_space_to_depth(img).data
        assert np.abs(got - want).max() <= 1e-6

    def test_train_mode_uses_relaxed_tiles(self, desk_dims, rng):
        lf = random_field(desk_dims, rng)
        acq = self.build("A+P", desk_dims, seed=1)
        relaxed = acq.forward(lf, mode="train", tau=1.0).data
        hard = acq.forward(lf, mode="binary").data
        assert np.abs(relaxed - hard).max() > 1e-3  # tau=1 is far from binary

    def test_noise_node_added(self, desk_dims, rng):
        lf = random_field(desk_dims, rng)
        acq = self.build("A+P", desk_dims)
        clean = acq.forward(lf, mode="binary").data
        noise = rng.normal(0, 0.01, (desk_dims.n_t, desk_dims.n_y, desk_dims.n_x))
        # the noise node enters pre-packing at full resolution
        noisy = acq.forward(lf, mode="binary",
                            noise=noise.sum(axis=0, keepdims=False)[None][0]).data
        assert np.any(noisy != clean)

    def test_gradients_reach_only_trainable_slots(self, desk_dims, rng):
        lf = random_field(desk_dims, rng)
        for variant, names in [
            ("A+P", {"pattern.aperture", "pattern.exp_rows", "pattern.exp_cols"}),
            ("A-only", {"pattern.aperture"}),
            ("P-only", {"pattern.exp_rows", "pattern.exp_cols"}),
            ("Ordinary", set()),
            ("Free5D", {"pattern.mask"}),
        ]:
            acq = self.build(variant, desk_dims, seed=2)
            out = acq.forward(lf, mode="train", tau=1.0)
            loss = ad.mse(out, ad.constant(np.zeros_like(out.data)))
            loss.backward()
            assert set(acq.tensors) == names
            for name, tensor in acq.tensors.items():
                assert tensor.grad is not None and np.any(tensor.grad != 0), (variant, name)

    def test_binary_mode_still_trains_aperture(self, desk_dims, rng):
        """Deployment-mode exposure is constant, but aperture stays live."""
        lf = random_field(desk_dims, rng)
        acq = self.build("A+P", desk_dims, seed=2)
        out = acq.forward(lf, mode="binary")
        ad.mse(out, ad.constant(np.zeros_like(out.data))).backward()
        assert acq.tensors["pattern.aperture"].grad is not None
        assert acq.tensors["pattern.exp_rows"].grad is None

    def test_tensors_alias_params(self, desk_dims):
        acq = self.build("A+P", desk_dims)
        acq.tensors["pattern.aperture"].data[0, 0, 0] = 0.123
        assert acq.params.aperture[0, 0, 0] == np.float32(0.123)

    def test_shape_mismatch_rejected(self, desk_dims):
        acq = self.build("A+P", desk_dims)
        with pytest.raises(ValueError):
            acq.forward(np.zeros((1, 3, 3, 32, 32), dtype=np.float32))


class TestRecNet:
    def test_output_shape_and_determinism(self, desk_dims, rng):
        cfg = RecNetConfig(dims=desk_dims, channel_mult=0.25, depth_mult=0.25)
        net = RecNet(cfg, seed=0)
        packed = rng.random((64, 4, 4)).astype(np.float32)
        a = net.predict(packed)
        b = net.predict(packed)
        assert a.shape == desk_dims.shape
        np.testing.assert_array_equal(a, b)

    def test_init_is_seeded_and_scoped(self, desk_dims):
        cfg = RecNetConfig(dims=desk_dims, channel_mult=0.25, depth_mult=0.25)
        w1 = init_recnet_weights(cfg, seed=0)
        w2 = init_recnet_weights(cfg, seed=0)
        w3 = init_recnet_weights(cfg, seed=1)
        for name in w1:
            np.testing.assert_array_equal(w1[name], w2[name])
        assert any(np.any(w1[n] != w3[n]) for n in w1 if n.endswith(".w"))

    def test_he_init_statistics(self, desk_dims):
        cfg = RecNetConfig(dims=desk_dims)
        w = init_recnet_weights(cfg, seed=0)["head0.w"]
        std = np.sqrt(2.0 / (64 * 9))
        assert w.std() == pytest.approx(std, rel=0.1)
        b = init_recnet_weights(cfg, seed=0)["head0.b"]
        assert np.all(b == 0)

    def test_zero_input_gives_zero_output(self, desk_dims):
        """Zero biases and zero input propagate to exactly zero (ReLU net)."""
        cfg = RecNetConfig(dims=desk_dims, channel_mult=0.25, depth_mult=0.25)
        net = RecNet(cfg, seed=0)
        out = net.predict(np.zeros((64, 4, 4), dtype=np.float32))
        np.testing.assert_array_equal(out, np.zeros(desk_dims.shape, dtype=np.float32))

    def test_n_parameters_matches_plan(self, desk_dims):
        cfg = RecNetConfig(dims=desk_dims, channel_mult=0.25, depth_mult=0.25)
        net = RecNet(cfg, seed=0)
        want = sum(co * ci * 9 + co for _, ci, co, _ in cfg.layer_plan())
        assert net.n_parameters() == want

    def test_named_parameters_prefixed(self, desk_dims):
        cfg = RecNetConfig(dims=desk_dims, channel_mult=0.25, depth_mult=0.25)
        net = RecNet(cfg, seed=0, prefix="rec2.")
        names = set(net.named_parameters())
        assert all(n.startswith("rec2.") for n in names)
        assert "rec2.head0.w" in names

    def test_packed_shape_validated(self, desk_dims, rng):
        cfg = RecNetConfig(dims=desk_dims, channel_mult=0.25, depth_mult=0.25)
        net = RecNet(cfg, seed=0)
        with pytest.raises(ValueError):
            net.predict(rng.random((64, 5, 4)).astype(np.float32))

    def test_residual_connection_feeds_output(self, desk_dims, rng):
        """The output equals entry1 activations plus the refine correction."""
        cfg = RecNetConfig(dims=desk_dims, channel_mult=0.25, depth_mult=0.25)
        net = RecNet(cfg, seed=0)
        packed = rng.random((64, 4, 4)).astype(np.float32)
        out = net.forward(ad.constant(packed))
        assert out.op == "reshape"
        add_node = out._parents[0]
        assert add_node.op == "add"


class TestEndToEndGradients:
    def test_composed_loss_gradcheck(self):
        """Finite-difference probe through acqnet -> recnet -> mse."""
        from lfcam.autodiff import grad_check
        from lfcam.train import mse_loss

        dims = Dims(n_u=2, n_v=2, n_x=16, n_y=16, n_t=2)
        params = make_variant("A+P", dims, seed=0)
        acq_cfg = AcqNetConfig(dims=dims)
        rec_cfg = RecNetConfig(dims=dims, channel_mult=0.05, depth_mult=0.1)
        weights = init_recnet_weights(rec_cfg, seed=0)
        # Probe around nonzero biases: at the all-zero-bias init the ReLU
        # pre-activations are densest at the kink, and a bias probe shifts a
        # whole channel by eps, so nearly every probe straddles a sign change.
        bias_rng = np.random.default_rng(99)
        for n in weights:
            if n.endswith(".b"):
                shift = bias_rng.uniform(0.15, 0.3, weights[n].shape)
                weights[n] = (weights[n] + shift).astype(weights[n].dtype)

        base = dict(params.trainable())
        base.update(weights)
        classes = ["pattern.aperture", "pattern.exp_rows", "pattern.exp_cols",
                   "head0.w", "entry1.b", "refine0.w"]

        from lfcam.nets import recnet_graph

        for probed in classes:
            # Probes that straddle a ReLU sign change are screened out, so
            # accumulate clean probes across independent scenes until each
            # layer class has at least three.
            checked = 0
            for scene_seed in range(8):
                rng = np.random.default_rng(scene_seed)
                lf = rng.random(dims.shape).astype(np.float64)

                def fn(leaves, probed=probed, lf=lf):
                    full = {n: (leaves[0] if n == probed
                                else ad.constant(base[n])) for n in base}
                    acq_t = {n: full[n] for n in params.trainable()}
                    packed = acqnet_graph(ad.constant(lf), acq_t, params,
                                          acq_cfg, mode="train", tau=1.0)
                    out = recnet_graph(packed, {n: full[n] for n in weights},
                                       rec_cfg)
                    return ad.mse(out, ad.constant(lf))

                report = grad_check(fn, [base[probed]], tolerance=1e-4,
                                    eps=1e-3, max_probes=4, exclude_kinks=True)
                assert report.passed, f"{probed}: {report!r}"
                checked += report.checked
                if checked >= 3:
                    break
            assert checked >= 3, f"{probed}: only {checked} clean probes"


class TestRegionEnsemble:
    def test_shared_init_and_pattern(self, desk_dims):
        acq_cfg = AcqNetConfig(dims=desk_dims, variant="A+P", region_timing=True)
        rec_cfg = RecNetConfig(dims=desk_dims, channel_mult=0.25, depth_mult=0.25)
        acq, recs = build_region_ensemble(acq_cfg, rec_cfg, seed=0, n_regions=4)
        assert len(recs) == 4
        for k in range(1, 4):
            for name in recs[0].tensors:
                np.testing.assert_array_equal(recs[0].tensors[name].data,
                                              recs[k].tensors[name].data)
        # same weights but independent buffers
        recs[0].tensors["head0.w"].data[0, 0, 0, 0] += 1.0
        assert recs[1].tensors["head0.w"].data[0, 0, 0, 0] != \
            recs[0].tensors["head0.w"].data[0, 0, 0, 0]

    def test_prefixes_distinct(self, desk_dims):
        acq_cfg = AcqNetConfig(dims=desk_dims, variant="A+P")
        rec_cfg = RecNetConfig(dims=desk_dims, channel_mult=0.25, depth_mult=0.25)
        _, recs = build_region_ensemble(acq_cfg, rec_cfg, seed=0, n_regions=2)
        names0 = set(recs[0].named_parameters())
        names1 = set(recs[1].named_parameters())
        assert not names0 & names1

    def test_row_divisibility_enforced(self):
        dims = Dims(n_u=2, n_v=2, n_x=16, n_y=16, n_t=2)
        acq_cfg = AcqNetConfig(dims=dims)
        rec_cfg = RecNetConfig(dims=dims)
        with pytest.raises(ValueError):
            build_region_ensemble(acq_cfg, rec_cfg, seed=0, n_regions=4)
