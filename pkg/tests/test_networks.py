import numpy as np
import pytest
import torch

from strokeless.networks import (
    CascadeConfig,
    DiscConfig,
    EraserCascade,
    PatchDiscriminator,
    SNConv2d,
    UNet,
    UNetConfig,
    build_cascade,
    build_discriminator,
    erase_arrays,
    image_to_tensor,
    init_weights,
    mask_patch_weights,
    mask_to_tensor,
    tensor_to_image,
    tensor_to_mask,
)


def zero_weights(module: torch.nn.Module) -> None:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()


class TestUNetConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            UNetConfig(3, 1, levels=0)
        with pytest.raises(ValueError):
            UNetConfig(3, 1, base_channels=0)
        with pytest.raises(ValueError):
            UNetConfig(3, 1, first_kernel=7)
        with pytest.raises(ValueError):
            UNetConfig(3, 1, output_activation="relu")

    def test_channel_plan_caps_at_8x(self):
        cfg = UNetConfig(3, 1, base_channels=32, levels=5)
        assert cfg.channel_plan() == [32, 64, 128, 256, 256]


class TestUNet:
    def test_shape_preserved(self):
        net = UNet(UNetConfig(4, 1, base_channels=4, levels=3))
        out = net(torch.rand(2, 4, 32, 32))
        assert out.shape == (2, 1, 32, 32)

    def test_indivisible_size_rejected(self):
        net = UNet(UNetConfig(4, 1, base_channels=4, levels=5))
        with pytest.raises(ValueError):
            net(torch.rand(1, 4, 60, 60))

    def test_wrong_channels_rejected(self):
        net = UNet(UNetConfig(4, 1, base_channels=4, levels=3))
        with pytest.raises(ValueError):
            net(torch.rand(1, 3, 32, 32))

    def test_zero_weights_sigmoid_half(self):
        net = UNet(UNetConfig(4, 1, base_channels=4, levels=3, output_activation="sigmoid"))
        zero_weights(net)
        out = net(torch.rand(1, 4, 16, 16))
        assert torch.allclose(out, torch.full_like(out, 0.5))

    def test_zero_weights_tanh_zero(self):
        net = UNet(UNetConfig(5, 3, base_channels=4, levels=3, output_activation="tanh"))
        zero_weights(net)
        out = net(torch.rand(1, 5, 16, 16) * 2 - 1)
        assert torch.equal(out, torch.zeros_like(out))

    def test_output_ranges_on_random_weights(self):
        gen = torch.Generator().manual_seed(3)
        x = torch.rand(2, 5, 32, 32, generator=gen) * 2 - 1
        sig = UNet(UNetConfig(5, 1, base_channels=4, levels=3, output_activation="sigmoid"))
        init_weights(sig, 1)
        s = sig(x)
        assert s.min() >= 0.0 and s.max() <= 1.0
        tan = UNet(UNetConfig(5, 3, base_channels=4, levels=3, output_activation="tanh"))
        init_weights(tan, 2)
        t = tan(x)
        assert t.min() >= -1.0 and t.max() <= 1.0

    def test_single_level_edge_case(self):
        net = UNet(UNetConfig(3, 1, base_channels=4, levels=1))
        assert net(torch.rand(1, 3, 8, 8)).shape == (1, 1, 8, 8)


class TestCascade:
    def make(self, units=2, use_stroke_net=True, seed=0):
        return build_cascade(
            CascadeConfig(units=units, use_stroke_net=use_stroke_net,
                          base_channels=4, levels=3),
            seed=seed,
        )

    def test_output_shapes_match_input(self):
        net = self.make()
        img = torch.rand(2, 3, 32, 32) * 2 - 1
        reg = torch.ones(2, 1, 32, 32)
        out = net(img, reg)
        assert len(out.stroke_maps) == 2 and len(out.erased) == 2
        for s in out.stroke_maps:
            assert s.shape == (2, 1, 32, 32)
        for e in out.erased:
            assert e.shape == (2, 3, 32, 32)
        assert out.final_erased is out.erased[-1]
        assert out.final_stroke is out.stroke_maps[-1]

    def test_exactly_four_subnet_invocations_for_two_units(self):
        net = self.make()
        calls = []
        for unit_idx, unit in enumerate(net.units):
            for name in ("detect", "erase"):
                getattr(unit, name).register_forward_hook(
                    lambda m, i, o, tag=(unit_idx, name): calls.append(tag)
                )
        net(torch.rand(1, 3, 32, 32) * 2 - 1, torch.ones(1, 1, 32, 32))
        assert calls == [(0, "detect"), (0, "erase"), (1, "detect"), (1, "erase")]

    def test_erase_nets_use_5x5_first_kernel(self):
        net = self.make()
        for unit in net.units:
            assert unit.erase.encoder[0].kernel_size == (5, 5)
            assert unit.detect.encoder[0].kernel_size == (3, 3)
            for conv in list(unit.erase.encoder[1:]) + list(unit.erase.decoder):
                assert conv.kernel_size == (3, 3)

    def test_zero_weighted_second_unit(self):
        net = self.make()
        zero_weights(net.units[1])
        out = net(torch.rand(1, 3, 32, 32) * 2 - 1, torch.ones(1, 1, 32, 32))
        assert torch.allclose(out.stroke_maps[1], torch.full_like(out.stroke_maps[1], 0.5))
        assert torch.equal(out.erased[1], torch.zeros_like(out.erased[1]))
        assert not torch.allclose(out.stroke_maps[0], torch.full_like(out.stroke_maps[0], 0.5))

    def test_parameter_disjointness(self):
        net = self.make()
        img = torch.rand(1, 3, 32, 32) * 2 - 1
        reg = torch.ones(1, 1, 32, 32)
        probe_in = torch.cat([img, reg, torch.zeros(1, 1, 32, 32)], dim=1)
        before_detect2 = net.units[1].detect(torch.cat([img, reg, reg], dim=1))
        before_erase1 = net.units[0].erase(probe_in)
        with torch.no_grad():
            for p in net.units[0].detect.parameters():
                p.add_(1.0)
        assert torch.equal(net.units[1].detect(torch.cat([img, reg, reg], dim=1)), before_detect2)
        assert torch.equal(net.units[0].erase(probe_in), before_erase1)
        param_ids = [id(p) for p in net.parameters()]
        assert len(param_ids) == len(set(param_ids))

    def test_single_unit_returns_one_stage(self):
        net = self.make(units=1)
        out = net(torch.rand(1, 3, 32, 32) * 2 - 1, torch.ones(1, 1, 32, 32))
        assert len(out.stroke_maps) == 1 and len(out.erased) == 1

    def test_baseline_has_no_stroke_maps(self):
        net = self.make(units=1, use_stroke_net=False)
        out = net(torch.rand(1, 3, 32, 32) * 2 - 1, torch.ones(1, 1, 32, 32))
        assert out.stroke_maps == [] and out.final_stroke is None

    def test_cascading_requires_stroke_net(self):
        with pytest.raises(ValueError):
            CascadeConfig(units=2, use_stroke_net=False)

    def test_region_shape_checked(self):
        net = self.make()
        with pytest.raises(ValueError):
            net(torch.rand(1, 3, 32, 32), torch.ones(1, 1, 16, 16))

    def test_determinism(self):
        net = self.make(seed=9)
        img = torch.rand(1, 3, 32, 32) * 2 - 1
        reg = torch.ones(1, 1, 32, 32)
        a = net(img, reg)
        b = net(img, reg)
        assert torch.equal(a.final_erased, b.final_erased)
        rebuilt = self.make(seed=9)
        c = rebuilt(img, reg)
        assert torch.equal(a.final_erased, c.final_erased)


class TestDiscriminator:
    def test_score_map_geometry(self):
        disc = build_discriminator(DiscConfig(3, 4, 6), seed=0)
        scores = disc(torch.rand(1, 3, 256, 256) * 2 - 1)
        assert scores.shape[2:] == (4, 4)
        dm = mask_patch_weights(torch.ones(1, 1, 256, 256), layers=6)
        assert dm.shape[2:] == scores.shape[2:]

    def test_channel_plan_caps_at_4x(self):
        cfg = DiscConfig(3, 64, 6)
        assert cfg.channel_plan() == [64, 128, 256, 256, 256, 256]

    def test_indivisible_size_rejected(self):
        disc = build_discriminator(DiscConfig(3, 4, 4), seed=0)
        with pytest.raises(ValueError):
            disc(torch.rand(1, 3, 40, 40))

    def test_zero_weights_zero_scores(self):
        disc = PatchDiscriminator(DiscConfig(3, 4, 3))
        zero_weights(disc)
        for conv in disc.convs:
            with torch.no_grad():
                conv.u.normal_()
        out = disc.eval()(torch.rand(1, 3, 32, 32))
        assert torch.equal(out, torch.zeros_like(out))

    def test_spectral_norm_against_svd(self):
        torch.manual_seed(0)
        conv = SNConv2d(3, 8, 5, stride=2)
        with torch.no_grad():
            conv.weight.normal_()
            conv.u.normal_()
        conv.warmup()
        with torch.no_grad():
            est = float(conv.estimated_sigma())
        true = float(np.linalg.svd(conv.weight.detach().numpy().reshape(8, -1), compute_uv=False)[0])
        assert est == pytest.approx(true, rel=0.1)
        # post-normalization spectral norm within 1 + 1e-2
        normed = (conv.weight / conv.estimated_sigma()).detach().numpy().reshape(8, -1)
        assert np.linalg.svd(normed, compute_uv=False)[0] <= 1.0 + 1e-2

    def test_every_layer_normalized_after_init(self):
        disc = build_discriminator(DiscConfig(3, 8, 4), seed=3)
        for conv in disc.convs:
            w = conv.weight.detach().numpy()
            normed = (conv.weight / conv.estimated_sigma()).detach().numpy()
            top = np.linalg.svd(normed.reshape(w.shape[0], -1), compute_uv=False)[0]
            assert top <= 1.0 + 1e-2

    def test_eval_mode_does_not_mutate_estimate(self):
        disc = build_discriminator(DiscConfig(3, 4, 3), seed=1).eval()
        before = [conv.u.clone() for conv in disc.convs]
        disc(torch.rand(1, 3, 32, 32))
        for u0, conv in zip(before, disc.convs):
            assert torch.equal(u0, conv.u)

    def test_train_mode_updates_estimate(self):
        disc = build_discriminator(DiscConfig(3, 4, 3), seed=1).train()
        before = disc.convs[0].u.clone()
        disc(torch.rand(1, 3, 32, 32))
        assert not torch.equal(before, disc.convs[0].u)


class TestMaskBranch:
    def test_zero_mask_zero_weights(self):
        out = mask_patch_weights(torch.zeros(1, 1, 64, 64), layers=3)
        assert torch.equal(out, torch.zeros_like(out))

    def test_all_ones_256_interior_exactly_one(self):
        out = mask_patch_weights(torch.ones(1, 1, 256, 256), layers=6)[0, 0]
        assert out.shape == (4, 4)
        assert out[2, 2].item() == 1.0
        border = torch.cat([out[0, :], out[-1, :], out[:, 0], out[:, -1]])
        assert (border < 1.0).all()
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_monotone_in_mask(self):
        gen = torch.Generator().manual_seed(4)
        m = (torch.rand(1, 1, 64, 64, generator=gen) > 0.7).float()
        base = mask_patch_weights(m, layers=3)
        more = m.clone()
        more[0, 0, 10, 10] = 1.0
        assert (mask_patch_weights(more, layers=3) >= base).all()

    def test_linear_in_mask(self):
        gen = torch.Generator().manual_seed(5)
        m1 = torch.rand(1, 1, 64, 64, generator=gen)
        m2 = torch.rand(1, 1, 64, 64, generator=gen)
        a, b = 0.3, 0.4
        lhs = mask_patch_weights(a * m1 + b * m2, layers=3)
        rhs = a * mask_patch_weights(m1, layers=3) + b * mask_patch_weights(m2, layers=3)
        assert torch.allclose(lhs, rhs, atol=1e-6)

    def test_raw_sum_mode_scale(self):
        out = mask_patch_weights(torch.ones(1, 1, 256, 256), layers=6, normalized=False)
        assert out.max().item() == pytest.approx(25.0 ** 6, rel=1e-6)

    def test_never_requires_grad(self):
        m = torch.ones(1, 1, 64, 64)
        assert not mask_patch_weights(m, layers=3).requires_grad


class TestArrayBridge:
    def test_tensor_round_trip(self):
        rng = np.random.default_rng(6)
        img = rng.uniform(-1, 1, (16, 16, 3)).astype(np.float32)
        assert np.array_equal(tensor_to_image(image_to_tensor(img)), img)
        mask = (rng.random((16, 16)) > 0.5).astype(np.float32)
        assert np.array_equal(tensor_to_mask(mask_to_tensor(mask)), mask)

    def test_erase_arrays_pads_and_crops(self):
        net = build_cascade(CascadeConfig(units=2, base_channels=4, levels=3), seed=2)
        rng = np.random.default_rng(7)
        img = rng.uniform(-1, 1, (70, 50, 3)).astype(np.float32)
        reg = np.zeros((70, 50), dtype=np.float32)
        reg[10:30, 10:40] = 1.0
        out = erase_arrays(net, img, reg, pad_multiple=32)
        assert out["erased"].shape == (70, 50, 3)
        assert out["stroke_1"].shape == (70, 50)
        assert out["stroke_2"].shape == (70, 50)

    def test_erase_arrays_composite_preserves_outside(self):
        net = build_cascade(CascadeConfig(units=1, base_channels=4, levels=3), seed=2)
        rng = np.random.default_rng(8)
        img = rng.uniform(-1, 1, (64, 64, 3)).astype(np.float32)
        reg = np.zeros((64, 64), dtype=np.float32)
        reg[5:20, 5:20] = 1.0
        out = erase_arrays(net, img, reg, composite=True)["erased"]
        outside = reg == 0
        assert np.array_equal(out[outside], img[outside])
        assert not np.array_equal(out[~outside], img[~outside])

    def test_erase_arrays_shape_mismatch(self):
        net = build_cascade(CascadeConfig(units=1, base_channels=4, levels=3), seed=2)
        with pytest.raises(ValueError):
            erase_arrays(net, np.zeros((32, 32, 3), np.float32), np.zeros((16, 16), np.float32))
