import pytest
import torch

from tilemat import networks as nets
from tilemat.diagnostics import equivariance_error, seam_score
from tilemat.material import STOCK_CLASSES
from tilemat.periodic_ops import cyclic_translate


def small_cfg(conditional=False, out_channels=5, padding_mode="circular", res=32):
    return nets.GeneratorConfig(
        out_resolution=res, latent_dim=16, style_dim=16, channel_base=256,
        channel_max=32, conditional=conditional, out_channels=out_channels,
        mapping_layers=2, padding_mode=padding_mode)


def make_bundle(gen, batch=1, seed=0):
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(batch, gen.cfg.latent_dim, generator=g)
    w = gen.map_latent(z)
    return nets.LatentBundle(z, gen.broadcast_w(w), gen.make_noise(batch, g))


def square_pattern(res, period=16):
    ij = torch.arange(res)
    p = ((ij[:, None] % period < period // 2) & (ij[None, :] % period < period // 2))
    return p.float().view(1, res, res)


class TestConfig:
    def test_resolution_validation(self):
        with pytest.raises(ValueError):
            nets.GeneratorConfig(out_resolution=24)
        with pytest.raises(ValueError):
            nets.GeneratorConfig(out_resolution=16)

    def test_base_resolution(self):
        assert small_cfg(conditional=False).base_resolution == 4
        assert small_cfg(conditional=True).base_resolution == 2
        cfg512 = nets.GeneratorConfig(out_resolution=512, conditional=True)
        assert cfg512.base_resolution == 32

    def test_channel_schedule_monotone(self):
        cfg = nets.GeneratorConfig(out_resolution=64)
        chans = [cfg.channels(r) for r in cfg.synthesis_resolutions]
        assert all(a >= b for a, b in zip(chans, chans[1:]))
        assert min(chans) >= 8

    def test_roundtrip_dict(self):
        cfg = small_cfg(conditional=True)
        assert nets.GeneratorConfig.from_dict(cfg.to_dict()) == cfg


class TestMapping:
    def test_deterministic_and_shape(self):
        gen = nets.Generator(small_cfg())
        z = torch.randn(4, 16)
        a = gen.map_latent(z)
        b = gen.map_latent(z)
        assert a.shape == (4, 16)
        assert torch.equal(a, b)

    def test_scale_invariance_from_pixel_norm(self):
        gen = nets.Generator(small_cfg())
        z = torch.randn(2, 16)
        assert torch.allclose(gen.map_latent(z), gen.map_latent(3.0 * z), atol=1e-5)


class TestPatternEncoder:
    def test_output_shape(self):
        cfg = small_cfg(conditional=True, res=64)
        gen = nets.Generator(cfg)
        phi = gen.encode_pattern(square_pattern(64))
        assert phi.shape[-1] == cfg.base_resolution

    def test_stride_multiple_equivariance_exact(self):
        cfg = small_cfg(conditional=True, res=64)
        gen = nets.Generator(cfg)
        p = torch.rand(1, 1, 64, 64)
        with torch.no_grad():
            a = gen.encode_pattern(cyclic_translate(p, (16, 32)))
            b = cyclic_translate(gen.encode_pattern(p), (1, 2))
        assert float((a - b).abs().max()) == 0.0

    def test_constant_pattern_constant_features(self):
        gen = nets.Generator(small_cfg(conditional=True, res=64))
        with torch.no_grad():
            phi = gen.encode_pattern(torch.full((1, 1, 64, 64), 0.7))
        flat = phi.flatten(2)
        assert float((flat - flat[:, :, :1]).abs().max()) < 1e-5

    def test_unconditional_has_no_encoder(self):
        gen = nets.Generator(small_cfg())
        with pytest.raises(ValueError, match="unconditional"):
            gen.encode_pattern(square_pattern(32))


class TestSynthesis:
    def test_output_shape_and_range(self):
        gen = nets.Generator(small_cfg(res=64))
        with torch.no_grad():
            out = gen.generate(torch.randn(2, 16))
        assert out.shape == (2, 5, 64, 64)
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0

    def test_metal_has_six_channels(self):
        gen = nets.Generator(small_cfg(out_channels=6))
        out = gen.generate(torch.randn(1, 16))
        assert out.shape[1] == 6

    def test_seam_statistics(self):
        gen = nets.Generator(small_cfg(res=64))
        out = gen.generate(torch.randn(1, 16),
                           generator=torch.Generator().manual_seed(1))
        assert 0.7 <= seam_score(out[0]) <= 1.4

    def test_joint_shift_equivariance_exact(self):
        # translating pattern and noise by a stride multiple translates the
        # output identically, bit for bit
        cfg = small_cfg(conditional=True, res=64)
        gen = nets.Generator(cfg)
        p = square_pattern(64)
        bundle = make_bundle(gen, seed=2)
        assert equivariance_error(gen, bundle, p, (16, 48)) == 0.0

    def test_zero_padding_control_breaks_equivariance(self):
        cfg = small_cfg(conditional=True, res=64, padding_mode="zeros")
        gen = nets.Generator(cfg)
        p = square_pattern(64)
        bundle = make_bundle(gen, seed=2)
        assert equivariance_error(gen, bundle, p, (16, 48)) > 1e-2

    def test_generate_deterministic_given_noise_generator(self):
        gen = nets.Generator(small_cfg())
        z = torch.randn(1, 16)
        a = gen.generate(z, generator=torch.Generator().manual_seed(7))
        b = gen.generate(z, generator=torch.Generator().manual_seed(7))
        assert torch.equal(a, b)

    def test_z_changes_output(self):
        gen = nets.Generator(small_cfg())
        g1 = torch.Generator().manual_seed(7)
        g2 = torch.Generator().manual_seed(7)
        a = gen.generate(torch.zeros(1, 16), generator=g1)
        b = gen.generate(torch.ones(1, 16), generator=g2)
        assert float((a - b).abs().max()) > 1e-3

    def test_bundle_shape_validation(self):
        gen = nets.Generator(small_cfg())
        bundle = make_bundle(gen)
        bad = nets.LatentBundle(bundle.z, bundle.w_plus[:, :-1], bundle.noise)
        with pytest.raises(ValueError, match="w\\+"):
            gen.synthesize(bad)
        bad = nets.LatentBundle(bundle.z, bundle.w_plus, bundle.noise[:-1])
        with pytest.raises(ValueError, match="noise"):
            gen.synthesize(bad)

    def test_conditional_requires_pattern(self):
        gen = nets.Generator(small_cfg(conditional=True))
        bundle = make_bundle(gen)
        with pytest.raises(ValueError, match="pattern"):
            gen.synthesize(bundle)


class TestDiscriminator:
    def test_logit_shape(self):
        cfg = small_cfg(res=32)
        d = nets.Discriminator(cfg)
        out = d(torch.rand(3, 5, 32, 32))
        assert out.shape == (3,)

    def test_conditional_channel_count(self):
        cfg = small_cfg(conditional=True, res=32)
        d = nets.Discriminator(cfg)
        assert d.in_channels == 6
        out = d(torch.rand(2, 5, 32, 32), torch.rand(2, 1, 32, 32))
        assert out.shape == (2,)
        with pytest.raises(ValueError, match="channels"):
            d(torch.rand(2, 5, 32, 32))

    def test_minibatch_stddev_path(self):
        d = nets.Discriminator(small_cfg(res=32), minibatch_stddev=True)
        assert d(torch.rand(4, 5, 32, 32)).shape == (4,)


class TestAudit:
    def test_circular_nets_clean(self):
        cfg = small_cfg(conditional=True, res=32)
        assert nets.audit_spatial_ops(nets.Generator(cfg)) == []
        assert nets.audit_spatial_ops(nets.Discriminator(cfg)) == []

    def test_zero_padding_flagged(self):
        cfg = small_cfg(conditional=True, res=32, padding_mode="zeros")
        assert len(nets.audit_spatial_ops(nets.Generator(cfg))) > 0

    def test_raw_conv_flagged(self):
        m = torch.nn.Sequential(torch.nn.Conv2d(3, 3, 3))
        assert nets.audit_spatial_ops(m) == ["0"]


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        cfg = small_cfg(conditional=True, res=32)
        gen = nets.Generator(cfg)
        nets.save_generator_checkpoint(tmp_path / "g.pt", gen, STOCK_CLASSES["tile"])
        loaded, spec = nets.load_generator_checkpoint(tmp_path / "g.pt")
        assert spec.name == "tile"
        assert loaded.cfg == cfg
        for (ka, a), (kb, b) in zip(gen.state_dict().items(),
                                    loaded.state_dict().items()):
            assert ka == kb and torch.equal(a, b)

    def test_schema_mismatch(self, tmp_path):
        torch.save({"schema": "other", "state_dict": {}}, tmp_path / "g.pt")
        with pytest.raises(ValueError, match="schema"):
            nets.load_generator_checkpoint(tmp_path / "g.pt")
