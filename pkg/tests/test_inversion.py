import numpy as np
import pytest
import torch

from tilemat import inversion as inv
from tilemat.losses import FeatureExtractor
from tilemat.material import MaterialMaps
from tilemat.networks import Generator, GeneratorConfig
from tilemat.render import RenderSetup, render


def small_gen(conditional=False, seed=0):
    torch.manual_seed(seed)
    cfg = GeneratorConfig(out_resolution=32, latent_dim=16, style_dim=16,
                          channel_base=256, channel_max=16,
                          conditional=conditional, mapping_layers=2)
    return Generator(cfg)


def quick_spec(**kw):
    base = dict(iterations=8, init_samples=64, translation_cadence=2, seed=0)
    base.update(kw)
    return inv.InvertSpec(**base)


class TestInitBundle:
    def test_rows_identical_and_noise_shapes(self):
        gen = small_gen()
        bundle = inv.init_bundle(gen, n_samples=128, seed=0)
        assert bundle.w_plus.shape == (1, gen.num_style_layers, 16)
        assert torch.equal(bundle.w_plus[0, 0], bundle.w_plus[0, -1])
        assert [n.shape[-1] for n in bundle.noise] == gen.noise_resolutions

    def test_mean_w_seeded_reproducibility(self):
        gen = small_gen()
        a = inv.init_bundle(gen, n_samples=10_000, seed=3)
        b = inv.init_bundle(gen, n_samples=10_000, seed=3)
        assert float((a.w_plus - b.w_plus).abs().max()) <= 1e-6

    def test_mean_w_near_population_mean(self):
        gen = small_gen()
        bundle = inv.init_bundle(gen, n_samples=4096, seed=1)
        with torch.no_grad():
            pop = gen.map_latent(torch.randn(4096, 16,
                                             generator=torch.Generator().manual_seed(99)))
        assert float((bundle.w_plus[0, 0] - pop.mean(0)).abs().max()) < 0.2


class TestInversionLoss:
    def test_self_match_is_zero(self):
        maps = MaterialMaps.from_tensor(torch.rand(5, 32, 32) * 0.6 + 0.2)
        setup = RenderSetup(image_size=32)
        target = render(maps, setup)
        ext = FeatureExtractor()
        val = inv.inversion_loss(maps, target, setup, ext)
        assert float(val) == 0.0

    def test_l1_term_closed_form(self):
        maps = MaterialMaps.from_tensor(torch.rand(5, 32, 32) * 0.6 + 0.2)
        setup = RenderSetup(image_size=32)
        target = render(maps, setup) + 0.1
        ext = FeatureExtractor()
        val = inv.inversion_loss(maps, target, setup, ext,
                                 style_weight=0.0, l1_weight=10.0)
        assert abs(float(val) - 1.0) <= 1e-5

    def test_shift_matches_pretranslated_maps(self):
        maps = MaterialMaps.from_tensor(torch.rand(5, 32, 32) * 0.6 + 0.2)
        setup = RenderSetup(image_size=32)
        target = torch.rand(3, 32, 32)
        ext = FeatureExtractor()
        a = inv.inversion_loss(maps, target, setup, ext, shift=(5, 9))
        b = inv.inversion_loss(maps.translate((5, 9)), target, setup, ext)
        assert abs(float(a) - float(b)) <= 1e-7

    def test_gradients_flow_to_maps(self):
        t = (torch.rand(5, 32, 32) * 0.6 + 0.2).requires_grad_(True)
        maps = MaterialMaps.from_tensor(t)
        setup = RenderSetup(image_size=32)
        loss = inv.inversion_loss(maps, torch.rand(3, 32, 32), setup,
                                  FeatureExtractor())
        loss.backward()
        assert float(t.grad.abs().sum()) > 0


class TestInvert:
    def test_reduces_loss_on_self_target(self):
        gen = small_gen()
        with torch.no_grad():
            out = gen.generate(torch.randn(1, 16),
                               generator=torch.Generator().manual_seed(4))
        setup = RenderSetup(image_size=32)
        target = render(MaterialMaps.from_tensor(out[0]), setup)
        result = inv.invert(gen, target, spec=quick_spec(iterations=25),
                            setup=setup)
        assert result.best_loss < result.initial_loss
        assert result.maps.resolution == 32
        assert result.rendered.shape == (3, 32, 32)

    def test_weights_frozen(self):
        gen = small_gen()
        before = torch.cat([p.reshape(-1) for p in gen.parameters()]).clone()
        target = torch.rand(3, 32, 32)
        inv.invert(gen, target, spec=quick_spec(iterations=3),
                   setup=RenderSetup(image_size=32))
        after = torch.cat([p.detach().reshape(-1) for p in gen.parameters()])
        assert torch.equal(before, after)

    def test_maps_match_bundle_exactly(self):
        # emitted maps are a fresh synthesis from the returned best bundle
        gen = small_gen()
        target = torch.rand(3, 32, 32)
        result = inv.invert(gen, target, spec=quick_spec(iterations=4),
                            setup=RenderSetup(image_size=32))
        with torch.no_grad():
            again = gen.synthesize(result.bundle)
        assert torch.equal(result.maps.to_tensor(), again[0])

    def test_trajectory_alternates_shifts(self):
        gen = small_gen()
        result = inv.invert(gen, torch.rand(3, 32, 32),
                            spec=quick_spec(iterations=6),
                            setup=RenderSetup(image_size=32))
        flags = [e["shifted"] for e in result.trajectory]
        assert flags == [False, True, False, True, False, True]

    def test_conditional_requires_pattern(self):
        gen = small_gen(conditional=True)
        with pytest.raises(ValueError, match="pattern-required"):
            inv.invert(gen, torch.rand(3, 32, 32), spec=quick_spec())

    def test_unconditional_rejects_pattern(self):
        gen = small_gen()
        with pytest.raises(ValueError, match="unconditional"):
            inv.invert(gen, torch.rand(3, 32, 32),
                       pattern=torch.rand(1, 32, 32), spec=quick_spec())

    def test_target_divisibility(self):
        gen = small_gen()
        with pytest.raises(ValueError, match="16-divisible"):
            inv.invert(gen, torch.rand(3, 24, 24), spec=quick_spec())

    def test_target_smaller_than_domain(self):
        # generation domain larger than the target image is supported; the
        # style term is size-agnostic and both sides pool to 16x16
        gen = small_gen()
        target = torch.rand(3, 16, 16)
        result = inv.invert(gen, target, spec=quick_spec(iterations=3),
                            setup=RenderSetup(image_size=32))
        assert result.maps.resolution == 32


class TestImageIO:
    def test_load_target_center_crop(self, tmp_path):
        from PIL import Image
        a = np.zeros((32, 64, 3), dtype=np.uint8)
        a[:, 16:48] = 200  # center square band
        Image.fromarray(a).save(tmp_path / "t.png")
        t = inv.load_target(tmp_path / "t.png", 32)
        assert t.shape == (3, 32, 32)
        assert abs(float(t.mean()) - 200 / 255) <= 1e-6

    def test_load_pattern_channels(self, tmp_path):
        from PIL import Image
        a = (np.random.default_rng(0).random((32, 32)) * 255).astype(np.uint8)
        Image.fromarray(a).save(tmp_path / "p.png")
        p1 = inv.load_pattern(tmp_path / "p.png", 32, 1)
        p3 = inv.load_pattern(tmp_path / "p.png", 32, 3)
        assert p1.shape == (1, 32, 32)
        assert p3.shape == (3, 32, 32)


def test_invert_from_spec_roundtrip(tmp_path):
    from PIL import Image
    from tilemat.material import STOCK_CLASSES
    from tilemat.networks import save_generator_checkpoint
    gen = small_gen(conditional=True)
    save_generator_checkpoint(tmp_path / "g.pt", gen, STOCK_CLASSES["tile"])
    rng = np.random.default_rng(0)
    Image.fromarray((rng.random((32, 32, 3)) * 255).astype(np.uint8)).save(
        tmp_path / "target.png")
    Image.fromarray((rng.random((32, 32)) > 0.5).astype(np.uint8) * 255).save(
        tmp_path / "pattern.png")
    spec = inv.InvertSpec(checkpoint=str(tmp_path / "g.pt"),
                          target=str(tmp_path / "target.png"),
                          pattern=str(tmp_path / "pattern.png"),
                          iterations=3, init_samples=32, target_size=32)
    result, loaded = inv.invert_from_spec(spec)
    assert result.maps.resolution == 32

    spec_nopat = inv.InvertSpec(checkpoint=str(tmp_path / "g.pt"),
                                target=str(tmp_path / "target.png"),
                                iterations=1, init_samples=8, target_size=32)
    with pytest.raises(ValueError, match="pattern-required"):
        inv.invert_from_spec(spec_nopat)
